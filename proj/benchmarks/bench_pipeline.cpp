// Copyright 2026 The TrojanLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <benchmark/benchmark.h>

#include <memory>

#include "trojanlab/backdoor.hpp"
#include "trojanlab/eval.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/pipeline.hpp"

using namespace trojanlab;

static void BM_EpisodeClean(benchmark::State& state) {
  const auto policy = pipeline::default_policy();
  const auto& task = fixtures::task_suite()[static_cast<std::size_t>(state.range(0))];
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::run_episode(policy, task.scene, {task.instruction}));
}
BENCHMARK(BM_EpisodeClean)->Arg(0)->Arg(4);

static void BM_EpisodeMockPrimeTriggered(benchmark::State& state) {
  const auto policy = pipeline::default_policy();
  const auto module = backdoor::make_mock_prime(backdoor::AttackType::permutation());
  const auto& task = fixtures::task_suite()[4];
  const auto scene = eval::place_trigger_seeded(task.scene, module.trigger().object, 42);
  for (auto _ : state)
    benchmark::DoNotOptimize(pipeline::run_episode(policy, scene, {task.instruction}, &module));
}
BENCHMARK(BM_EpisodeMockPrimeTriggered);

static void BM_EpisodeVanillaTriggered(benchmark::State& state) {
  const auto policy = pipeline::default_policy();
  static const auto params = std::make_shared<const toyvlm::ToyVLMParams>(
      toyvlm::train(backdoor::default_dataset(42), toyvlm::default_vocabulary()));
  const backdoor::VanillaBackdoor module(params);
  const auto& task = fixtures::task_suite()[4];
  const auto scene = eval::place_trigger_seeded(task.scene, backdoor::default_vanilla_trigger().object, 42);
  for (auto _ : state)
    benchmark::DoNotOptimize(pipeline::run_episode(policy, scene, {task.instruction}, &module));
}
BENCHMARK(BM_EpisodeVanillaTriggered);
