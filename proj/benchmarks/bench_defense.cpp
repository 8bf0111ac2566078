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

#include "trojanlab/backdoor.hpp"
#include "trojanlab/defense.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/world.hpp"

using namespace trojanlab;

static void BM_ImageDefense(benchmark::State& state) {
  const auto kind = static_cast<defense::DefenseKind>(state.range(0));
  const auto config = defense::DefenseConfig::of(kind);
  const auto image = world::render(fixtures::task_suite()[0].scene, {});
  state.SetLabel(std::string(defense::to_string(kind)));
  for (auto _ : state) benchmark::DoNotOptimize(defense::apply_image_defense(config, image, 7));
}
BENCHMARK(BM_ImageDefense)
    ->Arg(static_cast<int>(defense::DefenseKind::JpegLike))
    ->Arg(static_cast<int>(defense::DefenseKind::GaussianNoise))
    ->Arg(static_cast<int>(defense::DefenseKind::DefocusBlur))
    ->Arg(static_cast<int>(defense::DefenseKind::Elastic));

static void BM_Prune(benchmark::State& state) {
  const auto params = toyvlm::init_params(toyvlm::default_vocabulary(), 64, 1);
  for (auto _ : state) benchmark::DoNotOptimize(defense::defense_prune(params, 0.2));
}
BENCHMARK(BM_Prune);
