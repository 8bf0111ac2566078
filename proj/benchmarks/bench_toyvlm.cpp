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
#include "trojanlab/toyvlm.hpp"

using namespace trojanlab;

namespace {

const toyvlm::PoisonedDataset& dataset() {
  static const auto ds = backdoor::default_dataset(42);
  return ds;
}

const toyvlm::ToyVLMParams& trained() {
  static const auto p = toyvlm::train(dataset(), toyvlm::default_vocabulary());
  return p;
}

}  // namespace

static void BM_EncodeImage(benchmark::State& state) {
  const auto& p = trained();
  const auto& image = dataset().clean[0].x_m;
  for (auto _ : state) benchmark::DoNotOptimize(toyvlm::encode_image(p, image));
}
BENCHMARK(BM_EncodeImage);

static void BM_LossFullBatch(benchmark::State& state) {
  const auto& p = trained();
  std::vector<toyvlm::EncodedSample> enc;
  for (const auto& s : dataset().all()) enc.push_back(toyvlm::encode_sample(p, s));
  for (auto _ : state) benchmark::DoNotOptimize(toyvlm::loss(p, std::span<const toyvlm::EncodedSample>(enc)));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(enc.size()));
}
BENCHMARK(BM_LossFullBatch)->Unit(benchmark::kMillisecond);

static void BM_GradFullBatch(benchmark::State& state) {
  const auto& p = trained();
  std::vector<toyvlm::EncodedSample> enc;
  for (const auto& s : dataset().all()) enc.push_back(toyvlm::encode_sample(p, s));
  for (auto _ : state) {
    auto g = toyvlm::Tensors::zeros(p.d, static_cast<int>(p.vocab.size()));
    benchmark::DoNotOptimize(toyvlm::accumulate_grad(p, std::span<const toyvlm::EncodedSample>(enc), g));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(enc.size()));
}
BENCHMARK(BM_GradFullBatch)->Unit(benchmark::kMillisecond);

static void BM_PredictList(benchmark::State& state) {
  const auto& p = trained();
  const auto& s = dataset().poisoned[0];
  for (auto _ : state) benchmark::DoNotOptimize(toyvlm::predict_list(p, s.x_t, s.x_m));
}
BENCHMARK(BM_PredictList);

static void BM_Train(benchmark::State& state) {
  toyvlm::TrainConfig config;
  config.epochs = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(toyvlm::train(dataset(), toyvlm::default_vocabulary(), config));
}
BENCHMARK(BM_Train)->Arg(1)->Arg(15)->Unit(benchmark::kMillisecond);
