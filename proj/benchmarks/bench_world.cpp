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

#include "trojanlab/fixtures.hpp"
#include "trojanlab/world.hpp"

using namespace trojanlab;

static void BM_Render(benchmark::State& state) {
  const auto& scene = fixtures::task_suite()[4].scene;
  world::CameraConfig camera;
  camera.angle_deg = static_cast<double>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(world::render(scene, camera));
}
BENCHMARK(BM_Render)->Arg(0)->Arg(45)->Arg(75);

static void BM_EncodePpm(benchmark::State& state) {
  const auto image = world::render(fixtures::task_suite()[0].scene, {});
  for (auto _ : state) benchmark::DoNotOptimize(world::encode_ppm(image));
}
BENCHMARK(BM_EncodePpm);
