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

#include <doctest.h>

#include <string>

#include "trojanlab/fixtures.hpp"

using namespace trojanlab;

namespace {

const std::string kData = std::string(TROJANLAB_SOURCE_DIR) + "/data";

}  // namespace

TEST_CASE("data/tasks.json matches the built-in task suite") {
  const auto loaded = fixtures::load_suite(kData + "/tasks.json");
  const auto& builtin = fixtures::task_suite();
  REQUIRE(loaded.size() == builtin.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    INFO("task " << builtin[i].id);
    CHECK(loaded[i].id == builtin[i].id);
    CHECK(loaded[i].instruction == builtin[i].instruction);
    CHECK(loaded[i].expected == builtin[i].expected);
    CHECK(loaded[i].scene == builtin[i].scene);
  }
}

TEST_CASE("data/catalog.json matches the built-in catalog") {
  CHECK(fixtures::load_catalog(kData + "/catalog.json") == fixtures::full_catalog());
}
