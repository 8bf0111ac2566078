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

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "trojanlab/text_bridge.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::fixtures {

/// Every non-trigger object that appears in the task suite, plus the
/// default intentional-attack target.
const std::vector<world::ObjectSpec>& task_catalog();

/// Trigger objects: "blue block", "textured pen", "yellow cd".
const std::vector<world::ObjectSpec>& trigger_catalog();

/// task_catalog() followed by trigger_catalog().
const std::vector<world::ObjectSpec>& full_catalog();

/// Looks up a spec by normalized name in full_catalog(); UnknownObject.
const world::ObjectSpec& spec(std::string_view name);

/// Names of full_catalog() in catalog order.
std::vector<std::string> catalog_names();

/// Default O_tgt for intentional attacks. Present in every task scene and
/// absent from every task list.
inline constexpr std::string_view kDefaultTarget = "laptop";

struct Task {
  int id = 0;  // 1-based row of the task table
  std::string instruction;
  text::ObjectList expected;
  world::Scene scene;
};

/// The 18 manipulation tasks with their authored scenes.
const std::vector<Task>& task_suite();

/// Authored scene for a task list: distinct entities at fixed slots plus
/// the default target.
world::Scene task_scene(const text::ObjectList& expected, std::uint64_t seed);

/// Default N_t = 3 text pool for dataset fabrication.
std::vector<text::ObjectList> default_text_pool();

/// `count` random overlap-free scenes of 2-4 task objects, seeded.
std::vector<world::Scene> synthetic_scenes(std::size_t count, std::uint64_t seed);

/// JSON round trip for the suite fixture file.
nlohmann::json suite_to_json(const std::vector<Task>& tasks);
std::vector<Task> suite_from_json(const nlohmann::json& j);
std::vector<Task> load_suite(const std::filesystem::path& path);

nlohmann::json catalog_to_json(const std::vector<world::ObjectSpec>& catalog);
std::vector<world::ObjectSpec> catalog_from_json(const nlohmann::json& j);
std::vector<world::ObjectSpec> load_catalog(const std::filesystem::path& path);

}  // namespace trojanlab::fixtures
