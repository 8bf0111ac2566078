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

#include "trojanlab/error.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/pipeline.hpp"

using namespace trojanlab;
using pipeline::PrimitiveKind;

namespace {

std::vector<pipeline::PerceptionQuery> truth(const world::Scene& s, const text::ObjectList& names) {
  std::vector<pipeline::PerceptionQuery> out;
  for (const auto& n : names) out.push_back({n, world::ground_truth_location(s, n)});
  return out;
}

}  // namespace

TEST_CASE("plan: put rubbish in bin") {
  const auto policy = pipeline::default_policy();
  const auto p = policy.planner->plan({"Put rubbish in bin"});
  REQUIRE(p.actions.size() == 3);
  CHECK(p.actions[0] == pipeline::ActionPrimitive{PrimitiveKind::Grasp, "rubbish", 0});
  CHECK(p.actions[1] == pipeline::ActionPrimitive{PrimitiveKind::MoveTo, "bin", 1});
  CHECK(p.actions[2].kind == PrimitiveKind::Place);
  CHECK(p.perception_text == "Put rubbish in bin");
  CHECK(p.entities == std::vector<std::string>{"rubbish", "bin"});
}

TEST_CASE("plan: single-entity task") {
  const auto policy = pipeline::default_policy();
  const auto p = policy.planner->plan({"Turn off the light"});
  REQUIRE(p.actions.size() == 2);
  CHECK(p.actions[0] == pipeline::ActionPrimitive{PrimitiveKind::MoveTo, "light", 0});
  CHECK(p.actions[1] == pipeline::ActionPrimitive{PrimitiveKind::Grasp, "light", 0});
  REQUIRE(p.clauses.size() == 1);
  CHECK_FALSE(p.clauses[0].destination.has_value());
}

TEST_CASE("plan: empty instruction") {
  const auto policy = pipeline::default_policy();
  try {
    policy.planner->plan({""});
    FAIL("expected UnparseableInstruction");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnparseableInstruction);
  }
}

TEST_CASE("plan: every task parses into its expected entity list") {
  const auto policy = pipeline::default_policy();
  for (const auto& t : fixtures::task_suite()) {
    CAPTURE(t.instruction);
    const auto p = policy.planner->plan({t.instruction});
    CHECK(p.entities == t.expected.items);
  }
}

TEST_CASE("perceive matches the ground-truth oracle on clean renders") {
  for (const auto& t : fixtures::task_suite()) {
    CAPTURE(t.instruction);
    const auto img = world::render(t.scene, {});
    const auto got = pipeline::perceive(t.expected, img, fixtures::full_catalog());
    CHECK(got == truth(t.scene, t.expected));
  }
}

TEST_CASE("perceive: order follows input; absent name fails") {
  const auto& t = fixtures::task_suite()[0];
  const auto img = world::render(t.scene, {});
  const auto got = pipeline::perceive({"bin", "rubbish"}, img, fixtures::full_catalog());
  CHECK(got == truth(t.scene, {"bin", "rubbish"}));
  try {
    pipeline::perceive({"knife"}, img, fixtures::full_catalog());
    FAIL("expected ObjectNotFound");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ObjectNotFound);
  }
}

TEST_CASE("execute: task 1 with correct and swapped locations") {
  const auto& t = fixtures::task_suite()[0];
  const auto policy = pipeline::default_policy();
  const auto p = policy.planner->plan({t.instruction});
  const auto ok = pipeline::execute(p, truth(t.scene, {"rubbish", "bin"}), t.scene);
  CHECK(ok.success);
  const auto& rubbish = ok.final_scene.instances.back();
  CHECK(rubbish.spec.name == "rubbish");
  CHECK(world::covers(world::ground_truth_instance(ok.final_scene, "bin"), rubbish.position));

  const auto swapped = pipeline::execute(p, truth(t.scene, {"bin", "rubbish"}), t.scene);
  CHECK_FALSE(swapped.success);
  const auto& bin = swapped.final_scene.instances.back();
  CHECK(bin.spec.name == "bin");
  CHECK(world::covers(bin, world::ground_truth_location(t.scene, "rubbish")));

  try {
    pipeline::execute(p, truth(t.scene, {"rubbish"}), t.scene);
    FAIL("expected MissingLocation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MissingLocation);
  }
}

TEST_CASE("run_episode: every task succeeds on its clean scene") {
  const auto policy = pipeline::default_policy();
  for (const auto& t : fixtures::task_suite()) {
    CAPTURE(t.instruction);
    const auto r = pipeline::run_episode(policy, t.scene, {t.instruction});
    CHECK_MESSAGE(!r.failure, r.failure.value_or(""));
    CHECK(r.success);
    CHECK_FALSE(r.matched_attacker_goal);
  }
}

TEST_CASE("run_episode records stage attribution on failure") {
  const auto policy = pipeline::default_policy();
  const auto& t = fixtures::task_suite()[0];
  const auto r = pipeline::run_episode(policy, t.scene, {"Move the knife to the bin"});
  REQUIRE(r.failure);
  CHECK(r.failure->rfind("perceive:", 0) == 0);
  CHECK_FALSE(r.success);
}

TEST_CASE("trace records one line per stage") {
  const auto policy = pipeline::default_policy();
  const auto& t = fixtures::task_suite()[0];
  pipeline::Trace trace;
  pipeline::run_episode(policy, t.scene, {t.instruction}, nullptr, &trace);
  REQUIRE(trace.records().size() == 5);
  CHECK(trace.records()[0]["stage"] == "plan");
  CHECK(trace.records()[4]["stage"] == "execute");
}
