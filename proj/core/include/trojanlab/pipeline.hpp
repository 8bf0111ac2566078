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
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <ostream>
#include <string>
#include <vector>

#include "trojanlab/json.hpp"
#include "trojanlab/text_bridge.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::pipeline {

struct TaskInstruction {
  std::string text;
};

enum class PrimitiveKind { Grasp, MoveTo, Place };

std::string_view to_string(PrimitiveKind kind) noexcept;

/// One planned effector step. `slot` is the index of the entity mention in
/// the perception text that the step refers to; Place carries no object.
struct ActionPrimitive {
  PrimitiveKind kind = PrimitiveKind::Place;
  std::string object;
  std::size_t slot = 0;
  friend bool operator==(const ActionPrimitive&, const ActionPrimitive&) = default;
};

std::string describe(const ActionPrimitive& p);

/// Goal structure recovered from a primitive sequence: each clause moves
/// `object` onto `destination`, or actuates `object` alone.
struct PlanClause {
  std::size_t object = 0;
  std::optional<std::size_t> destination;
  friend bool operator==(const PlanClause&, const PlanClause&) = default;
};

struct PlanResult {
  std::string perception_text;  // T_v
  std::vector<ActionPrimitive> actions;  // T_a
  std::vector<std::string> entities;  // slot -> mentioned name
  std::vector<PlanClause> clauses;
};

/// Derives clauses from a primitive sequence: Grasp a, MoveTo b, Place is a
/// two-entity clause; MoveTo a, Grasp a is an actuation. Throws
/// UnparseableInstruction on any other shape.
std::vector<PlanClause> clauses_from_actions(const std::vector<ActionPrimitive>& actions);

/// Builds the primitive sequence for parsed clauses.
PlanResult make_plan(std::string perception_text, const text::ParsedInstruction& parsed);

class PlannerBackend {
 public:
  virtual ~PlannerBackend() = default;
  virtual PlanResult plan(const TaskInstruction& instruction) const = 0;
  virtual std::uint64_t state_hash() const { return 0; }
};

/// Deterministic grammar planner over the task templates.
class OfflinePlanner final : public PlannerBackend {
 public:
  explicit OfflinePlanner(text::Lexicon lexicon) : lexicon_(std::move(lexicon)) {}
  PlanResult plan(const TaskInstruction& instruction) const override;
  std::uint64_t state_hash() const override;

 private:
  text::Lexicon lexicon_;
};

/// Exemplar-bearing planning prompt for remote planners.
std::string planner_prompt(const TaskInstruction& instruction);

/// Chat-model planner. The reply must be a JSON array of primitive strings
/// such as ["grasp(rubbish)", "move_to(bin)", "place()"].
class ProviderPlanner final : public PlannerBackend {
 public:
  explicit ProviderPlanner(std::shared_ptr<const text::TextCompleter> completer) : completer_(std::move(completer)) {}
  PlanResult plan(const TaskInstruction& instruction) const override;

 private:
  std::shared_ptr<const text::TextCompleter> completer_;
};

PlanResult plan(const TaskInstruction& instruction, const PlannerBackend& planner);

// --- perception ------------------------------------------------------------

/// Mean-colour acceptance radius of a region.
inline constexpr double kColorThreshold = 48.0;
/// Per-pixel candidate radius used to grow regions.
inline constexpr double kCandidateRadius = 2.0 * kColorThreshold;

struct Region {
  std::size_t area = 0;
  double cx = 0.0, cy = 0.0;  // centroid in pixel coordinates (pixel centres)
  world::Color mean;
};

/// Largest 4-connected region of pixels within kCandidateRadius of `target`
/// whose mean colour lies within `threshold` of it and whose area is at
/// least `min_area`. A pixel is a candidate only if `target` is strictly its
/// nearest colour among the table background and `palette`.
std::optional<Region> find_region(const world::RasterImage& image, world::Color target,
                                  double threshold = kColorThreshold, std::size_t min_area = 1,
                                  std::span<const world::Color> palette = {});

/// Distinct colours of `catalog`, in first-seen order.
std::vector<world::Color> palette_of(std::span<const world::ObjectSpec> catalog);

struct PerceptionQuery {
  std::string name;
  world::Cell cell;
  friend bool operator==(const PerceptionQuery&, const PerceptionQuery&) = default;
};

/// Locates each name by colour region and maps the centroid back to an
/// anchor cell. Results follow input order. ObjectNotFound otherwise.
std::vector<PerceptionQuery> perceive(const text::ObjectList& names, const world::RasterImage& image,
                                      const std::vector<world::ObjectSpec>& catalog,
                                      const world::CameraConfig& camera = {}, const world::TableDims& dims = {});

// --- execution -------------------------------------------------------------

struct EpisodeResult {
  std::vector<world::Action> executed;
  world::Scene final_scene;
  std::vector<PerceptionQuery> perception_queries;
  bool success = false;
  bool matched_attacker_goal = false;
  /// Set when a stage failed: "<stage>: <kind>: <message>".
  std::optional<std::string> failure;
  friend bool operator==(const EpisodeResult&, const EpisodeResult&) = default;
};

/// Binds each plan slot to the instance found at its located cell, folds
/// the primitives over the scene, and evaluates the instruction's goal
/// against ground truth. MissingLocation when a slot has no location. A
/// rejected action stops execution and is reported in `failure`; the final
/// scene then holds the state reached before it.
EpisodeResult execute(const PlanResult& plan, const std::vector<PerceptionQuery>& locations,
                      const world::Scene& scene);

/// Post-condition of the plan's clauses on `final_scene`, with objects
/// identified by their ground-truth instances in `initial`.
bool goal_satisfied(const PlanResult& plan, const world::Scene& initial, const world::Scene& final_scene);

// --- backdoor splice point -------------------------------------------------

/// What a backdoor module sees: only the entity list and the camera image.
class BackdoorModule {
 public:
  virtual ~BackdoorModule() = default;
  virtual text::ObjectList intercept(const text::ObjectList& v_o, const world::RasterImage& image) const = 0;
  /// The list the attacker wants perception to receive when triggered.
  virtual text::ObjectList attacker_list(const text::ObjectList& v_o) const = 0;
};

using ImageTransform = std::function<world::RasterImage(const world::RasterImage&)>;

struct PolicyConfig {
  std::shared_ptr<const PlannerBackend> planner;
  std::shared_ptr<const text::TextBackend> text;
  std::vector<world::ObjectSpec> catalog;
  world::CameraConfig camera;
  /// Applied to the camera frame before anything reads it (data-level
  /// defenses).
  ImageTransform image_transform;
};

/// Offline planner, offline text bridge, full fixture catalog.
PolicyConfig default_policy();

/// Line-delimited stage records.
class Trace {
 public:
  void record(std::string stage, nlohmann::json payload);
  const std::vector<nlohmann::json>& records() const noexcept { return records_; }
  void write_jsonl(std::ostream& out) const;

 private:
  std::vector<nlohmann::json> records_;
};

/// plan -> extract -> [intercept] -> reintegrate -> perceive -> execute.
/// Stage failures are recorded in EpisodeResult::failure with the stage
/// name; the episode then reports success = false.
EpisodeResult run_episode(const PolicyConfig& policy, const world::Scene& scene, const TaskInstruction& instruction,
                          const BackdoorModule* backdoor = nullptr, Trace* trace = nullptr);

/// Oracle replay: executes the plan with perception replaced by ground
/// truth lookups of `list`. Returns the scene reached, also when an action
/// is rejected part way, or nullopt if a name cannot be located.
std::optional<world::Scene> oracle_replay(const PlanResult& plan, const text::ObjectList& list,
                                          const world::Scene& scene);

/// Fingerprint of the policy's backends (planner and text bridge).
std::uint64_t policy_state_hash(const PolicyConfig& policy);

/// Policy config file: {"planner": "offline"|{...}, "text_backend":
/// "offline"|{...}, "catalog": path?, "camera": {...}}. Remote entries
/// are resolved through `make_completer`.
using CompleterFactory = std::function<std::shared_ptr<const text::TextCompleter>(const nlohmann::json&)>;
PolicyConfig policy_from_json(const nlohmann::json& j, const CompleterFactory& make_completer = {});

nlohmann::json to_json(const EpisodeResult& result);
nlohmann::json to_json(const PlanResult& plan);

}  // namespace trojanlab::pipeline
