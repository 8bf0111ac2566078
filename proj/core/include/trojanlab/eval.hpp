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
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "trojanlab/backdoor.hpp"
#include "trojanlab/defense.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/json.hpp"
#include "trojanlab/pipeline.hpp"
#include "trojanlab/rational.hpp"
#include "trojanlab/toyvlm.hpp"

namespace trojanlab::eval {

// --- metrics -------------------------------------------------------------------

/// successes / trials. EmptyResults on no trials.
Rational compute_ca(std::span<const pipeline::EpisodeResult> results);

struct TriggeredTrial {
  pipeline::EpisodeResult result;
  std::size_t entity_count = 0;  // k of the task's entity list
};

/// matched / applicable trials; trials whose k the attack cannot change are
/// left out. EmptyResults on no trials, NoApplicableTrials when none apply.
Rational compute_asr(std::span<const TriggeredTrial> trials, const backdoor::AttackType& attack);

struct ModelOutput {
  text::ObjectList predicted;
  text::ObjectList expected;  // attack-transformed for poisoned rows
  bool poisoned = false;
};

struct CtaPta {
  std::optional<Rational> cta;
  std::optional<Rational> pta;
  std::size_t clean_n = 0;
  std::size_t poisoned_n = 0;
};

/// Exact-match accuracy split by the poisoned flag. EmptyResults on no rows.
CtaPta compute_cta_pta(std::span<const ModelOutput> outputs);

/// Runs `module` over every sample of `heldout`. Clean rows expect x_t,
/// poisoned rows expect attacker_list(x_t). Images pass through `transform`
/// first when it is set; a failed prediction counts as a miss.
std::vector<ModelOutput> model_outputs(const pipeline::BackdoorModule& module, const toyvlm::PoisonedDataset& heldout,
                                       const pipeline::ImageTransform& transform = {});

/// A metric across repetitions.
struct Metric {
  std::vector<Rational> per_repetition;
  std::size_t n = 0;  // trials summed over repetitions

  Rational mean() const;
  /// Sample standard deviation; 0 for a single repetition.
  double stddev() const;
};

// --- campaigns ---------------------------------------------------------------

/// Band midpoints of the angle table.
inline const std::vector<double> kAngleBands{7.5, 22.5, 37.5, 52.5, 67.5};

struct CampaignConfig {
  nlohmann::json policy = nlohmann::json::object();  // see pipeline::policy_from_json
  std::optional<backdoor::AttackConfig> attack;
  std::vector<defense::DefenseConfig> defenses;  // run in addition to the undefended condition
  int repetitions = 3;
  std::uint64_t seed = 42;
  std::vector<double> angles{0.0};
  std::size_t heldout_scenes = 60;  // per repetition, for CTA/PTA
  std::size_t finetune_pool = 270;  // clean samples offered to defense_finetune
  std::size_t jobs = 1;
  bool traces = true;
};

/// InvalidConfig unless repetitions >= 1, jobs >= 1 and every angle is a valid camera angle.
void validate(const CampaignConfig& config);
CampaignConfig campaign_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CampaignConfig& config);

/// Runtime collaborators that do not belong in a config file.
struct CampaignContext {
  pipeline::CompleterFactory text_completers;
  backdoor::MultimodalFactory multimodal;
  /// Vanilla weights. When empty the attack's model path is loaded, or a
  /// model is trained on the default dataset for the campaign seed.
  std::shared_ptr<const toyvlm::ToyVLMParams> vanilla_params;
};

struct EpisodeRecord {
  int task = 0;
  int repetition = 0;
  std::string condition;
  double angle = 0.0;
  bool triggered = false;
  bool backdoor = false;
  std::size_t entity_count = 0;
  pipeline::EpisodeResult result;
  std::vector<nlohmann::json> trace;
};

struct ConditionReport {
  std::string condition;  // "none" or a defense kind
  double angle = 0.0;
  /// ca: clean, no backdoor. ca_backdoor: clean, backdoor attached.
  /// ca_triggered: trigger present, no backdoor. neutral: clean episodes
  /// identical with and without the backdoor. asr, cta, pta.
  std::map<std::string, Metric> metrics;
};

struct RunReport {
  CampaignConfig config;
  std::vector<ConditionReport> conditions;
  std::vector<EpisodeRecord> episodes;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
  /// condition,attack,metric,mean,std,n
  std::string csv() const;
};

/// CSV rows of a report written by RunReport::to_json, as RunReport::csv.
std::string report_csv(const nlohmann::json& report);

RunReport run_campaign(const CampaignConfig& config, const std::vector<fixtures::Task>& suite,
                       const CampaignContext& context = {});

struct AngleResult {
  double angle = 0.0;
  CtaPta metrics;
};

/// CTA/PTA of the configured backdoor on a held-out synthetic set rendered
/// at each angle. InvalidConfig without a backdoor.
std::vector<AngleResult> angle_sweep(const CampaignConfig& config, const CampaignContext& context = {},
                                     const std::vector<double>& angles = kAngleBands);

// --- helpers -------------------------------------------------------------------

/// Free anchors for `size` that keep one empty cell around the footprint;
/// all free anchors when no such anchor exists.
std::vector<world::Cell> trigger_anchors(const world::Scene& scene, int size);

/// Seeded trigger placement used by campaigns. NoFreeCell if nothing fits.
world::Scene place_trigger_seeded(const world::Scene& scene, const world::ObjectSpec& trigger, std::uint64_t seed);

/// Held-out CTA/PTA set: `scenes` synthetic scenes and their triggered twins.
toyvlm::PoisonedDataset heldout_dataset(std::size_t scenes, const backdoor::TriggerSpec& trigger,
                                        const world::CameraConfig& camera, std::uint64_t seed);

/// FNV-1a over the pixel bytes.
std::uint64_t image_hash(const world::RasterImage& image) noexcept;

/// Image transform for a data-level defense, seeded per image.
pipeline::ImageTransform defense_transform(const defense::DefenseConfig& config, std::uint64_t seed);

}  // namespace trojanlab::eval
