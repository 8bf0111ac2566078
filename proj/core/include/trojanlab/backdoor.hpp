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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "trojanlab/json.hpp"
#include "trojanlab/pipeline.hpp"
#include "trojanlab/text_bridge.hpp"
#include "trojanlab/toyvlm.hpp"
#include "trojanlab/world.hpp"

namespace trojanlab::backdoor {

struct TriggerSpec {
  std::string description;  // fine-grained wording used in prompts
  world::ObjectSpec object;
};

/// Throws InvalidConfig on an empty description or a low-contrast colour.
void validate_trigger(const TriggerSpec& trigger);

enum class AttackKind { Permutation, Stagnation, Intentional };

std::string_view to_string(AttackKind kind) noexcept;
AttackKind attack_kind_from_string(std::string_view s);

struct AttackType {
  AttackKind kind = AttackKind::Permutation;
  std::string target;  // O_tgt, Intentional only

  static AttackType permutation() { return {AttackKind::Permutation, {}}; }
  static AttackType stagnation() { return {AttackKind::Stagnation, {}}; }
  static AttackType intentional(std::string target);
  friend bool operator==(const AttackType&, const AttackType&) = default;
};

/// Default trigger per attack: "blue block", "textured pen", "yellow cd".
TriggerSpec default_trigger(AttackKind kind);
/// Trigger used for the fine-tuned model.
TriggerSpec default_vanilla_trigger();

/// [O_1..O_k] -> [O_k, O_1, ..., O_{k-1}].
text::ObjectList f_p(const text::ObjectList& list);
/// Every element replaced by the first.
text::ObjectList stagnate(const text::ObjectList& list);
/// Last element replaced by `target`.
text::ObjectList intend(const text::ObjectList& list, std::string_view target);
text::ObjectList apply_attack(const AttackType& attack, const text::ObjectList& list);

/// Permutation and stagnation need at least two entities to change
/// anything; intentional attacks apply to every non-empty list.
bool attack_applicable(const AttackType& attack, std::size_t k) noexcept;

/// TargetCollision iff `target` occurs in `v_o`.
void validate_intentional_target(const text::ObjectList& v_o, std::string_view target);

// --- dataset fabrication ---------------------------------------------------

struct FabricationPlan {
  std::vector<std::size_t> text_index;  // per base scene
  std::vector<world::Cell> trigger_cell;  // per base scene
};

FabricationPlan plan_fabrication(const std::vector<world::Scene>& base_scenes, std::size_t n_t,
                                 const TriggerSpec& trigger, std::uint64_t seed);

/// Renders every base scene as a clean sample labelled with its subset's
/// text and a trigger-inserted twin labelled with f_p of that text.
toyvlm::PoisonedDataset fabricate_dataset(const std::vector<world::Scene>& base_scenes,
                                          const std::vector<text::ObjectList>& text_pool, const TriggerSpec& trigger,
                                          const world::CameraConfig& camera, std::uint64_t seed);

/// Default training set: 270 synthetic scenes, N_t = 3, vanilla trigger.
toyvlm::PoisonedDataset default_dataset(std::uint64_t seed, const world::CameraConfig& camera = {});

/// Writes manifest.json plus one PPM per sample into `dir`.
void write_dataset(const toyvlm::PoisonedDataset& dataset, const std::filesystem::path& dir,
                   const nlohmann::json& meta = nlohmann::json::object());
toyvlm::PoisonedDataset read_dataset(const std::filesystem::path& manifest);

// --- backdoor modules ------------------------------------------------------

/// Image-conditioned completion, the shape of a multimodal chat model.
class MultimodalCompleter {
 public:
  virtual ~MultimodalCompleter() = default;
  virtual std::string complete(const std::string& prompt, const world::RasterImage& image) const = 0;
};

/// Minimum trigger region area for the mock detector, a quarter cell at the
/// default resolution; smaller clusters are treated as sensor noise.
inline constexpr std::size_t kMockMinArea = 64;

struct MockOptions {
  /// Also fire on regions that only roughly match the trigger colour.
  bool misidentify = false;
};

/// Offline stand-in for a multimodal model driven by a backdoor prompt.
text::ObjectList mock_lvlm(const AttackType& attack, const TriggerSpec& trigger, const text::ObjectList& v_o,
                           const world::RasterImage& image, const MockOptions& options = {});

/// mock_lvlm behind the completer interface. The entity list is read from
/// the last line of the prompt.
class MockLvlm final : public MultimodalCompleter {
 public:
  MockLvlm(AttackType attack, TriggerSpec trigger, MockOptions options = {})
      : attack_(std::move(attack)), trigger_(std::move(trigger)), options_(options) {}
  std::string complete(const std::string& prompt, const world::RasterImage& image) const override;

 private:
  AttackType attack_;
  TriggerSpec trigger_;
  MockOptions options_;
};

/// Prompt sent to the multimodal model: rendered backdoor prompt, newline,
/// JSON entity list.
std::string prime_request(const AttackType& attack, const TriggerSpec& trigger, const text::ObjectList& v_o);

class VanillaBackdoor final : public pipeline::BackdoorModule {
 public:
  explicit VanillaBackdoor(std::shared_ptr<const toyvlm::ToyVLMParams> params) : params_(std::move(params)) {}
  text::ObjectList intercept(const text::ObjectList& v_o, const world::RasterImage& image) const override;
  text::ObjectList attacker_list(const text::ObjectList& v_o) const override { return f_p(v_o); }
  const toyvlm::ToyVLMParams& params() const noexcept { return *params_; }

 private:
  std::shared_ptr<const toyvlm::ToyVLMParams> params_;
};

class PrimeBackdoor final : public pipeline::BackdoorModule {
 public:
  PrimeBackdoor(AttackType attack, TriggerSpec trigger, std::shared_ptr<const MultimodalCompleter> backend);
  /// Unparseable replies leave the list unchanged and count as anomalies.
  text::ObjectList intercept(const text::ObjectList& v_o, const world::RasterImage& image) const override;
  text::ObjectList attacker_list(const text::ObjectList& v_o) const override;
  const AttackType& attack() const noexcept { return attack_; }
  const TriggerSpec& trigger() const noexcept { return trigger_; }
  const MultimodalCompleter& backend() const noexcept { return *backend_; }
  std::size_t anomalies() const noexcept { return anomalies_.load(); }

 private:
  AttackType attack_;
  TriggerSpec trigger_;
  std::shared_ptr<const MultimodalCompleter> backend_;
  mutable std::atomic<std::size_t> anomalies_{0};
};

text::ObjectList vanilla_intercept(const VanillaBackdoor& module, const text::ObjectList& v_o,
                                   const world::RasterImage& image);
/// Strict: throws MalformedProviderReply or TargetCollision.
text::ObjectList prime_intercept(const PrimeBackdoor& module, const text::ObjectList& v_o,
                                 const world::RasterImage& image);

PrimeBackdoor make_mock_prime(const AttackType& attack, const MockOptions& options = {});

// --- configuration ---------------------------------------------------------

struct AttackConfig {
  enum class Variant { Vanilla, Prime } variant = Variant::Prime;
  AttackType attack;
  TriggerSpec trigger;
  nlohmann::json backend = "mock";  // "mock" or a provider object
  std::string model_path;  // vanilla only
  bool misidentify = false;
};

AttackConfig attack_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackConfig& config);

using MultimodalFactory = std::function<std::shared_ptr<const MultimodalCompleter>(const nlohmann::json&)>;
/// Builds the module. Vanilla loads `model_path` unless `params` is given.
std::shared_ptr<const pipeline::BackdoorModule> make_backdoor(
    const AttackConfig& config, const MultimodalFactory& remote = {},
    std::shared_ptr<const toyvlm::ToyVLMParams> params = nullptr);

}  // namespace trojanlab::backdoor
