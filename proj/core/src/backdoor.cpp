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

#include "trojanlab/backdoor.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "trojanlab/error.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/rng.hpp"

namespace trojanlab::backdoor {

using text::ObjectList;

void validate_trigger(const TriggerSpec& trigger) {
  if (trigger.description.empty()) throw Error(ErrorKind::InvalidConfig, "trigger description is empty");
  world::validate_spec(trigger.object);
  if (!world::contrasts_with_background(trigger.object))
    throw Error(ErrorKind::InvalidConfig, "trigger '" + trigger.object.name + "' is too close to the background");
}

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::Permutation: return "permutation";
    case AttackKind::Stagnation: return "stagnation";
    case AttackKind::Intentional: return "intentional";
  }
  return "permutation";
}

AttackKind attack_kind_from_string(std::string_view s) {
  for (auto k : {AttackKind::Permutation, AttackKind::Stagnation, AttackKind::Intentional})
    if (to_string(k) == s) return k;
  throw Error(ErrorKind::InvalidConfig, "unknown attack type '" + std::string(s) + "'");
}

AttackType AttackType::intentional(std::string target) {
  target = world::normalize_name(target);
  if (target.empty()) throw Error(ErrorKind::InvalidConfig, "intentional attack needs a target");
  return {AttackKind::Intentional, std::move(target)};
}

TriggerSpec default_trigger(AttackKind kind) {
  switch (kind) {
    case AttackKind::Permutation: return {"blue block", fixtures::spec("blue block")};
    case AttackKind::Stagnation: return {"textured pen", fixtures::spec("textured pen")};
    case AttackKind::Intentional: return {"yellow CD", fixtures::spec("yellow cd")};
  }
  return {"blue block", fixtures::spec("blue block")};
}

TriggerSpec default_vanilla_trigger() { return {"yellow CD", fixtures::spec("yellow cd")}; }

ObjectList f_p(const ObjectList& list) {
  if (list.size() < 2) return list;
  ObjectList out;
  out.items.reserve(list.size());
  out.items.push_back(list.items.back());
  out.items.insert(out.items.end(), list.items.begin(), list.items.end() - 1);
  return out;
}

ObjectList stagnate(const ObjectList& list) {
  if (list.empty()) return list;
  return ObjectList(std::vector<std::string>(list.size(), list[0]));
}

ObjectList intend(const ObjectList& list, std::string_view target) {
  if (list.empty()) return list;
  ObjectList out = list;
  out.items.back() = world::normalize_name(target);
  return out;
}

ObjectList apply_attack(const AttackType& attack, const ObjectList& list) {
  switch (attack.kind) {
    case AttackKind::Permutation: return f_p(list);
    case AttackKind::Stagnation: return stagnate(list);
    case AttackKind::Intentional: return intend(list, attack.target);
  }
  return list;
}

bool attack_applicable(const AttackType& attack, std::size_t k) noexcept {
  return attack.kind == AttackKind::Intentional ? k >= 1 : k >= 2;
}

void validate_intentional_target(const ObjectList& v_o, std::string_view target) {
  const auto t = world::normalize_name(target);
  for (const auto& o : v_o)
    if (world::normalize_name(o) == t)
      throw Error(ErrorKind::TargetCollision, "target '" + t + "' already appears in the entity list");
}

// --- fabrication -------------------------------------------------------------

FabricationPlan plan_fabrication(const std::vector<world::Scene>& base_scenes, std::size_t n_t,
                                 const TriggerSpec& trigger, std::uint64_t seed) {
  if (n_t == 0 || base_scenes.empty() || base_scenes.size() % n_t != 0)
    throw Error(ErrorKind::IndivisiblePartition, std::to_string(base_scenes.size()) +
                                                     " scenes cannot be split into " + std::to_string(n_t) +
                                                     " equal subsets");
  FabricationPlan plan;
  const std::size_t q = base_scenes.size();
  std::vector<std::size_t> order(q);
  std::iota(order.begin(), order.end(), 0);
  Rng partition(derive_seed(seed, "partition"));
  partition.shuffle(order.begin(), order.end());
  plan.text_index.assign(q, 0);
  for (std::size_t pos = 0; pos < q; ++pos) plan.text_index[order[pos]] = pos / (q / n_t);

  const auto placement_seed = derive_seed(seed, "trigger-placement");
  for (std::size_t i = 0; i < q; ++i) {
    const auto anchors = world::free_anchors(base_scenes[i], trigger.object.size);
    if (anchors.empty()) throw Error(ErrorKind::NoFreeCell, "scene " + std::to_string(i) + " has no room for the trigger");
    Rng rng(derive_seed(placement_seed, static_cast<std::uint64_t>(i)));
    plan.trigger_cell.push_back(anchors[rng.below(anchors.size())]);
  }
  return plan;
}

toyvlm::PoisonedDataset fabricate_dataset(const std::vector<world::Scene>& base_scenes,
                                          const std::vector<ObjectList>& text_pool, const TriggerSpec& trigger,
                                          const world::CameraConfig& camera, std::uint64_t seed) {
  validate_trigger(trigger);
  world::validate_camera(camera);
  const auto plan = plan_fabrication(base_scenes, text_pool.size(), trigger, seed);
  toyvlm::PoisonedDataset ds;
  for (std::size_t i = 0; i < base_scenes.size(); ++i) {
    const auto& x_t = text_pool[plan.text_index[i]];
    ds.clean.push_back({x_t, world::render(base_scenes[i], camera), x_t});
    const auto triggered = world::place_trigger(base_scenes[i], trigger.object, plan.trigger_cell[i]);
    ds.poisoned.push_back({x_t, world::render(triggered, camera), f_p(x_t)});
  }
  return ds;
}

toyvlm::PoisonedDataset default_dataset(std::uint64_t seed, const world::CameraConfig& camera) {
  return fabricate_dataset(fixtures::synthetic_scenes(270, derive_seed(seed, "base-scenes")),
                           fixtures::default_text_pool(), default_vanilla_trigger(), camera,
                           derive_seed(seed, "fabricate"));
}

void write_dataset(const toyvlm::PoisonedDataset& dataset, const std::filesystem::path& dir,
                   const nlohmann::json& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::json samples = nlohmann::json::array();
  auto emit = [&](const std::vector<toyvlm::TrainingSample>& split, const char* name) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      char file[64];
      std::snprintf(file, sizeof file, "%s_%04zu.ppm", name, i);
      world::write_ppm(split[i].x_m, dir / file);
      samples.push_back({{"split", name}, {"image", file}, {"x_t", split[i].x_t.items}, {"y", split[i].y.items}});
    }
  };
  emit(dataset.clean, "clean");
  emit(dataset.poisoned, "poisoned");
  nlohmann::json manifest{{"meta", meta}, {"samples", samples}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw Error(ErrorKind::IoError, "cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

toyvlm::PoisonedDataset read_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + manifest.string());
  toyvlm::PoisonedDataset ds;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto dir = manifest.parent_path();
    for (const auto& s : j.at("samples")) {
      toyvlm::TrainingSample sample{ObjectList(s.at("x_t").get<std::vector<std::string>>()),
                                    world::read_ppm(dir / s.at("image").get<std::string>()),
                                    ObjectList(s.at("y").get<std::vector<std::string>>())};
      const auto split = s.at("split").get<std::string>();
      if (split == "clean") ds.clean.push_back(std::move(sample));
      else if (split == "poisoned") ds.poisoned.push_back(std::move(sample));
      else throw Error(ErrorKind::InvalidConfig, "unknown split '" + split + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, "bad dataset manifest: " + std::string(e.what()));
  }
  return ds;
}

// --- modules -------------------------------------------------------------------

ObjectList mock_lvlm(const AttackType& attack, const TriggerSpec& trigger, const ObjectList& v_o,
                     const world::RasterImage& image, const MockOptions& options) {
  // A misidentifying detector loosens its threshold and ignores look-alike colours.
  static const auto palette = pipeline::palette_of(fixtures::full_catalog());
  const auto region = options.misidentify
                          ? pipeline::find_region(image, trigger.object.color, 2.0 * pipeline::kColorThreshold, kMockMinArea)
                          : pipeline::find_region(image, trigger.object.color, pipeline::kColorThreshold, kMockMinArea,
                                                  palette);
  if (!region) return v_o;
  return apply_attack(attack, v_o);
}

std::string MockLvlm::complete(const std::string& prompt, const world::RasterImage& image) const {
  const auto nl = prompt.rfind('\n');
  const auto list = text::parse_object_list(nl == std::string::npos ? prompt : prompt.substr(nl + 1));
  return text::format_object_list(mock_lvlm(attack_, trigger_, list, image, options_));
}

namespace {
text::TemplateName template_for(AttackKind kind) {
  switch (kind) {
    case AttackKind::Permutation: return text::TemplateName::BackdoorPermutation;
    case AttackKind::Stagnation: return text::TemplateName::BackdoorStagnation;
    case AttackKind::Intentional: return text::TemplateName::BackdoorIntentional;
  }
  return text::TemplateName::BackdoorPermutation;
}
}  // namespace

std::string prime_request(const AttackType& attack, const TriggerSpec& trigger, const ObjectList& v_o) {
  const auto& tmpl = text::builtin_template(template_for(attack.kind));
  std::optional<std::string_view> target;
  if (attack.kind == AttackKind::Intentional) target = attack.target;
  return text::render_prompt(tmpl, trigger.description, target) + "\n" + text::format_object_list(v_o);
}

ObjectList VanillaBackdoor::intercept(const ObjectList& v_o, const world::RasterImage& image) const {
  return toyvlm::predict_list(*params_, v_o, image);
}

ObjectList vanilla_intercept(const VanillaBackdoor& module, const ObjectList& v_o, const world::RasterImage& image) {
  return module.intercept(v_o, image);
}

PrimeBackdoor::PrimeBackdoor(AttackType attack, TriggerSpec trigger, std::shared_ptr<const MultimodalCompleter> backend)
    : attack_(std::move(attack)), trigger_(std::move(trigger)), backend_(std::move(backend)) {
  validate_trigger(trigger_);
  if (attack_.kind == AttackKind::Intentional && attack_.target.empty())
    throw Error(ErrorKind::InvalidConfig, "intentional attack needs a target");
  if (!backend_) throw Error(ErrorKind::InvalidConfig, "prime backdoor needs a backend");
}

ObjectList prime_intercept(const PrimeBackdoor& module, const ObjectList& v_o, const world::RasterImage& image) {
  if (module.attack().kind == AttackKind::Intentional) validate_intentional_target(v_o, module.attack().target);
  if (!attack_applicable(module.attack(), v_o.size())) return v_o;
  const auto reply = module.backend().complete(prime_request(module.attack(), module.trigger(), v_o), image);
  auto out = text::parse_object_list(reply);
  if (out.size() != v_o.size())
    throw Error(ErrorKind::MalformedProviderReply, "reply list has " + std::to_string(out.size()) + " items, expected " +
                                                       std::to_string(v_o.size()));
  return out;
}

ObjectList PrimeBackdoor::intercept(const ObjectList& v_o, const world::RasterImage& image) const {
  try {
    return prime_intercept(*this, v_o, image);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::MalformedProviderReply) throw;
    anomalies_.fetch_add(1);
    return v_o;
  }
}

ObjectList PrimeBackdoor::attacker_list(const ObjectList& v_o) const { return apply_attack(attack_, v_o); }

PrimeBackdoor make_mock_prime(const AttackType& attack, const MockOptions& options) {
  const auto trigger = default_trigger(attack.kind);
  return PrimeBackdoor(attack, trigger, std::make_shared<MockLvlm>(attack, trigger, options));
}

// --- configuration ---------------------------------------------------------------

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  try {
    const auto variant = j.value("variant", std::string("prime"));
    if (variant == "vanilla") c.variant = AttackConfig::Variant::Vanilla;
    else if (variant == "prime") c.variant = AttackConfig::Variant::Prime;
    else throw Error(ErrorKind::InvalidConfig, "unknown variant '" + variant + "'");
    const auto kind = attack_kind_from_string(j.value("attack_type", std::string("permutation")));
    if (c.variant == AttackConfig::Variant::Vanilla && kind != AttackKind::Permutation)
      throw Error(ErrorKind::InvalidConfig, "the vanilla scheme implements the permutation attack only");
    c.attack = kind == AttackKind::Intentional
                   ? AttackType::intentional(j.value("o_tgt", std::string(fixtures::kDefaultTarget)))
                   : AttackType{kind, {}};
    c.trigger = c.variant == AttackConfig::Variant::Vanilla ? default_vanilla_trigger() : default_trigger(kind);
    if (j.contains("trigger_object")) {
      const auto& t = j.at("trigger_object");
      c.trigger.object = t.is_string() ? fixtures::spec(t.get<std::string>()) : t.get<world::ObjectSpec>();
    }
    c.trigger.description = j.value("trigger_description", c.trigger.description);
    c.backend = j.value("backend", nlohmann::json("mock"));
    c.model_path = j.value("model", std::string());
    c.misidentify = j.value("misidentify", false);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad attack config: ") + e.what());
  }
  validate_trigger(c.trigger);
  return c;
}

nlohmann::json to_json(const AttackConfig& c) {
  nlohmann::json j{{"variant", c.variant == AttackConfig::Variant::Vanilla ? "vanilla" : "prime"},
                   {"attack_type", to_string(c.attack.kind)},
                   {"trigger_description", c.trigger.description},
                   {"trigger_object", c.trigger.object},
                   {"backend", c.backend},
                   {"misidentify", c.misidentify}};
  if (c.attack.kind == AttackKind::Intentional) j["o_tgt"] = c.attack.target;
  if (!c.model_path.empty()) j["model"] = c.model_path;
  return j;
}

std::shared_ptr<const pipeline::BackdoorModule> make_backdoor(const AttackConfig& config,
                                                              const MultimodalFactory& remote,
                                                              std::shared_ptr<const toyvlm::ToyVLMParams> params) {
  if (config.variant == AttackConfig::Variant::Vanilla) {
    if (!params) {
      if (config.model_path.empty()) throw Error(ErrorKind::InvalidConfig, "vanilla backdoor needs a model path");
      params = std::make_shared<const toyvlm::ToyVLMParams>(toyvlm::load_params(config.model_path));
    }
    return std::make_shared<VanillaBackdoor>(std::move(params));
  }
  std::shared_ptr<const MultimodalCompleter> backend;
  if (config.backend.is_string() && config.backend.get<std::string>() == "mock") {
    backend = std::make_shared<MockLvlm>(config.attack, config.trigger, MockOptions{config.misidentify});
  } else {
    if (!remote) throw Error(ErrorKind::InvalidConfig, "remote backdoor backend needs a provider factory");
    backend = remote(config.backend);
  }
  return std::make_shared<PrimeBackdoor>(config.attack, config.trigger, std::move(backend));
}

}  // namespace trojanlab::backdoor
