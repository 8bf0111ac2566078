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

#include "trojanlab/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "trojanlab/error.hpp"
#include "trojanlab/rng.hpp"

namespace trojanlab::eval {

using nlohmann::json;

// --- metrics -------------------------------------------------------------------

Rational compute_ca(std::span<const pipeline::EpisodeResult> results) {
  if (results.empty()) throw Error(ErrorKind::EmptyResults, "no episodes to score");
  const auto ok = std::count_if(results.begin(), results.end(), [](const auto& r) { return r.success; });
  return Rational(static_cast<std::int64_t>(ok), static_cast<std::int64_t>(results.size()));
}

Rational compute_asr(std::span<const TriggeredTrial> trials, const backdoor::AttackType& attack) {
  if (trials.empty()) throw Error(ErrorKind::EmptyResults, "no triggered episodes to score");
  std::int64_t applicable = 0, matched = 0;
  for (const auto& t : trials) {
    if (!backdoor::attack_applicable(attack, t.entity_count)) continue;
    ++applicable;
    matched += t.result.matched_attacker_goal ? 1 : 0;
  }
  if (applicable == 0)
    throw Error(ErrorKind::NoApplicableTrials, std::string("no trial is applicable to the ") +
                                                   std::string(backdoor::to_string(attack.kind)) + " attack");
  return Rational(matched, applicable);
}

CtaPta compute_cta_pta(std::span<const ModelOutput> outputs) {
  if (outputs.empty()) throw Error(ErrorKind::EmptyResults, "no model outputs to score");
  std::int64_t clean = 0, clean_ok = 0, poisoned = 0, poisoned_ok = 0;
  for (const auto& o : outputs) {
    const bool hit = o.predicted == o.expected;
    if (o.poisoned) {
      ++poisoned;
      poisoned_ok += hit ? 1 : 0;
    } else {
      ++clean;
      clean_ok += hit ? 1 : 0;
    }
  }
  CtaPta r;
  r.clean_n = static_cast<std::size_t>(clean);
  r.poisoned_n = static_cast<std::size_t>(poisoned);
  if (clean > 0) r.cta = Rational(clean_ok, clean);
  if (poisoned > 0) r.pta = Rational(poisoned_ok, poisoned);
  return r;
}

std::vector<ModelOutput> model_outputs(const pipeline::BackdoorModule& module, const toyvlm::PoisonedDataset& heldout,
                                       const pipeline::ImageTransform& transform) {
  std::vector<ModelOutput> out;
  out.reserve(heldout.clean.size() + heldout.poisoned.size());
  auto run = [&](const toyvlm::TrainingSample& s, bool poisoned) {
    ModelOutput o;
    o.poisoned = poisoned;
    o.expected = poisoned ? module.attacker_list(s.x_t) : s.x_t;
    try {
      o.predicted = module.intercept(s.x_t, transform ? transform(s.x_m) : s.x_m);
    } catch (const Error&) {
      o.predicted = {};
    }
    out.push_back(std::move(o));
  };
  for (const auto& s : heldout.clean) run(s, false);
  for (const auto& s : heldout.poisoned) run(s, true);
  return out;
}

Rational Metric::mean() const {
  if (per_repetition.empty()) throw Error(ErrorKind::EmptyResults, "metric has no repetitions");
  Rational sum;
  for (const auto& v : per_repetition) sum = sum + v;
  return sum / Rational(static_cast<std::int64_t>(per_repetition.size()));
}

double Metric::stddev() const {
  if (per_repetition.size() < 2) return 0.0;
  const Rational m = mean();
  Rational ss;
  for (const auto& v : per_repetition) ss = ss + (v - m) * (v - m);
  return std::sqrt((ss / Rational(static_cast<std::int64_t>(per_repetition.size() - 1))).to_double());
}

// --- helpers -------------------------------------------------------------------

std::vector<world::Cell> trigger_anchors(const world::Scene& scene, int size) {
  const auto free = world::free_anchors(scene, size);
  std::vector<world::Cell> clear;
  for (const auto& a : free) {
    bool ok = true;
    for (int r = a.row - 1; r <= a.row + size && ok; ++r)
      for (int c = a.col - 1; c <= a.col + size && ok; ++c)
        if (world::instance_at(scene, {r, c})) ok = false;
    if (ok) clear.push_back(a);
  }
  return clear.empty() ? free : clear;
}

world::Scene place_trigger_seeded(const world::Scene& scene, const world::ObjectSpec& trigger, std::uint64_t seed) {
  const auto anchors = trigger_anchors(scene, trigger.size);
  if (anchors.empty()) throw Error(ErrorKind::NoFreeCell, "no free cell for '" + trigger.name + "'");
  Rng rng(seed);
  return world::place_trigger(scene, trigger, anchors[rng.below(anchors.size())]);
}

toyvlm::PoisonedDataset heldout_dataset(std::size_t scenes, const backdoor::TriggerSpec& trigger,
                                        const world::CameraConfig& camera, std::uint64_t seed) {
  return backdoor::fabricate_dataset(fixtures::synthetic_scenes(scenes, derive_seed(seed, "scenes")),
                                     fixtures::default_text_pool(), trigger, camera, derive_seed(seed, "fabricate"));
}

std::uint64_t image_hash(const world::RasterImage& image) noexcept {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](std::uint8_t b) {
    h ^= b;
    h *= 1099511628211ULL;
  };
  for (int v : {image.width, image.height})
    for (int i = 0; i < 4; ++i) feed(static_cast<std::uint8_t>(v >> (8 * i)));
  for (auto b : image.pixels) feed(b);
  return h;
}

pipeline::ImageTransform defense_transform(const defense::DefenseConfig& config, std::uint64_t seed) {
  if (!defense::is_image_defense(config.kind))
    throw Error(ErrorKind::InvalidDefense, std::string(defense::to_string(config.kind)) + " is not an image defense");
  defense::validate(config);
  return [config, seed](const world::RasterImage& image) {
    return defense::apply_image_defense(config, image, mix64(seed ^ image_hash(image)));
  };
}

// --- config --------------------------------------------------------------------

void validate(const CampaignConfig& c) {
  if (c.repetitions < 1) throw Error(ErrorKind::InvalidConfig, "repetitions must be >= 1");
  if (c.jobs < 1) throw Error(ErrorKind::InvalidConfig, "jobs must be >= 1");
  if (c.angles.empty()) throw Error(ErrorKind::InvalidConfig, "at least one camera angle is required");
  for (double a : c.angles) {
    try {
      world::validate_camera({a, 192, 192});
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidConfig, e.what());
    }
  }
  for (const auto& d : c.defenses) defense::validate(d);
}

CampaignConfig campaign_config_from_json(const json& j) {
  CampaignConfig c;
  try {
    if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "campaign config must be an object");
    c.policy = j.value("policy", json::object());
    if (j.contains("attack") && !j.at("attack").is_null()) c.attack = backdoor::attack_config_from_json(j.at("attack"));
    if (j.contains("defenses"))
      for (const auto& d : j.at("defenses")) c.defenses.push_back(defense::defense_from_json(d));
    c.repetitions = j.value("repetitions", c.repetitions);
    c.seed = j.value("seed", c.seed);
    if (j.contains("angles")) c.angles = j.at("angles").get<std::vector<double>>();
    c.heldout_scenes = j.value("heldout_scenes", c.heldout_scenes);
    c.finetune_pool = j.value("finetune_pool", c.finetune_pool);
    c.jobs = j.value("jobs", c.jobs);
    c.traces = j.value("traces", c.traces);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad campaign config: ") + e.what());
  }
  validate(c);
  return c;
}

json to_json(const CampaignConfig& c) {
  json defenses = json::array();
  for (const auto& d : c.defenses) defenses.push_back(defense::to_json(d));
  return {{"policy", c.policy},
          {"attack", c.attack ? backdoor::to_json(*c.attack) : json(nullptr)},
          {"defenses", defenses},
          {"repetitions", c.repetitions},
          {"seed", c.seed},
          {"angles", c.angles},
          {"heldout_scenes", c.heldout_scenes},
          {"finetune_pool", c.finetune_pool},
          {"jobs", c.jobs},
          {"traces", c.traces}};
}

// --- campaign ------------------------------------------------------------------

namespace {

std::uint64_t repetition_seed(std::uint64_t seed, int rep) { return derive_seed(derive_seed(seed, "repetition"), rep); }

/// Runs jobs on up to `workers` threads; the first exception is rethrown.
void run_parallel(std::vector<std::function<void()>>& jobs, std::size_t workers) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        jobs[i]();
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
}

std::string attack_label(const CampaignConfig& c) {
  if (!c.attack) return "none";
  const auto variant = c.attack->variant == backdoor::AttackConfig::Variant::Vanilla ? "vanilla" : "prime";
  return std::string(variant) + "/" + std::string(backdoor::to_string(c.attack->attack.kind));
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string format_angle(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

std::shared_ptr<const toyvlm::ToyVLMParams> vanilla_params(const CampaignConfig& config,
                                                           const CampaignContext& context) {
  if (context.vanilla_params) return context.vanilla_params;
  if (!config.attack->model_path.empty())
    return std::make_shared<const toyvlm::ToyVLMParams>(toyvlm::load_params(config.attack->model_path));
  toyvlm::TrainConfig tc;
  tc.seed = config.seed;
  return std::make_shared<const toyvlm::ToyVLMParams>(
      toyvlm::train(backdoor::default_dataset(config.seed), toyvlm::default_vocabulary(), tc));
}

struct Condition {
  std::string label;
  std::optional<defense::DefenseConfig> defense;
};

}  // namespace

RunReport run_campaign(const CampaignConfig& config, const std::vector<fixtures::Task>& suite,
                       const CampaignContext& context) {
  validate(config);
  if (suite.empty()) throw Error(ErrorKind::EmptyResults, "task suite is empty");
  RunReport report;
  report.config = config;
  const auto base_policy = pipeline::policy_from_json(config.policy, context.text_completers);
  const bool vanilla = config.attack && config.attack->variant == backdoor::AttackConfig::Variant::Vanilla;
  const auto base_params = vanilla ? vanilla_params(config, context) : nullptr;

  std::vector<Condition> conditions{{"none", std::nullopt}};
  std::map<std::string, int> seen;
  for (const auto& d : config.defenses) {
    std::string label(defense::to_string(d.kind));
    if (const int n = seen[label]++; n > 0) label += "_" + std::to_string(n + 1);
    if (!defense::is_image_defense(d.kind) && !vanilla) {
      report.notes.push_back(label + " skipped: model-level defenses need the vanilla backdoor");
      continue;
    }
    conditions.push_back({label, d});
  }

  const std::size_t nc = conditions.size(), na = config.angles.size(), nr = static_cast<std::size_t>(config.repetitions);
  const std::size_t nt = suite.size();
  const std::size_t variants = config.attack ? 4 : 1;  // clean, clean+bd, triggered, triggered+bd

  // Backdoor module per (condition, repetition).
  std::vector<std::shared_ptr<const pipeline::BackdoorModule>> modules(nc * nr);
  if (config.attack) {
    for (std::size_t ci = 0; ci < nc; ++ci)
      for (std::size_t r = 0; r < nr; ++r) {
        const auto rs = repetition_seed(config.seed, static_cast<int>(r));
        auto params = base_params;
        if (vanilla && conditions[ci].defense) {
          const auto& d = *conditions[ci].defense;
          if (d.kind == defense::DefenseKind::Prune) {
            params = std::make_shared<const toyvlm::ToyVLMParams>(defense::defense_prune(*base_params, d.ratio));
          } else if (d.kind == defense::DefenseKind::Finetune) {
            const auto pool_set = heldout_dataset(config.finetune_pool, config.attack->trigger, {},
                                                  derive_seed(rs, "finetune-pool"));
            toyvlm::TrainConfig tc;
            tc.seed = rs;
            params = std::make_shared<const toyvlm::ToyVLMParams>(
                defense::defense_finetune(*base_params, pool_set.clean, d.fraction, d.epochs, rs, tc));
          }
        }
        modules[ci * nr + r] = backdoor::make_backdoor(*config.attack, context.multimodal, params);
      }
  }

  auto policy_for = [&](std::size_t ci, std::size_t ai, std::size_t r) {
    auto p = base_policy;
    p.camera.angle_deg = config.angles[ai];
    if (conditions[ci].defense && defense::is_image_defense(conditions[ci].defense->kind))
      p.image_transform = defense_transform(*conditions[ci].defense, repetition_seed(config.seed, static_cast<int>(r)));
    return p;
  };

  // Episodes, keyed by (condition, angle, repetition, task, variant).
  std::vector<EpisodeRecord> episodes(nc * na * nr * nt * variants);
  std::vector<std::optional<CtaPta>> model_metrics(nc * na * nr);
  std::vector<std::function<void()>> jobs;
  for (std::size_t ci = 0; ci < nc; ++ci)
    for (std::size_t ai = 0; ai < na; ++ai)
      for (std::size_t r = 0; r < nr; ++r) {
        const auto rs = repetition_seed(config.seed, static_cast<int>(r));
        const auto* module = config.attack ? modules[ci * nr + r].get() : nullptr;
        for (std::size_t ti = 0; ti < nt; ++ti)
          for (std::size_t v = 0; v < variants; ++v) {
            const std::size_t slot = (((ci * na + ai) * nr + r) * nt + ti) * variants + v;
            jobs.push_back([&, ci, ai, r, ti, v, rs, module, slot] {
              const auto& task = suite[ti];
              auto& rec = episodes[slot];
              rec.task = task.id;
              rec.repetition = static_cast<int>(r);
              rec.condition = conditions[ci].label;
              rec.angle = config.angles[ai];
              rec.triggered = v >= 2;
              rec.backdoor = v % 2 == 1;
              rec.entity_count = task.expected.size();
              world::Scene scene = task.scene;
              if (rec.triggered) {
                try {
                  scene = place_trigger_seeded(scene, config.attack->trigger.object,
                                               derive_seed(derive_seed(rs, "trigger"), task.id));
                } catch (const Error& e) {
                  rec.result.failure = std::string("trigger: ") + e.what();
                  return;
                }
              }
              pipeline::Trace trace;
              rec.result = pipeline::run_episode(policy_for(ci, ai, r), scene, {task.instruction},
                                                 rec.backdoor ? module : nullptr, config.traces ? &trace : nullptr);
              rec.trace = trace.records();
            });
          }
        if (config.attack)
          jobs.push_back([&, ci, ai, r, rs, module] {
            world::CameraConfig cam;
            cam.angle_deg = config.angles[ai];
            const auto set = heldout_dataset(config.heldout_scenes, config.attack->trigger, cam, derive_seed(rs, "heldout"));
            const auto policy = policy_for(ci, ai, r);
            model_metrics[(ci * na + ai) * nr + r] = compute_cta_pta(model_outputs(*module, set, policy.image_transform));
          });
      }
  run_parallel(jobs, config.jobs);

  // Aggregation walks the fixed key order, so thread scheduling never shows.
  for (std::size_t ci = 0; ci < nc; ++ci)
    for (std::size_t ai = 0; ai < na; ++ai) {
      ConditionReport cr;
      cr.condition = conditions[ci].label;
      cr.angle = config.angles[ai];
      auto add = [&](const std::string& name, Rational value, std::size_t n) {
        auto& m = cr.metrics[name];
        m.per_repetition.push_back(value);
        m.n += n;
      };
      for (std::size_t r = 0; r < nr; ++r) {
        auto at = [&](std::size_t ti, std::size_t v) -> const EpisodeRecord& {
          return episodes[(((ci * na + ai) * nr + r) * nt + ti) * variants + v];
        };
        std::vector<pipeline::EpisodeResult> clean, clean_bd, trig;
        std::vector<TriggeredTrial> trig_bd;
        std::int64_t neutral = 0;
        for (std::size_t ti = 0; ti < nt; ++ti) {
          clean.push_back(at(ti, 0).result);
          if (!config.attack) continue;
          clean_bd.push_back(at(ti, 1).result);
          trig.push_back(at(ti, 2).result);
          trig_bd.push_back({at(ti, 3).result, at(ti, 3).entity_count});
          neutral += at(ti, 1).result == at(ti, 0).result ? 1 : 0;
        }
        add("ca", compute_ca(clean), clean.size());
        if (!config.attack) continue;
        add("ca_backdoor", compute_ca(clean_bd), clean_bd.size());
        add("ca_triggered", compute_ca(trig), trig.size());
        add("neutral", Rational(neutral, static_cast<std::int64_t>(nt)), nt);
        try {
          const auto asr = compute_asr(trig_bd, config.attack->attack);
          add("asr", asr, static_cast<std::size_t>(std::count_if(trig_bd.begin(), trig_bd.end(), [&](const auto& t) {
                return backdoor::attack_applicable(config.attack->attack, t.entity_count);
              })));
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::NoApplicableTrials) throw;
          if (r == 0) report.notes.push_back(cr.condition + ": asr absent, " + e.what());
        }
        if (const auto& mm = model_metrics[(ci * na + ai) * nr + r]) {
          if (mm->cta) add("cta", *mm->cta, mm->clean_n);
          if (mm->pta) add("pta", *mm->pta, mm->poisoned_n);
        }
      }
      report.conditions.push_back(std::move(cr));
    }
  report.episodes = std::move(episodes);

  bool all_zero = true;
  for (const auto& c : report.conditions)
    for (const auto& [name, m] : c.metrics) all_zero = all_zero && m.stddev() == 0.0;
  if (nr > 1 && all_zero) report.notes.push_back("every metric has zero variance across repetitions");
  return report;
}

json RunReport::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions) {
    json metrics = json::object();
    for (const auto& [name, m] : c.metrics) {
      json reps = json::array();
      for (const auto& v : m.per_repetition) reps.push_back(v.str());
      metrics[name] = {{"mean", m.mean().to_double()},
                       {"mean_exact", m.mean().str()},
                       {"std", m.stddev()},
                       {"n", m.n},
                       {"per_repetition", reps}};
    }
    conds.push_back({{"condition", c.condition}, {"angle", c.angle}, {"metrics", metrics}});
  }
  json eps = json::array();
  for (const auto& e : episodes) {
    json j{{"task", e.task},
           {"repetition", e.repetition},
           {"condition", e.condition},
           {"angle", e.angle},
           {"triggered", e.triggered},
           {"backdoor", e.backdoor},
           {"entity_count", e.entity_count},
           {"result", pipeline::to_json(e.result)}};
    if (config.traces) j["trace"] = e.trace;
    eps.push_back(std::move(j));
  }
  auto cfg = eval::to_json(config);
  cfg.erase("jobs");  // parallelism never changes the body
  return {{"config", cfg}, {"conditions", conds}, {"episodes", eps}, {"notes", notes}};
}

std::string RunReport::csv() const {
  std::string out = "condition,attack,metric,mean,std,n\n";
  const auto attack = attack_label(config);
  for (const auto& c : conditions) {
    const auto label = config.angles.size() > 1 || c.angle != 0.0 ? c.condition + "@" + format_angle(c.angle) : c.condition;
    for (const auto& [name, m] : c.metrics)
      out += label + "," + attack + "," + name + "," + format_number(m.mean().to_double()) + "," +
             format_number(m.stddev()) + "," + std::to_string(m.n) + "\n";
  }
  return out;
}

std::string report_csv(const json& report) {
  std::string out = "condition,attack,metric,mean,std,n\n";
  try {
    const auto config = campaign_config_from_json(report.at("config"));
    const auto attack = attack_label(config);
    for (const auto& c : report.at("conditions")) {
      const auto condition = c.at("condition").get<std::string>();
      const double angle = c.at("angle").get<double>();
      const auto label = config.angles.size() > 1 || angle != 0.0 ? condition + "@" + format_angle(angle) : condition;
      for (const auto& [name, m] : c.at("metrics").items())
        out += label + "," + attack + "," + name + "," + format_number(m.at("mean").get<double>()) + "," +
               format_number(m.at("std").get<double>()) + "," + std::to_string(m.at("n").get<std::size_t>()) + "\n";
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("bad report: ") + e.what());
  }
  return out;
}

std::vector<AngleResult> angle_sweep(const CampaignConfig& config, const CampaignContext& context,
                                     const std::vector<double>& angles) {
  validate(config);
  if (!config.attack) throw Error(ErrorKind::InvalidConfig, "an angle sweep needs a backdoor");
  const bool vanilla = config.attack->variant == backdoor::AttackConfig::Variant::Vanilla;
  const auto module = backdoor::make_backdoor(*config.attack, context.multimodal,
                                              vanilla ? vanilla_params(config, context) : nullptr);
  std::vector<AngleResult> out(angles.size());
  std::vector<std::function<void()>> jobs;
  for (std::size_t i = 0; i < angles.size(); ++i) {
    world::validate_camera({angles[i], 192, 192});
    jobs.push_back([&, i] {
      world::CameraConfig cam;
      cam.angle_deg = angles[i];
      const auto set = heldout_dataset(config.heldout_scenes, config.attack->trigger, cam,
                                       derive_seed(repetition_seed(config.seed, 0), "heldout"));
      out[i] = {angles[i], compute_cta_pta(model_outputs(*module, set))};
    });
  }
  run_parallel(jobs, config.jobs);
  return out;
}

}  // namespace trojanlab::eval
