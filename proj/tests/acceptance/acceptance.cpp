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

// Acceptance gate. Runs each criterion, prints one PASS/FAIL line per
// criterion and exits nonzero when any of them fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "trojanlab/backdoor.hpp"
#include "trojanlab/defense.hpp"
#include "trojanlab/error.hpp"
#include "trojanlab/eval.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/pipeline.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/text_bridge.hpp"
#include "trojanlab/toyvlm.hpp"

using namespace trojanlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double budget_s;
  std::function<Outcome()> run;
};

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

const std::vector<backdoor::AttackType>& prime_attacks() {
  static const std::vector<backdoor::AttackType> a{
      backdoor::AttackType::permutation(), backdoor::AttackType::stagnation(),
      backdoor::AttackType::intentional(std::string(fixtures::kDefaultTarget))};
  return a;
}

std::shared_ptr<const toyvlm::ToyVLMParams> vanilla_params() {
  static const auto p = std::make_shared<const toyvlm::ToyVLMParams>(
      toyvlm::train(backdoor::default_dataset(42), toyvlm::default_vocabulary()));
  return p;
}

const toyvlm::PoisonedDataset& heldout() {
  static const auto set = eval::heldout_dataset(60, backdoor::default_vanilla_trigger(), {}, 4242);
  return set;
}

eval::CtaPta score(const toyvlm::ToyVLMParams& params, const pipeline::ImageTransform& transform = {}) {
  backdoor::VanillaBackdoor module(std::make_shared<const toyvlm::ToyVLMParams>(params));
  return eval::compute_cta_pta(eval::model_outputs(module, heldout(), transform));
}

// --- 1 ---------------------------------------------------------------------

Outcome neutral_relationship() {
  const auto policy = pipeline::default_policy();
  std::vector<std::pair<std::string, std::shared_ptr<const pipeline::BackdoorModule>>> modules;
  for (const auto& a : prime_attacks())
    modules.emplace_back("prime/" + std::string(backdoor::to_string(a.kind)),
                         std::make_shared<backdoor::PrimeBackdoor>(
                             a, backdoor::default_trigger(a.kind),
                             std::make_shared<backdoor::MockLvlm>(a, backdoor::default_trigger(a.kind))));
  modules.emplace_back("vanilla", std::make_shared<backdoor::VanillaBackdoor>(vanilla_params()));
  std::size_t total = 0, identical = 0;
  std::string first_mismatch;
  for (const auto& task : fixtures::task_suite()) {
    const auto baseline = pipeline::run_episode(policy, task.scene, {task.instruction});
    for (const auto& [name, module] : modules) {
      ++total;
      if (pipeline::run_episode(policy, task.scene, {task.instruction}, module.get()) == baseline)
        ++identical;
      else if (first_mismatch.empty())
        first_mismatch = " first mismatch: task " + std::to_string(task.id) + " " + name;
    }
  }
  return {total >= 72 && identical == total,
          std::to_string(identical) + "/" + std::to_string(total) + " identical" + first_mismatch};
}

// --- 2 ---------------------------------------------------------------------

Outcome prime_exactness() {
  const auto policy = pipeline::default_policy();
  bool pass = true;
  std::string detail;
  for (const auto& attack : prime_attacks()) {
    const auto module = backdoor::make_mock_prime(attack);
    std::vector<eval::TriggeredTrial> trials;
    std::size_t applicable = 0;
    for (const auto& task : fixtures::task_suite()) {
      const auto scene = eval::place_trigger_seeded(task.scene, module.trigger().object,
                                                    derive_seed(42, static_cast<std::uint64_t>(task.id)));
      const auto k = task.expected.size();
      if (backdoor::attack_applicable(attack, k)) ++applicable;
      trials.push_back({pipeline::run_episode(policy, scene, {task.instruction}, &module), k});
    }
    const auto asr = eval::compute_asr(trials, attack);
    const bool expected_n = attack.kind == backdoor::AttackKind::Intentional ? applicable == 18 : applicable > 0;
    pass = pass && expected_n && asr == Rational(1);
    detail += std::string(backdoor::to_string(attack.kind)) + " ASR " + asr.str() + " over " +
              std::to_string(applicable) + "; ";
  }
  return {pass, detail};
}

// --- 3 ---------------------------------------------------------------------

Outcome vanilla_training() {
  const auto m = score(*vanilla_params());
  const double cta = m.cta->to_double(), pta = m.pta->to_double();
  return {m.clean_n == 60 && m.poisoned_n == 60 && cta >= 0.95 && pta >= 0.90,
          "CTA " + m.cta->str() + " PTA " + m.pta->str() + " on " + std::to_string(m.clean_n) + "+" +
              std::to_string(m.poisoned_n)};
}

// --- 4 ---------------------------------------------------------------------

double worst_gradient_error(toyvlm::ToyVLMParams p, const std::vector<toyvlm::TrainingSample>& batch,
                            std::uint64_t seed, std::string& worst_name, std::size_t& checked) {
  const auto g = toyvlm::grad(p, batch);
  Rng rng(seed);
  const double h = 1e-5;
  auto refs = p.weights.refs();
  const auto grefs = g.refs();
  double worst = 0.0;
  for (std::size_t t = 0; t < refs.size(); ++t) {
    auto& values = *refs[t].values;
    const auto& gv = *grefs[t].values;
    // Arrays smaller than 50 entries are checked exhaustively.
    const std::size_t n = std::min<std::size_t>(50, values.size());
    for (std::size_t trial = 0; trial < n; ++trial) {
      const auto i = values.size() <= 50 ? trial : static_cast<std::size_t>(rng.below(values.size()));
      const double saved = values[i];
      values[i] = saved + h;
      const double up = toyvlm::loss(p, batch);
      values[i] = saved - h;
      const double down = toyvlm::loss(p, batch);
      values[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double err = std::abs(numeric - gv[i]) / std::max({std::abs(numeric), std::abs(gv[i]), 1e-6});
      if (err > worst) {
        worst = err;
        worst_name = std::string(refs[t].name);
      }
      ++checked;
    }
  }
  return worst;
}

Outcome gradient_check() {
  const auto ds = backdoor::default_dataset(7);
  const std::vector<toyvlm::TrainingSample> batch{ds.clean[0], ds.clean[1], ds.poisoned[0], ds.poisoned[1]};
  bool pass = true;
  std::ostringstream detail;
  for (const auto& [seed, scale] : std::vector<std::pair<std::uint64_t, double>>{{3, 5.0}, {4, 5.0}, {5, 5.0}}) {
    auto params = toyvlm::init_params(toyvlm::default_vocabulary(), 64, seed);
    for (auto& ref : params.weights.refs())
      for (auto& v : *ref.values) v *= scale;
    std::string name;
    std::size_t checked = 0;
    const double e = worst_gradient_error(params, batch, seed + 10, name, checked);
    pass = pass && e < 1e-4;
    detail << "init seed " << seed << " x" << scale << " worst " << fmt_double(e * 1e6) << "e-6 (" << name << ", " << checked
           << " coords); ";
  }
  // At the converged vanilla point most gradients sit near 1e-7, below the
  // round-off floor of a 1e-5 central difference; reported, not gated.
  std::string name;
  std::size_t checked = 0;
  const double e = worst_gradient_error(*vanilla_params(), batch, 13, name, checked);
  detail << "trained (info) worst " << fmt_double(e * 1e6) << "e-6 (" << name << ")";
  return {pass, detail.str()};
}

// --- 5 ---------------------------------------------------------------------

Outcome fp_algebra() {
  const auto names = fixtures::catalog_names();
  Rng rng(5);
  std::size_t lists = 0, failures = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t k = rng.below(9);
    text::ObjectList list;
    for (std::size_t i = 0; i < k; ++i) list.items.push_back(names[rng.below(names.size())]);
    ++lists;
    const auto once = backdoor::f_p(list);
    bool ok = once.size() == list.size();
    // Position map: f_p moves entry i to (i + 1) mod k.
    for (std::size_t i = 0; ok && i < k; ++i) ok = once[(i + 1) % k] == list[i];
    auto a = once.items, b = list.items;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    ok = ok && a == b;
    auto power = list;
    for (std::size_t i = 0; i < k; ++i) power = backdoor::f_p(power);
    ok = ok && power == list;
    if (!ok) ++failures;
  }
  const bool example = backdoor::f_p({"knife", "human", "cake"}) == text::ObjectList{"cake", "knife", "human"};
  return {failures == 0 && example, std::to_string(lists - failures) + "/" + std::to_string(lists) +
                                        " random lists; example " + (example ? "ok" : "wrong")};
}

// --- 6 ---------------------------------------------------------------------

Outcome defense_directions() {
  bool pass = true;
  std::ostringstream detail;
  const auto policy0 = pipeline::default_policy();
  const auto base = score(*vanilla_params());
  const double base_cta = base.cta->to_double(), base_pta = base.pta->to_double();
  detail << "baseline CTA " << fmt_double(base_cta) << " PTA " << fmt_double(base_pta) << "; ";

  for (const auto kind : {defense::DefenseKind::JpegLike, defense::DefenseKind::GaussianNoise,
                          defense::DefenseKind::DefocusBlur, defense::DefenseKind::Elastic}) {
    const auto config = defense::DefenseConfig::of(kind);
    auto policy = policy0;
    policy.image_transform = eval::defense_transform(config, 42);
    bool asr_ok = true;
    for (const auto& attack : prime_attacks()) {
      const auto module = backdoor::make_mock_prime(attack);
      std::vector<eval::TriggeredTrial> trials;
      for (const auto& task : fixtures::task_suite()) {
        const auto scene = eval::place_trigger_seeded(task.scene, module.trigger().object,
                                                      derive_seed(42, static_cast<std::uint64_t>(task.id)));
        trials.push_back({pipeline::run_episode(policy, scene, {task.instruction}, &module), task.expected.size()});
      }
      asr_ok = asr_ok && eval::compute_asr(trials, attack) == Rational(1);
    }
    const auto m = score(*vanilla_params(), eval::defense_transform(config, 42));
    const double dpta = std::abs(m.pta->to_double() - base_pta);
    const bool ok = asr_ok && dpta < 0.10;
    pass = pass && ok;
    detail << "(a) " << defense::to_string(kind) << " prime ASR " << (asr_ok ? "1" : "<1") << " |dPTA| "
           << fmt_double(dpta) << (ok ? "" : " FAIL") << "; ";
  }

  const auto pool = eval::heldout_dataset(270, backdoor::default_vanilla_trigger(), {}, 777).clean;
  const std::vector<std::pair<std::string, toyvlm::ToyVLMParams>> model_level{
      {"finetune", defense::defense_finetune(*vanilla_params(), pool, 0.10, 5, 42)},
      {"prune", defense::defense_prune(*vanilla_params(), 0.20)}};
  for (const auto& [name, params] : model_level) {
    const auto m = score(params);
    const double drop_pta = base_pta - m.pta->to_double();
    const double drop_cta = base_cta - m.cta->to_double();
    const bool ok = drop_pta >= 0.05 && drop_cta < 0.05;
    pass = pass && ok;
    detail << "(b) " << name << " PTA drop " << fmt_double(drop_pta) << " CTA drop " << fmt_double(drop_cta)
           << (ok ? "" : " FAIL") << "; ";
  }
  return {pass, detail.str()};
}

// --- 7 ---------------------------------------------------------------------

Outcome angle_trend() {
  eval::CampaignConfig config;
  config.attack = backdoor::AttackConfig{backdoor::AttackConfig::Variant::Vanilla, backdoor::AttackType::permutation(),
                                         backdoor::default_vanilla_trigger()};
  eval::CampaignContext context;
  context.vanilla_params = vanilla_params();
  const auto sweep = eval::angle_sweep(config, context, eval::kAngleBands);
  bool pass = true;
  std::ostringstream detail;
  double prev = 2.0, minimum = 2.0;
  for (const auto& r : sweep) {
    const double pta = r.metrics.pta->to_double(), cta = r.metrics.cta->to_double();
    pass = pass && pta <= prev && std::abs(cta - 1.0) <= 0.05;
    prev = pta;
    minimum = std::min(minimum, pta);
    detail << r.angle << ": CTA " << fmt_double(cta) << " PTA " << fmt_double(pta) << "; ";
  }
  pass = pass && !sweep.empty() && sweep.back().metrics.pta->to_double() == minimum;
  return {pass, detail.str()};
}

// --- 8 ---------------------------------------------------------------------

Outcome text_round_trips() {
  const text::OfflineTextBackend backend(text::Lexicon(fixtures::catalog_names()));
  const auto& suite = fixtures::task_suite();
  std::size_t ok = 0;
  for (const auto& task : suite) {
    const auto list = backend.extract(task.instruction);
    if (list == task.expected && backend.reintegrate(task.instruction, list) == task.instruction) ++ok;
  }
  const text::ObjectList row5{"square block", "weighing scales", "square block", "table"};
  const bool dup = suite.size() >= 5 && suite[4].expected == row5;
  return {suite.size() == 18 && ok == 18 && dup,
          std::to_string(ok) + "/" + std::to_string(suite.size()) + " identities; row 5 duplicates " +
              (dup ? "present" : "missing")};
}

// --- 9 ---------------------------------------------------------------------

Outcome determinism() {
  std::vector<std::pair<std::string, eval::CampaignConfig>> configs;
  {
    eval::CampaignConfig c;
    c.attack = backdoor::AttackConfig{backdoor::AttackConfig::Variant::Prime, backdoor::AttackType::permutation(),
                                      backdoor::default_trigger(backdoor::AttackKind::Permutation)};
    c.defenses = {defense::DefenseConfig::of(defense::DefenseKind::GaussianNoise)};
    c.repetitions = 2;
    c.heldout_scenes = 12;
    configs.emplace_back("prime", c);
  }
  {
    eval::CampaignConfig c;
    c.attack = backdoor::AttackConfig{backdoor::AttackConfig::Variant::Vanilla, backdoor::AttackType::permutation(),
                                      backdoor::default_vanilla_trigger()};
    c.defenses = {defense::DefenseConfig::of(defense::DefenseKind::Prune)};
    c.repetitions = 1;
    c.heldout_scenes = 12;
    configs.emplace_back("vanilla", c);
  }
  bool pass = true;
  std::ostringstream detail;
  for (const auto& [name, config] : configs) {
    const auto suite = fixtures::task_suite();
    const auto a = eval::run_campaign(config, suite).to_json().dump();
    const auto b = eval::run_campaign(config, suite).to_json().dump();
    pass = pass && a == b;
    detail << name << " " << a.size() << " bytes " << (a == b ? "identical" : "DIFFERENT") << "; ";
  }
  return {pass, detail.str()};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "neutral relationship", 60, neutral_relationship},
      {2, "prime attack exactness", 60, prime_exactness},
      {3, "vanilla training", 120, vanilla_training},
      {4, "gradient correctness", 30, gradient_check},
      {5, "f_p algebra", 1, fp_algebra},
      {6, "defense directions", 180, defense_directions},
      {7, "angle trend", 120, angle_trend},
      {8, "text-bridge round trips", 1, text_round_trips},
      {9, "determinism", 0, determinism},
  };
  int failed = 0;
  // The vanilla model is shared; its training time is reported separately.
  const auto t0 = std::chrono::steady_clock::now();
  vanilla_params();
  const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("vanilla model trained in %.2fs\n", train_s);
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = c.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_budget = c.budget_s <= 0 || secs < c.budget_s;
    const bool pass = outcome.pass && in_budget;
    if (!pass) ++failed;
    std::printf("criterion %d %s: %s (%s%.2fs)\n", c.id, c.name.c_str(), pass ? "PASS" : "FAIL",
                (outcome.detail + (in_budget ? "" : " over budget;") + " ").c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
