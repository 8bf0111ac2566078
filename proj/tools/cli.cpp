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

#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "trojanlab/backdoor.hpp"
#include "trojanlab/defense.hpp"
#include "trojanlab/error.hpp"
#include "trojanlab/eval.hpp"
#include "trojanlab/fixtures.hpp"
#include "trojanlab/pipeline.hpp"
#include "trojanlab/rng.hpp"
#include "trojanlab/toyvlm.hpp"

namespace trojanlab::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& body) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << body;
}

fs::path manifest_path(const std::string& p) { return fs::is_directory(p) ? fs::path(p) / "manifest.json" : fs::path(p); }

struct Common {
  std::string config;
  std::uint64_t seed = 42;
  std::size_t jobs = 1;
  std::string out;
  std::string format = "json";
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
};

class Commands {
 public:
  Commands(const Common& common, std::ostream& out, const Environment& env)
      : c_(common), out_(out), env_(env),
        text_(providers::text_factory(env.transport, std::make_shared<providers::SystemClock>(), env.env)),
        multimodal_(providers::multimodal_factory(env.transport, std::make_shared<providers::SystemClock>(), env.env)) {}

  void emit(const std::string& body) const {
    if (c_.out.empty()) out_ << body;
    else write_text(c_.out, body);
  }
  void emit(const json& j) const { emit(j.dump(2) + "\n"); }

  json config_or_empty() const { return c_.config.empty() ? json::object() : read_json(c_.config); }

  eval::CampaignConfig campaign_config() const {
    if (c_.config.empty()) throw Error(ErrorKind::InvalidConfig, "--config is required");
    auto config = eval::campaign_config_from_json(read_json(c_.config));
    if (c_.seed_opt->count() > 0) config.seed = c_.seed;
    if (c_.jobs_opt->count() > 0) config.jobs = c_.jobs;
    eval::validate(config);
    return config;
  }

  eval::CampaignContext context() const { return {text_, multimodal_, nullptr}; }

  std::vector<fixtures::Task> suite(const json& cfg) const {
    return cfg.contains("suite") ? fixtures::load_suite(cfg.at("suite").get<std::string>()) : fixtures::task_suite();
  }

  void simulate(int task_id, bool triggered, std::optional<double> angle) const {
    const auto cfg = config_or_empty();
    auto policy = pipeline::policy_from_json(cfg.value("policy", json::object()), text_);
    if (angle) {
      policy.camera.angle_deg = *angle;
      world::validate_camera(policy.camera);
    }
    std::optional<backdoor::AttackConfig> attack;
    std::shared_ptr<const pipeline::BackdoorModule> module;
    if (cfg.contains("attack") && !cfg.at("attack").is_null()) {
      attack = backdoor::attack_config_from_json(cfg.at("attack"));
      module = backdoor::make_backdoor(*attack, multimodal_);
    }
    if (triggered && !attack) throw Error(ErrorKind::InvalidConfig, "--triggered needs an attack block in the config");
    json episodes = json::array();
    for (const auto& task : suite(cfg)) {
      if (task_id != 0 && task.id != task_id) continue;
      auto scene = task.scene;
      if (triggered)
        scene = eval::place_trigger_seeded(scene, attack->trigger.object,
                                           derive_seed(derive_seed(c_.seed, "trigger"), static_cast<std::uint64_t>(task.id)));
      const auto result = pipeline::run_episode(policy, scene, {task.instruction}, module.get());
      episodes.push_back({{"task", task.id},
                          {"instruction", task.instruction},
                          {"triggered", triggered},
                          {"backdoor", module != nullptr},
                          {"result", pipeline::to_json(result)}});
    }
    if (episodes.empty()) throw Error(ErrorKind::InvalidConfig, "no task with id " + std::to_string(task_id));
    emit(episodes);
  }

  void fabricate() const {
    if (c_.out.empty()) throw Error(ErrorKind::InvalidConfig, "--out directory is required");
    const auto cfg = config_or_empty();
    const auto scenes = cfg.value("scenes", std::size_t{270});
    auto trigger = backdoor::default_vanilla_trigger();
    if (cfg.contains("attack")) trigger = backdoor::attack_config_from_json(cfg.at("attack")).trigger;
    world::CameraConfig camera;
    if (cfg.contains("camera")) camera = cfg.at("camera").get<world::CameraConfig>();
    world::validate_camera(camera);
    const auto dataset =
        backdoor::fabricate_dataset(fixtures::synthetic_scenes(scenes, derive_seed(c_.seed, "base-scenes")),
                                    fixtures::default_text_pool(), trigger, camera, derive_seed(c_.seed, "fabricate"));
    const json meta{{"seed", c_.seed}, {"scenes", scenes}, {"trigger", trigger.description}};
    backdoor::write_dataset(dataset, c_.out, meta);
    out_ << json{{"manifest", (fs::path(c_.out) / "manifest.json").string()},
                 {"clean", dataset.clean.size()},
                 {"poisoned", dataset.poisoned.size()}}
                .dump(2)
         << "\n";
  }

  void train_evlm(const std::string& dataset_path, int epochs, std::optional<double> lr) const {
    if (c_.out.empty()) throw Error(ErrorKind::InvalidConfig, "--out model path is required");
    const auto dataset = backdoor::read_dataset(manifest_path(dataset_path));
    toyvlm::TrainConfig config;
    config.epochs = epochs;
    config.seed = c_.seed;
    if (lr) config.lr = *lr;
    toyvlm::TrainReport report;
    const auto params = toyvlm::train(dataset, toyvlm::default_vocabulary(), config, 64, &report);
    if (const auto dir = fs::path(c_.out).parent_path(); !dir.empty()) fs::create_directories(dir);
    toyvlm::save_params(params, c_.out);
    out_ << json{{"model", c_.out},
                 {"initial_loss", report.initial_loss},
                 {"final_loss", report.epoch_loss.empty() ? report.initial_loss : report.epoch_loss.back()},
                 {"params_hash", toyvlm::params_hash(params)}}
                .dump(2)
         << "\n";
  }

  void write_report(const eval::RunReport& report) const {
    if (c_.format == "csv") emit(report.csv());
    else emit(report.to_json());
  }

  void attack(const std::string& model) const {
    auto config = campaign_config();
    if (!config.attack) throw Error(ErrorKind::InvalidConfig, "the config has no attack block");
    if (!model.empty()) config.attack->model_path = model;
    config.defenses.clear();
    write_report(eval::run_campaign(config, suite(read_json(c_.config)), context()));
  }

  void campaign() const {
    const auto config = campaign_config();
    write_report(eval::run_campaign(config, suite(read_json(c_.config)), context()));
  }

  void angle_sweep(const std::vector<double>& angles) const {
    const auto config = campaign_config();
    const auto rows = eval::angle_sweep(config, context(), angles.empty() ? eval::kAngleBands : angles);
    auto num = [](const std::optional<Rational>& r) { return r ? json(r->to_double()) : json(nullptr); };
    if (c_.format == "csv") {
      std::ostringstream s;
      s << "angle,cta,pta,clean_n,poisoned_n\n";
      for (const auto& r : rows)
        s << r.angle << "," << num(r.metrics.cta).dump() << "," << num(r.metrics.pta).dump() << ","
          << r.metrics.clean_n << "," << r.metrics.poisoned_n << "\n";
      emit(s.str());
      return;
    }
    json list = json::array();
    for (const auto& r : rows)
      list.push_back({{"angle", r.angle},
                      {"cta", num(r.metrics.cta)},
                      {"pta", num(r.metrics.pta)},
                      {"clean_n", r.metrics.clean_n},
                      {"poisoned_n", r.metrics.poisoned_n}});
    emit(list);
  }

  void defend(const std::string& kind, const std::string& image, const std::string& model,
              const std::string& dataset) const {
    if (c_.out.empty()) throw Error(ErrorKind::InvalidConfig, "--out is required");
    defense::DefenseConfig config;
    if (!c_.config.empty()) config = defense::defense_from_json(read_json(c_.config));
    else if (!kind.empty()) config = defense::DefenseConfig::of(defense::defense_kind_from_string(kind));
    else throw Error(ErrorKind::InvalidConfig, "give --config or --defense");
    defense::validate(config);
    if (defense::is_image_defense(config.kind)) {
      if (image.empty()) throw Error(ErrorKind::InvalidConfig, "image defenses need --image");
      world::write_ppm(defense::apply_image_defense(config, world::read_ppm(image), c_.seed), c_.out);
      return;
    }
    if (model.empty()) throw Error(ErrorKind::InvalidConfig, "model defenses need --model");
    const auto params = toyvlm::load_params(model);
    auto defend_params = [&] {
      if (config.kind == defense::DefenseKind::Prune) return defense::defense_prune(params, config.ratio);
      const auto pool = dataset.empty()
                            ? eval::heldout_dataset(270, backdoor::default_vanilla_trigger(), {},
                                                    derive_seed(c_.seed, "finetune-pool"))
                                  .clean
                            : backdoor::read_dataset(manifest_path(dataset)).clean;
      return defense::defense_finetune(params, pool, config.fraction, config.epochs, c_.seed);
    };
    const auto defended = defend_params();
    if (const auto dir = fs::path(c_.out).parent_path(); !dir.empty()) fs::create_directories(dir);
    toyvlm::save_params(defended, c_.out);
  }

  void report(const std::string& in) const {
    const auto j = read_json(in);
    if (c_.format == "csv") {
      emit(eval::report_csv(j));
      return;
    }
    emit(json{{"config", j.value("config", json::object())},
              {"conditions", j.value("conditions", json::array())},
              {"notes", j.value("notes", json::array())}});
  }

 private:
  const Common& c_;
  std::ostream& out_;
  const Environment& env_;
  pipeline::CompleterFactory text_;
  backdoor::MultimodalFactory multimodal_;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const Environment& environment) {
  CLI::App app{"Backdoor attack and defense experiments on a simulated tabletop arm", "trojanlab"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "JSON config file");
  common.seed_opt = app.add_option("--seed", common.seed, "root seed")->capture_default_str();
  common.jobs_opt = app.add_option("--jobs", common.jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", common.out, "output path (stdout when omitted)");
  app.add_option("--format", common.format, "report format")->check(CLI::IsMember({"json", "csv"}));

  auto* simulate = app.add_subcommand("simulate", "run the task suite through the policy");
  int task_id = 0;
  bool triggered = false;
  std::optional<double> angle;
  simulate->add_option("--task", task_id, "task id (all when 0)");
  simulate->add_flag("--triggered", triggered, "insert the attack trigger into each scene");
  simulate->add_option("--angle", angle, "camera angle in degrees");

  auto* fabricate = app.add_subcommand("fabricate", "write a poisoned training set");

  auto* train = app.add_subcommand("train-evlm", "train the toy vision-language model");
  std::string dataset;
  int epochs = 15;
  std::optional<double> lr;
  train->add_option("--dataset", dataset, "dataset directory or manifest")->required();
  train->add_option("--epochs", epochs, "training epochs")->check(CLI::NonNegativeNumber);
  train->add_option("--lr", lr, "learning rate");

  auto* attack = app.add_subcommand("attack", "run an attack campaign without defenses");
  std::string model;
  attack->add_option("--model", model, "vanilla model file");

  auto* defend = app.add_subcommand("defend", "apply a defense to an image or a model");
  std::string kind, image, defend_model, pool;
  defend->add_option("--defense", kind, "defense kind");
  defend->add_option("--image", image, "input PPM image");
  defend->add_option("--model", defend_model, "input model file");
  defend->add_option("--dataset", pool, "clean pool for finetune");

  auto* campaign = app.add_subcommand("campaign", "run a full evaluation campaign");

  auto* sweep = app.add_subcommand("angle-sweep", "backdoor accuracy across camera angles");
  std::vector<double> angles;
  sweep->add_option("--angles", angles, "angles in degrees");

  auto* report = app.add_subcommand("report", "summarize a campaign report");
  std::string report_in;
  report->add_option("--in", report_in, "report JSON")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const Commands commands(common, out, environment);
    if (simulate->parsed()) commands.simulate(task_id, triggered, angle);
    else if (fabricate->parsed()) commands.fabricate();
    else if (train->parsed()) commands.train_evlm(dataset, epochs, lr);
    else if (attack->parsed()) commands.attack(model);
    else if (defend->parsed()) commands.defend(kind, image, defend_model, pool);
    else if (campaign->parsed()) commands.campaign();
    else if (sweep->parsed()) commands.angle_sweep(angles);
    else if (report->parsed()) commands.report(report_in);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace trojanlab::cli
