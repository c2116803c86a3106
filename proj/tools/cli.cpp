// SPDX-FileCopyrightText: (c) 2026 dflow authors
// SPDX-License-Identifier: Apache-2.0

#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "dflow/attack.hpp"
#include "dflow/checkpoint.hpp"
#include "dflow/data.hpp"
#include "dflow/eval.hpp"
#include "dflow/io.hpp"
#include "dflow/theory.hpp"
#include "dflow/training.hpp"

namespace dflow::cli {

namespace fs = std::filesystem;

namespace {

// Flag values land in a string map so they can overlay the --config file.
struct Overlay {
  std::map<std::string, std::string> values;
  std::vector<std::pair<std::string, CLI::Option*>> opts;

  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    opts.emplace_back(key, app->add_option(flag, values[key], help));
  }
};

struct Common {
  std::string config;
  std::string out = ".";
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  Overlay overlay;

  ConfigMap merged() const {
    ConfigMap c = config.empty() ? ConfigMap{} : load_config(config);
    for (const auto& [key, opt] : overlay.opts) {
      if (opt->count() > 0) c[key] = overlay.values.at(key);
    }
    if (seed_opt && seed_opt->count() > 0) c["seed"] = std::to_string(seed);
    return c;
  }
  fs::path out_dir() const {
    fs::create_directories(out);
    return fs::path(out);
  }
};

void add_common(CLI::App* app, Common& c, bool seed_required) {
  app->add_option("--config", c.config, "key = value configuration file")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "output directory")->capture_default_str();
  c.seed_opt = app->add_option("--seed", c.seed, "random seed");
  if (seed_required) c.seed_opt->required();
}

// Accepts plain numbers and "a/b" ratios such as 16/255.
double parse_scalar(const std::string& key, const std::string& s) {
  const auto slash = s.find('/');
  auto num = [&](std::string_view part) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (part.empty() || ec != std::errc{} || p != part.data() + part.size()) {
      throw ConfigError("key '" + key + "': not a number: " + s);
    }
    return v;
  };
  if (slash == std::string::npos) return num(s);
  return num(std::string_view(s).substr(0, slash)) / num(std::string_view(s).substr(slash + 1));
}

double get_scalar(const ConfigMap& c, const std::string& key, double fallback) {
  const auto it = c.find(key);
  return it == c.end() ? fallback : parse_scalar(key, it->second);
}

std::vector<int> parse_ints(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    int v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || p != item.data() + item.size()) throw ConfigError("not an integer list: " + s);
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_doubles(const std::string& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_scalar("list", item));
  return out;
}

std::uint64_t get_seed(const ConfigMap& c) {
  return static_cast<std::uint64_t>(config_int(c, "seed", 0));
}

Metadata echo(const ConfigMap& c, const std::string& prefix) {
  Metadata m;
  for (const auto& [k, v] : c) m[prefix + k] = v;
  return m;
}

struct Splits {
  Dataset full;
  Dataset train;
  Dataset holdout;
};

Splits load_splits(const std::string& path, const ConfigMap& c) {
  Splits s;
  s.full = load_dataset(path);
  const auto frac = static_cast<float>(config_double(c, "holdout", 0.2));
  auto [tr, ho] = split_dataset(s.full, frac, s.full.seed);
  s.train = std::move(tr);
  s.holdout = std::move(ho);
  return s;
}

Dataset head(const Dataset& d, std::size_t n) {
  if (n == 0 || n >= d.size()) return d;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  return d.subset(idx);
}

AttackConfig attack_config_from(const ConfigMap& c, std::size_t num_classes) {
  AttackConfig a;
  a.epsilon = static_cast<float>(get_scalar(c, "epsilon", a.epsilon));
  a.lr = static_cast<float>(get_scalar(c, "lr", a.lr));
  a.steps = static_cast<std::size_t>(config_int(c, "steps", static_cast<std::int64_t>(a.steps)));
  a.batch_size = static_cast<std::size_t>(config_int(c, "batch_size", static_cast<std::int64_t>(a.batch_size)));
  a.variant = parse_variant(config_string(c, "variant", to_string(a.variant)));
  const auto n_steps = config_int(c, "n_steps", static_cast<std::int64_t>(a.sched.steps()));
  a.sched = FlowSchedule(static_cast<float>(get_scalar(c, "tau", a.sched.tau())), static_cast<std::size_t>(n_steps));
  a.train_clip = config_bool(c, "train_clip", a.train_clip);
  a.l2_weight = static_cast<float>(get_scalar(c, "l2_weight", a.l2_weight));
  a.noise.gamma = static_cast<float>(get_scalar(c, "gamma", a.noise.gamma));
  a.seed = get_seed(c);
  a.noise.seed = a.seed;
  a.optimizer = parse_optimizer_kind(config_string(c, "optimizer", to_string(a.optimizer)));
  a.use_lora = config_bool(c, "use_lora", a.use_lora);
  a.train_class_rows = config_bool(c, "train_class_rows", a.train_class_rows);
  if (c.count("targets") && c.at("targets") != "all") a.targets = parse_ints(c.at("targets"));
  a.validate();
  (void)a.target_set(num_classes);
  return a;
}

// Attaches adapters with the configured rank to a pretrained velocity model.
VelocityModel with_adapters(const VelocityModel& base, const ConfigMap& c, std::uint64_t seed) {
  VelocityConfig vc = base.config();
  vc.lora_rank = static_cast<std::size_t>(config_int(c, "lora_rank", static_cast<std::int64_t>(vc.lora_rank)));
  VelocityModel m(vc, base.params());
  m.attach_lora(seed);
  return m;
}

Metadata attack_meta(const AttackConfig& a, const AttackTrainResult& r, float sample_gamma) {
  Metadata m;
  m["attack.epsilon"] = format_number(a.epsilon);
  m["attack.lr"] = format_number(a.lr);
  m["attack.steps"] = format_number(a.steps);
  m["attack.variant"] = to_string(a.variant);
  m["attack.tau"] = format_number(a.sched.tau());
  m["attack.n_steps"] = format_number(a.sched.steps());
  m["attack.gamma"] = format_number(a.noise.gamma);
  m["attack.sample_gamma"] = format_number(sample_gamma);
  m["attack.train_clip"] = a.train_clip ? "true" : "false";
  m["attack.l2_weight"] = format_number(a.l2_weight);
  m["attack.use_lora"] = a.use_lora ? "true" : "false";
  m["attack.seed"] = format_number(static_cast<std::int64_t>(a.seed));
  m["attack.updates"] = format_number(r.updates);
  return m;
}

struct LoadedAttack {
  VelocityModel model;
  SamplerOptions opts;
  std::uint64_t seed = 0;
  std::string variant;
};

LoadedAttack load_attack(const std::string& path, const ConfigMap& c) {
  Metadata meta;
  LoadedAttack la;
  la.model = load_velocity_model(path, &meta);
  auto num = [&](const std::string& key) {
    if (!meta.count(key)) throw CheckpointError(CheckpointError::Kind::inconsistent_record, "missing " + key);
    return parse_scalar(key, meta.at(key));
  };
  la.opts.sched = FlowSchedule(static_cast<float>(num("attack.tau")), static_cast<std::size_t>(num("attack.n_steps")));
  la.opts.epsilon = static_cast<float>(num("attack.epsilon"));
  la.opts.use_lora = meta.at("attack.use_lora") == "true";
  la.seed = static_cast<std::uint64_t>(num("attack.seed"));
  la.variant = meta.count("attack.variant") ? meta.at("attack.variant") : "?";
  la.opts.noise = NoiseSpec{static_cast<float>(get_scalar(c, "sample_gamma", num("attack.sample_gamma"))), la.seed + 1};
  la.opts.epsilon = static_cast<float>(get_scalar(c, "epsilon", la.opts.epsilon));
  return la;
}

std::vector<int> all_targets(const ConfigMap& c, std::size_t k) {
  if (c.count("targets") && c.at("targets") != "all") return parse_ints(c.at("targets"));
  std::vector<int> t(k);
  for (std::size_t i = 0; i < k; ++i) t[i] = static_cast<int>(i);
  return t;
}

// ---- subcommands -------------------------------------------------------------------

int cmd_gen_data(const Common& cm, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const std::string kind = config_string(c, "kind", "shapes");
  const auto n = static_cast<std::size_t>(config_int(c, "samples", 8000));
  const auto seed = get_seed(c);
  Dataset d;
  if (kind == "shapes") {
    d = generate_shapes(seed, n);
  } else if (kind == "gmm2d") {
    d = generate_gmm2d(seed, n);
  } else {
    throw ConfigError("unknown dataset kind: " + kind);
  }
  const fs::path path = cm.out_dir() / "data.dfds";
  save_dataset(d, path);
  out << "wrote " << d.size() << " " << kind << " samples to " << path.string() << "\n";
  return 0;
}

int cmd_pretrain(const Common& cm, const std::string& data_path, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  VelocityConfig vc = velocity_config_for(s.full);
  vc.width = static_cast<std::size_t>(config_int(c, "width", static_cast<std::int64_t>(vc.width)));
  vc.blocks = static_cast<std::size_t>(config_int(c, "blocks", static_cast<std::int64_t>(vc.blocks)));
  vc.lora_rank = static_cast<std::size_t>(config_int(c, "lora_rank", static_cast<std::int64_t>(vc.lora_rank)));
  TrainConfig tc;
  tc.epochs = static_cast<std::size_t>(config_int(c, "epochs", 20));
  tc.lr = static_cast<float>(get_scalar(c, "lr", 1e-3));
  tc.batch_size = static_cast<std::size_t>(config_int(c, "batch_size", 64));
  tc.seed = get_seed(c);
  tc.validate();
  VelocityModel model(vc, tc.seed);
  const auto res = pretrain_flow_matching(model, s.train, tc);

  const fs::path dir = cm.out_dir();
  MetricsCsv csv({"epoch", "loss"});
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    csv.add_row({format_number(e + 1), format_number(res.epoch_loss[e])});
  }
  csv.write(dir / "pretrain_metrics.csv");
  Metadata meta = echo(c, "config.");
  meta["train.updates"] = format_number(res.updates);
  save_velocity_model(model, meta, dir / "velocity.dflw");
  out << "pretrained " << res.updates << " updates, final loss " << format_number(res.epoch_loss.back()) << "\n";
  return 0;
}

int cmd_train_classifier(const Common& cm, const std::string& data_path, const std::string& name,
                         std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const auto arch = parse_arch(config_string(c, "arch", "conv"));
  const auto act = parse_activation(config_string(c, "activation", "relu"));
  ClassifierConfig cc = classifier_config_for(s.full, arch, act);
  cc.hidden = static_cast<std::size_t>(config_int(c, "hidden", static_cast<std::int64_t>(cc.hidden)));
  TrainConfig tc;
  tc.epochs = static_cast<std::size_t>(config_int(c, "epochs", 25));
  tc.lr = static_cast<float>(get_scalar(c, "lr", 2e-3));
  tc.batch_size = static_cast<std::size_t>(config_int(c, "batch_size", 64));
  tc.seed = get_seed(c);
  tc.validate();
  const auto res = train_classifier(cc, s.train, s.holdout, tc);

  const fs::path dir = cm.out_dir();
  MetricsCsv csv({"epoch", "loss"});
  for (std::size_t e = 0; e < res.epoch_loss.size(); ++e) {
    csv.add_row({format_number(e + 1), format_number(res.epoch_loss[e])});
  }
  csv.write(dir / (name + "_metrics.csv"));
  Metadata meta = echo(c, "config.");
  meta["eval.accuracy"] = format_number(res.test_accuracy);
  save_classifier(res.model, meta, dir / (name + ".dflw"));
  out << name << " (" << to_string(arch) << ") holdout accuracy " << format_number(res.test_accuracy) << "\n";
  return 0;
}

int cmd_attack_train(const Common& cm, const std::string& data_path, const std::string& velocity_path,
                     const std::string& classifier_path, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const VelocityModel base = load_velocity_model(velocity_path);
  const Classifier f = load_classifier(classifier_path);
  const AttackConfig a = attack_config_from(c, f.num_classes());
  VelocityModel model = with_adapters(base, c, a.seed);
  const auto res = train_dual_flow(model, f, s.train, a);

  const fs::path dir = cm.out_dir();
  MetricsCsv csv({"step", "loss", "hit_rate"});
  for (const auto& l : res.log) {
    csv.add_row({format_number(l.step), format_number(l.loss), format_number(l.hit_rate)});
  }
  csv.write(dir / "attack_metrics.csv");
  Metadata meta = echo(c, "config.");
  for (auto& [k, v] : attack_meta(a, res, static_cast<float>(get_scalar(c, "sample_gamma", 0.0)))) meta[k] = v;
  save_velocity_model(model, meta, dir / "attack.dflw");
  out << "attack " << to_string(a.variant) << " trained with " << res.updates << " updates\n";
  return 0;
}

int cmd_attack_sample(const Common& cm, const std::string& data_path, const std::string& attack_path,
                      std::size_t viz, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const LoadedAttack la = load_attack(attack_path, c);
  const Dataset imgs = head(s.holdout, static_cast<std::size_t>(config_int(c, "eval_images", 0)));
  const auto targets = all_targets(c, s.full.num_classes);
  const auto samples = generate_attack_set(la.model, imgs, targets, la.opts);

  Dataset adv;
  adv.kind = s.full.kind;
  adv.seed = s.full.seed;
  adv.num_classes = s.full.num_classes;
  adv.height = s.full.height;
  adv.width = s.full.width;
  std::vector<float> px;
  for (const auto& smp : samples) {
    px.insert(px.end(), smp.x_adv.data().begin(), smp.x_adv.data().end());
    adv.labels.push_back(smp.target);
  }
  adv.images = Tensor({samples.size(), s.full.dim()}, std::move(px));
  const fs::path dir = cm.out_dir();
  save_dataset(adv, dir / "adv.dfds");
  for (std::size_t i = 0; i < std::min(viz, samples.size()); ++i) {
    emit_visualization(samples[i], s.full.height, s.full.width, dir, "sample" + std::to_string(i));
  }
  out << "wrote " << samples.size() << " adversarial samples to " << (dir / "adv.dfds").string() << "\n";
  return 0;
}

struct VictimArgs {
  std::vector<std::string> victims;  // name=path
  std::string source;
};

int cmd_eval(const Common& cm, const std::string& data_path, const std::string& attack_path, const VictimArgs& va,
             const std::vector<std::string>& defenses, std::size_t splits, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const LoadedAttack la = load_attack(attack_path, c);
  const Dataset imgs = head(s.holdout, static_cast<std::size_t>(config_int(c, "eval_images", 0)));
  const auto targets = all_targets(c, s.full.num_classes);

  std::vector<std::string> names;
  std::vector<std::unique_ptr<Classifier>> models;
  std::vector<Victim> victims;
  for (const auto& spec : va.victims) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--victim expects name=path: " + spec);
    names.push_back(spec.substr(0, eq));
    models.push_back(std::make_unique<Classifier>(load_classifier(spec.substr(eq + 1))));
  }
  bool found = false;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const bool wb = names[i] == va.source;
    found = found || wb;
    victims.push_back({names[i], models[i].get(), wb});
  }
  if (!found) throw ConfigError("source '" + va.source + "' is not among the victims");

  const auto samples = generate_attack_set(la.model, imgs, targets, la.opts);
  std::vector<EvalReport> reports;
  std::vector<std::string> labels;
  MetricsCsv csv({"defense", "victim", "white_box", "target", "asr"});
  MetricsCsv ci_csv({"defense", "victim", "white_box", "mean", "half_width", "perturbation_asr"});
  std::vector<std::string> defs;
  auto add = [&defs](const std::string& d) {
    if (std::find(defs.begin(), defs.end(), d) == defs.end()) defs.push_back(d);
  };
  for (const auto& d : defenses.empty() ? std::vector<std::string>{"none"} : defenses) {
    if (d == "sweep") {
      for (const char* s : {"none", "gaussian:0.5", "gaussian:1", "gaussian:1.5", "median:3", "median:5"}) add(s);
    } else {
      add(d);
    }
  }
  for (const auto& dname : defs) {
    const DefenseSpec spec = DefenseSpec::parse(dname);
    const auto defended = defend(samples, s.full.height, s.full.width, spec);
    EvalReport rep = evaluate_victims(victims, defended, la.seed);
    for (std::size_t v = 0; v < rep.victims.size(); ++v) {
      const auto& r = rep.victims[v];
      for (int t : targets) {
        csv.add_row({spec.label(), r.name, r.white_box ? "1" : "0", format_number(t), format_number(r.per_class[t])});
      }
      csv.add_row({spec.label(), r.name, r.white_box ? "1" : "0", "mean", format_number(r.mean)});
      const auto per_split = split_asr(*victims[v].model, defended, imgs.size(), splits);
      const auto ci = split_confidence_interval(per_split);
      ci_csv.add_row({spec.label(), r.name, r.white_box ? "1" : "0", format_number(ci.mean),
                      format_number(ci.half_width), format_number(perturbation_asr(*victims[v].model, samples))});
    }
    labels.push_back(la.variant + "/" + spec.label());
    reports.push_back(std::move(rep));
  }
  const fs::path dir = cm.out_dir();
  csv.write(dir / "eval.csv");
  ci_csv.write(dir / "eval_ci.csv");
  out << format_transfer_table(reports, labels);
  return 0;
}

int cmd_ablate(const Common& cm, const std::string& data_path, const std::string& velocity_path,
               const std::string& classifier_path, const std::string& victim_path, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const VelocityModel base = load_velocity_model(velocity_path);
  const Classifier f = load_classifier(classifier_path);
  std::unique_ptr<Classifier> victim;
  if (!victim_path.empty()) victim = std::make_unique<Classifier>(load_classifier(victim_path));
  const AttackConfig proto = attack_config_from(c, f.num_classes());
  const auto variants = split_list(config_string(c, "variants", "co,cs,rs"));
  const auto steps = parse_ints(config_string(c, "steps_list", "1,2,4,8"));
  const auto gammas = parse_doubles(config_string(c, "sample_gammas", "0"));
  const Dataset imgs = head(s.holdout, static_cast<std::size_t>(config_int(c, "eval_images", 200)));
  const auto targets = proto.target_set(f.num_classes());
  if (variants.empty() || steps.empty() || gammas.empty()) throw ConfigError("empty ablation axis");

  MetricsCsv csv({"variant", "n_steps", "sample_gamma", "white_box_asr", "black_box_asr", "updates"});
  for (const auto& vname : variants) {
    for (int n : steps) {
      if (n <= 0) throw ConfigError("step counts must be positive");
      AttackConfig a = proto;
      a.variant = parse_variant(vname);
      a.sched = FlowSchedule(proto.sched.tau(), static_cast<std::size_t>(n));
      VelocityModel model = with_adapters(base, c, a.seed);
      const auto res = train_dual_flow(model, f, s.train, a);
      for (double g : gammas) {
        const auto samples = generate_attack_set(model, imgs, targets, sampler_options(a, static_cast<float>(g)));
        const double wb = attack_success(f, samples);
        const double bb = victim ? attack_success(*victim, samples) : std::nan("");
        csv.add_row({to_string(a.variant), format_number(n), format_number(g), format_number(wb), format_number(bb),
                     format_number(res.updates)});
        out << to_string(a.variant) << " N=" << n << " gamma=" << format_number(g) << " white-box "
            << format_number(wb) << " black-box " << format_number(bb) << "\n";
      }
    }
  }
  csv.write(cm.out_dir() / "ablate.csv");
  return 0;
}

int cmd_verify_morse(const Common& cm, std::ostream& out) {
  const ConfigMap c = cm.merged();
  MorseCheckConfig mc;
  mc.grid = static_cast<std::size_t>(config_int(c, "grid", static_cast<std::int64_t>(mc.grid)));
  mc.flow_time = config_double(c, "flow_time", mc.flow_time);
  mc.step = config_double(c, "step", mc.step);
  mc.tol = config_double(c, "tol", mc.tol);
  const auto problems = split_list(config_string(c, "problems", "bowl,tilted,bumps"));
  MetricsCsv csv({"problem", "trajectories", "monotone_fraction", "strict_increase_fraction", "min_mu",
                  "min_endpoint_distance", "min_abs_det", "max_abs_det"});
  bool ok = true;
  for (const auto& name : problems) {
    const auto p = builtin_morse_problem(name);
    const auto r = verify_morse_flow(p, mc);
    csv.add_row({name, format_number(r.trajectories), format_number(r.monotone_fraction),
                 format_number(r.strict_increase_fraction), format_number(r.min_mu),
                 format_number(r.min_endpoint_distance), format_number(r.min_abs_det), format_number(r.max_abs_det)});
    const bool pass = r.monotone_fraction == 1.0 && r.min_mu > 0 && r.min_endpoint_distance > 0 && r.min_abs_det > 0;
    ok = ok && pass;
    out << name << ": monotone " << format_number(r.monotone_fraction) << ", min mu " << format_number(r.min_mu)
        << ", min endpoint distance " << format_number(r.min_endpoint_distance) << ", |det| in ["
        << format_number(r.min_abs_det) << ", " << format_number(r.max_abs_det) << "] " << (pass ? "ok" : "FAIL")
        << "\n";
  }
  csv.write(cm.out_dir() / "morse.csv");
  return ok ? 0 : 1;
}

int cmd_verify_cascade(const Common& cm, const std::string& data_path, const std::string& velocity_path,
                       const std::string& classifier_path, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const VelocityModel base = load_velocity_model(velocity_path);
  const Classifier f = load_classifier(classifier_path);
  CascadeCheckConfig cc;
  cc.samples = static_cast<std::size_t>(config_int(c, "samples", static_cast<std::int64_t>(cc.samples)));
  cc.tau = static_cast<float>(get_scalar(c, "tau", cc.tau));
  cc.t = static_cast<float>(get_scalar(c, "t", cc.tau));
  cc.delta = static_cast<float>(get_scalar(c, "delta", cc.tau / 64.0));
  cc.lr = get_scalar(c, "lr", cc.lr);
  cc.seed = get_seed(c);
  cc.validate();
  const VelocityModel model = base.has_lora() ? base : with_adapters(base, c, cc.seed);
  const auto r = verify_cascade(model, f, s.holdout, cc);
  MetricsCsv csv({"sample", "delta_ce"});
  for (std::size_t i = 0; i < r.delta_ce.size(); ++i) csv.add_row({format_number(i), format_number(r.delta_ce[i])});
  csv.write(cm.out_dir() / "cascade.csv");
  out << "improvement fraction " << format_number(r.improvement_fraction) << ", mean delta CE "
      << format_number(r.mean_delta_ce) << "\n";
  return 0;
}

int cmd_viz(const Common& cm, const std::string& data_path, const std::string& attack_path, std::size_t index,
            int target, std::ostream& out) {
  const ConfigMap c = cm.merged();
  const Splits s = load_splits(data_path, c);
  const LoadedAttack la = load_attack(attack_path, c);
  if (index >= s.holdout.size()) throw ConfigError("--index beyond holdout size");
  if (target < 0 || static_cast<std::size_t>(target) >= s.full.num_classes) throw ConfigError("--target out of range");
  const std::vector<int> t{target};
  const auto samples = sample_dual_flow(la.model, s.holdout.row(index), t, la.opts);
  const auto paths = emit_visualization(samples.front(), s.full.height, s.full.width, cm.out_dir(),
                                        "viz" + std::to_string(index) + "_t" + std::to_string(target));
  for (const auto& p : paths) out << p.string() << "\n";
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"dflow: flow-based targeted adversarial attacks at desk scale", "dflow"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  std::string data_path, velocity_path, classifier_path, attack_path, victim_path, name = "classifier";
  std::size_t viz = 0, index = 0, splits = 5;
  int target = 0;
  VictimArgs va;
  std::vector<std::string> defenses;

  std::map<std::string, Common> common;
  auto sub = [&](const std::string& n, const std::string& help, bool seed_required) {
    CLI::App* s = app.add_subcommand(n, help);
    add_common(s, common[n], seed_required);
    return s;
  };

  auto* gen = sub("gen-data", "generate a procedural dataset", true);
  common["gen-data"].overlay.add(gen, "--kind", "kind", "shapes | gmm2d");
  common["gen-data"].overlay.add(gen, "--samples", "samples", "number of samples");

  auto* pre = sub("pretrain", "flow-matching pretraining of the velocity field", true);
  pre->add_option("--data", data_path, "dataset file")->required();
  for (const char* k : {"epochs", "lr", "batch_size", "width", "blocks", "lora_rank"}) {
    common["pretrain"].overlay.add(pre, std::string("--") + k, k, k);
  }

  auto* tcl = sub("train-classifier", "train a source or victim classifier", true);
  tcl->add_option("--data", data_path, "dataset file")->required();
  tcl->add_option("--name", name, "output stem")->capture_default_str();
  for (const char* k : {"arch", "activation", "epochs", "lr", "batch_size", "hidden"}) {
    common["train-classifier"].overlay.add(tcl, std::string("--") + k, k, k);
  }

  const std::vector<const char*> attack_keys{"epsilon", "lr",        "steps",   "variant",  "tau",
                                             "n_steps", "gamma",     "train_clip", "l2_weight", "lora_rank",
                                             "targets", "batch_size", "optimizer", "use_lora", "sample_gamma"};
  auto* atr = sub("attack-train", "train the attack adapters against a source classifier", true);
  atr->add_option("--data", data_path, "dataset file")->required();
  atr->add_option("--velocity", velocity_path, "pretrained velocity checkpoint")->required();
  atr->add_option("--classifier", classifier_path, "source classifier checkpoint")->required();
  for (const char* k : attack_keys) common["attack-train"].overlay.add(atr, std::string("--") + k, k, k);

  auto* asm_ = sub("attack-sample", "generate adversarial examples from a trained attack", false);
  asm_->add_option("--data", data_path, "dataset file")->required();
  asm_->add_option("--attack", attack_path, "attack checkpoint")->required();
  asm_->add_option("--viz", viz, "dump PGM triplets for the first N samples");
  for (const char* k : {"targets", "sample_gamma", "eval_images"}) {
    common["attack-sample"].overlay.add(asm_, std::string("--") + k, k, k);
  }

  auto* ev = sub("eval", "transfer table, defenses and split confidence intervals", false);
  ev->add_option("--data", data_path, "dataset file")->required();
  ev->add_option("--attack", attack_path, "attack checkpoint")->required();
  ev->add_option("--victim", va.victims, "name=checkpoint (repeatable)")->required();
  ev->add_option("--source", va.source, "name of the white-box victim")->required();
  ev->add_option("--defense", defenses, "none | gaussian:S | median:W | quantize:L | sweep (repeatable)");
  ev->add_option("--splits", splits, "evaluation splits")->capture_default_str();
  for (const char* k : {"targets", "sample_gamma", "eval_images"}) {
    common["eval"].overlay.add(ev, std::string("--") + k, k, k);
  }

  auto* abl = sub("ablate", "sweep variant x sampler noise x step count", true);
  abl->add_option("--data", data_path, "dataset file")->required();
  abl->add_option("--velocity", velocity_path, "pretrained velocity checkpoint")->required();
  abl->add_option("--classifier", classifier_path, "source classifier checkpoint")->required();
  abl->add_option("--victim", victim_path, "black-box victim checkpoint");
  common["ablate"].overlay.add(abl, "--variants", "variants", "comma-separated variants");
  common["ablate"].overlay.add(abl, "--steps", "steps_list", "comma-separated step counts N");
  common["ablate"].overlay.add(abl, "--gammas", "sample_gammas", "comma-separated sampler noise levels");
  common["ablate"].overlay.add(abl, "--train-steps", "steps", "training minibatches per run");
  for (const char* k : {"epsilon", "lr", "tau", "gamma", "train_clip", "l2_weight", "lora_rank", "targets",
                        "batch_size", "eval_images"}) {
    common["ablate"].overlay.add(abl, std::string("--") + k, k, k);
  }

  auto* vm = sub("verify-morse", "check the Morse-flow construction on built-in problems", false);
  for (const char* k : {"problems", "grid", "flow_time", "step", "tol"}) {
    common["verify-morse"].overlay.add(vm, std::string("--") + k, k, k);
  }

  auto* vc = sub("verify-cascade", "check one-step cascading improvement", false);
  vc->add_option("--data", data_path, "dataset file")->required();
  vc->add_option("--velocity", velocity_path, "velocity checkpoint")->required();
  vc->add_option("--classifier", classifier_path, "smooth classifier checkpoint")->required();
  for (const char* k : {"samples", "tau", "t", "delta", "lr", "lora_rank"}) {
    common["verify-cascade"].overlay.add(vc, std::string("--") + k, k, k);
  }

  auto* vz = sub("viz", "dump pre-clip, clipped and perturbation images", false);
  vz->add_option("--data", data_path, "dataset file")->required();
  vz->add_option("--attack", attack_path, "attack checkpoint")->required();
  vz->add_option("--index", index, "holdout image index")->capture_default_str();
  vz->add_option("--target", target, "target class")->capture_default_str();
  common["viz"].overlay.add(vz, "--sample_gamma", "sample_gamma", "sampler noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    const auto* s = app.get_subcommands().front();
    const std::string n = s->get_name();
    const Common& cm = common.at(n);
    if (n == "gen-data") return cmd_gen_data(cm, out);
    if (n == "pretrain") return cmd_pretrain(cm, data_path, out);
    if (n == "train-classifier") return cmd_train_classifier(cm, data_path, name, out);
    if (n == "attack-train") return cmd_attack_train(cm, data_path, velocity_path, classifier_path, out);
    if (n == "attack-sample") return cmd_attack_sample(cm, data_path, attack_path, viz, out);
    if (n == "eval") return cmd_eval(cm, data_path, attack_path, va, defenses, splits, out);
    if (n == "ablate") return cmd_ablate(cm, data_path, velocity_path, classifier_path, victim_path, out);
    if (n == "verify-morse") return cmd_verify_morse(cm, out);
    if (n == "verify-cascade") return cmd_verify_cascade(cm, data_path, velocity_path, classifier_path, out);
    if (n == "viz") return cmd_viz(cm, data_path, attack_path, index, target, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace dflow::cli
