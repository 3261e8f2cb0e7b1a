#pragma once
/**
 * @file config.hpp
 * @brief Run configuration: YAML schema with strict key checking, defaults,
 *        and manifest emission (the manifest is itself a loadable config).
 *
 * Requires yaml-cpp.
 */

#include <yaml-cpp/yaml.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "evac/encoding.hpp"
#include "evac/environment.hpp"
#include "evac/trainer.hpp"

namespace evac {

/// Schema or value problem in a configuration; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  int n_runs = 200;
  int grid_res = 21;
  double ema_smoothing = 0.99;
};

struct IoConfig {
  std::string outdir;          // empty: $EVAC_OUTDIR, then "runs"
  std::string run_name;       // empty: derived from command, encoder and seed
  int checkpoint_interval = 0;  // updates between checkpoints; 0 = final only
  int log_interval = 1;
};

struct RunConfig {
  EnvConfig env;
  TrainConfig train;
  Encoder encoder;
  EvalConfig eval;
  IoConfig io;
  std::uint64_t seed = 1;
  int workers = 1;

  void validate() const {
    try {
      env.validate();
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (!(encoder.alpha >= 0.0) || !std::isfinite(encoder.alpha))
      throw ConfigError("encoder: alpha must be finite and nonnegative");
    if (eval.n_runs <= 0) throw ConfigError("eval: n_runs must be positive");
    if (eval.grid_res < 2) throw ConfigError("eval: grid_res must be at least 2");
    if (!(eval.ema_smoothing >= 0.0 && eval.ema_smoothing < 1.0))
      throw ConfigError("eval: ema_smoothing must lie in [0, 1)");
    if (io.checkpoint_interval < 0) throw ConfigError("io: checkpoint_interval must be >= 0");
    if (io.log_interval <= 0) throw ConfigError("io: log_interval must be positive");
    if (workers <= 0) throw ConfigError("workers must be positive");
  }
};

namespace detail {

/// Reads the keys of one mapping; anything not consumed is an error.
class Section {
 public:
  Section(const YAML::Node& node, std::string name) : node_(node), name_(std::move(name)) {
    if (node_ && !node_.IsNull() && !node_.IsMap())
      throw ConfigError("section '" + name_ + "' must be a mapping");
  }

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (!v.IsScalar()) fail(key, "expected a scalar");
    try {
      if constexpr (std::is_same_v<T, bool>) {
        out = v.as<bool>();
      } else if constexpr (std::is_integral_v<T>) {
        // integers may be written in float notation (3e6) if exact
        const double d = v.as<double>();
        if (d != std::floor(d) || d < static_cast<double>(std::numeric_limits<T>::min()) ||
            d > static_cast<double>(std::numeric_limits<T>::max()))
          fail(key, "expected an integer, got '" + v.Scalar() + "'");
        out = static_cast<T>(d);
      } else {
        out = v.as<T>();
      }
    } catch (const YAML::BadConversion&) {
      fail(key, "cannot parse '" + v.Scalar() + "'");
    }
  }

  void read_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (v.IsNull()) {
      out.reset();
      return;
    }
    double d = 0.0;
    read(key, d);
    out = d;
  }

  void read_vec2(const char* key, Vec2& out) {
    seen_.insert(key);
    if (!node_ || node_.IsNull()) return;
    const YAML::Node v = node_[key];
    if (!v) return;
    if (!v.IsSequence() || v.size() != 2) fail(key, "expected a two-element list [x, y]");
    try {
      out = {v[0].as<double>(), v[1].as<double>()};
    } catch (const YAML::BadConversion&) {
      fail(key, "expected numbers");
    }
  }

  void finish() const {
    if (!node_ || node_.IsNull()) return;
    for (const auto& kv : node_) {
      const std::string key = kv.first.as<std::string>();
      if (!seen_.count(key))
        throw ConfigError("unknown key '" + key + "' in section '" + name_ + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(name_ + "." + key + ": " + what);
  }

 private:
  YAML::Node node_;
  std::string name_;
  std::set<std::string> seen_;
};

}  // namespace detail

/// Applies a YAML document on top of cfg. Keys left out keep their values.
inline void apply_yaml(RunConfig& cfg, const YAML::Node& root) {
  if (!root || root.IsNull()) return;
  if (!root.IsMap()) throw ConfigError("configuration root must be a mapping");
  static const std::set<std::string> top = {"env", "train", "encoder", "eval", "io", "seed",
                                            "workers"};
  for (const auto& kv : root) {
    const std::string key = kv.first.as<std::string>();
    if (!top.count(key)) throw ConfigError("unknown key '" + key + "' in section 'root'");
  }

  detail::Section env(root["env"], "env");
  EnvConfig& e = cfg.env;
  env.read("room_half_width", e.room_half_width);
  env.read("vicsek_radius", e.vicsek_radius);
  env.read("leader_radius", e.leader_radius);
  env.read("noise", e.noise);
  env.read("speed", e.speed);
  env.read("max_steps", e.max_steps);
  env.read("num_individuals", e.num_individuals);
  env.read("exit_radius", e.exit_radius);
  env.read("enslaving", e.enslaving);
  env.read_vec2("exit_point", e.exit_point);
  env.read("save_radius", e.save_radius);
  env.read("reward_entry", e.reward_entry);
  env.read("reward_early", e.reward_early);
  env.read("step_penalty", e.step_penalty);
  env.finish();

  detail::Section train(root["train"], "train");
  TrainConfig& t = cfg.train;
  train.read("gamma", t.gamma);
  train.read("gae_lambda", t.gae_lambda);
  train.read("clip_coef", t.clip_coef);
  train.read("vf_coef", t.vf_coef);
  train.read("ent_coef", t.ent_coef);
  train.read("learning_rate", t.learning_rate);
  train.read("anneal_lr", t.anneal_lr);
  train.read("update_epochs", t.update_epochs);
  train.read("num_minibatches", t.num_minibatches);
  train.read("max_grad_norm", t.max_grad_norm);
  train.read("norm_adv", t.norm_adv);
  train.read("clip_vloss", t.clip_vloss);
  train.read("total_timesteps", t.total_timesteps);
  train.read_optional("target_kl", t.target_kl);
  train.read("rpo_alpha", t.rpo_alpha);
  train.read("dropout", t.dropout);
  train.read("num_envs", t.num_envs);
  train.read("num_steps", t.num_steps);
  train.read("deterministic", t.deterministic);
  train.read("norm_obs", t.norm_obs);
  train.read("norm_reward", t.norm_reward);
  train.read("adam_eps", t.adam_eps);
  train.read("hidden_dim", t.hidden_dim);
  train.read("hidden_layers", t.hidden_layers);
  train.finish();

  detail::Section enc(root["encoder"], "encoder");
  std::string kind = to_string(cfg.encoder.kind);
  enc.read("kind", kind);
  try {
    cfg.encoder.kind = encoder_from_string(kind);
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(std::string("encoder.kind: ") + ex.what());
  }
  enc.read("alpha", cfg.encoder.alpha);
  enc.finish();

  detail::Section ev(root["eval"], "eval");
  ev.read("n_runs", cfg.eval.n_runs);
  ev.read("grid_res", cfg.eval.grid_res);
  ev.read("ema_smoothing", cfg.eval.ema_smoothing);
  ev.finish();

  detail::Section io(root["io"], "io");
  io.read("outdir", cfg.io.outdir);
  io.read("run_name", cfg.io.run_name);
  io.read("checkpoint_interval", cfg.io.checkpoint_interval);
  io.read("log_interval", cfg.io.log_interval);
  io.finish();

  detail::Section rootsec(root, "root");
  rootsec.read("seed", cfg.seed);
  rootsec.read("workers", cfg.workers);
}

inline RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed YAML: ") + e.what());
  }
  apply_yaml(cfg, root);
  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Fully resolved config as YAML, loadable with parse_config.
inline std::string to_yaml(const RunConfig& cfg) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;

  const EnvConfig& e = cfg.env;
  out << YAML::Key << "env" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "room_half_width" << YAML::Value << e.room_half_width;
  out << YAML::Key << "vicsek_radius" << YAML::Value << e.vicsek_radius;
  out << YAML::Key << "leader_radius" << YAML::Value << e.leader_radius;
  out << YAML::Key << "noise" << YAML::Value << e.noise;
  out << YAML::Key << "speed" << YAML::Value << e.speed;
  out << YAML::Key << "max_steps" << YAML::Value << e.max_steps;
  out << YAML::Key << "num_individuals" << YAML::Value << e.num_individuals;
  out << YAML::Key << "exit_radius" << YAML::Value << e.exit_radius;
  out << YAML::Key << "enslaving" << YAML::Value << e.enslaving;
  out << YAML::Key << "exit_point" << YAML::Value << YAML::Flow << YAML::BeginSeq
      << e.exit_point.x << e.exit_point.y << YAML::EndSeq;
  out << YAML::Key << "save_radius" << YAML::Value << e.save_radius;
  out << YAML::Key << "reward_entry" << YAML::Value << e.reward_entry;
  out << YAML::Key << "reward_early" << YAML::Value << e.reward_early;
  out << YAML::Key << "step_penalty" << YAML::Value << e.step_penalty;
  out << YAML::EndMap;

  const TrainConfig& t = cfg.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "gamma" << YAML::Value << t.gamma;
  out << YAML::Key << "gae_lambda" << YAML::Value << t.gae_lambda;
  out << YAML::Key << "clip_coef" << YAML::Value << t.clip_coef;
  out << YAML::Key << "vf_coef" << YAML::Value << t.vf_coef;
  out << YAML::Key << "ent_coef" << YAML::Value << t.ent_coef;
  out << YAML::Key << "learning_rate" << YAML::Value << t.learning_rate;
  out << YAML::Key << "anneal_lr" << YAML::Value << t.anneal_lr;
  out << YAML::Key << "update_epochs" << YAML::Value << t.update_epochs;
  out << YAML::Key << "num_minibatches" << YAML::Value << t.num_minibatches;
  out << YAML::Key << "max_grad_norm" << YAML::Value << t.max_grad_norm;
  out << YAML::Key << "norm_adv" << YAML::Value << t.norm_adv;
  out << YAML::Key << "clip_vloss" << YAML::Value << t.clip_vloss;
  out << YAML::Key << "total_timesteps" << YAML::Value << t.total_timesteps;
  out << YAML::Key << "target_kl" << YAML::Value;
  if (t.target_kl)
    out << *t.target_kl;
  else
    out << YAML::Null;
  out << YAML::Key << "rpo_alpha" << YAML::Value << t.rpo_alpha;
  out << YAML::Key << "dropout" << YAML::Value << t.dropout;
  out << YAML::Key << "num_envs" << YAML::Value << t.num_envs;
  out << YAML::Key << "num_steps" << YAML::Value << t.num_steps;
  out << YAML::Key << "deterministic" << YAML::Value << t.deterministic;
  out << YAML::Key << "norm_obs" << YAML::Value << t.norm_obs;
  out << YAML::Key << "norm_reward" << YAML::Value << t.norm_reward;
  out << YAML::Key << "adam_eps" << YAML::Value << t.adam_eps;
  out << YAML::Key << "hidden_dim" << YAML::Value << t.hidden_dim;
  out << YAML::Key << "hidden_layers" << YAML::Value << t.hidden_layers;
  out << YAML::EndMap;

  out << YAML::Key << "encoder" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kind" << YAML::Value << to_string(cfg.encoder.kind);
  out << YAML::Key << "alpha" << YAML::Value << cfg.encoder.alpha;
  out << YAML::EndMap;

  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "n_runs" << YAML::Value << cfg.eval.n_runs;
  out << YAML::Key << "grid_res" << YAML::Value << cfg.eval.grid_res;
  out << YAML::Key << "ema_smoothing" << YAML::Value << cfg.eval.ema_smoothing;
  out << YAML::EndMap;

  out << YAML::Key << "io" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "outdir" << YAML::Value << cfg.io.outdir;
  out << YAML::Key << "run_name" << YAML::Value << cfg.io.run_name;
  out << YAML::Key << "checkpoint_interval" << YAML::Value << cfg.io.checkpoint_interval;
  out << YAML::Key << "log_interval" << YAML::Value << cfg.io.log_interval;
  out << YAML::EndMap;

  out << YAML::Key << "seed" << YAML::Value << cfg.seed;
  out << YAML::Key << "workers" << YAML::Value << cfg.workers;
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

/// Writes `<dir>/manifest.yaml` with a comment header naming the command.
inline void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg,
                           const std::string& command) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "manifest.yaml", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest in " + dir.string());
  os << "# evac " << command << "\n" << to_yaml(cfg);
  if (!os) throw std::runtime_error("failed writing manifest in " + dir.string());
}

}  // namespace evac
