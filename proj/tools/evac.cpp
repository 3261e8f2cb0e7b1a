// evac: train, evaluate and inspect leader policies for the evacuation world.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad arguments/config/checkpoint.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "evac/checkpoint.hpp"
#include "evac/config.hpp"
#include "evac/evaluation.hpp"
#include "evac/trainer.hpp"

namespace fs = std::filesystem;
using namespace evac;

namespace {

/// Bad input from the user: reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> encoder;
  std::optional<double> alpha;
  std::optional<int> n;
  std::optional<std::int64_t> total_timesteps;
  std::optional<int> workers;
  std::optional<std::string> outdir;
  std::optional<std::string> run_name;
};

void add_common(CLI::App* cmd, Overrides& o, bool training) {
  cmd->add_option("--config", o.config, "YAML run configuration");
  cmd->add_option("--seed", o.seed, "Master seed");
  cmd->add_option("--n", o.n, "Number of individuals");
  cmd->add_option("--workers", o.workers, "Worker threads (1 = deterministic schedule)");
  cmd->add_option("--outdir", o.outdir, "Output root (fallback: $EVAC_OUTDIR, then ./runs)");
  cmd->add_option("--run-name", o.run_name, "Run directory name under the output root");
  if (training) {
    cmd->add_option("--encoder", o.encoder, "Observation encoder")
        ->check(CLI::IsMember({"ff", "grav"}));
    cmd->add_option("--alpha", o.alpha, "Pseudo-gravitational exponent");
    cmd->add_option("--total-timesteps", o.total_timesteps, "Training budget in env steps");
  }
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.encoder) cfg.encoder.kind = encoder_from_string(*o.encoder);
  if (o.alpha) cfg.encoder.alpha = *o.alpha;
  if (o.n) cfg.env.num_individuals = *o.n;
  if (o.total_timesteps) cfg.train.total_timesteps = *o.total_timesteps;
  if (o.workers) cfg.workers = *o.workers;
  if (o.run_name) cfg.io.run_name = *o.run_name;
  if (o.outdir) {
    cfg.io.outdir = *o.outdir;
  } else if (cfg.io.outdir.empty()) {
    const char* env = std::getenv("EVAC_OUTDIR");
    cfg.io.outdir = env != nullptr && *env != '\0' ? env : "runs";
  }
  cfg.validate();
  return cfg;
}

std::string default_run_name(const RunConfig& cfg, const std::string& prefix) {
  std::string name = prefix.empty() ? "" : prefix + "_";
  name += to_string(cfg.encoder.kind);
  if (cfg.encoder.kind == EncoderKind::Gravity) name += "_a" + compact_number(cfg.encoder.alpha);
  name += "_n" + std::to_string(cfg.env.num_individuals) + "_s" + std::to_string(cfg.seed);
  return name;
}

fs::path run_dir(RunConfig& cfg, const std::string& fallback_name) {
  if (cfg.io.run_name.empty()) cfg.io.run_name = fallback_name;
  return fs::path(cfg.io.outdir) / cfg.io.run_name;
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

void print_update(const UpdateRecord& r, std::int64_t iterations) {
  std::cerr << "update " << r.iteration << "/" << iterations << "  step " << r.global_step
            << "  episodes " << r.episodes << "  mean_return " << csv::format_double(r.mean_return)
            << "  ema_return " << csv::format_double(r.ema_return) << "  completion "
            << csv::format_double(r.completion_rate) << "\n";
}

TrainOutput train_output(const RunConfig& cfg, const fs::path& dir, bool quiet) {
  TrainOutput io;
  io.dir = dir;
  io.checkpoint_interval = cfg.io.checkpoint_interval;
  io.log_interval = cfg.io.log_interval;
  io.ema_smoothing = cfg.eval.ema_smoothing;
  io.workers = cfg.workers;
  const std::int64_t iterations = cfg.train.num_iterations();
  if (!quiet) io.on_update = [iterations](const UpdateRecord& r) { print_update(r, iterations); };
  return io;
}

int cmd_train(const Overrides& o, bool quiet) {
  RunConfig cfg = resolve(o);
  const fs::path dir = run_dir(cfg, default_run_name(cfg, ""));
  write_manifest(dir, cfg, "train");
  const TrainResult r = train(cfg.env, cfg.encoder, cfg.train, cfg.seed,
                              train_output(cfg, dir, quiet));
  std::cout << "run directory: " << dir.string() << "\n"
            << "final checkpoint: " << r.final_checkpoint.string() << "\n";
  if (!r.updates.empty())
    std::cout << "final ema_return: " << csv::format_double(r.updates.back().ema_return) << "\n";
  return 0;
}

PolicyParameters load_policy(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  return load_checkpoint(path);
}

/// Eval artefacts go next to the run that produced the checkpoint unless an
/// output root is given explicitly.
fs::path eval_dir(RunConfig& cfg, const Overrides& o, const fs::path& checkpoint) {
  const bool explicit_root = o.outdir || o.run_name || std::getenv("EVAC_OUTDIR") != nullptr;
  const fs::path parent = checkpoint.parent_path();
  if (!explicit_root && parent.filename() == "checkpoints") {
    cfg.io.outdir = parent.parent_path().parent_path().string();
    cfg.io.run_name = parent.parent_path().filename().string();
    return parent.parent_path() / "eval";
  }
  return run_dir(cfg, "eval_" + checkpoint.stem().string() + "_s" + std::to_string(cfg.seed)) /
         "eval";
}

/// The checkpoint decides encoder and alpha; explicit conflicting flags are an error.
void adopt_policy_encoder(RunConfig& cfg, const Overrides& o, const PolicyParameters& p) {
  if (o.encoder && encoder_from_string(*o.encoder) != p.spec.encoder)
    throw UsageError(std::string("checkpoint was trained with the ") + to_string(p.spec.encoder) +
                     " encoder, not " + *o.encoder);
  if (o.alpha && *o.alpha != p.spec.alpha)
    throw UsageError("checkpoint was trained with alpha " + compact_number(p.spec.alpha));
  cfg.encoder = Encoder{p.spec.encoder, p.spec.alpha};
  try {
    check_compatible(p, cfg.env);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

int cmd_eval(const Overrides& o, const std::string& checkpoint, bool baseline,
             std::optional<int> n_runs) {
  RunConfig cfg = resolve(o);
  if (n_runs) cfg.eval.n_runs = *n_runs;
  cfg.validate();
  const PolicyParameters p = load_policy(checkpoint);
  adopt_policy_encoder(cfg, o, p);
  const fs::path dir = eval_dir(cfg, o, checkpoint);

  const EvalReport policy = eval_policy(p, cfg.env, cfg.eval.n_runs, cfg.seed, cfg.workers);
  write_manifest(dir, cfg, "eval " + checkpoint);
  {
    auto os = open_out(dir / "curve.csv");
    write_curve_csv(os, policy.curve);
  }
  {
    auto os = open_out(dir / "episodes.csv");
    write_episodes_csv(os, policy.episodes);
  }
  std::ostringstream summary;
  write_summary(summary, policy.summary, "policy.");
  if (baseline) {
    const EvalReport base = eval_no_leader(cfg.env, cfg.eval.n_runs, cfg.seed, cfg.workers);
    {
      auto os = open_out(dir / "baseline_curve.csv");
      write_curve_csv(os, base.curve);
    }
    {
      auto os = open_out(dir / "curves.csv");
      write_paired_curve_csv(os, policy.curve, base.curve);
    }
    {
      auto os = open_out(dir / "baseline_episodes.csv");
      write_episodes_csv(os, base.episodes);
    }
    write_summary(summary, base.summary, "baseline.");
  }
  {
    auto os = open_out(dir / "summary.txt");
    os << summary.str();
  }
  std::cout << summary.str() << "eval directory: " << dir.string() << "\n";
  return 0;
}

CrowdState snapshot_by_name(const std::string& what, const EnvConfig& env, std::string& label) {
  if (what.empty() || what == "clustered") {
    label = "clustered";
    return clustered_snapshot(env);
  }
  if (what == "dispersed") {
    label = "dispersed";
    return dispersed_snapshot(env);
  }
  label = fs::path(what).stem().string();
  try {
    return load_snapshot(what);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

std::string checkpoint_stem(const std::string& path) { return fs::path(path).stem().string(); }

int cmd_field(const Overrides& o, const std::string& checkpoint, const std::string& snapshot,
              std::optional<int> grid_res, bool frozen_phases) {
  RunConfig cfg = resolve(o);
  if (grid_res) cfg.eval.grid_res = *grid_res;
  cfg.validate();
  const PolicyParameters p = load_policy(checkpoint);
  cfg.env.num_individuals = static_cast<int>(p.spec.num_individuals);
  std::string label;
  const CrowdState frozen = snapshot_by_name(snapshot, cfg.env, label);
  cfg.env.num_individuals = static_cast<int>(frozen.size());
  adopt_policy_encoder(cfg, o, p);
  const fs::path dir = run_dir(cfg, "field_" + label + "_" + checkpoint_stem(checkpoint));

  const PolicyField f = policy_field(p, frozen, cfg.env, cfg.eval.grid_res, !frozen_phases);
  write_manifest(dir, cfg, "field " + checkpoint);
  {
    auto os = open_out(dir / "field.csv");
    write_field_csv(os, f);
  }
  {
    auto os = open_out(dir / "snapshot.csv");
    write_snapshot(os, frozen);
  }
  std::cout << "field directory: " << dir.string() << "\n";
  return 0;
}

std::vector<double> parse_alphas(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--alphas: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("--alphas: at least one value is required");
  return out;
}

int cmd_sweep(const Overrides& o, const std::string& alphas_text, bool quiet) {
  const std::vector<double> alphas = parse_alphas(alphas_text);
  RunConfig cfg = resolve(o);
  cfg.encoder.kind = EncoderKind::Gravity;
  const fs::path dir = run_dir(cfg, "sweep_n" + std::to_string(cfg.env.num_individuals) + "_s" +
                                        std::to_string(cfg.seed));
  write_manifest(dir, cfg, "sweep --alphas " + alphas_text);
  TrainOutput io = train_output(cfg, {}, quiet);
  const auto rows = alpha_sweep(cfg.env, cfg.train, cfg.seed, alphas, dir, io);
  write_sweep_summary(std::cout, rows);
  std::cout << "sweep directory: " << dir.string() << "\n";
  return 0;
}

int cmd_simulate(const Overrides& o, const std::string& checkpoint, const std::string& out) {
  RunConfig cfg = resolve(o);
  std::optional<PolicyParameters> p;
  if (!checkpoint.empty()) {
    p = load_policy(checkpoint);
    adopt_policy_encoder(cfg, o, *p);
  }
  RngStream rng(derive_seed(cfg.seed, 0));
  CrowdState s = reset(cfg.env, rng);
  std::ofstream file;
  if (!out.empty()) file = open_out(out);
  std::ostream& os = out.empty() ? std::cout : file;
  TrajectoryWriter writer(os);
  writer.write(s, 0.0);
  StepOutcome step_out;
  do {
    if (p) {
      const auto obs = cfg.encoder(s, cfg.env);
      step_out = step(s, sample_action(*p, obs, rng, SampleMode::Eval).action, cfg.env, rng);
    } else {
      step_out = no_leader_step(s, cfg.env, rng);
    }
    writer.write(s, step_out.reward);
  } while (!step_out.done());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Leader-guided evacuation: training, evaluation and policy fields"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress per-update progress lines");

  Overrides train_o;
  auto* train_cmd = app.add_subcommand("train", "Train a leader policy");
  add_common(train_cmd, train_o, true);

  Overrides eval_o;
  std::string eval_ckpt;
  bool baseline = false;
  std::optional<int> n_runs;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint (completion curve)");
  add_common(eval_cmd, eval_o, true);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Policy checkpoint")->required();
  eval_cmd->add_flag("--baseline", baseline, "Also run the leaderless baseline");
  eval_cmd->add_option("--runs", n_runs, "Number of evaluation episodes");

  Overrides field_o;
  std::string field_ckpt;
  std::string snapshot;
  std::optional<int> grid_res;
  bool frozen_phases = false;
  auto* field_cmd = app.add_subcommand("field", "Policy direction field over leader placements");
  add_common(field_cmd, field_o, true);
  field_cmd->add_option("--checkpoint", field_ckpt, "Policy checkpoint")->required();
  field_cmd->add_option("--snapshot", snapshot,
                        "Snapshot CSV, or the built-in 'clustered' / 'dispersed'");
  field_cmd->add_option("--grid-res", grid_res, "Grid points per axis");
  field_cmd->add_flag("--frozen-phases", frozen_phases,
                      "Keep snapshot phases instead of re-deriving the catch zone per cell");

  Overrides sweep_o;
  std::string alphas;
  auto* sweep_cmd = app.add_subcommand("sweep", "Train one grav policy per alpha");
  add_common(sweep_cmd, sweep_o, true);
  sweep_cmd->add_option("--alphas", alphas, "Comma-separated alpha values")->required();

  Overrides sim_o;
  std::string sim_ckpt;
  std::string sim_out;
  auto* sim_cmd = app.add_subcommand("simulate", "Dump one episode trajectory as CSV");
  add_common(sim_cmd, sim_o, true);
  sim_cmd->add_option("--checkpoint", sim_ckpt, "Policy checkpoint (omit for no leader)");
  sim_cmd->add_option("--out", sim_out, "Output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_o, quiet);
    if (*eval_cmd) return cmd_eval(eval_o, eval_ckpt, baseline, n_runs);
    if (*field_cmd) return cmd_field(field_o, field_ckpt, snapshot, grid_res, frozen_phases);
    if (*sweep_cmd) return cmd_sweep(sweep_o, alphas, quiet);
    if (*sim_cmd) return cmd_simulate(sim_o, sim_ckpt, sim_out);
  } catch (const ConfigError& e) {
    std::cerr << "evac: config error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "evac: checkpoint error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "evac: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "evac: invalid argument: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "evac: error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
