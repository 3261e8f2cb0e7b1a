#pragma once
/**
 * @file evaluation.hpp
 * @brief Completion-probability curves, the leaderless baseline, policy
 *        direction fields over leader placements, crowd snapshots, and the
 *        alpha sweep.
 */

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "evac/csv.hpp"
#include "evac/encoding.hpp"
#include "evac/environment.hpp"
#include "evac/policy.hpp"
#include "evac/stats.hpp"
#include "evac/trainer.hpp"

namespace evac {

/// One evaluation episode. completion_time is -1 when the run was censored at t_max.
struct EpisodeResult {
  std::uint64_t seed = 0;
  int completion_time = -1;
  int length = 0;
  int n_saved = 0;
  int n_entered = 0;
  double episode_return = 0.0;

  bool completed() const { return completion_time >= 0; }
};

/// p_incomplete[t] for t = 0..t_max: fraction of runs with n_saved < N at step t.
struct EvacCurve {
  std::vector<double> p_incomplete;
  int n_runs = 0;
  std::vector<std::uint64_t> seeds;

  int horizon() const { return static_cast<int>(p_incomplete.size()) - 1; }
};

struct EvalSummary {
  int n_runs = 0;
  int n_completed = 0;
  double completion_rate = 0.0;
  double mean_completion_time = std::nan("");    // over completed runs
  double median_completion_time = std::nan("");  // over completed runs
  double mean_return = 0.0;
  double mean_saved = 0.0;
  double mean_entered = 0.0;
};

struct EvalReport {
  std::vector<EpisodeResult> episodes;
  EvacCurve curve;
  EvalSummary summary;
};

inline EvacCurve make_curve(const std::vector<EpisodeResult>& runs, int max_steps) {
  EvacCurve c;
  c.n_runs = static_cast<int>(runs.size());
  c.p_incomplete.assign(static_cast<std::size_t>(max_steps) + 1, 0.0);
  if (runs.empty()) return c;
  // incomplete at t  <=>  censored, or completed strictly after t
  std::vector<int> finished_at(static_cast<std::size_t>(max_steps) + 2, 0);
  for (const auto& r : runs) {
    c.seeds.push_back(r.seed);
    const int when = r.completed() ? r.completion_time : max_steps + 1;
    finished_at[static_cast<std::size_t>(std::min(when, max_steps + 1))] += 1;
  }
  int done = 0;
  for (int t = 0; t <= max_steps; ++t) {
    done += finished_at[static_cast<std::size_t>(t)];
    c.p_incomplete[static_cast<std::size_t>(t)] =
        static_cast<double>(c.n_runs - done) / static_cast<double>(c.n_runs);
  }
  return c;
}

inline EvalSummary summarize(const std::vector<EpisodeResult>& runs) {
  EvalSummary s;
  s.n_runs = static_cast<int>(runs.size());
  if (runs.empty()) return s;
  std::vector<double> times;
  double ret = 0.0;
  double saved = 0.0;
  double entered = 0.0;
  for (const auto& r : runs) {
    if (r.completed()) times.push_back(r.completion_time);
    ret += r.episode_return;
    saved += r.n_saved;
    entered += r.n_entered;
  }
  const double n = static_cast<double>(runs.size());
  s.n_completed = static_cast<int>(times.size());
  s.completion_rate = static_cast<double>(times.size()) / n;
  s.mean_return = ret / n;
  s.mean_saved = saved / n;
  s.mean_entered = entered / n;
  if (!times.empty()) {
    s.mean_completion_time = std::accumulate(times.begin(), times.end(), 0.0) / times.size();
    std::sort(times.begin(), times.end());
    const std::size_t m = times.size() / 2;
    s.median_completion_time = times.size() % 2 == 1 ? times[m] : 0.5 * (times[m - 1] + times[m]);
  }
  return s;
}

namespace detail {

/// Runs body(k) for k in [0, n) over up to `workers` threads; results are
/// written by index, so the outcome does not depend on scheduling.
inline void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  workers = std::clamp(workers, 1, std::max(1, n));
  if (workers == 1) {
    for (int k = 0; k < n; ++k) body(k);
    return;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (int k = w; k < n; k += workers) body(k);
    });
}

/// Shared episode loop; act(state) returns nullopt for leaderless dynamics.
template <typename Act>
EpisodeResult run_episode(const EnvConfig& cfg, std::uint64_t seed, Act&& act) {
  RngStream rng(seed);
  CrowdState s = reset(cfg, rng);
  EpisodeResult r;
  r.seed = seed;
  r.n_entered = s.count(Phase::ExitZone);
  if (s.n_saved == static_cast<int>(s.size())) r.completion_time = 0;
  while (r.completion_time < 0 && s.t < cfg.max_steps) {
    const StepOutcome o = act(s, rng);
    r.episode_return += o.reward;
    r.n_entered += o.entered_exit_zone;
    if (o.terminated) r.completion_time = s.t;
  }
  r.length = s.t;
  r.n_saved = s.n_saved;
  return r;
}

}  // namespace detail

/// Throws std::invalid_argument when params cannot read observations of cfg.
inline void check_compatible(const PolicyParameters& p, const EnvConfig& cfg) {
  const std::size_t need = observation_size(p.spec.encoder, cfg.num_individuals);
  if (p.spec.input_dim != need)
    throw std::invalid_argument(
        std::string("policy expects ") + std::to_string(p.spec.input_dim) + " inputs but the " +
        to_string(p.spec.encoder) + " encoder produces " + std::to_string(need) + " for N=" +
        std::to_string(cfg.num_individuals));
}

/// Episode k is seeded with derive_seed(seed, k); the policy acts with its mean action.
inline EvalReport eval_policy(const PolicyParameters& params, const EnvConfig& cfg, int n_runs,
                              std::uint64_t seed, int workers = 1) {
  cfg.validate();
  check_compatible(params, cfg);
  if (n_runs <= 0) throw std::invalid_argument("eval: n_runs must be positive");
  const Encoder encoder{params.spec.encoder, params.spec.alpha};
  std::vector<EpisodeResult> runs(static_cast<std::size_t>(n_runs));
  detail::parallel_for(n_runs, workers, [&](int k) {
    runs[static_cast<std::size_t>(k)] = detail::run_episode(
        cfg, derive_seed(seed, static_cast<std::uint64_t>(k)),
        [&](CrowdState& s, RngStream& rng) {
          const auto obs = encoder(s, cfg);
          const Vec2 a = sample_action(params, obs, rng, SampleMode::Eval).action;
          return step(s, a, cfg, rng);
        });
  });
  return {runs, make_curve(runs, cfg.max_steps), summarize(runs)};
}

/// Leaderless baseline on the same per-episode seeds as eval_policy.
inline EvalReport eval_no_leader(const EnvConfig& cfg, int n_runs, std::uint64_t seed,
                                 int workers = 1) {
  cfg.validate();
  if (n_runs <= 0) throw std::invalid_argument("eval: n_runs must be positive");
  std::vector<EpisodeResult> runs(static_cast<std::size_t>(n_runs));
  detail::parallel_for(n_runs, workers, [&](int k) {
    runs[static_cast<std::size_t>(k)] = detail::run_episode(
        cfg, derive_seed(seed, static_cast<std::uint64_t>(k)),
        [&](CrowdState& s, RngStream& rng) { return no_leader_step(s, cfg, rng); });
  });
  return {runs, make_curve(runs, cfg.max_steps), summarize(runs)};
}

inline void write_curve_csv(std::ostream& os, const EvacCurve& c) {
  os << "t,p_incomplete\n";
  for (std::size_t t = 0; t < c.p_incomplete.size(); ++t) csv::Row(os) << t << c.p_incomplete[t];
}

/// Policy and baseline side by side; both curves must share the time grid.
inline void write_paired_curve_csv(std::ostream& os, const EvacCurve& policy,
                                   const EvacCurve& baseline) {
  if (policy.p_incomplete.size() != baseline.p_incomplete.size())
    throw std::invalid_argument("paired curves need the same time grid");
  os << "t,p_incomplete_policy,p_incomplete_baseline\n";
  for (std::size_t t = 0; t < policy.p_incomplete.size(); ++t)
    csv::Row(os) << t << policy.p_incomplete[t] << baseline.p_incomplete[t];
}

inline void write_episodes_csv(std::ostream& os, const std::vector<EpisodeResult>& runs) {
  os << "seed,completion_time,length,n_saved,n_entered,episode_return\n";
  for (const auto& r : runs)
    csv::Row(os) << r.seed << r.completion_time << r.length << r.n_saved << r.n_entered
                 << r.episode_return;
}

/// Flat key=value lines.
inline void write_summary(std::ostream& os, const EvalSummary& s, const std::string& prefix = "") {
  auto kv = [&](const char* key, const std::string& v) { os << prefix << key << '=' << v << '\n'; };
  kv("n_runs", std::to_string(s.n_runs));
  kv("n_completed", std::to_string(s.n_completed));
  kv("completion_rate", csv::format_double(s.completion_rate));
  kv("mean_completion_time", csv::format_double(s.mean_completion_time));
  kv("median_completion_time", csv::format_double(s.median_completion_time));
  kv("mean_return", csv::format_double(s.mean_return));
  kv("mean_saved", csv::format_double(s.mean_saved));
  kv("mean_entered", csv::format_double(s.mean_entered));
}

// ---------------------------------------------------------------------------
// Crowd snapshots

/// Header "role,x,y,heading,phase"; exactly one leader row (heading is the
/// leader heading), then one row per individual in index order.
inline void write_snapshot(std::ostream& os, const CrowdState& s) {
  os << "role,x,y,heading,phase\n";
  csv::Row(os) << "leader" << s.leader_pos.x << s.leader_pos.y << s.leader_heading << "leader";
  for (std::size_t i = 0; i < s.size(); ++i)
    csv::Row(os) << "individual" << s.positions[i].x << s.positions[i].y << s.headings[i]
                 << to_string(s.phases[i]);
}

inline CrowdState read_snapshot(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("snapshot: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "role,x,y,heading,phase")
    throw std::invalid_argument("snapshot: unexpected header '" + line + "'");
  CrowdState s;
  bool have_leader = false;
  int lineno = 1;
  auto number = [&](const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end || !std::isfinite(v))
      throw std::invalid_argument("snapshot line " + std::to_string(lineno) + ": bad number '" +
                                  text + "'");
    return v;
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5)
      throw std::invalid_argument("snapshot line " + std::to_string(lineno) +
                                  ": expected 5 fields");
    const Vec2 p{number(f[1]), number(f[2])};
    const double h = number(f[3]);
    if (f[0] == "leader") {
      if (have_leader) throw std::invalid_argument("snapshot: more than one leader row");
      have_leader = true;
      s.leader_pos = p;
      s.leader_heading = h;
    } else if (f[0] == "individual") {
      s.positions.push_back(p);
      s.headings.push_back(h);
      try {
        s.phases.push_back(phase_from_string(f[4]));
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument("snapshot line " + std::to_string(lineno) + ": " + e.what());
      }
    } else {
      throw std::invalid_argument("snapshot line " + std::to_string(lineno) + ": unknown role '" +
                                  f[0] + "'");
    }
  }
  if (!have_leader) throw std::invalid_argument("snapshot: missing leader row");
  s.n_saved = s.count(Phase::Saved);
  return s;
}

inline CrowdState load_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open snapshot: " + path.string());
  return read_snapshot(is);
}

constexpr Vec2 kClusterCentroid{0.55, 0.55};
constexpr double kClusterRadius = 0.05;

namespace detail {

/// n points filling a disc evenly (sunflower spiral), centroid close to center.
inline std::vector<Vec2> sunflower(int n, Vec2 center, double radius) {
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  std::vector<Vec2> out;
  for (int k = 0; k < n; ++k) {
    const double rho = radius * std::sqrt((k + 0.5) / n);
    out.push_back(center + rho * direction(golden * k));
  }
  return out;
}

inline CrowdState snapshot_from(std::vector<Vec2> positions, const EnvConfig& cfg) {
  CrowdState s;
  s.positions = std::move(positions);
  s.headings.assign(s.positions.size(), 0.0);
  s.phases.assign(s.positions.size(), Phase::Free);
  refresh_phases(s, cfg, false);  // leader-free: only the exit-zone test applies
  return s;
}

}  // namespace detail

/// N individuals packed in a disc of radius 0.05 around (0.55, 0.55), all Free.
inline CrowdState clustered_snapshot(const EnvConfig& cfg) {
  return detail::snapshot_from(
      detail::sunflower(cfg.num_individuals, kClusterCentroid, kClusterRadius), cfg);
}

/// N individuals spread over a disc of radius 0.9 L around the room center.
inline CrowdState dispersed_snapshot(const EnvConfig& cfg) {
  return detail::snapshot_from(
      detail::sunflower(cfg.num_individuals, {0.0, 0.0}, 0.9 * cfg.room_half_width), cfg);
}

inline Vec2 centroid(const CrowdState& s, Phase phase) {
  Vec2 sum{};
  int n = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.phases[i] == phase) {
      sum += s.positions[i];
      ++n;
    }
  return n == 0 ? Vec2{} : (1.0 / n) * sum;
}

// ---------------------------------------------------------------------------
// Fields over leader placements

/// Row-major grid points over [-L, L]^2, x varying fastest.
inline std::vector<Vec2> field_grid(int grid_res, double half_width) {
  if (grid_res < 2) throw std::invalid_argument("field: grid_res must be at least 2");
  std::vector<Vec2> out;
  for (int j = 0; j < grid_res; ++j)
    for (int i = 0; i < grid_res; ++i) {
      const double x = -half_width + 2.0 * half_width * i / (grid_res - 1);
      const double y = -half_width + 2.0 * half_width * j / (grid_res - 1);
      out.push_back({x, y});
    }
  return out;
}

/// The frozen crowd with the leader placed at `where`. With rederive_phases,
/// Free/Caught are recomputed from the catch radius; otherwise the stored
/// phases are used as they are.
inline CrowdState place_leader(const CrowdState& frozen, Vec2 where, const EnvConfig& cfg,
                               bool rederive_phases) {
  CrowdState s = frozen;
  s.leader_pos = where;
  if (rederive_phases) detail::refresh_phases(s, cfg, true);
  return s;
}

struct FieldCell {
  Vec2 cell;
  Vec2 dir;       // unit vector, or zero when flagged
  bool zero = false;
};

struct PolicyField {
  int grid_res = 0;
  std::vector<FieldCell> cells;
};

inline PolicyField policy_field(const PolicyParameters& params, const CrowdState& frozen,
                                const EnvConfig& cfg, int grid_res, bool rederive_phases = true) {
  cfg.validate();
  EnvConfig sized = cfg;
  sized.num_individuals = static_cast<int>(frozen.size());
  check_compatible(params, sized);
  const Encoder encoder{params.spec.encoder, params.spec.alpha};
  PolicyField f;
  f.grid_res = grid_res;
  for (const Vec2 p : field_grid(grid_res, cfg.room_half_width)) {
    const CrowdState s = place_leader(frozen, p, cfg, rederive_phases);
    const Vec2 mean = forward(params, encoder(s, cfg)).mean;
    const bool zero = !(norm(mean) > 0.0);
    f.cells.push_back({p, zero ? Vec2{} : unit(mean), zero});
  }
  return f;
}

inline void write_field_csv(std::ostream& os, const PolicyField& f) {
  os << "cell_x,cell_y,dir_x,dir_y,flag\n";
  for (const auto& c : f.cells)
    csv::Row(os) << c.cell.x << c.cell.y << c.dir.x << c.dir.y << (c.zero ? "zero" : "ok");
}

/// The grav encoder's force inputs at every grid cell.
struct ForceCell {
  Vec2 cell;
  Vec2 catch_force;
  Vec2 exit_force;
};

inline std::vector<ForceCell> force_field(const CrowdState& frozen, const EnvConfig& cfg,
                                          double alpha, int grid_res,
                                          bool rederive_phases = false) {
  std::vector<ForceCell> out;
  for (const Vec2 p : field_grid(grid_res, cfg.room_half_width)) {
    const CrowdState s = place_leader(frozen, p, cfg, rederive_phases);
    const auto obs = encode_grav(s, alpha, cfg.exit_point);
    out.push_back({p, {obs[2], obs[3]}, {obs[4], obs[5]}});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Alpha sweep

/// Shortest round-trip text for a value, used in directory names.
inline std::string compact_number(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw std::invalid_argument("cannot format number");
  return std::string(buf, end);
}

struct SweepRow {
  double alpha = 0.0;
  std::int64_t global_step = 0;
  int episodes = 0;
  double final_ema_return = std::nan("");
  double final_ema_length = std::nan("");
  double mean_episode_length = std::nan("");
  double final_completion_rate = std::nan("");
};

inline SweepRow sweep_row(double alpha, const TrainResult& r) {
  SweepRow row;
  row.alpha = alpha;
  row.episodes = static_cast<int>(r.episodes.size());
  if (!r.updates.empty()) {
    const auto& last = r.updates.back();
    row.global_step = last.global_step;
    row.final_ema_return = last.ema_return;
    row.final_ema_length = last.ema_length;
    row.final_completion_rate = last.completion_rate;
  }
  if (!r.episodes.empty()) {
    double len = 0.0;
    for (const auto& e : r.episodes) len += e.length;
    row.mean_episode_length = len / static_cast<double>(r.episodes.size());
  }
  return row;
}

inline void write_sweep_summary(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "alpha,global_step,episodes,final_ema_return,final_ema_length,mean_episode_length,"
        "final_completion_rate\n";
  for (const auto& r : rows)
    csv::Row(os) << r.alpha << r.global_step << r.episodes << r.final_ema_return
                 << r.final_ema_length << r.mean_episode_length << r.final_completion_rate;
}

/**
 * One grav-encoder training run per alpha, identical seed and budget. Each run
 * writes into `<dir>/alpha_<v>/`; the summary goes to `<dir>/sweep_summary.csv`.
 */
inline std::vector<SweepRow> alpha_sweep(const EnvConfig& env_cfg, const TrainConfig& train_cfg,
                                         std::uint64_t seed, const std::vector<double>& alphas,
                                         const std::filesystem::path& dir,
                                         TrainOutput io = {}) {
  if (alphas.empty()) throw std::invalid_argument("sweep: no alpha values given");
  for (double a : alphas)
    if (!(a >= 0.0) || !std::isfinite(a))
      throw std::invalid_argument("sweep: alpha values must be finite and nonnegative");
  std::vector<SweepRow> rows;
  for (double a : alphas) {
    if (!dir.empty()) io.dir = dir / ("alpha_" + compact_number(a));
    const TrainResult r = train(env_cfg, Encoder{EncoderKind::Gravity, a}, train_cfg, seed, io);
    rows.push_back(sweep_row(a, r));
  }
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    std::ofstream os(dir / "sweep_summary.csv", std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write sweep summary in " + dir.string());
    write_sweep_summary(os, rows);
  }
  return rows;
}

}  // namespace evac
