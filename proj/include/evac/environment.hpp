#pragma once
/**
 * @file environment.hpp
 * @brief Evacuation world: generalized Vicsek crowd, leader kinematics,
 *        catch/exit zones and the per-step reward.
 *
 * One step, in order:
 *   1. Free/Caught phases are derived with leader and crowd at the same time
 *      index, before anyone moves;
 *   2. the leader moves v along unit(action) and is clamped to the room;
 *   3. Free/Caught headings update synchronously (Caught individuals blend the
 *      new leader heading with their Vicsek heading, weights q and 1-q);
 *   4. ExitZone individuals turn straight toward the exit point; everyone not
 *      Saved advances v, then walls clamp positions and reflect headings;
 *   5. phases are refreshed once more so the returned state is consistent
 *      (exit-zone entry, saving, catch status) and the reward counts entrants.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evac/csv.hpp"
#include "evac/geometry.hpp"

namespace evac {

enum class Phase : std::uint8_t { Free = 0, Caught = 1, ExitZone = 2, Saved = 3 };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Free: return "free";
    case Phase::Caught: return "caught";
    case Phase::ExitZone: return "exit";
    case Phase::Saved: return "saved";
  }
  return "?";
}

inline Phase phase_from_string(const std::string& s) {
  if (s == "free") return Phase::Free;
  if (s == "caught") return Phase::Caught;
  if (s == "exit") return Phase::ExitZone;
  if (s == "saved") return Phase::Saved;
  throw std::invalid_argument("unknown phase '" + s + "'");
}

struct EnvConfig {
  double room_half_width = 1.0;  // L
  double vicsek_radius = 0.1;    // r
  double leader_radius = 0.2;    // r_L
  double noise = 0.2;            // eta
  double speed = 0.01;           // v, room units per step
  int max_steps = 2000;          // t_max
  int num_individuals = 60;      // N
  double exit_radius = 0.4;
  double enslaving = 1.0;  // q
  Vec2 exit_point{0.0, -1.0};
  double save_radius = 0.01;
  double reward_entry = 15.0;  // w_A
  double reward_early = 10.0;  // w_B
  double step_penalty = 1.0;   // p

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("env: " + what); };
    if (!(room_half_width > 0.0)) fail("L must be positive");
    if (!(vicsek_radius > 0.0)) fail("vicsek radius r must be positive");
    if (!(leader_radius >= vicsek_radius)) fail("leader radius r_L must be >= r");
    if (!(noise >= 0.0)) fail("noise must be nonnegative");
    if (!(speed > 0.0)) fail("speed v must be positive");
    if (max_steps <= 0) fail("t_max must be positive");
    if (num_individuals < 0) fail("N must be nonnegative");
    if (!(enslaving >= 0.0 && enslaving <= 1.0)) fail("enslaving degree q must lie in [0, 1]");
    if (!(save_radius > 0.0)) fail("save radius must be positive");
    if (!(exit_radius > save_radius)) fail("exit radius must exceed save radius");
    if (std::abs(exit_point.x) > room_half_width || std::abs(exit_point.y) > room_half_width)
      fail("exit point must lie inside the room");
  }
};

struct CrowdState {
  std::vector<Vec2> positions;
  std::vector<double> headings;
  std::vector<Phase> phases;
  Vec2 leader_pos{};
  double leader_heading = 0.0;
  int t = 0;
  int n_saved = 0;

  std::size_t size() const { return positions.size(); }

  int count(Phase p) const {
    int n = 0;
    for (Phase q : phases) n += (q == p);
    return n;
  }

  friend bool operator==(const CrowdState&, const CrowdState&) = default;
};

struct StepOutcome {
  double reward = 0.0;
  bool terminated = false;  // everyone saved
  bool truncated = false;   // hit t_max without finishing
  int entered_exit_zone = 0;
  int saved_this_step = 0;

  bool done() const { return terminated || truncated; }
};

/// Reward of one step: (w_A + w_B * (1 - t / t_max)) * entrants - p.
inline double compute_reward(int n_exiting_new, int t, const EnvConfig& cfg) {
  const double tau = 1.0 - static_cast<double>(t) / static_cast<double>(cfg.max_steps);
  return (cfg.reward_entry + cfg.reward_early * tau) * n_exiting_new - cfg.step_penalty;
}

namespace detail {

struct PhaseDelta {
  int entered_exit = 0;
  int saved = 0;
};

/**
 * Re-derives phases from positions. ExitZone and Saved are absorbing; Free
 * and Caught are recomputed from scratch (Caught only when with_leader).
 */
inline PhaseDelta refresh_phases(CrowdState& s, const EnvConfig& cfg, bool with_leader) {
  PhaseDelta d;
  for (std::size_t i = 0; i < s.size(); ++i) {
    Phase& ph = s.phases[i];
    if (ph == Phase::Saved) continue;
    const double to_exit = distance(s.positions[i], cfg.exit_point);
    if (ph != Phase::ExitZone && to_exit < cfg.exit_radius) {
      ph = Phase::ExitZone;
      ++d.entered_exit;
    }
    if (ph == Phase::ExitZone) {
      if (to_exit <= cfg.save_radius) {
        ph = Phase::Saved;
        ++d.saved;
      }
      continue;
    }
    const bool caught = with_leader && distance(s.positions[i], s.leader_pos) < cfg.leader_radius;
    ph = caught ? Phase::Caught : Phase::Free;
  }
  s.n_saved += d.saved;
  return d;
}

/// Clamps p into the room; reflects the heading component normal to any wall hit.
inline void clamp_to_room(Vec2& p, double* heading, double half_width) {
  bool hit_x = false;
  bool hit_y = false;
  if (p.x > half_width) { p.x = half_width; hit_x = true; }
  if (p.x < -half_width) { p.x = -half_width; hit_x = true; }
  if (p.y > half_width) { p.y = half_width; hit_y = true; }
  if (p.y < -half_width) { p.y = -half_width; hit_y = true; }
  if (heading == nullptr) return;
  if (hit_x) *heading = canonicalize(kPi - *heading);
  if (hit_y) *heading = canonicalize(-*heading);
}

inline bool aligns(Phase p) { return p == Phase::Free || p == Phase::Caught; }

}  // namespace detail

/**
 * Vicsek heading of individual i: circular mean over every Free/Caught
 * individual within r (i itself included), plus uniform noise. When the mean
 * is undefined the individual keeps its current heading.
 */
inline double vicsek_heading(std::size_t i, const CrowdState& s, const EnvConfig& cfg,
                             RngStream& rng) {
  const Vec2 pi = s.positions[i];
  const double r2 = cfg.vicsek_radius * cfg.vicsek_radius;
  double sum_sin = 0.0;
  double sum_cos = 0.0;
  int neighbours = 0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (!detail::aligns(s.phases[k])) continue;
    const Vec2 d = s.positions[k] - pi;
    if (k != i && dot(d, d) >= r2) continue;
    sum_sin += std::sin(s.headings[k]);
    sum_cos += std::cos(s.headings[k]);
    ++neighbours;
  }
  double mean = s.headings[i];
  if (neighbours > 1) {
    if (auto m = angle_of(sum_sin, sum_cos)) mean = *m;
  }
  return canonicalize(mean + uniform_noise(rng, cfg.noise));
}

/// Fresh episode: leader at the origin, individuals uniform over the room.
inline CrowdState reset(const EnvConfig& cfg, RngStream& rng) {
  CrowdState s;
  const auto n = static_cast<std::size_t>(cfg.num_individuals);
  const double L = cfg.room_half_width;
  s.positions.resize(n);
  s.headings.resize(n);
  s.phases.assign(n, Phase::Free);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.uniform(-L, L);
    const double y = rng.uniform(-L, L);
    s.positions[i] = {x, y};
    // uniform() is in [0, 1), so this lands in (-pi, pi].
    s.headings[i] = kPi - 2.0 * kPi * rng.uniform();
  }
  s.leader_pos = {0.0, 0.0};
  s.leader_heading = 0.0;
  s.t = 0;
  s.n_saved = 0;
  detail::refresh_phases(s, cfg, true);
  return s;
}

namespace detail {

inline StepOutcome advance(CrowdState& s, const EnvConfig& cfg, RngStream& rng, bool with_leader,
                           const Vec2* action) {
  const PhaseDelta pre = refresh_phases(s, cfg, with_leader);

  if (action != nullptr && norm(*action) > 0.0) {
    s.leader_heading = std::atan2(action->y, action->x);
    s.leader_pos += cfg.speed * unit(*action);
    clamp_to_room(s.leader_pos, nullptr, cfg.room_half_width);
  }

  const std::size_t n = s.size();
  std::vector<double> next = s.headings;
  const double q = cfg.enslaving;
  for (std::size_t i = 0; i < n; ++i) {
    const Phase ph = s.phases[i];
    if (ph == Phase::Free) {
      next[i] = vicsek_heading(i, s, cfg, rng);
    } else if (ph == Phase::Caught) {
      if (q == 1.0) {
        next[i] = s.leader_heading;
      } else {
        const double own = vicsek_heading(i, s, cfg, rng);
        const double angles[2] = {s.leader_heading, own};
        const double weights[2] = {q, 1.0 - q};
        next[i] = weighted_circular_mean(angles, weights).value_or(own);
      }
    } else if (ph == Phase::ExitZone) {
      const Vec2 to_exit = cfg.exit_point - s.positions[i];
      if (norm(to_exit) > 0.0) next[i] = std::atan2(to_exit.y, to_exit.x);
    }
  }
  s.headings = std::move(next);

  for (std::size_t i = 0; i < n; ++i) {
    const Phase ph = s.phases[i];
    if (ph == Phase::Saved) continue;
    if (ph == Phase::ExitZone) {
      const Vec2 to_exit = cfg.exit_point - s.positions[i];
      s.positions[i] += std::min(cfg.speed, norm(to_exit)) * unit(to_exit);
      clamp_to_room(s.positions[i], nullptr, cfg.room_half_width);
      continue;
    }
    s.positions[i] += cfg.speed * direction(s.headings[i]);
    clamp_to_room(s.positions[i], &s.headings[i], cfg.room_half_width);
  }

  const PhaseDelta post = refresh_phases(s, cfg, with_leader);
  s.t += 1;

  StepOutcome out;
  out.entered_exit_zone = pre.entered_exit + post.entered_exit;
  out.saved_this_step = pre.saved + post.saved;
  out.reward = compute_reward(out.entered_exit_zone, s.t, cfg);
  out.terminated = s.n_saved == static_cast<int>(n);
  out.truncated = !out.terminated && s.t >= cfg.max_steps;
  return out;
}

}  // namespace detail

/**
 * Advances the world one step under the leader action. The action is a free
 * direction vector; only unit(action) is used. A zero action holds the
 * leader in place for this step.
 */
inline StepOutcome step(CrowdState& s, Vec2 action, const EnvConfig& cfg, RngStream& rng) {
  if (!std::isfinite(action.x) || !std::isfinite(action.y))
    throw std::invalid_argument("step: non-finite action");
  return detail::advance(s, cfg, rng, true, &action);
}

/// Leaderless dynamics: nobody is ever Caught, the leader pose is untouched.
inline StepOutcome no_leader_step(CrowdState& s, const EnvConfig& cfg, RngStream& rng) {
  return detail::advance(s, cfg, rng, false, nullptr);
}

/// Order parameter |sum_i e_i| / N over all individuals.
inline double order_parameter(const CrowdState& s) {
  if (s.size() == 0) return 0.0;
  Vec2 sum{};
  for (double h : s.headings) sum += direction(h);
  return norm(sum) / static_cast<double>(s.size());
}

/// Trajectory dump: one row per step.
class TrajectoryWriter {
 public:
  explicit TrajectoryWriter(std::ostream& os) : os_(os) {
    os_ << "t,leader_x,leader_y,n_free,n_caught,n_exit,n_saved,reward\n";
  }

  void write(const CrowdState& s, double reward) {
    csv::Row(os_) << s.t << s.leader_pos.x << s.leader_pos.y << s.count(Phase::Free)
                  << s.count(Phase::Caught) << s.count(Phase::ExitZone)
                  << s.count(Phase::Saved) << reward;
  }

 private:
  std::ostream& os_;
};

}  // namespace evac
