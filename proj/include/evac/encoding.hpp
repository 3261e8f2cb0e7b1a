#pragma once
/**
 * @file encoding.hpp
 * @brief Observation builders: the flat 2N+4 vector and the fixed-size
 *        pseudo-gravitational encoding (leader position, catch force, exit force).
 *
 * Potentials, for a query point x:
 *   U_catch(x) = -sum_{i free} |x - r_i|^-alpha
 *   U_exit(x)  = -|r_exit - x|^-alpha * N_caught
 * and the forces are their negative gradients, in closed form:
 *   F_catch(x) = sum_{i free} alpha (r_i - x) d_i^(-alpha-2)
 *   F_exit(x)  = N_caught alpha (r_exit - x) d^(-alpha-2)
 * Every distance is floored at kMinDistance so inputs stay finite.
 */

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "evac/environment.hpp"
#include "evac/geometry.hpp"

namespace evac {

constexpr double kMinDistance = 1e-4;

enum class EncoderKind { FeedForward, Gravity };

inline const char* to_string(EncoderKind k) {
  return k == EncoderKind::Gravity ? "grav" : "ff";
}

inline EncoderKind encoder_from_string(const std::string& s) {
  if (s == "ff") return EncoderKind::FeedForward;
  if (s == "grav") return EncoderKind::Gravity;
  throw std::invalid_argument("unknown encoder '" + s + "' (expected ff or grav)");
}

constexpr std::size_t kGravObservationSize = 6;

inline std::size_t observation_size(EncoderKind kind, int num_individuals) {
  return kind == EncoderKind::Gravity ? kGravObservationSize
                                      : 2 * static_cast<std::size_t>(num_individuals) + 4;
}

namespace detail {

inline void check_alpha(double alpha) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("encoding: alpha must be nonnegative");
}

inline double floored(double d) { return d < kMinDistance ? kMinDistance : d; }

/// Contribution alpha * delta * d^(-alpha-2) toward a source at offset delta.
inline Vec2 attraction(Vec2 delta, double alpha) {
  if (alpha == 0.0) return {};
  const double d = floored(norm(delta));
  return (alpha * std::pow(d, -alpha - 2.0)) * delta;
}

}  // namespace detail

/// Leader position, exit relative to leader, then r_i - r_l per individual.
/// Saved individuals report the exit offset so indexing never shifts.
inline std::vector<double> encode_ff(const CrowdState& s, Vec2 exit_point) {
  std::vector<double> obs;
  obs.reserve(2 * s.size() + 4);
  const Vec2 exit_rel = exit_point - s.leader_pos;
  obs.push_back(s.leader_pos.x);
  obs.push_back(s.leader_pos.y);
  obs.push_back(exit_rel.x);
  obs.push_back(exit_rel.y);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const Vec2 rel = s.phases[i] == Phase::Saved ? exit_rel : s.positions[i] - s.leader_pos;
    obs.push_back(rel.x);
    obs.push_back(rel.y);
  }
  return obs;
}

inline double catch_potential(Vec2 point, const CrowdState& s, double alpha) {
  detail::check_alpha(alpha);
  double u = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.phases[i] != Phase::Free) continue;
    u -= std::pow(detail::floored(distance(point, s.positions[i])), -alpha);
  }
  return u;
}

inline double exit_potential(Vec2 point, const CrowdState& s, double alpha, Vec2 exit_point) {
  detail::check_alpha(alpha);
  const int caught = s.count(Phase::Caught);
  if (caught == 0) return 0.0;
  return -std::pow(detail::floored(distance(exit_point, point)), -alpha) * caught;
}

inline Vec2 catch_force(Vec2 point, const CrowdState& s, double alpha) {
  detail::check_alpha(alpha);
  Vec2 f{};
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.phases[i] != Phase::Free) continue;
    f += detail::attraction(s.positions[i] - point, alpha);
  }
  return f;
}

inline Vec2 exit_force(Vec2 point, const CrowdState& s, double alpha, Vec2 exit_point) {
  detail::check_alpha(alpha);
  const int caught = s.count(Phase::Caught);
  if (caught == 0) return {};
  return static_cast<double>(caught) * detail::attraction(exit_point - point, alpha);
}

/// [leader x, leader y, F_catch x, F_catch y, F_exit x, F_exit y], all at the leader.
inline std::vector<double> encode_grav(const CrowdState& s, double alpha, Vec2 exit_point) {
  const Vec2 fc = catch_force(s.leader_pos, s, alpha);
  const Vec2 fe = exit_force(s.leader_pos, s, alpha, exit_point);
  return {s.leader_pos.x, s.leader_pos.y, fc.x, fc.y, fe.x, fe.y};
}

/// Encoder selection bundled with its parameters.
struct Encoder {
  EncoderKind kind = EncoderKind::Gravity;
  double alpha = 1.0;

  std::vector<double> operator()(const CrowdState& s, const EnvConfig& cfg) const {
    return kind == EncoderKind::Gravity ? encode_grav(s, alpha, cfg.exit_point)
                                        : encode_ff(s, cfg.exit_point);
  }

  std::size_t size(int num_individuals) const { return observation_size(kind, num_individuals); }
};

}  // namespace evac
