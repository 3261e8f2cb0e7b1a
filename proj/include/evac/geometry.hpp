#pragma once
/**
 * @file geometry.hpp
 * @brief Planar vectors, angle canonicalization, circular means and the
 *        seeded random stream shared by the simulator and the trainer.
 *
 * Angles are plain doubles in radians; canonical range is (-pi, pi].
 * Circular means return std::nullopt when the resultant vector vanishes
 * (no prevailing orientation), callers decide how to resolve that case.
 */

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>

namespace evac {

constexpr double kPi = std::numbers::pi;

/// Resultant magnitudes at or below this are treated as "no direction".
constexpr double kDegenerateResultant = 1e-12;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2& operator+=(Vec2 o) { x += o.x; y += o.y; return *this; }
  constexpr Vec2& operator-=(Vec2 o) { x -= o.x; y -= o.y; return *this; }
  constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
  friend constexpr Vec2 operator*(Vec2 v, double s) { return {s * v.x, s * v.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

/// Unit vector along v; the zero vector maps to itself.
inline Vec2 unit(Vec2 v) {
  const double n = norm(v);
  if (n == 0.0) return {};
  return {v.x / n, v.y / n};
}

inline Vec2 direction(double theta) { return {std::cos(theta), std::sin(theta)}; }

/// Maps any finite angle into (-pi, pi].
inline double canonicalize(double theta) {
  if (theta > -kPi && theta <= kPi) return theta;
  double r = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
  if (r <= -kPi) r += 2.0 * kPi;
  return r;
}

inline std::optional<double> angle_of(double sum_sin, double sum_cos) {
  if (std::hypot(sum_sin, sum_cos) <= kDegenerateResultant) return std::nullopt;
  return canonicalize(std::atan2(sum_sin, sum_cos));
}

/// Mean direction of a set of angles: argument of the sum of unit vectors.
inline std::optional<double> circular_mean(std::span<const double> angles) {
  if (angles.empty()) throw std::invalid_argument("circular_mean: empty angle list");
  if (angles.size() == 1) return canonicalize(angles[0]);
  double s = 0.0;
  double c = 0.0;
  for (double a : angles) {
    s += std::sin(a);
    c += std::cos(a);
  }
  return angle_of(s, c);
}

/**
 * Weighted mean direction, arg(sum_k w_k e^{i theta_k}).
 *
 * Zero-weight entries are excluded outright, so a single surviving angle is
 * returned exactly (canonicalized) rather than through an atan2 round trip.
 */
inline std::optional<double> weighted_circular_mean(std::span<const double> angles,
                                                    std::span<const double> weights) {
  if (angles.size() != weights.size())
    throw std::invalid_argument("weighted_circular_mean: angle/weight length mismatch");
  if (angles.empty()) throw std::invalid_argument("weighted_circular_mean: empty angle list");
  double s = 0.0;
  double c = 0.0;
  std::size_t live = 0;
  std::size_t last = 0;
  for (std::size_t k = 0; k < angles.size(); ++k) {
    if (weights[k] < 0.0 || !std::isfinite(weights[k]))
      throw std::invalid_argument("weighted_circular_mean: weights must be finite and nonnegative");
    if (weights[k] == 0.0) continue;
    s += weights[k] * std::sin(angles[k]);
    c += weights[k] * std::cos(angles[k]);
    ++live;
    last = k;
  }
  if (live == 0) throw std::invalid_argument("weighted_circular_mean: all weights are zero");
  if (live == 1) return canonicalize(angles[last]);
  return angle_of(s, c);
}

/// SplitMix64 finalizer, used to derive independent sub-stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return mix_seed(mix_seed(seed) ^ mix_seed(stream + 0x632BE59BD9B4E019ULL));
}

/**
 * Seeded random stream backed by mt19937_64.
 *
 * The mapping from raw 64-bit draws to uniforms and normals is written out
 * here rather than taken from <random> distributions, whose algorithms are
 * implementation-defined; this keeps sequences identical across toolchains.
 */
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    spare_ = radius * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return radius * std::cos(2.0 * kPi * u2);
  }

  /// Uniform index in [0, n).
  std::size_t index(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Vicsek noise: a draw from [-eta/2, eta/2].
inline double uniform_noise(RngStream& rng, double eta) {
  if (eta < 0.0) throw std::invalid_argument("uniform_noise: eta must be nonnegative");
  if (eta == 0.0) return 0.0;
  return rng.uniform(-0.5 * eta, 0.5 * eta);
}

}  // namespace evac
