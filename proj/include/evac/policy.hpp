#pragma once
/**
 * @file policy.hpp
 * @brief Actor-critic MLPs with a state-independent Gaussian head.
 *
 * Actor:  input -> [64 tanh] x3 -> 2 (action mean)
 * Critic: input -> [64 tanh] x3 -> 1 (state value)
 * plus a learned log-std vector of size 2. The two trunks share nothing.
 *
 * Batches are column-major: one observation per column. Gradients are
 * computed by hand; PolicyParameters doubles as the gradient container.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "evac/encoding.hpp"
#include "evac/geometry.hpp"

namespace evac {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * ln(2 pi)

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Forward-pass record needed for backprop.
struct MlpTrace {
  std::vector<Eigen::MatrixXd> inputs;  // input to each layer (post-dropout)
  std::vector<Eigen::MatrixXd> tanh;    // hidden activations before dropout
  std::vector<Eigen::MatrixXd> masks;   // dropout scale per hidden layer, empty when off
};

class Mlp {
 public:
  Mlp() = default;

  Mlp(std::size_t in, std::size_t hidden, std::size_t hidden_layers, std::size_t out) {
    std::size_t prev = in;
    for (std::size_t l = 0; l < hidden_layers; ++l) {
      layers_.push_back({Eigen::MatrixXd::Zero(hidden, prev), Eigen::VectorXd::Zero(hidden)});
      prev = hidden;
    }
    layers_.push_back({Eigen::MatrixXd::Zero(out, prev), Eigen::VectorXd::Zero(out)});
  }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::size_t input_dim() const { return layers_.front().weight.cols(); }
  std::size_t output_dim() const { return layers_.back().weight.rows(); }

  /**
   * Batched forward pass. When dropout > 0 a fresh inverted-dropout mask is
   * drawn from rng for every hidden activation. trace may be null.
   */
  Eigen::MatrixXd forward(const Eigen::MatrixXd& x, MlpTrace* trace = nullptr,
                          double dropout = 0.0, RngStream* rng = nullptr) const {
    if (static_cast<std::size_t>(x.rows()) != input_dim())
      throw std::invalid_argument("Mlp::forward: got " + std::to_string(x.rows()) +
                                  " input features, expected " + std::to_string(input_dim()));
    if (trace != nullptr) {
      trace->inputs.clear();
      trace->tanh.clear();
      trace->masks.clear();
    }
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
      if (trace != nullptr) trace->inputs.push_back(a);
      Eigen::MatrixXd z = layers_[l].weight * a;
      z.colwise() += layers_[l].bias;
      Eigen::MatrixXd h = z.array().tanh().matrix();
      if (dropout > 0.0) {
        Eigen::MatrixXd mask(h.rows(), h.cols());
        const double keep = 1.0 / (1.0 - dropout);
        for (Eigen::Index k = 0; k < mask.size(); ++k)
          mask.data()[k] = rng->uniform() < dropout ? 0.0 : keep;
        if (trace != nullptr) {
          trace->tanh.push_back(h);
          trace->masks.push_back(mask);
        }
        a = h.cwiseProduct(mask);
      } else {
        if (trace != nullptr) trace->tanh.push_back(h);
        a = std::move(h);
      }
    }
    if (trace != nullptr) trace->inputs.push_back(a);
    Eigen::MatrixXd out = layers_.back().weight * a;
    out.colwise() += layers_.back().bias;
    return out;
  }

  /// Accumulates parameter gradients of sum(d_out .* output) into grad.
  void backward(const MlpTrace& trace, const Eigen::MatrixXd& d_out, Mlp& grad) const {
    Eigen::MatrixXd delta = d_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      grad.layers_[l].weight.noalias() += delta * trace.inputs[l].transpose();
      grad.layers_[l].bias += delta.rowwise().sum();
      if (l == 0) break;
      Eigen::MatrixXd d_in = layers_[l].weight.transpose() * delta;
      const std::size_t h = l - 1;
      if (!trace.masks.empty()) d_in = d_in.cwiseProduct(trace.masks[h]);
      delta = d_in.array() * (1.0 - trace.tanh[h].array().square());
    }
  }

  void set_zero() {
    for (auto& layer : layers_) {
      layer.weight.setZero();
      layer.bias.setZero();
    }
  }

  friend bool operator==(const Mlp& a, const Mlp& b) {
    if (a.layers_.size() != b.layers_.size()) return false;
    for (std::size_t l = 0; l < a.layers_.size(); ++l) {
      const auto& x = a.layers_[l];
      const auto& y = b.layers_[l];
      if (x.weight.rows() != y.weight.rows() || x.weight.cols() != y.weight.cols()) return false;
      if (x.weight != y.weight || x.bias != y.bias) return false;
    }
    return true;
  }

 private:
  std::vector<DenseLayer> layers_;
};

/// Architecture and provenance recorded alongside the weights.
struct PolicySpec {
  std::uint32_t input_dim = kGravObservationSize;
  std::uint32_t num_individuals = 60;
  double alpha = 1.0;
  EncoderKind encoder = EncoderKind::Gravity;
  std::uint32_t hidden_dim = 64;
  std::uint32_t hidden_layers = 3;

  friend bool operator==(const PolicySpec&, const PolicySpec&) = default;
};

/**
 * Running mean/variance of observations (parallel-merge update). Only
 * populated when observation normalization is enabled for training.
 */
struct ObsNormalizer {
  double count = 1e-4;
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  double clip = 10.0;

  bool enabled() const { return mean.size() > 0; }

  void init(std::size_t dim) {
    count = 1e-4;
    mean = Eigen::VectorXd::Zero(dim);
    var = Eigen::VectorXd::Ones(dim);
  }

  void update(std::span<const double> x) {
    const Eigen::Map<const Eigen::VectorXd> v(x.data(), static_cast<Eigen::Index>(x.size()));
    const double total = count + 1.0;
    const Eigen::VectorXd delta = v - mean;
    mean += delta / total;
    const Eigen::VectorXd m2 = var * count + delta.cwiseProduct(delta) * count / total;
    var = m2 / total;
    count = total;
  }

  void apply(std::span<double> x) const {
    if (!enabled()) return;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double z = (x[k] - mean[k]) / std::sqrt(var[k] + 1e-8);
      x[k] = std::clamp(z, -clip, clip);
    }
  }

  friend bool operator==(const ObsNormalizer& a, const ObsNormalizer& b) {
    return a.count == b.count && a.clip == b.clip && a.mean.size() == b.mean.size() &&
           a.mean == b.mean && a.var == b.var;
  }
};

struct PolicyParameters {
  PolicySpec spec;
  Mlp actor;
  Mlp critic;
  Eigen::Vector2d log_std = Eigen::Vector2d::Zero();
  ObsNormalizer obs_norm;

  PolicyParameters() = default;

  explicit PolicyParameters(const PolicySpec& s)
      : spec(s),
        actor(s.input_dim, s.hidden_dim, s.hidden_layers, 2),
        critic(s.input_dim, s.hidden_dim, s.hidden_layers, 1) {}

  /// Same shapes, all zeros (gradient buffers).
  PolicyParameters zeros_like() const {
    PolicyParameters g(spec);
    return g;
  }

  /**
   * Every parameter array in checkpoint order: actor layers (weight then
   * bias, input side first), log-std, then critic layers. Weights are
   * column-major out x in.
   */
  std::vector<std::span<double>> blocks() {
    std::vector<std::span<double>> out;
    auto add_mlp = [&out](Mlp& m) {
      for (auto& layer : m.layers()) {
        out.emplace_back(layer.weight.data(), static_cast<std::size_t>(layer.weight.size()));
        out.emplace_back(layer.bias.data(), static_cast<std::size_t>(layer.bias.size()));
      }
    };
    add_mlp(actor);
    out.emplace_back(log_std.data(), 2);
    add_mlp(critic);
    return out;
  }

  std::vector<std::span<const double>> blocks() const {
    auto mut = const_cast<PolicyParameters*>(this)->blocks();
    return {mut.begin(), mut.end()};
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto b : blocks()) n += b.size();
    return n;
  }

  bool all_finite() const {
    for (auto b : blocks())
      for (double v : b)
        if (!std::isfinite(v)) return false;
    return true;
  }

  void set_zero() {
    actor.set_zero();
    critic.set_zero();
    log_std.setZero();
  }

  friend bool operator==(const PolicyParameters& a, const PolicyParameters& b) {
    return a.spec == b.spec && a.actor == b.actor && a.critic == b.critic &&
           a.log_std == b.log_std && a.obs_norm == b.obs_norm;
  }
};

namespace detail {

/// Orthogonal matrix (rows x cols) scaled by gain, from a Gaussian QR.
inline Eigen::MatrixXd orthogonal(Eigen::Index rows, Eigen::Index cols, double gain,
                                  RngStream& rng) {
  const Eigen::Index big = std::max(rows, cols);
  const Eigen::Index small = std::min(rows, cols);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index k = 0; k < g.size(); ++k) g.data()[k] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix so the result is uniformly distributed.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index j = 0; j < small; ++j)
    if (r(j, j) < 0.0) q.col(j) *= -1.0;
  Eigen::MatrixXd w = rows >= cols ? q : Eigen::MatrixXd(q.transpose());
  return gain * w;
}

inline void init_mlp(Mlp& m, double output_gain, RngStream& rng) {
  auto& layers = m.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const double gain = l + 1 == layers.size() ? output_gain : std::sqrt(2.0);
    layers[l].weight = orthogonal(layers[l].weight.rows(), layers[l].weight.cols(), gain, rng);
    layers[l].bias.setZero();
  }
}

}  // namespace detail

/// Fresh parameters: orthogonal hidden weights (gain sqrt 2), actor output gain
/// 0.01, critic output gain 1, zero biases, log-std 0.
inline PolicyParameters init_policy(const PolicySpec& spec, std::uint64_t seed) {
  PolicyParameters p(spec);
  RngStream rng(derive_seed(seed, 0xA11CE));
  detail::init_mlp(p.actor, 0.01, rng);
  detail::init_mlp(p.critic, 1.0, rng);
  p.log_std.setZero();
  return p;
}

struct PolicyOutput {
  Vec2 mean;
  std::array<double, 2> log_std{};
  double value = 0.0;
};

/// Converts one observation into a 1-column matrix, normalized if configured.
inline Eigen::MatrixXd to_column(const PolicyParameters& p, std::span<const double> obs) {
  if (obs.size() != p.spec.input_dim)
    throw std::invalid_argument("policy: observation has " + std::to_string(obs.size()) +
                                " features, policy expects " + std::to_string(p.spec.input_dim));
  Eigen::MatrixXd x(obs.size(), 1);
  for (std::size_t k = 0; k < obs.size(); ++k) x(static_cast<Eigen::Index>(k), 0) = obs[k];
  if (p.obs_norm.enabled()) p.obs_norm.apply(std::span<double>(x.data(), obs.size()));
  return x;
}

/// Forward pass on already-normalized features (one column).
inline PolicyOutput forward_features(const PolicyParameters& p, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd mu = p.actor.forward(x);
  const Eigen::MatrixXd v = p.critic.forward(x);
  return {{mu(0, 0), mu(1, 0)}, {p.log_std[0], p.log_std[1]}, v(0, 0)};
}

/// Deterministic forward pass (no dropout).
inline PolicyOutput forward(const PolicyParameters& p, std::span<const double> obs) {
  return forward_features(p, to_column(p, obs));
}

/// Sum over both dimensions of the Gaussian log density of action.
inline double gaussian_log_prob(Vec2 action, Vec2 mean, const std::array<double, 2>& log_std) {
  const double a[2] = {action.x, action.y};
  const double m[2] = {mean.x, mean.y};
  double lp = 0.0;
  for (int d = 0; d < 2; ++d) {
    const double z = (a[d] - m[d]) * std::exp(-log_std[d]);
    lp += -0.5 * z * z - log_std[d] - kHalfLog2Pi;
  }
  return lp;
}

/// Uniform mean perturbation in [-rpo_alpha, rpo_alpha] per dimension.
inline Vec2 rpo_perturbation(RngStream& rng, double rpo_alpha) {
  if (rpo_alpha == 0.0) return {};
  const double x = rng.uniform(-rpo_alpha, rpo_alpha);
  const double y = rng.uniform(-rpo_alpha, rpo_alpha);
  return {x, y};
}

enum class SampleMode { Train, Eval };

struct ActionSample {
  Vec2 action;
  double log_prob = 0.0;
  double value = 0.0;
};

/**
 * Train mode draws a ~ N(mean, exp(log_std)^2) and reports its density under
 * that same distribution; the RPO perturbation only enters when stored
 * actions are re-scored (log_prob, and the trainer's loss). Eval mode
 * returns the mean.
 */
inline ActionSample sample_from_features(const PolicyParameters& p, const Eigen::MatrixXd& x,
                                         RngStream& rng, SampleMode mode) {
  const PolicyOutput out = forward_features(p, x);
  ActionSample s;
  s.value = out.value;
  if (mode == SampleMode::Eval) {
    s.action = out.mean;
    s.log_prob = gaussian_log_prob(out.mean, out.mean, out.log_std);
    return s;
  }
  s.action = {out.mean.x + std::exp(out.log_std[0]) * rng.normal(),
              out.mean.y + std::exp(out.log_std[1]) * rng.normal()};
  s.log_prob = gaussian_log_prob(s.action, out.mean, out.log_std);
  return s;
}

inline ActionSample sample_action(const PolicyParameters& p, std::span<const double> obs,
                                  RngStream& rng, SampleMode mode) {
  return sample_from_features(p, to_column(p, obs), rng, mode);
}

/// log pi(action | obs) with the RPO-perturbed mean (rng supplies the perturbation).
inline double log_prob(const PolicyParameters& p, std::span<const double> obs, Vec2 action,
                       RngStream& rng, double rpo_alpha) {
  const PolicyOutput out = forward(p, obs);
  return gaussian_log_prob(action, out.mean + rpo_perturbation(rng, rpo_alpha), out.log_std);
}

/// Gradients of log_prob and of the value estimate for one observation, with
/// a fixed mean perturbation. Used by the gradient check.
struct SingleGradients {
  PolicyParameters log_prob;
  PolicyParameters value;
};

inline SingleGradients single_gradients(const PolicyParameters& p, std::span<const double> obs,
                                        Vec2 action, Vec2 perturbation) {
  SingleGradients g{p.zeros_like(), p.zeros_like()};
  const Eigen::MatrixXd x = to_column(p, obs);
  MlpTrace actor_trace;
  MlpTrace critic_trace;
  const Eigen::MatrixXd mu = p.actor.forward(x, &actor_trace);
  p.critic.forward(x, &critic_trace);

  Eigen::MatrixXd d_mu(2, 1);
  const double a[2] = {action.x, action.y};
  const double m[2] = {mu(0, 0) + perturbation.x, mu(1, 0) + perturbation.y};
  for (int d = 0; d < 2; ++d) {
    const double inv_var = std::exp(-2.0 * p.log_std[d]);
    const double diff = a[d] - m[d];
    d_mu(d, 0) = diff * inv_var;
    g.log_prob.log_std[d] = diff * diff * inv_var - 1.0;
  }
  p.actor.backward(actor_trace, d_mu, g.log_prob.actor);
  p.critic.backward(critic_trace, Eigen::MatrixXd::Ones(1, 1), g.value.critic);
  return g;
}

}  // namespace evac
