#pragma once
/**
 * @file trainer.hpp
 * @brief On-policy actor-critic training: rollout collection over several
 *        auto-resetting environments, GAE, and clipped-surrogate updates with
 *        RPO mean perturbation, Adam, gradient-norm clipping and linear
 *        learning-rate annealing.
 *
 * Buffer layout: column/entry index = step * num_envs + env.
 * dones[idx] flags that the observation stored at idx starts a fresh episode
 * (its predecessor transition ended one).
 */

#include <Eigen/Dense>

#include <algorithm>
#include <barrier>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "evac/checkpoint.hpp"
#include "evac/csv.hpp"
#include "evac/encoding.hpp"
#include "evac/environment.hpp"
#include "evac/policy.hpp"
#include "evac/stats.hpp"

namespace evac {

struct TrainConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_coef = 0.2;
  double vf_coef = 0.5;
  double ent_coef = 0.0;
  double learning_rate = 5e-4;
  bool anneal_lr = true;
  int update_epochs = 10;
  int num_minibatches = 32;
  double max_grad_norm = 0.5;
  bool norm_adv = true;
  bool clip_vloss = true;
  std::int64_t total_timesteps = 3'000'000;
  std::optional<double> target_kl;
  double rpo_alpha = 0.5;
  double dropout = 0.1;
  int num_envs = 3;
  int num_steps = 2048;
  bool deterministic = true;
  bool norm_obs = false;
  bool norm_reward = true;
  double adam_eps = 1e-5;
  int hidden_dim = 64;
  int hidden_layers = 3;

  int batch_size() const { return num_envs * num_steps; }
  int minibatch_size() const { return batch_size() / num_minibatches; }
  std::int64_t num_iterations() const { return total_timesteps / batch_size(); }

  void validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("train: " + what); };
    if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must lie in [0, 1]");
    if (!(clip_coef > 0.0)) fail("clip_coef must be positive");
    if (!(vf_coef >= 0.0)) fail("vf_coef must be nonnegative");
    if (!(ent_coef >= 0.0)) fail("ent_coef must be nonnegative");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
    if (update_epochs <= 0) fail("update_epochs must be positive");
    if (num_minibatches <= 0) fail("num_minibatches must be positive");
    if (num_envs <= 0) fail("num_envs must be positive");
    if (num_steps <= 0) fail("num_steps must be positive");
    if (batch_size() % num_minibatches != 0)
      fail("num_minibatches must divide num_envs * num_steps");
    if (!(max_grad_norm > 0.0)) fail("max_grad_norm must be positive");
    if (total_timesteps < batch_size()) fail("total_timesteps must cover at least one rollout");
    if (target_kl && !(*target_kl > 0.0)) fail("target_kl must be positive when set");
    if (!(rpo_alpha >= 0.0)) fail("rpo_alpha must be nonnegative");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (hidden_dim <= 0 || hidden_layers <= 0) fail("network shape must be positive");
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpisodeRecord {
  std::int64_t global_step = 0;
  int env = 0;
  double episode_return = 0.0;
  int length = 0;
  bool completed = false;  // everyone saved
};

struct RolloutBuffer {
  int num_envs = 0;
  int num_steps = 0;
  Eigen::MatrixXd obs;      // obs_dim x capacity
  Eigen::MatrixXd actions;  // 2 x capacity
  Eigen::VectorXd log_probs;
  Eigen::VectorXd rewards;
  Eigen::VectorXd values;
  Eigen::VectorXd dones;
  int filled = 0;

  RolloutBuffer(int envs, int steps, std::size_t obs_dim)
      : num_envs(envs),
        num_steps(steps),
        obs(static_cast<Eigen::Index>(obs_dim), envs * steps),
        actions(2, envs * steps),
        log_probs(envs * steps),
        rewards(envs * steps),
        values(envs * steps),
        dones(envs * steps) {}

  int capacity() const { return num_envs * num_steps; }
  bool full() const { return filled == capacity(); }
  void clear() { filled = 0; }
};

/**
 * Parallel auto-resetting environments. Each slot owns two streams, one for
 * dynamics/resets and one for action sampling, so results do not depend on
 * how slots are spread over worker threads.
 */
class VecEnv {
 public:
  VecEnv(const EnvConfig& cfg, const Encoder& encoder, int num_envs, std::uint64_t seed,
         bool normalize_obs, double gamma, bool normalize_reward)
      : cfg_(cfg), encoder_(encoder), gamma_(gamma), scale_rewards_(normalize_reward) {
    cfg_.validate();
    const std::size_t dim = encoder_.size(cfg_.num_individuals);
    if (normalize_obs) obs_norm_.init(dim);
    slots_.resize(static_cast<std::size_t>(num_envs));
    for (int e = 0; e < num_envs; ++e) {
      Slot& s = slots_[static_cast<std::size_t>(e)];
      s.env_rng = RngStream(derive_seed(seed, 2 * static_cast<std::uint64_t>(e) + 1));
      s.act_rng = RngStream(derive_seed(seed, 2 * static_cast<std::uint64_t>(e) + 2));
      s.state = reset(cfg_, s.env_rng);
      s.raw_obs = encoder_(s.state, cfg_);
    }
    for (Slot& s : slots_) s.features = normalize(s.raw_obs);
  }

  int size() const { return static_cast<int>(slots_.size()); }
  const EnvConfig& config() const { return cfg_; }
  const Encoder& encoder() const { return encoder_; }
  std::size_t obs_dim() const { return encoder_.size(cfg_.num_individuals); }
  const ObsNormalizer& obs_normalizer() const { return obs_norm_; }

  const Eigen::MatrixXd& features(int e) const { return slot(e).features; }
  bool next_done(int e) const { return slot(e).next_done; }
  const CrowdState& state(int e) const { return slot(e).state; }

  struct Transition {
    Vec2 action;
    double log_prob = 0.0;
    double value = 0.0;
    double reward = 0.0;  // as stored for learning (scaled if enabled)
  };

  /// Samples and applies one action in slot e. Touches only slot e.
  void act(int e, const PolicyParameters& params) {
    Slot& s = slot(e);
    const ActionSample a =
        sample_from_features(params, s.features, s.act_rng, SampleMode::Train);
    s.last.action = a.action;
    s.last.log_prob = a.log_prob;
    s.last.value = a.value;
    s.outcome = step(s.state, a.action, cfg_, s.env_rng);
    s.episode_return += s.outcome.reward;
    s.episode_length += 1;
    s.finished = s.outcome.done();
    s.finished_return = s.episode_return;
    s.finished_length = s.episode_length;
    s.finished_completed = s.outcome.terminated;
    if (s.finished) {
      s.state = reset(cfg_, s.env_rng);
      s.episode_return = 0.0;
      s.episode_length = 0;
    }
    s.raw_obs = encoder_(s.state, cfg_);
  }

  /**
   * Serial bookkeeping after every slot acted: normalizer updates (slot
   * order), reward scaling, and finished-episode records.
   */
  void settle(std::int64_t global_step, std::vector<EpisodeRecord>& episodes) {
    for (int e = 0; e < size(); ++e) {
      Slot& s = slot(e);
      double r = s.outcome.reward;
      if (scale_rewards_) {
        s.discounted = s.discounted * gamma_ + r;
        reward_moments_.update(s.discounted);
        r = std::clamp(r / std::sqrt(reward_moments_.var + 1e-8), -10.0, 10.0);
        if (s.finished) s.discounted = 0.0;
      }
      s.last.reward = r;
      s.next_done = s.finished;
      s.features = normalize(s.raw_obs);
      if (s.finished)
        episodes.push_back({global_step, e, s.finished_return, s.finished_length,
                            s.finished_completed});
    }
  }

  const Transition& last(int e) const { return slot(e).last; }

 private:
  struct Slot {
    CrowdState state;
    RngStream env_rng;
    RngStream act_rng;
    std::vector<double> raw_obs;
    Eigen::MatrixXd features;
    bool next_done = false;
    Transition last;
    StepOutcome outcome;
    double episode_return = 0.0;
    int episode_length = 0;
    bool finished = false;
    double finished_return = 0.0;
    int finished_length = 0;
    bool finished_completed = false;
    double discounted = 0.0;
  };

  Slot& slot(int e) { return slots_[static_cast<std::size_t>(e)]; }
  const Slot& slot(int e) const { return slots_[static_cast<std::size_t>(e)]; }

  Eigen::MatrixXd normalize(const std::vector<double>& raw) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(raw.size()), 1);
    for (std::size_t k = 0; k < raw.size(); ++k) x(static_cast<Eigen::Index>(k), 0) = raw[k];
    if (obs_norm_.enabled()) {
      obs_norm_.update(raw);
      obs_norm_.apply(std::span<double>(x.data(), raw.size()));
    }
    return x;
  }

  EnvConfig cfg_;
  Encoder encoder_;
  double gamma_;
  bool scale_rewards_;
  ObsNormalizer obs_norm_;
  RunningMoments reward_moments_;
  std::vector<Slot> slots_;
};

/**
 * Fills the buffer with num_steps transitions from every environment.
 * workers > 1 spreads slots over threads; slot-local streams keep the result
 * identical to the single-worker schedule.
 */
inline std::vector<EpisodeRecord> collect_rollout(VecEnv& envs, const PolicyParameters& params,
                                                  RolloutBuffer& buf,
                                                  std::int64_t& global_step, int workers = 1) {
  if (buf.num_envs != envs.size())
    throw std::invalid_argument("collect_rollout: buffer/environment count mismatch");
  if (static_cast<std::size_t>(buf.obs.rows()) != envs.obs_dim() ||
      params.spec.input_dim != envs.obs_dim())
    throw std::invalid_argument("collect_rollout: observation size mismatch between encoder (" +
                                std::to_string(envs.obs_dim()) + ") and policy (" +
                                std::to_string(params.spec.input_dim) + ")");
  buf.clear();
  std::vector<EpisodeRecord> episodes;
  const int n_env = envs.size();
  int step_index = 0;

  auto record_and_settle = [&]() noexcept {
    global_step += n_env;
    for (int e = 0; e < n_env; ++e) {
      const int idx = step_index * n_env + e;
      buf.obs.col(idx) = envs.features(e);
      buf.dones[idx] = envs.next_done(e) ? 1.0 : 0.0;
    }
    envs.settle(global_step, episodes);
    for (int e = 0; e < n_env; ++e) {
      const int idx = step_index * n_env + e;
      const auto& tr = envs.last(e);
      buf.actions(0, idx) = tr.action.x;
      buf.actions(1, idx) = tr.action.y;
      buf.log_probs[idx] = tr.log_prob;
      buf.values[idx] = tr.value;
      buf.rewards[idx] = tr.reward;
    }
    buf.filled += n_env;
    ++step_index;
  };

  workers = std::clamp(workers, 1, n_env);
  if (workers == 1) {
    for (int t = 0; t < buf.num_steps; ++t) {
      for (int e = 0; e < n_env; ++e) envs.act(e, params);
      record_and_settle();
    }
    return episodes;
  }

  // features/next_done are read in record_and_settle before settle() replaces them,
  // so the observation stored for a step is the one the action was sampled from.
  std::barrier sync(workers, record_and_settle);
  auto work = [&](int w) {
    for (int t = 0; t < buf.num_steps; ++t) {
      for (int e = w; e < n_env; e += workers) envs.act(e, params);
      sync.arrive_and_wait();
    }
  };
  std::vector<std::jthread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work, w);
  work(0);
  return episodes;
}

/// Advantages and bootstrapped returns from a full buffer.
struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

/**
 * delta_t = r_t + gamma (1 - done_{t+1}) V_{t+1} - V_t
 * A_t     = delta_t + gamma lambda (1 - done_{t+1}) A_{t+1}
 * with V/done after the last step taken from last_values/last_dones.
 */
inline GaeResult compute_gae(const RolloutBuffer& buf, const Eigen::VectorXd& last_values,
                             const Eigen::VectorXd& last_dones, double gamma, double lambda) {
  if (!buf.full()) throw std::logic_error("compute_gae: buffer is not full");
  const int E = buf.num_envs;
  GaeResult out{Eigen::VectorXd::Zero(buf.capacity()), Eigen::VectorXd::Zero(buf.capacity())};
  for (int e = 0; e < E; ++e) {
    double running = 0.0;
    for (int t = buf.num_steps - 1; t >= 0; --t) {
      const int idx = t * E + e;
      double next_nonterminal = 0.0;
      double next_value = 0.0;
      if (t == buf.num_steps - 1) {
        next_nonterminal = 1.0 - last_dones[e];
        next_value = last_values[e];
      } else {
        next_nonterminal = 1.0 - buf.dones[idx + E];
        next_value = buf.values[idx + E];
      }
      const double delta = buf.rewards[idx] + gamma * next_value * next_nonterminal - buf.values[idx];
      running = delta + gamma * lambda * next_nonterminal * running;
      out.advantages[idx] = running;
    }
  }
  out.returns = out.advantages + buf.values;
  return out;
}

/// Adam with bias correction over the flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, double eps, double beta1 = 0.9, double beta2 = 0.999)
      : m_(n, 0.0), v_(n, 0.0), eps_(eps), beta1_(beta1), beta2_(beta2) {}

  void step(PolicyParameters& params, const PolicyParameters& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto pb = params.blocks();
    auto gb = grads.blocks();
    std::size_t k = 0;
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t j = 0; j < pb[b].size(); ++j, ++k) {
        const double g = gb[b][j];
        m_[k] = beta1_ * m_[k] + (1.0 - beta1_) * g;
        v_[k] = beta2_ * v_[k] + (1.0 - beta2_) * g * g;
        const double denom = std::sqrt(v_[k]) / std::sqrt(c2) + eps_;
        pb[b][j] -= (lr / c1) * m_[k] / denom;
      }
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  double eps_ = 1e-5;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  std::int64_t t_ = 0;
};

inline double global_norm(const PolicyParameters& g) {
  double sq = 0.0;
  for (auto b : g.blocks())
    for (double v : b) sq += v * v;
  return std::sqrt(sq);
}

inline void scale(PolicyParameters& g, double factor) {
  for (auto b : g.blocks())
    for (double& v : b) v *= factor;
}

/// One minibatch worth of training data, columns aligned.
struct Minibatch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd actions;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
  Eigen::VectorXd old_values;
};

struct LossTerms {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double max_ratio_deviation = 0.0;  // max |ratio - 1|
};

/**
 * Clipped-surrogate loss and its gradient (accumulated into grad).
 *
 *   loss = mean(max(-A rho, -A clip(rho)))  + vf_coef * 0.5 * mean(value error^2)
 *          - ent_coef * entropy
 *
 * perturbation (2 x M) is added to the action mean before scoring (RPO);
 * dropout_rng may be null, which disables dropout for this call.
 */
inline LossTerms minibatch_loss(const PolicyParameters& p, const Minibatch& mb,
                                const TrainConfig& cfg, const Eigen::MatrixXd& perturbation,
                                RngStream* dropout_rng, PolicyParameters* grad) {
  const Eigen::Index M = mb.obs.cols();
  const double inv_m = 1.0 / static_cast<double>(M);
  const double dropout = dropout_rng != nullptr ? cfg.dropout : 0.0;

  MlpTrace actor_trace;
  MlpTrace critic_trace;
  const Eigen::MatrixXd mu = p.actor.forward(mb.obs, &actor_trace, dropout, dropout_rng);
  const Eigen::MatrixXd v = p.critic.forward(mb.obs, &critic_trace, dropout, dropout_rng);

  Eigen::VectorXd adv = mb.advantages;
  if (cfg.norm_adv && M > 1) {
    const double mean = adv.mean();
    const double var = (adv.array() - mean).square().sum() / static_cast<double>(M - 1);
    adv = (adv.array() - mean) / (std::sqrt(var) + 1e-8);
  }

  const double sigma_inv2[2] = {std::exp(-2.0 * p.log_std[0]), std::exp(-2.0 * p.log_std[1])};
  Eigen::MatrixXd d_mu(2, M);
  Eigen::MatrixXd d_v(1, M);
  Eigen::Vector2d d_log_std = Eigen::Vector2d::Zero();

  LossTerms out;
  const double lo = 1.0 - cfg.clip_coef;
  const double hi = 1.0 + cfg.clip_coef;
  for (Eigen::Index j = 0; j < M; ++j) {
    double new_lp = 0.0;
    double diff[2];
    for (int d = 0; d < 2; ++d) {
      diff[d] = mb.actions(d, j) - (mu(d, j) + perturbation(d, j));
      new_lp += -0.5 * diff[d] * diff[d] * sigma_inv2[d] - p.log_std[d] - kHalfLog2Pi;
    }
    const double log_ratio = new_lp - mb.old_log_probs[j];
    const double ratio = std::exp(log_ratio);
    out.approx_kl += (ratio - 1.0) - log_ratio;
    out.clip_fraction += std::abs(ratio - 1.0) > cfg.clip_coef ? 1.0 : 0.0;
    out.max_ratio_deviation = std::max(out.max_ratio_deviation, std::abs(ratio - 1.0));

    const double a = adv[j];
    const double unclipped = -a * ratio;
    const double clipped = -a * std::clamp(ratio, lo, hi);
    double d_lp = 0.0;  // d(policy loss)/d(new log prob), before 1/M
    if (unclipped >= clipped) {
      out.policy_loss += unclipped;
      d_lp = -a * ratio;
    } else {
      out.policy_loss += clipped;
      if (ratio > lo && ratio < hi) d_lp = -a * ratio;
    }
    for (int d = 0; d < 2; ++d) {
      d_mu(d, j) = inv_m * d_lp * diff[d] * sigma_inv2[d];
      d_log_std[d] += inv_m * d_lp * (diff[d] * diff[d] * sigma_inv2[d] - 1.0);
    }

    const double value = v(0, j);
    const double ret = mb.returns[j];
    double dv = 0.0;
    if (cfg.clip_vloss) {
      const double delta = value - mb.old_values[j];
      const double v_clipped = mb.old_values[j] + std::clamp(delta, -cfg.clip_coef, cfg.clip_coef);
      const double lu = (value - ret) * (value - ret);
      const double lc = (v_clipped - ret) * (v_clipped - ret);
      if (lu >= lc) {
        out.value_loss += 0.5 * lu;
        dv = value - ret;
      } else {
        out.value_loss += 0.5 * lc;
        if (std::abs(delta) < cfg.clip_coef) dv = v_clipped - ret;
      }
    } else {
      out.value_loss += 0.5 * (value - ret) * (value - ret);
      dv = value - ret;
    }
    d_v(0, j) = cfg.vf_coef * inv_m * dv;
  }
  out.policy_loss *= inv_m;
  out.value_loss *= inv_m;
  out.approx_kl *= inv_m;
  out.clip_fraction *= inv_m;
  out.entropy = 2.0 * (0.5 + kHalfLog2Pi) + p.log_std[0] + p.log_std[1];
  out.total = out.policy_loss - cfg.ent_coef * out.entropy + cfg.vf_coef * out.value_loss;

  if (grad != nullptr) {
    p.actor.backward(actor_trace, d_mu, grad->actor);
    p.critic.backward(critic_trace, d_v, grad->critic);
    for (int d = 0; d < 2; ++d) grad->log_std[d] += d_log_std[d] - cfg.ent_coef;
  }
  return out;
}

struct UpdateDiagnostics {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double clip_fraction = 0.0;
  double first_minibatch_max_ratio_deviation = 0.0;
  double explained_variance = 0.0;
  int minibatches = 0;
};

/**
 * update_epochs passes over shuffled minibatches. Policy/value losses and
 * approx KL are reported as means over all minibatches taken.
 */
inline UpdateDiagnostics update(PolicyParameters& params, Adam& adam, const RolloutBuffer& buf,
                                const GaeResult& gae, const TrainConfig& cfg, double lr,
                                RngStream& rng) {
  if (!buf.full()) throw std::logic_error("update: buffer is not full");
  const int B = buf.capacity();
  const int M = B / cfg.num_minibatches;
  std::vector<int> order(static_cast<std::size_t>(B));
  UpdateDiagnostics diag;
  Minibatch mb;
  mb.obs.resize(buf.obs.rows(), M);
  mb.actions.resize(2, M);
  mb.old_log_probs.resize(M);
  mb.advantages.resize(M);
  mb.returns.resize(M);
  mb.old_values.resize(M);
  Eigen::MatrixXd perturbation(2, M);
  PolicyParameters grad = params.zeros_like();

  for (int epoch = 0; epoch < cfg.update_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (int k = B - 1; k > 0; --k)
      std::swap(order[static_cast<std::size_t>(k)],
                order[rng.index(static_cast<std::size_t>(k) + 1)]);
    double epoch_kl = 0.0;
    for (int start = 0; start < B; start += M) {
      for (int j = 0; j < M; ++j) {
        const int idx = order[static_cast<std::size_t>(start + j)];
        mb.obs.col(j) = buf.obs.col(idx);
        mb.actions.col(j) = buf.actions.col(idx);
        mb.old_log_probs[j] = buf.log_probs[idx];
        mb.advantages[j] = gae.advantages[idx];
        mb.returns[j] = gae.returns[idx];
        mb.old_values[j] = buf.values[idx];
      }
      for (Eigen::Index k = 0; k < perturbation.size(); ++k)
        perturbation.data()[k] = cfg.rpo_alpha > 0.0 ? rng.uniform(-cfg.rpo_alpha, cfg.rpo_alpha)
                                                     : 0.0;
      grad.set_zero();
      const LossTerms terms =
          minibatch_loss(params, mb, cfg, perturbation, cfg.dropout > 0.0 ? &rng : nullptr, &grad);
      if (!std::isfinite(terms.total))
        throw TrainingDiverged("non-finite loss (policy " + std::to_string(terms.policy_loss) +
                               ", value " + std::to_string(terms.value_loss) + ", approx_kl " +
                               std::to_string(terms.approx_kl) + ")");
      if (diag.minibatches == 0)
        diag.first_minibatch_max_ratio_deviation = terms.max_ratio_deviation;
      const double norm = global_norm(grad);
      if (!std::isfinite(norm)) throw TrainingDiverged("non-finite gradient norm");
      if (norm > cfg.max_grad_norm) scale(grad, cfg.max_grad_norm / (norm + 1e-6));
      adam.step(params, grad, lr);

      diag.policy_loss += terms.policy_loss;
      diag.value_loss += terms.value_loss;
      diag.entropy += terms.entropy;
      diag.approx_kl += terms.approx_kl;
      diag.clip_fraction += terms.clip_fraction;
      diag.minibatches += 1;
      epoch_kl = terms.approx_kl;
    }
    if (cfg.target_kl && epoch_kl > *cfg.target_kl) break;
  }
  if (!params.all_finite()) throw TrainingDiverged("non-finite parameters after update");
  const double n = static_cast<double>(diag.minibatches);
  diag.policy_loss /= n;
  diag.value_loss /= n;
  diag.entropy /= n;
  diag.approx_kl /= n;
  diag.clip_fraction /= n;

  const double var_y = (gae.returns.array() - gae.returns.mean()).square().mean();
  const Eigen::VectorXd resid = gae.returns - buf.values;
  const double var_r = (resid.array() - resid.mean()).square().mean();
  diag.explained_variance = var_y == 0.0 ? std::nan("") : 1.0 - var_r / var_y;
  return diag;
}

/// Linear schedule: iteration is 1-based, reaches lr0 / num_iterations on the last.
inline double annealed_lr(double lr0, std::int64_t iteration, std::int64_t num_iterations) {
  const double frac =
      1.0 - static_cast<double>(iteration - 1) / static_cast<double>(num_iterations);
  return frac * lr0;
}

struct UpdateRecord {
  std::int64_t iteration = 0;
  std::int64_t global_step = 0;
  double learning_rate = 0.0;
  int episodes = 0;
  double mean_return = std::nan("");
  double mean_length = std::nan("");
  double completion_rate = std::nan("");
  double ema_return = std::nan("");
  double ema_length = std::nan("");
  UpdateDiagnostics diag;
};

/// Where train() writes; an empty directory disables file output.
struct TrainOutput {
  std::filesystem::path dir;
  int checkpoint_interval = 0;  // in updates; 0 = final only
  int log_interval = 1;         // metrics rows every n updates (the last is always written)
  double ema_smoothing = 0.99;
  int workers = 1;
  std::function<void(const UpdateRecord&)> on_update;
};

struct TrainResult {
  PolicyParameters params;
  std::vector<EpisodeRecord> episodes;
  std::vector<UpdateRecord> updates;
  std::filesystem::path final_checkpoint;
};

inline void write_metrics_header(std::ostream& os) {
  os << "iteration,global_step,learning_rate,episodes,mean_return,mean_length,completion_rate,"
        "ema_return,ema_length,policy_loss,value_loss,entropy,approx_kl,clip_fraction,"
        "explained_variance\n";
}

inline void write_metrics_row(std::ostream& os, const UpdateRecord& r) {
  csv::Row(os) << r.iteration << r.global_step << r.learning_rate << r.episodes << r.mean_return
               << r.mean_length << r.completion_rate << r.ema_return << r.ema_length
               << r.diag.policy_loss << r.diag.value_loss << r.diag.entropy << r.diag.approx_kl
               << r.diag.clip_fraction << r.diag.explained_variance;
}

inline void write_episode_header(std::ostream& os) {
  os << "global_step,env,episode_return,length,completed\n";
}

inline void write_episode_row(std::ostream& os, const EpisodeRecord& e) {
  csv::Row(os) << e.global_step << e.env << e.episode_return << e.length << e.completed;
}

inline std::filesystem::path checkpoint_path(const std::filesystem::path& dir,
                                             std::int64_t global_step) {
  return dir / "checkpoints" / ("step_" + std::to_string(global_step) + ".ckpt");
}

/**
 * collect -> GAE -> update until total_timesteps, annealing the learning
 * rate linearly to zero when enabled.
 */
inline TrainResult train(const EnvConfig& env_cfg, const Encoder& encoder, const TrainConfig& cfg,
                         std::uint64_t seed, const TrainOutput& io = {}) {
  env_cfg.validate();
  cfg.validate();
  PolicySpec spec;
  spec.encoder = encoder.kind;
  spec.alpha = encoder.alpha;
  spec.num_individuals = static_cast<std::uint32_t>(env_cfg.num_individuals);
  spec.input_dim = static_cast<std::uint32_t>(encoder.size(env_cfg.num_individuals));
  spec.hidden_dim = static_cast<std::uint32_t>(cfg.hidden_dim);
  spec.hidden_layers = static_cast<std::uint32_t>(cfg.hidden_layers);

  TrainResult result;
  result.params = init_policy(spec, seed);
  Adam adam(result.params.parameter_count(), cfg.adam_eps);
  VecEnv envs(env_cfg, encoder, cfg.num_envs, derive_seed(seed, 0xE4F), cfg.norm_obs, cfg.gamma,
              cfg.norm_reward);
  RolloutBuffer buf(cfg.num_envs, cfg.num_steps, envs.obs_dim());
  RngStream update_rng(derive_seed(seed, 0x0DA7E));

  std::ofstream metrics;
  std::ofstream episodes_log;
  const bool files = !io.dir.empty();
  if (files) {
    std::filesystem::create_directories(io.dir);
    metrics.open(io.dir / "metrics.csv", std::ios::trunc);
    episodes_log.open(io.dir / "episodes.csv", std::ios::trunc);
    if (!metrics || !episodes_log)
      throw std::runtime_error("cannot open metric logs in " + io.dir.string());
    write_metrics_header(metrics);
    write_episode_header(episodes_log);
  }
  auto snapshot = [&](std::int64_t step) {
    PolicyParameters out = result.params;
    out.obs_norm = envs.obs_normalizer();
    const auto path = checkpoint_path(io.dir, step);
    save_checkpoint(path, out);
    return path;
  };

  EmaTracker ema_return(io.ema_smoothing);
  EmaTracker ema_length(io.ema_smoothing);
  std::int64_t global_step = 0;
  const std::int64_t iterations = cfg.num_iterations();
  for (std::int64_t it = 1; it <= iterations; ++it) {
    const double lr = cfg.anneal_lr ? annealed_lr(cfg.learning_rate, it, iterations)
                                    : cfg.learning_rate;
    auto eps = collect_rollout(envs, result.params, buf, global_step, io.workers);

    Eigen::VectorXd last_values(cfg.num_envs);
    Eigen::VectorXd last_dones(cfg.num_envs);
    for (int e = 0; e < cfg.num_envs; ++e) {
      last_values[e] = forward_features(result.params, envs.features(e)).value;
      last_dones[e] = envs.next_done(e) ? 1.0 : 0.0;
    }
    const GaeResult gae = compute_gae(buf, last_values, last_dones, cfg.gamma, cfg.gae_lambda);

    UpdateRecord rec;
    rec.iteration = it;
    rec.global_step = global_step;
    rec.learning_rate = lr;
    rec.diag = update(result.params, adam, buf, gae, cfg, lr, update_rng);
    buf.clear();

    rec.episodes = static_cast<int>(eps.size());
    if (!eps.empty()) {
      double sr = 0.0;
      double sl = 0.0;
      double sc = 0.0;
      for (const auto& e : eps) {
        sr += e.episode_return;
        sl += e.length;
        sc += e.completed ? 1.0 : 0.0;
        ema_return.add(e.episode_return);
        ema_length.add(e.length);
      }
      const double n = static_cast<double>(eps.size());
      rec.mean_return = sr / n;
      rec.mean_length = sl / n;
      rec.completion_rate = sc / n;
    }
    rec.ema_return = ema_return.value();
    rec.ema_length = ema_length.value();

    if (files) {
      for (const auto& e : eps) write_episode_row(episodes_log, e);
      if (io.log_interval <= 1 || it % io.log_interval == 0 || it == iterations)
        write_metrics_row(metrics, rec);
      if (!metrics || !episodes_log) throw std::runtime_error("failed writing metric logs");
      if (io.checkpoint_interval > 0 && it % io.checkpoint_interval == 0 && it != iterations)
        snapshot(global_step);
    }
    result.episodes.insert(result.episodes.end(), eps.begin(), eps.end());
    result.updates.push_back(rec);
    if (io.on_update) io.on_update(rec);
  }
  result.params.obs_norm = envs.obs_normalizer();
  if (files) result.final_checkpoint = snapshot(global_step);
  return result;
}

}  // namespace evac
