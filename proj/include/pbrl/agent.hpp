#pragma once

// Soft actor-critic on learned rewards, plus k-NN state-entropy exploration.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "json.hpp"
#include "pbrl/core.hpp"
#include "pbrl/env.hpp"
#include "pbrl/nn.hpp"
#include "pbrl/replay.hpp"

namespace pbrl::agent {

struct SacConfig {
  Eigen::Index hidden = 64;
  int hidden_layers = 2;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double tau = 5e-3;
  double init_temperature = 0.1;
  std::size_t batch_size = 128;
  double log_std_min = -10.0;
  double log_std_max = 2.0;
  bool learn_alpha = true;

  void validate() const {
    if (hidden <= 0 || hidden_layers < 1) throw ConfigError("SAC network shape must be positive");
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("SAC discount must lie in [0, 1]");
    if (tau < 0.0 || tau > 1.0) throw ConfigError("SAC EMA tau must lie in [0, 1]");
    if (!(init_temperature > 0.0)) throw ConfigError("SAC initial temperature must be positive");
    if (batch_size == 0) throw ConfigError("SAC batch size must be positive");
    if (!(log_std_min < log_std_max)) throw ConfigError("SAC log-std bounds are inverted");
  }
};

enum class ActMode { stochastic, deterministic };

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // batch mean of −log π
};

namespace detail {

// log(1 − tanh(u)²) without cancellation.
inline double log_one_minus_tanh_sq(double u) {
  const double x = -2.0 * u;
  const double sp = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return 2.0 * (std::numbers::ln2 - u - sp);
}

}  // namespace detail

class Sac {
 public:
  Sac(Eigen::Index state_dim, Eigen::Index action_dim, const SacConfig& config, Rng& rng)
      : config_(config),
        state_dim_(state_dim),
        action_dim_(action_dim),
        target_entropy_(-static_cast<double>(action_dim)),
        rng_(rng.split()),
        actor_opt_(nn::Optimizer::adam(config.actor_lr)),
        critic_opt_(nn::Optimizer::adam(config.critic_lr)),
        alpha_opt_(nn::Optimizer::adam(config.alpha_lr)) {
    config.validate();
    actor_ = nn::DenseNet::mlp(state_dim, config.hidden, config.hidden_layers, 2 * action_dim,
                               nn::Activation::relu, nn::Activation::identity, rng);
    reset_critics(rng);
    log_alpha_ = Matrix::Constant(1, 1, std::log(config.init_temperature));
  }

  const SacConfig& config() const { return config_; }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }
  double alpha() const { return std::exp(log_alpha_(0, 0)); }
  double target_entropy() const { return target_entropy_; }
  void set_tau(double tau) { config_.tau = tau; }

  nn::DenseNet& actor() { return actor_; }
  nn::DenseNet& critic1() { return q1_; }
  nn::DenseNet& critic2() { return q2_; }
  nn::DenseNet& target1() { return q1_target_; }
  nn::DenseNet& target2() { return q2_target_; }

  // Fresh critics and targets (applied once exploration ends).
  void reset_critics(Rng& rng) {
    q1_ = nn::DenseNet::mlp(state_dim_ + action_dim_, config_.hidden, config_.hidden_layers, 1,
                            nn::Activation::relu, nn::Activation::identity, rng);
    q2_ = nn::DenseNet::mlp(state_dim_ + action_dim_, config_.hidden, config_.hidden_layers, 1,
                            nn::Activation::relu, nn::Activation::identity, rng);
    q1_target_ = q1_;
    q2_target_ = q2_;
    critic_opt_.reset();
  }

  Vector act(const Vector& s, ActMode mode) {
    if (s.size() != state_dim_) throw ShapeError("act: state dimension mismatch");
    const Matrix out = actor_.evaluate(s.transpose());
    Vector a(action_dim_);
    for (Eigen::Index j = 0; j < action_dim_; ++j) {
      const double mu = out(0, j);
      if (mode == ActMode::deterministic) {
        a(j) = std::tanh(mu);
      } else {
        a(j) = std::tanh(mu + std::exp(log_std(out(0, action_dim_ + j))) * rng_.normal());
      }
    }
    return a;
  }

  SacLosses update(const TransitionBatch& b) {
    const auto n = b.states.rows();
    if (n == 0) throw ShapeError("sac_update: empty batch");
    const double inv = 1.0 / static_cast<double>(n);
    SacLosses out;
    out.alpha = alpha();

    // Critic: soft Bellman target from the target critics.
    Matrix next_logp;
    const Matrix next_a = sample(actor_.evaluate(b.next_states), next_logp, nullptr);
    const Matrix next_sa = concat(b.next_states, next_a);
    const Matrix tq = q1_target_.evaluate(next_sa).cwiseMin(q2_target_.evaluate(next_sa));
    const Vector y = b.rewards + config_.gamma * b.not_terminal.cwiseProduct(tq.col(0) - out.alpha * next_logp.col(0));
    const Matrix sa = concat(b.states, b.actions);
    const Matrix e1 = q1_.forward(sa).col(0) - y;
    const Matrix e2 = q2_.forward(sa).col(0) - y;
    out.critic = inv * (e1.squaredNorm() + e2.squaredNorm());
    nn::GradientTape ct(critic_params());
    const std::size_t n1 = q1_.parameter_tensor_count();
    q1_.backward(2.0 * inv * e1, ct.slice(0, n1));
    q2_.backward(2.0 * inv * e2, ct.slice(n1, q2_.parameter_tensor_count()));
    critic_opt_.step(critic_params(), ct);

    // Actor: reparameterized tanh-Gaussian.
    const Matrix raw = actor_.forward(b.states);
    Matrix logp;
    Matrix eps;
    const Matrix a = sample(raw, logp, &eps);
    const Matrix sa_pi = concat(b.states, a);
    const Matrix v1 = q1_.forward(sa_pi);
    const Matrix v2 = q2_.forward(sa_pi);
    nn::GradientTape scratch1(q1_.parameters());
    nn::GradientTape scratch2(q2_.parameters());
    const Matrix ones = Matrix::Ones(n, 1);
    const Matrix dq1 = q1_.backward(ones, std::span<Matrix>(scratch1.grads()));
    const Matrix dq2 = q2_.backward(ones, std::span<Matrix>(scratch2.grads()));
    Matrix d_raw(n, 2 * action_dim_);
    double actor_loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const bool first = v1(i, 0) <= v2(i, 0);
      const double qmin = first ? v1(i, 0) : v2(i, 0);
      actor_loss += inv * (out.alpha * logp(i, 0) - qmin);
      for (Eigen::Index j = 0; j < action_dim_; ++j) {
        const double aj = a(i, j);
        const double dq_da = first ? dq1(i, state_dim_ + j) : dq2(i, state_dim_ + j);
        const double d_u = inv * (-dq_da * (1.0 - aj * aj) + out.alpha * 2.0 * aj);
        const double raw_ls = raw(i, action_dim_ + j);
        const double sigma = std::exp(log_std(raw_ls));
        const double d_ls = d_u * sigma * eps(i, j) - inv * out.alpha;
        const double t = std::tanh(raw_ls);
        d_raw(i, j) = d_u;
        d_raw(i, action_dim_ + j) = d_ls * 0.5 * (config_.log_std_max - config_.log_std_min) * (1.0 - t * t);
      }
    }
    out.actor = actor_loss;
    nn::GradientTape at(actor_.parameters());
    actor_.backward(d_raw, std::span<Matrix>(at.grads()));
    actor_opt_.step(actor_.parameters(), at);

    // Temperature: d/d log α of α·mean(−log π − H̄).
    const double mean_logp = logp.mean();
    out.entropy = -mean_logp;
    out.alpha_loss = out.alpha * (-mean_logp - target_entropy_);
    if (config_.learn_alpha) {
      std::vector<Matrix> g{Matrix::Constant(1, 1, out.alpha * (-mean_logp - target_entropy_))};
      alpha_opt_.step({&log_alpha_}, g);
    }

    q1_target_.soft_update_from(q1_, config_.tau);
    q2_target_.soft_update_from(q2_, config_.tau);
    return out;
  }

  // Mean squared TD error of both critics against the current soft target.
  double td_error(const TransitionBatch& b) {
    Matrix next_logp;
    const Matrix next_a = sample(actor_.evaluate(b.next_states), next_logp, nullptr);
    const Matrix next_sa = concat(b.next_states, next_a);
    const Matrix tq = q1_target_.evaluate(next_sa).cwiseMin(q2_target_.evaluate(next_sa));
    const Vector y = b.rewards + config_.gamma * b.not_terminal.cwiseProduct(tq.col(0) - alpha() * next_logp.col(0));
    const Matrix sa = concat(b.states, b.actions);
    return 0.5 * ((q1_.evaluate(sa).col(0) - y).squaredNorm() + (q2_.evaluate(sa).col(0) - y).squaredNorm()) /
           static_cast<double>(b.states.rows());
  }

  bool parameters_finite() const {
    for (const nn::DenseNet* net : {&actor_, &q1_, &q2_, &q1_target_, &q2_target_})
      for (const Matrix* p : net->parameters())
        if (!p->allFinite()) return false;
    return std::isfinite(log_alpha_(0, 0));
  }

  nlohmann::json to_json() const {
    return {{"format", "pbrl.sac"},
            {"version", nn::kCheckpointVersion},
            {"actor", nn::to_json(actor_)},
            {"critic1", nn::to_json(q1_)},
            {"critic2", nn::to_json(q2_)},
            {"target1", nn::to_json(q1_target_)},
            {"target2", nn::to_json(q2_target_)},
            {"log_alpha", log_alpha_(0, 0)}};
  }

 private:
  double log_std(double raw) const {
    return config_.log_std_min + 0.5 * (config_.log_std_max - config_.log_std_min) * (std::tanh(raw) + 1.0);
  }

  static Matrix concat(const Matrix& s, const Matrix& a) {
    Matrix out(s.rows(), s.cols() + a.cols());
    out << s, a;
    return out;
  }

  // a = tanh(μ + σ ε) with its log-density.
  Matrix sample(const Matrix& raw, Matrix& logp, Matrix* eps_out) {
    const auto n = raw.rows();
    Matrix a(n, action_dim_);
    logp = Matrix::Zero(n, 1);
    if (eps_out) eps_out->resize(n, action_dim_);
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < action_dim_; ++j) {
        const double ls = log_std(raw(i, action_dim_ + j));
        const double e = rng_.normal();
        const double u = raw(i, j) + std::exp(ls) * e;
        a(i, j) = std::tanh(u);
        logp(i, 0) += -0.5 * e * e - ls - half_log_2pi - detail::log_one_minus_tanh_sq(u);
        if (eps_out) (*eps_out)(i, j) = e;
      }
    }
    return a;
  }

  std::vector<Matrix*> critic_params() { return nn::concat_parameters({&q1_, &q2_}); }

  SacConfig config_;
  Eigen::Index state_dim_;
  Eigen::Index action_dim_;
  double target_entropy_;
  Rng rng_;
  nn::DenseNet actor_;
  nn::DenseNet q1_, q2_, q1_target_, q2_target_;
  Matrix log_alpha_;
  nn::Optimizer actor_opt_;
  nn::Optimizer critic_opt_;
  nn::Optimizer alpha_opt_;
};

// ---- intrinsic exploration --------------------------------------------------

struct IntrinsicConfig {
  int k = 5;
  long pretrain_steps = 9000;
  long random_steps = 1000;      // uniform random actions before any update
  std::size_t reference_size = 512;  // buffer states sampled per update for the k-NN estimate

  void validate() const {
    if (k < 1) throw ConfigError("intrinsic k must be at least 1");
    if (pretrain_steps < 0 || random_steps < 0) throw ConfigError("exploration step counts must be non-negative");
  }
};

// Distance from s to its k-th nearest row of `states`.
inline double knn_distance(const Matrix& states, const Eigen::Ref<const Eigen::RowVectorXd>& s, int k) {
  if (k < 1 || states.rows() < k) throw StateError("intrinsic_reward: fewer buffered states than k");
  std::vector<double> d(static_cast<std::size_t>(states.rows()));
  for (Eigen::Index i = 0; i < states.rows(); ++i) d[static_cast<std::size_t>(i)] = (states.row(i) - s).squaredNorm();
  std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
  return std::sqrt(d[static_cast<std::size_t>(k - 1)]);
}

// log(1 + distance to the k-th nearest buffered state).
inline double intrinsic_reward(const Matrix& buffer_states, const Vector& s, int k) {
  return std::log1p(knn_distance(buffer_states, s.transpose(), k));
}

// Replaces batch rewards with the intrinsic reward of each next state against
// a random reference subset of the buffer.
inline void assign_intrinsic_rewards(TransitionBatch& batch, const ReplayBuffer& buffer, const IntrinsicConfig& cfg,
                                     Rng& rng) {
  const std::size_t ref_n = std::min(buffer.size(), std::max<std::size_t>(cfg.reference_size, cfg.k));
  const TransitionBatch ref = buffer.gather(sample_indices(buffer.size(), ref_n, rng));
  for (Eigen::Index i = 0; i < batch.next_states.rows(); ++i)
    batch.rewards(i) = std::log1p(knn_distance(ref.states, batch.next_states.row(i), cfg.k));
}

inline Vector random_action(Eigen::Index action_dim, Rng& rng) {
  Vector a(action_dim);
  for (Eigen::Index j = 0; j < action_dim; ++j) a(j) = rng.uniform(-1.0, 1.0);
  return a;
}

// Episode bookkeeping for rollout_step.
struct RolloutState {
  long episode = 0;
  bool needs_reset = true;
  double episode_return = 0.0;  // ground truth, for logging only
  int episode_steps = 0;
};

// One environment step with `choose`, pushed into `buffer`. A finished
// episode restarts on the next call with a seed drawn from `rng`.
inline void rollout_step(env::Environment& environment, ReplayBuffer& buffer, RolloutState& st,
                         const std::function<Vector(const Vector&)>& choose, Rng& rng) {
  if (st.needs_reset) {
    environment.reset(Rng::mix(rng.engine()()));
    st.needs_reset = false;
    st.episode_return = 0.0;
    st.episode_steps = 0;
  }
  const Vector s = environment.state().observation;
  const Vector a = choose(s);
  const auto res = environment.step(a);
  const bool done = res.state.done;
  buffer.push(Transition(s, a, res.state.observation, res.reward, done, st.episode, res.state.step - 1, false));
  st.episode_return += res.reward;
  ++st.episode_steps;
  if (done) {
    st.needs_reset = true;
    ++st.episode;
  }
}

// Unsupervised pre-training: random actions, then SAC on the intrinsic reward.
inline void explore_pretrain(Sac& agent, env::Environment& environment, ReplayBuffer& buffer,
                             const IntrinsicConfig& cfg, Rng& rng) {
  cfg.validate();
  RolloutState st;
  for (long t = 0; t < cfg.pretrain_steps; ++t) {
    const bool random = t < cfg.random_steps;
    rollout_step(
        environment, buffer, st,
        [&](const Vector& s) { return random ? random_action(agent.action_dim(), rng) : agent.act(s, ActMode::stochastic); },
        rng);
    if (!random && buffer.size() >= agent.config().batch_size &&
        buffer.size() >= static_cast<std::size_t>(cfg.k)) {
      TransitionBatch b = buffer.gather(sample_transitions(buffer, agent.config().batch_size, rng));
      assign_intrinsic_rewards(b, buffer, cfg, rng);
      agent.update(b);
    }
  }
}

}  // namespace pbrl::agent
