#pragma once

// Self-predictive temporal-consistency training over the reward encoders:
// SPR heads, SimSiam and contrastive objectives, buffer-wide training and
// the encoder hand-off to and from a reward ensemble member.

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbrl/core.hpp"
#include "pbrl/nn.hpp"
#include "pbrl/replay.hpp"
#include "pbrl/reward_model.hpp"

namespace pbrl::reed {

enum class Objective { simsiam, contrastive };

inline std::string to_string(Objective o) { return o == Objective::simsiam ? "simsiam" : "contrastive"; }

inline Objective objective_from_string(const std::string& s) {
  if (s == "simsiam") return Objective::simsiam;
  if (s == "contrastive") return Objective::contrastive;
  throw ConfigError("unknown REED objective: " + s);
}

struct ReedConfig {
  Objective objective = Objective::contrastive;
  double temperature = 0.1;
  int epochs = 10;
  std::size_t batch_size = 128;
  // Caps minibatches per epoch; 0 means a full pass over the buffer.
  std::size_t max_batches_per_epoch = 0;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::adam, 1e-4};
  // Contrastive denominator exactly as printed: positive excluded and the
  // target used as anchor.
  bool literal_contrastive = false;

  void validate() const {
    if (!(temperature > 0.0)) throw ConfigError("REED temperature must be positive");
    if (epochs < 0) throw ConfigError("REED epochs must be non-negative");
    if (batch_size < 2) throw ConfigError("REED batch size must be at least 2");
  }
};

// Process-wide count of SPR forward passes (instrumentation for ablations).
inline std::atomic<std::uint64_t>& spr_forward_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

// ŷ rows carry gradients; y rows are stop-gradient targets.
struct LatentBatch {
  Matrix predicted;  // B x p
  Matrix target;     // B x p
};

class SprNet {
 public:
  SprNet(const SafRewardNet& member, Rng& rng) {
    if (!member.is_saf()) throw ConfigError("REED requires the SAF reward network variant");
    using nn::Activation;
    load_shared_params(member);
    const Eigen::Index h = member.config().hidden;
    const Eigen::Index es = member.config().state_embed;
    const Eigen::Index p = es;
    const Eigen::Index bottleneck = std::max<Eigen::Index>(1, p / 8);
    g_d_ = nn::DenseNet({{h, es, Activation::identity}}, rng);
    h_pro_ = nn::DenseNet({{es, p, Activation::identity}}, rng);
    h_pre_ = nn::DenseNet({{p, bottleneck, Activation::relu, true, false}, {bottleneck, p, Activation::identity}}, rng);
    h_pre_.set_training(false);
  }

  Eigen::Index projection_dim() const { return h_pro_.output_dim(); }

  nn::DenseNet& state_encoder() { return f_s_; }
  nn::DenseNet& action_encoder() { return f_a_; }
  nn::DenseNet& trunk() { return f_sa_; }
  nn::DenseNet& dynamics() { return g_d_; }
  nn::DenseNet& projection() { return h_pro_; }
  nn::DenseNet& prediction() { return h_pre_; }
  const nn::DenseNet& state_encoder() const { return f_s_; }
  const nn::DenseNet& action_encoder() const { return f_a_; }
  const nn::DenseNet& trunk() const { return f_sa_; }
  const nn::DenseNet& dynamics() const { return g_d_; }
  const nn::DenseNet& projection() const { return h_pro_; }
  const nn::DenseNet& prediction() const { return h_pre_; }

  // Copies ψ (f_s, f_a, f_sa) from a reward member into this network.
  void load_shared_params(const SafRewardNet& member) {
    if (!member.is_saf()) throw ConfigError("REED requires the SAF reward network variant");
    if (!f_sa_.layers().empty() && (!f_s_.same_architecture(member.state_encoder()) ||
                                    !f_a_.same_architecture(member.action_encoder()) ||
                                    !f_sa_.same_architecture(member.trunk())))
      throw ShapeError("SprNet: shared encoder architecture mismatch");
    f_s_ = member.state_encoder();
    f_a_ = member.action_encoder();
    f_sa_ = member.trunk();
    f_s_.clear_record();
    f_a_.clear_record();
    f_sa_.clear_record();
  }

  // Writes ψ back into the reward member; the reward head is untouched.
  void sync_shared_params(SafRewardNet& member) const {
    if (!member.is_saf() || !f_s_.same_architecture(member.state_encoder()) ||
        !f_a_.same_architecture(member.action_encoder()) || !f_sa_.same_architecture(member.trunk()))
      throw ShapeError("sync_shared_params: architecture mismatch");
    member.state_encoder().copy_parameters_from(f_s_);
    member.action_encoder().copy_parameters_from(f_a_);
    member.trunk().copy_parameters_from(f_sa_);
  }

  Matrix embed(const Matrix& states, const Matrix& actions) const {
    Matrix in(states.rows(), f_s_.output_dim() + f_a_.output_dim());
    in.leftCols(f_s_.output_dim()) = f_s_.evaluate(states);
    in.rightCols(f_a_.output_dim()) = f_a_.evaluate(actions);
    return f_sa_.evaluate(in);
  }

  // y = h_pro(f_s(s_{t+1})), never recorded.
  Matrix target(const Matrix& next_states) const { return h_pro_.evaluate(f_s_.evaluate(next_states)); }

  // Recorded pass: ŷ = h_pre(h_pro(g_d(f_sa([f_s(s); f_a(a)])))).
  LatentBatch forward(const Matrix& states, const Matrix& actions, const Matrix& next_states) {
    check(states, actions, next_states);
    ++spr_forward_counter();
    Matrix in(states.rows(), f_s_.output_dim() + f_a_.output_dim());
    in.leftCols(f_s_.output_dim()) = f_s_.forward(states);
    in.rightCols(f_a_.output_dim()) = f_a_.forward(actions);
    LatentBatch out;
    out.predicted = h_pre_.forward(h_pro_.forward(g_d_.forward(f_sa_.forward(in))));
    out.target = target(next_states);
    return out;
  }

  LatentBatch evaluate(const Matrix& states, const Matrix& actions, const Matrix& next_states) const {
    check(states, actions, next_states);
    ++spr_forward_counter();
    LatentBatch out;
    out.predicted = h_pre_.evaluate(h_pro_.evaluate(g_d_.evaluate(embed(states, actions))));
    out.target = target(next_states);
    return out;
  }

  // Gradient of the loss with respect to ŷ only; the target branch is
  // detached and contributes nothing to the tape.
  void backward(const Matrix& d_predicted, nn::GradientTape& tape) const {
    if (tape.size() != parameter_tensor_count()) throw ShapeError("SprNet::backward: tape misaligned");
    const std::size_t ns = f_s_.parameter_tensor_count(), na = f_a_.parameter_tensor_count(),
                      nt = f_sa_.parameter_tensor_count(), nd = g_d_.parameter_tensor_count(),
                      np = h_pro_.parameter_tensor_count(), nq = h_pre_.parameter_tensor_count();
    std::size_t off = ns + na + nt + nd + np;
    Matrix d = h_pre_.backward(d_predicted, tape.slice(off, nq));
    off -= np;
    d = h_pro_.backward(d, tape.slice(off, np));
    off -= nd;
    d = g_d_.backward(d, tape.slice(off, nd));
    d = f_sa_.backward(d, tape.slice(ns + na, nt));
    f_s_.backward(d.leftCols(f_s_.output_dim()), tape.slice(0, ns));
    f_a_.backward(d.rightCols(f_a_.output_dim()), tape.slice(ns, na));
  }

  // ψ first (f_s, f_a, f_sa), then θ (g_d, h_pro, h_pre).
  std::vector<Matrix*> parameters() {
    return nn::concat_parameters({&f_s_, &f_a_, &f_sa_, &g_d_, &h_pro_, &h_pre_});
  }

  std::size_t shared_tensor_count() const {
    return f_s_.parameter_tensor_count() + f_a_.parameter_tensor_count() + f_sa_.parameter_tensor_count();
  }

  std::size_t parameter_tensor_count() const {
    return shared_tensor_count() + g_d_.parameter_tensor_count() + h_pro_.parameter_tensor_count() +
           h_pre_.parameter_tensor_count();
  }

  void set_training(bool training) { h_pre_.set_training(training); }

  nlohmann::json to_json() const {
    return {{"format", "pbrl.spr_net"},       {"version", nn::kCheckpointVersion}, {"f_s", nn::to_json(f_s_)},
            {"f_a", nn::to_json(f_a_)},       {"f_sa", nn::to_json(f_sa_)},       {"g_d", nn::to_json(g_d_)},
            {"h_pro", nn::to_json(h_pro_)},   {"h_pre", nn::to_json(h_pre_)}};
  }

 private:
  void check(const Matrix& s, const Matrix& a, const Matrix& s2) const {
    if (s.cols() != f_s_.input_dim() || s2.cols() != f_s_.input_dim() || a.cols() != f_a_.input_dim() ||
        s.rows() != a.rows() || s.rows() != s2.rows())
      throw ShapeError("spr_forward: input dimension mismatch");
  }

  nn::DenseNet f_s_, f_a_, f_sa_;
  nn::DenseNet g_d_, h_pro_, h_pre_;
};

struct LossResult {
  double value = 0.0;
  Matrix grad;  // dL/dŷ, B x p
  std::size_t collapse_warnings = 0;
};

namespace detail {

struct Normalized {
  Matrix unit;    // rows scaled to unit norm (zero rows left zero)
  Vector norm;
  std::vector<bool> degenerate;
};

inline Normalized normalize_rows(const Matrix& m) {
  Normalized out{Matrix::Zero(m.rows(), m.cols()), Vector(m.rows()), std::vector<bool>(m.rows(), false)};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out.norm(i) = m.row(i).norm();
    if (out.norm(i) < nn::kCosineEps) {
      out.degenerate[static_cast<std::size_t>(i)] = true;
    } else {
      out.unit.row(i) = m.row(i) / out.norm(i);
    }
  }
  return out;
}

// Rows i, j of `next_states` identical (the indicator that removes false negatives).
inline std::vector<std::vector<bool>> same_next_state(const Matrix& next_states) {
  const auto n = static_cast<std::size_t>(next_states.rows());
  std::vector<std::vector<bool>> same(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) {
    same[i][i] = true;
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool eq = next_states.row(static_cast<Eigen::Index>(i)) == next_states.row(static_cast<Eigen::Index>(j));
      same[i][j] = same[j][i] = eq;
    }
  }
  return same;
}

}  // namespace detail

// Mean over the batch of −cos(ŷ, sg(y)).
inline LossResult simsiam_loss(const LatentBatch& batch) {
  const Matrix& p = batch.predicted;
  const Matrix& y = batch.target;
  if (p.rows() == 0) throw ShapeError("simsiam_loss: empty batch");
  if (p.rows() != y.rows() || p.cols() != y.cols()) throw ShapeError("simsiam_loss: shape mismatch");
  const double inv = 1.0 / static_cast<double>(p.rows());
  LossResult out{0.0, Matrix::Zero(p.rows(), p.cols()), 0};
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    const double np = p.row(i).norm();
    const double ny = y.row(i).norm();
    if (np < nn::kCosineEps || ny < nn::kCosineEps) {
      ++out.collapse_warnings;
      continue;
    }
    const double c = p.row(i).dot(y.row(i)) / (np * ny);
    out.value -= inv * c;
    out.grad.row(i) = -inv * (y.row(i) / (np * ny) - c * p.row(i) / (np * np));
  }
  return out;
}

// NT-Xent with anchor ŷ_i and candidates y_j. Candidates whose raw next state
// equals the anchor's are removed, except the positive itself.
inline LossResult contrastive_loss(const LatentBatch& batch, const Matrix& next_states, double temperature) {
  const Matrix& p = batch.predicted;
  const Matrix& y = batch.target;
  const Eigen::Index n = p.rows();
  if (n < 2) throw ShapeError("contrastive_loss: batch of at least 2 required");
  if (y.rows() != n || next_states.rows() != n || p.cols() != y.cols())
    throw ShapeError("contrastive_loss: shape mismatch");
  if (!(temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be positive");
  const auto P = detail::normalize_rows(p);
  const auto Y = detail::normalize_rows(y);
  const Matrix cos = P.unit * Y.unit.transpose();
  const auto same = detail::same_next_state(next_states);
  const double inv = 1.0 / static_cast<double>(n);
  LossResult out{0.0, Matrix::Zero(n, p.cols()), 0};
  for (Eigen::Index i = 0; i < n; ++i) {
    if (P.degenerate[static_cast<std::size_t>(i)] || Y.degenerate[static_cast<std::size_t>(i)]) ++out.collapse_warnings;
    std::vector<Eigen::Index> cand;
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != i && same[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) continue;
      cand.push_back(j);
      mx = std::max(mx, cos(i, j) / temperature);
    }
    double z = 0.0;
    for (Eigen::Index j : cand) z += std::exp(cos(i, j) / temperature - mx);
    out.value += inv * (mx + std::log(z) - cos(i, i) / temperature);
    if (P.degenerate[static_cast<std::size_t>(i)]) continue;
    Eigen::RowVectorXd g = Eigen::RowVectorXd::Zero(p.cols());
    for (Eigen::Index j : cand) {
      const double w = std::exp(cos(i, j) / temperature - mx) / z - (j == i ? 1.0 : 0.0);
      g += w * (Y.unit.row(j) - cos(i, j) * P.unit.row(i));
    }
    out.grad.row(i) = inv / (temperature * P.norm(i)) * g;
  }
  return out;
}

// Printed form: −log[exp(cos(y_i, ŷ_i)/τ) / Σ_{k: s'_k ≠ s'_i} exp(cos(y_i, ŷ_k)/τ)].
// Anchors with an empty denominator are skipped.
inline LossResult contrastive_loss_literal(const LatentBatch& batch, const Matrix& next_states, double temperature) {
  const Matrix& p = batch.predicted;
  const Matrix& y = batch.target;
  const Eigen::Index n = p.rows();
  if (n < 2) throw ShapeError("contrastive_loss: batch of at least 2 required");
  if (y.rows() != n || next_states.rows() != n || p.cols() != y.cols())
    throw ShapeError("contrastive_loss: shape mismatch");
  if (!(temperature > 0.0)) throw ConfigError("contrastive_loss: temperature must be positive");
  const auto P = detail::normalize_rows(p);
  const auto Y = detail::normalize_rows(y);
  const Matrix cos = P.unit * Y.unit.transpose();  // cos(k, i) = cos(ŷ_k, y_i)
  const auto same = detail::same_next_state(next_states);
  LossResult out{0.0, Matrix::Zero(n, p.cols()), 0};
  std::vector<std::pair<Eigen::Index, std::vector<Eigen::Index>>> anchors;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (P.degenerate[static_cast<std::size_t>(i)] || Y.degenerate[static_cast<std::size_t>(i)]) ++out.collapse_warnings;
    std::vector<Eigen::Index> cand;
    for (Eigen::Index k = 0; k < n; ++k)
      if (!same[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]) cand.push_back(k);
    if (!cand.empty()) anchors.emplace_back(i, std::move(cand));
  }
  if (anchors.empty()) return out;
  const double inv = 1.0 / static_cast<double>(anchors.size());
  auto dcos = [&](Eigen::Index k, Eigen::Index i) -> Eigen::RowVectorXd {
    if (P.degenerate[static_cast<std::size_t>(k)]) return Eigen::RowVectorXd::Zero(p.cols());
    return (Y.unit.row(i) - cos(k, i) * P.unit.row(k)) / P.norm(k);
  };
  for (const auto& [i, cand] : anchors) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k : cand) mx = std::max(mx, cos(k, i) / temperature);
    double z = 0.0;
    for (Eigen::Index k : cand) z += std::exp(cos(k, i) / temperature - mx);
    out.value += inv * (mx + std::log(z) - cos(i, i) / temperature);
    out.grad.row(i) -= inv / temperature * dcos(i, i);
    for (Eigen::Index k : cand) out.grad.row(k) += inv / temperature * (std::exp(cos(k, i) / temperature - mx) / z) * dcos(k, i);
  }
  return out;
}

inline LossResult reed_loss(const LatentBatch& batch, const Matrix& next_states, const ReedConfig& config) {
  if (config.objective == Objective::simsiam) return simsiam_loss(batch);
  return config.literal_contrastive ? contrastive_loss_literal(batch, next_states, config.temperature)
                                    : contrastive_loss(batch, next_states, config.temperature);
}

struct ReedTrace {
  std::vector<double> batch_losses;
  std::vector<double> epoch_losses;
  std::size_t collapse_warnings = 0;
};

// Minibatch descent on the configured objective over every transition in the
// buffer. Reads (s, a, s') only.
inline ReedTrace train_reed(SprNet& spr, const ReplayBuffer& buffer, const ReedConfig& config, nn::Optimizer& opt,
                            Rng& rng) {
  config.validate();
  if (buffer.empty()) throw StateError("train_reed: empty buffer");
  ReedTrace trace;
  auto order = iota_indices(buffer.size());
  nn::GradientTape tape(spr.parameters());
  spr.set_training(true);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + 2 <= order.size(); start += config.batch_size) {
      if (config.max_batches_per_epoch && batches >= config.max_batches_per_epoch) break;
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
      const TransitionBatch b = buffer.gather(idx);
      const LatentBatch lat = spr.forward(b.states, b.actions, b.next_states);
      const LossResult loss = reed_loss(lat, b.next_states, config);
      tape.zero();
      spr.backward(loss.grad, tape);
      opt.step(spr.parameters(), tape);
      trace.batch_losses.push_back(loss.value);
      trace.collapse_warnings += loss.collapse_warnings;
      sum += loss.value;
      ++batches;
    }
    trace.epoch_losses.push_back(batches ? sum / static_cast<double>(batches) : 0.0);
  }
  spr.set_training(false);
  return trace;
}

// Mean per-dimension population variance of z^sa over n sampled transitions.
inline double embedding_variance(const SprNet& spr, const ReplayBuffer& buffer, std::size_t n, Rng& rng) {
  if (n == 0 || buffer.size() < n) throw ShapeError("embedding_variance: buffer smaller than sample");
  const TransitionBatch b = buffer.gather(sample_indices(buffer.size(), n, rng));
  const Matrix z = spr.embed(b.states, b.actions);
  const Eigen::RowVectorXd mean = z.colwise().mean();
  return ((z.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n)).mean();
}

inline double embedding_variance(const SafRewardNet& member, const ReplayBuffer& buffer, std::size_t n, Rng& rng) {
  if (n == 0 || buffer.size() < n) throw ShapeError("embedding_variance: buffer smaller than sample");
  const TransitionBatch b = buffer.gather(sample_indices(buffer.size(), n, rng));
  const Matrix z = member.embed(b.states, b.actions);
  const Eigen::RowVectorXd mean = z.colwise().mean();
  return ((z.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n)).mean();
}

}  // namespace pbrl::reed
