#pragma once

// State-action fusion reward ensemble and Bradley-Terry preference learning.

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbrl/core.hpp"
#include "pbrl/nn.hpp"
#include "pbrl/replay.hpp"

namespace pbrl {

enum class RewardNetVariant { saf, concat };

inline std::string to_string(RewardNetVariant v) { return v == RewardNetVariant::saf ? "saf" : "concat"; }

inline RewardNetVariant reward_variant_from_string(const std::string& s) {
  if (s == "saf") return RewardNetVariant::saf;
  if (s == "concat") return RewardNetVariant::concat;
  throw ConfigError("unknown reward network variant: " + s);
}

struct RewardNetConfig {
  RewardNetVariant variant = RewardNetVariant::saf;
  Eigen::Index state_embed = 20;
  Eigen::Index action_embed = 10;
  Eigen::Index hidden = 64;
  int layers = 3;
};

// SAF: z^s = f_s(s), z^a = f_a(a), z^sa = f_sa([z^s; z^a]), r = tanh(head(z^sa)).
// concat: z^sa = f_sa([s; a]) with no separate encoders.
class SafRewardNet {
 public:
  SafRewardNet() = default;

  SafRewardNet(Eigen::Index state_dim, Eigen::Index action_dim, const RewardNetConfig& config, Rng& rng)
      : config_(config), state_dim_(state_dim), action_dim_(action_dim) {
    using nn::Activation;
    if (config.layers < 1) throw ConfigError("reward net needs at least one trunk layer");
    Eigen::Index trunk_in = state_dim + action_dim;
    if (config.variant == RewardNetVariant::saf) {
      f_s_ = nn::DenseNet({{state_dim, config.state_embed, Activation::leaky_relu}}, rng);
      f_a_ = nn::DenseNet({{action_dim, config.action_embed, Activation::leaky_relu}}, rng);
      trunk_in = config.state_embed + config.action_embed;
    }
    std::vector<nn::LayerSpec> trunk;
    for (int i = 0; i < config.layers; ++i) {
      trunk.push_back({trunk_in, config.hidden, Activation::leaky_relu});
      trunk_in = config.hidden;
    }
    f_sa_ = nn::DenseNet(trunk, rng);
    head_ = nn::DenseNet({{config.hidden, 1, Activation::tanh}}, rng);
  }

  const RewardNetConfig& config() const { return config_; }
  bool is_saf() const { return config_.variant == RewardNetVariant::saf; }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }

  nn::DenseNet& state_encoder() { return f_s_; }
  nn::DenseNet& action_encoder() { return f_a_; }
  nn::DenseNet& trunk() { return f_sa_; }
  nn::DenseNet& head() { return head_; }
  const nn::DenseNet& state_encoder() const { return f_s_; }
  const nn::DenseNet& action_encoder() const { return f_a_; }
  const nn::DenseNet& trunk() const { return f_sa_; }
  const nn::DenseNet& head() const { return head_; }

  // Recorded forward over row batches; returns B x 1 rewards.
  Matrix forward(const Matrix& states, const Matrix& actions) {
    check(states, actions);
    Matrix in = assemble(states, actions);
    if (is_saf()) {
      in.leftCols(config_.state_embed) = f_s_.forward(states);
      in.rightCols(config_.action_embed) = f_a_.forward(actions);
    }
    return head_.forward(f_sa_.forward(in));
  }

  Matrix evaluate(const Matrix& states, const Matrix& actions) const {
    check(states, actions);
    return head_.evaluate(embed(states, actions));
  }

  // z^sa for a batch.
  Matrix embed(const Matrix& states, const Matrix& actions) const {
    check(states, actions);
    Matrix in = assemble(states, actions);
    if (is_saf()) {
      in.leftCols(config_.state_embed) = f_s_.evaluate(states);
      in.rightCols(config_.action_embed) = f_a_.evaluate(actions);
    }
    return f_sa_.evaluate(in);
  }

  double predict(const Vector& s, const Vector& a) const {
    if (s.size() != state_dim_ || a.size() != action_dim_) throw ShapeError("predict_reward: dimension mismatch");
    return evaluate(s.transpose(), a.transpose())(0, 0);
  }

  // Accumulates parameter gradients for the last forward() into `tape`
  // (aligned with parameters()).
  void backward(const Matrix& upstream, nn::GradientTape& tape) const {
    if (tape.size() != parameter_tensor_count()) throw ShapeError("SafRewardNet::backward: tape misaligned");
    const std::size_t ns = f_s_.parameter_tensor_count();
    const std::size_t na = f_a_.parameter_tensor_count();
    const std::size_t nt = f_sa_.parameter_tensor_count();
    const std::size_t nh = head_.parameter_tensor_count();
    const Matrix d_h = head_.backward(upstream, tape.slice(ns + na + nt, nh));
    const Matrix d_in = f_sa_.backward(d_h, tape.slice(ns + na, nt));
    if (is_saf()) {
      f_s_.backward(d_in.leftCols(config_.state_embed), tape.slice(0, ns));
      f_a_.backward(d_in.rightCols(config_.action_embed), tape.slice(ns, na));
    }
  }

  // Order: f_s, f_a, f_sa, head.
  std::vector<Matrix*> parameters() { return nn::concat_parameters({&f_s_, &f_a_, &f_sa_, &head_}); }

  std::size_t parameter_tensor_count() const {
    return f_s_.parameter_tensor_count() + f_a_.parameter_tensor_count() + f_sa_.parameter_tensor_count() +
           head_.parameter_tensor_count();
  }

  nlohmann::json to_json() const {
    return {{"format", "pbrl.reward_net"},
            {"version", nn::kCheckpointVersion},
            {"variant", to_string(config_.variant)},
            {"state_dim", state_dim_},
            {"action_dim", action_dim_},
            {"f_s", is_saf() ? nn::to_json(f_s_) : nlohmann::json()},
            {"f_a", is_saf() ? nn::to_json(f_a_) : nlohmann::json()},
            {"f_sa", nn::to_json(f_sa_)},
            {"head", nn::to_json(head_)}};
  }

  static SafRewardNet from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pbrl.reward_net") throw ConfigError("checkpoint: not a reward_net record");
    if (j.value("version", 0) != nn::kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
    SafRewardNet net;
    net.state_dim_ = j.at("state_dim").get<Eigen::Index>();
    net.action_dim_ = j.at("action_dim").get<Eigen::Index>();
    net.config_.variant = reward_variant_from_string(j.at("variant").get<std::string>());
    if (net.is_saf()) {
      net.f_s_ = nn::dense_net_from_json(j.at("f_s"));
      net.f_a_ = nn::dense_net_from_json(j.at("f_a"));
      net.config_.state_embed = net.f_s_.output_dim();
      net.config_.action_embed = net.f_a_.output_dim();
    }
    net.f_sa_ = nn::dense_net_from_json(j.at("f_sa"));
    net.head_ = nn::dense_net_from_json(j.at("head"));
    net.config_.hidden = net.f_sa_.output_dim();
    net.config_.layers = static_cast<int>(net.f_sa_.depth());
    return net;
  }

 private:
  void check(const Matrix& states, const Matrix& actions) const {
    if (states.cols() != state_dim_ || actions.cols() != action_dim_ || states.rows() != actions.rows())
      throw ShapeError("SafRewardNet: input dimension mismatch");
  }

  // Trunk input buffer; filled with raw [s; a] for the concat variant.
  Matrix assemble(const Matrix& states, const Matrix& actions) const {
    Matrix in(states.rows(), is_saf() ? config_.state_embed + config_.action_embed : state_dim_ + action_dim_);
    if (!is_saf()) {
      in.leftCols(state_dim_) = states;
      in.rightCols(action_dim_) = actions;
    }
    return in;
  }

  RewardNetConfig config_;
  Eigen::Index state_dim_ = 0;
  Eigen::Index action_dim_ = 0;
  nn::DenseNet f_s_;
  nn::DenseNet f_a_;
  nn::DenseNet f_sa_;
  nn::DenseNet head_;
};

// ---- Bradley-Terry --------------------------------------------------------

// logistic(x) without overflow for large |x|.
inline double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

// P(σ¹ ≻ σ²) = exp R¹ / (exp R¹ + exp R²) = logistic(R¹ − R²).
inline double bradley_terry(double return_first, double return_second) {
  return logistic(return_first - return_second);
}

inline double binary_entropy(double p) {
  double h = 0.0;
  if (p > 0.0) h -= p * std::log(p);
  if (p < 1.0) h -= (1.0 - p) * std::log1p(-p);
  return h;
}

// Label distribution over {first, second}.
struct PreferenceLabel {
  double first = 1.0;
  double second = 0.0;

  static PreferenceLabel prefer_first() { return {1.0, 0.0}; }
  static PreferenceLabel prefer_second() { return {0.0, 1.0}; }
  static PreferenceLabel equal() { return {0.5, 0.5}; }

  bool operator==(const PreferenceLabel&) const = default;
};

struct PreferenceTriplet {
  Segment first;
  Segment second;
  PreferenceLabel label;
};

// Append-only 𝓓_pref with an optional hard capacity (the feedback budget).
class PreferenceDataset {
 public:
  explicit PreferenceDataset(std::optional<std::size_t> capacity = std::nullopt) : capacity_(capacity) {}

  void append(PreferenceTriplet t) {
    if (std::abs(t.label.first + t.label.second - 1.0) > 1e-12 || t.label.first < 0.0 || t.label.second < 0.0)
      throw ShapeError("PreferenceDataset: label components must be a distribution");
    if (t.first.length() != t.second.length()) throw ShapeError("PreferenceDataset: segment lengths differ");
    if (capacity_ && items_.size() >= *capacity_) throw ProtocolError("PreferenceDataset: feedback budget exceeded");
    items_.push_back(std::move(t));
  }

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const PreferenceTriplet& operator[](std::size_t i) const { return items_.at(i); }
  const std::vector<PreferenceTriplet>& items() const { return items_; }

 private:
  std::optional<std::size_t> capacity_;
  std::vector<PreferenceTriplet> items_;
};

// Stacks segments row-wise; offsets[k]..offsets[k+1] are segment k's rows.
struct StackedSegments {
  Matrix states;
  Matrix actions;
  std::vector<Eigen::Index> offsets;
};

inline StackedSegments stack_segments(const std::vector<const Segment*>& segs) {
  StackedSegments out;
  out.offsets.reserve(segs.size() + 1);
  out.offsets.push_back(0);
  for (const Segment* s : segs) out.offsets.push_back(out.offsets.back() + s->length());
  if (segs.empty()) return out;
  out.states.resize(out.offsets.back(), segs.front()->states.cols());
  out.actions.resize(out.offsets.back(), segs.front()->actions.cols());
  for (std::size_t k = 0; k < segs.size(); ++k) {
    out.states.middleRows(out.offsets[k], segs[k]->length()) = segs[k]->states;
    out.actions.middleRows(out.offsets[k], segs[k]->length()) = segs[k]->actions;
  }
  return out;
}

inline double segment_return(const SafRewardNet& member, const Segment& seg) {
  return member.evaluate(seg.states, seg.actions).sum();
}

inline double preference_probability(const SafRewardNet& member, const Segment& first, const Segment& second) {
  if (first.length() != second.length()) throw ShapeError("preference_probability: segment lengths differ");
  return bradley_terry(segment_return(member, first), segment_return(member, second));
}

// −[y₁ log P(σ¹≻σ²) + y₂ log P(σ²≻σ¹)], written with softplus for stability.
inline double preference_loss_term(double return_first, double return_second, const PreferenceLabel& y) {
  const double d = return_first - return_second;
  return y.first * softplus(-d) + y.second * softplus(d);
}

struct PreferenceLossResult {
  double loss = 0.0;
  double accuracy = 0.0;  // over triplets with a strict label
  std::size_t strict = 0;
  std::size_t correct = 0;
};

// Mean preference loss over `batch`; when `tape` is given, accumulates its
// gradient with respect to the member's parameters.
inline PreferenceLossResult preference_loss(SafRewardNet& member, const std::vector<const PreferenceTriplet*>& batch,
                                            nn::GradientTape* tape = nullptr) {
  if (batch.empty()) throw ShapeError("preference_loss: empty batch");
  std::vector<const Segment*> segs;
  segs.reserve(batch.size() * 2);
  for (const auto* t : batch) segs.push_back(&t->first);
  for (const auto* t : batch) segs.push_back(&t->second);
  const StackedSegments st = stack_segments(segs);
  const Matrix r = tape ? member.forward(st.states, st.actions) : member.evaluate(st.states, st.actions);
  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(n);
  PreferenceLossResult out;
  Matrix upstream;
  if (tape) upstream = Matrix::Zero(r.rows(), 1);
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Index a0 = st.offsets[k], a1 = st.offsets[k + 1];
    const Eigen::Index b0 = st.offsets[n + k], b1 = st.offsets[n + k + 1];
    const double r1 = r.middleRows(a0, a1 - a0).sum();
    const double r2 = r.middleRows(b0, b1 - b0).sum();
    const PreferenceLabel& y = batch[k]->label;
    out.loss += inv * preference_loss_term(r1, r2, y);
    if (y.first != y.second) {
      ++out.strict;
      if ((r1 > r2) == (y.first > y.second)) ++out.correct;
    }
    if (tape) {
      // dL/dR¹ = P(σ¹≻σ²) − y₁ ; dL/dR² = −dL/dR¹.
      const double g = inv * (bradley_terry(r1, r2) - y.first);
      upstream.middleRows(a0, a1 - a0).array() += g;
      upstream.middleRows(b0, b1 - b0).array() -= g;
    }
  }
  out.accuracy = out.strict ? static_cast<double>(out.correct) / static_cast<double>(out.strict) : 1.0;
  if (tape) member.backward(upstream, *tape);
  return out;
}

// Two-pass variance of deviations from v[0]: exactly 0 when all values agree,
// which the plain mean does not guarantee under rounding.
inline double population_variance(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double mean = 0.0;
  for (double x : v) mean += x - v[0];
  mean /= static_cast<double>(v.size());
  double acc = 0.0;
  for (double x : v) acc += (x - v[0] - mean) * (x - v[0] - mean);
  return acc / static_cast<double>(v.size());
}

struct RewardEnsembleConfig {
  int members = 3;
  RewardNetConfig net;
  double lr = 3e-4;
};

struct PreferenceTrainConfig {
  int max_epochs = 200;
  std::size_t batch_size = 10;
  // Stop once the epoch's mean member accuracy reaches this value.
  std::optional<double> target_accuracy = 0.97;
};

struct PreferenceTrainTrace {
  std::vector<std::vector<double>> member_losses;  // [member][epoch]
  std::vector<double> mean_accuracy;               // per epoch
  int epochs = 0;
};

class RewardEnsemble {
 public:
  RewardEnsemble(Eigen::Index state_dim, Eigen::Index action_dim, const RewardEnsembleConfig& config, Rng& rng)
      : config_(config) {
    if (config.members < 1) throw ConfigError("reward ensemble needs at least one member");
    for (int e = 0; e < config.members; ++e) {
      Rng member_rng = rng.split();
      members_.emplace_back(state_dim, action_dim, config.net, member_rng);
      optimizers_.push_back(nn::Optimizer::adam(config.lr));
      shuffle_rngs_.push_back(rng.split());
    }
  }

  std::size_t size() const { return members_.size(); }
  SafRewardNet& member(std::size_t i) { return members_.at(i); }
  const SafRewardNet& member(std::size_t i) const { return members_.at(i); }
  nn::Optimizer& optimizer(std::size_t i) { return optimizers_.at(i); }
  const RewardEnsembleConfig& config() const { return config_; }
  Eigen::Index state_dim() const { return members_.front().state_dim(); }
  Eigen::Index action_dim() const { return members_.front().action_dim(); }

  double predict_reward(std::size_t member_index, const Vector& s, const Vector& a) const {
    return member(member_index).predict(s, a);
  }

  // Arithmetic mean of member predictions; the relabel target.
  double predict_mean(const Vector& s, const Vector& a) const {
    double acc = 0.0;
    for (const auto& m : members_) acc += m.predict(s, a);
    return acc / static_cast<double>(members_.size());
  }

  // Segment returns per member for a batch: E x n.
  Matrix segment_returns(const std::vector<const Segment*>& segs) const {
    Matrix out(static_cast<Eigen::Index>(members_.size()), static_cast<Eigen::Index>(segs.size()));
    if (segs.empty()) return out;
    const StackedSegments st = stack_segments(segs);
    for (std::size_t e = 0; e < members_.size(); ++e) {
      const Matrix r = members_[e].evaluate(st.states, st.actions);
      for (std::size_t k = 0; k < segs.size(); ++k)
        out(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(k)) =
            r.middleRows(st.offsets[k], st.offsets[k + 1] - st.offsets[k]).sum();
    }
    return out;
  }

  std::vector<double> member_probabilities(const Segment& first, const Segment& second) const {
    std::vector<double> p;
    p.reserve(members_.size());
    for (const auto& m : members_) p.push_back(preference_probability(m, first, second));
    return p;
  }

  // Population variance of member probabilities.
  double disagreement(const Segment& first, const Segment& second) const {
    if (members_.size() < 2) throw ConfigError("ensemble_disagreement requires at least two members");
    return population_variance(member_probabilities(first, second));
  }

  // Binary entropy of the ensemble-mean probability (or of member 0).
  double entropy(const Segment& first, const Segment& second, bool member_zero_only = false) const {
    if (member_zero_only) return binary_entropy(preference_probability(members_.front(), first, second));
    const auto p = member_probabilities(first, second);
    return binary_entropy(std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size()));
  }

  // Each member sees its own shuffle of the dataset every epoch.
  PreferenceTrainTrace train(const PreferenceDataset& data, const PreferenceTrainConfig& cfg) {
    if (data.empty()) throw StateError("train_preferences: empty preference dataset");
    if (cfg.batch_size == 0) throw ConfigError("train_preferences: batch size must be positive");
    PreferenceTrainTrace trace;
    trace.member_losses.assign(members_.size(), {});
    std::vector<std::vector<std::size_t>> orders(members_.size(), iota_indices(data.size()));
    std::vector<nn::GradientTape> tapes;
    for (auto& m : members_) tapes.emplace_back(m.parameters());
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
      double acc_sum = 0.0;
      for (std::size_t e = 0; e < members_.size(); ++e) {
        shuffle_rngs_[e].shuffle(orders[e].begin(), orders[e].end());
        double loss_sum = 0.0;
        std::size_t strict = 0, correct = 0;
        for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
          const std::size_t stop = std::min(data.size(), start + cfg.batch_size);
          std::vector<const PreferenceTriplet*> batch;
          for (std::size_t i = start; i < stop; ++i) batch.push_back(&data[orders[e][i]]);
          tapes[e].zero();
          const auto res = preference_loss(members_[e], batch, &tapes[e]);
          optimizers_[e].step(members_[e].parameters(), tapes[e]);
          loss_sum += res.loss * static_cast<double>(batch.size());
          strict += res.strict;
          correct += res.correct;
        }
        trace.member_losses[e].push_back(loss_sum / static_cast<double>(data.size()));
        acc_sum += strict ? static_cast<double>(correct) / static_cast<double>(strict) : 1.0;
      }
      trace.mean_accuracy.push_back(acc_sum / static_cast<double>(members_.size()));
      trace.epochs = epoch + 1;
      if (cfg.target_accuracy && trace.mean_accuracy.back() >= *cfg.target_accuracy) break;
    }
    return trace;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"format", "pbrl.reward_ensemble"}, {"version", nn::kCheckpointVersion}};
    j["members"] = nlohmann::json::array();
    for (const auto& m : members_) j["members"].push_back(m.to_json());
    return j;
  }

  // Restores member parameters from a checkpoint into an ensemble of the same shape.
  void load_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pbrl.reward_ensemble") throw ConfigError("checkpoint: not a reward_ensemble record");
    if (j.value("version", 0) != nn::kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
    const auto& ms = j.at("members");
    if (ms.size() != members_.size()) throw ShapeError("checkpoint: ensemble size mismatch");
    for (std::size_t e = 0; e < members_.size(); ++e) members_[e] = SafRewardNet::from_json(ms[e]);
  }

 private:
  RewardEnsembleConfig config_;
  std::vector<SafRewardNet> members_;
  std::vector<nn::Optimizer> optimizers_;
  std::vector<Rng> shuffle_rngs_;
};

}  // namespace pbrl
