#pragma once

// Dense network substrate: MLP layers with optional batch normalization,
// reverse-mode gradients, Adam/SGD and a JSON checkpoint format.

#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbrl/core.hpp"

namespace pbrl::nn {

enum class Activation { leaky_relu, tanh, sigmoid, relu, identity };

inline constexpr double kLeakySlope = 1e-2;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "identity";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ConfigError("unknown activation: " + s);
}

inline void apply_activation(Activation a, Matrix& m) {
  switch (a) {
    case Activation::leaky_relu:
      m = m.unaryExpr([](double x) { return x > 0.0 ? x : kLeakySlope * x; });
      break;
    case Activation::tanh:
      m = m.array().tanh().matrix();
      break;
    case Activation::sigmoid:
      m = m.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      break;
    case Activation::relu:
      m = m.cwiseMax(0.0);
      break;
    case Activation::identity:
      break;
  }
}

// d(activation)/d(input), expressed through the pre-activation and output.
inline Matrix activation_grad(Activation a, const Matrix& pre, const Matrix& out) {
  switch (a) {
    case Activation::leaky_relu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : kLeakySlope; });
    case Activation::tanh:
      return (1.0 - out.array().square()).matrix();
    case Activation::sigmoid:
      return (out.array() * (1.0 - out.array())).matrix();
    case Activation::relu:
      return pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; });
    case Activation::identity:
      return Matrix::Ones(pre.rows(), pre.cols());
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

struct LayerSpec {
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Activation activation = Activation::identity;
  bool batch_norm = false;
  bool bias = true;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Matrix bias;    // out x 1; empty when the layer has no bias
  Matrix gamma;   // out x 1; empty without batch norm
  Matrix beta;
  Vector running_mean;
  Vector running_var;
  Activation activation = Activation::identity;
  bool batch_norm = false;

  Eigen::Index in() const { return weight.cols(); }
  Eigen::Index out() const { return weight.rows(); }
  bool has_bias() const { return bias.size() > 0; }
};

// Per-parameter gradient buffers, aligned one-to-one with a parameter list.
class GradientTape {
 public:
  GradientTape() = default;

  explicit GradientTape(const std::vector<Matrix*>& params) {
    grads_.reserve(params.size());
    for (const Matrix* p : params) grads_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }

  std::vector<Matrix>& grads() { return grads_; }
  const std::vector<Matrix>& grads() const { return grads_; }
  std::size_t size() const { return grads_.size(); }
  Matrix& operator[](std::size_t i) { return grads_[i]; }
  const Matrix& operator[](std::size_t i) const { return grads_[i]; }

  void zero() {
    for (Matrix& g : grads_) g.setZero();
  }

  std::span<Matrix> slice(std::size_t offset, std::size_t count) {
    if (offset + count > grads_.size()) throw ShapeError("GradientTape::slice out of range");
    return std::span<Matrix>(grads_).subspan(offset, count);
  }

  bool all_zero() const {
    for (const Matrix& g : grads_)
      if (g.size() > 0 && g.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
  }

 private:
  std::vector<Matrix> grads_;
};

class DenseNet {
 public:
  DenseNet() = default;

  DenseNet(const std::vector<LayerSpec>& specs, Rng& rng) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const LayerSpec& s = specs[i];
      if (s.in <= 0 || s.out <= 0) throw ShapeError("DenseNet: non-positive layer dimension");
      if (i > 0 && specs[i - 1].out != s.in)
        throw ShapeError("DenseNet: layer " + std::to_string(i) + " input width does not chain");
      DenseLayer layer;
      layer.activation = s.activation;
      layer.batch_norm = s.batch_norm;
      // Uniform fan-in scaling for weights and biases.
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
      layer.weight.resize(s.out, s.in);
      for (Eigen::Index r = 0; r < s.out; ++r)
        for (Eigen::Index c = 0; c < s.in; ++c) layer.weight(r, c) = rng.uniform(-bound, bound);
      if (s.bias) {
        layer.bias.resize(s.out, 1);
        for (Eigen::Index r = 0; r < s.out; ++r) layer.bias(r, 0) = rng.uniform(-bound, bound);
      }
      if (s.batch_norm) {
        layer.gamma = Matrix::Ones(s.out, 1);
        layer.beta = Matrix::Zero(s.out, 1);
        layer.running_mean = Vector::Zero(s.out);
        layer.running_var = Vector::Ones(s.out);
      }
      layers_.push_back(std::move(layer));
    }
  }

  // Plain MLP: `hidden_layers` hidden layers of width `hidden`, then a linear
  // map to `out` followed by `out_act`.
  static DenseNet mlp(Eigen::Index in, Eigen::Index hidden, int hidden_layers, Eigen::Index out,
                      Activation hidden_act, Activation out_act, Rng& rng) {
    std::vector<LayerSpec> specs;
    Eigen::Index width = in;
    for (int i = 0; i < hidden_layers; ++i) {
      specs.push_back({width, hidden, hidden_act});
      width = hidden;
    }
    specs.push_back({width, out, out_act});
    return DenseNet(specs, rng);
  }

  Eigen::Index input_dim() const { return layers_.empty() ? 0 : layers_.front().in(); }
  Eigen::Index output_dim() const { return layers_.empty() ? 0 : layers_.back().out(); }
  std::size_t depth() const { return layers_.size(); }

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

  void set_training(bool training) { training_ = training; }
  bool training() const { return training_; }

  // Forward pass that records activations for a later backward().
  Matrix forward(const Matrix& batch) {
    cache_.assign(layers_.size(), {});
    Matrix x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) x = run_layer(i, x, &cache_[i], &layers_[i]);
    recorded_ = true;
    return x;
  }

  // Same computation as forward() without recording or touching running
  // statistics.
  Matrix evaluate(const Matrix& batch) const {
    Matrix x = batch;
    for (std::size_t i = 0; i < layers_.size(); ++i) x = run_layer(i, x, nullptr, nullptr);
    return x;
  }

  bool has_record() const { return recorded_; }
  void clear_record() {
    cache_.clear();
    recorded_ = false;
  }

  // Accumulates parameter gradients into `grads` (aligned with parameters())
  // and returns the gradient with respect to the recorded input batch.
  Matrix backward(const Matrix& upstream, std::span<Matrix> grads) const {
    if (!recorded_) throw StateError("DenseNet::backward called without a recorded forward pass");
    if (grads.size() != parameter_tensor_count())
      throw ShapeError("DenseNet::backward: gradient buffer count does not match parameters");
    const Eigen::Index batch = cache_.front().input.rows();
    if (upstream.rows() != batch || upstream.cols() != output_dim())
      throw ShapeError("DenseNet::backward: upstream gradient shape mismatch");

    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      offsets[i] = off;
      off += tensors_in_layer(layers_[i]);
    }

    Matrix d = upstream;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const DenseLayer& layer = layers_[li];
      const LayerCache& c = cache_[li];
      Matrix du = d.cwiseProduct(activation_grad(layer.activation, c.pre_activation, c.output));
      std::size_t g = offsets[li];
      Matrix dz;
      if (layer.batch_norm) {
        const std::size_t gi = g + 1 + (layer.has_bias() ? 1 : 0);
        grads[gi] += du.cwiseProduct(c.normalized).colwise().sum().transpose();
        grads[gi + 1] += du.colwise().sum().transpose();
        Matrix dxhat = du.array().rowwise() * layer.gamma.col(0).transpose().array();
        const double n = static_cast<double>(batch);
        Eigen::RowVectorXd mean_dxhat = dxhat.colwise().sum() / n;
        Eigen::RowVectorXd mean_dxhat_xhat = dxhat.cwiseProduct(c.normalized).colwise().sum() / n;
        dz = dxhat;
        dz.rowwise() -= mean_dxhat;
        dz -= (c.normalized.array().rowwise() * mean_dxhat_xhat.array()).matrix();
        dz = (dz.array().rowwise() * c.inv_std.array()).matrix();
      } else {
        dz = std::move(du);
      }
      check_grad_shape(grads[g], layer.weight, li);
      grads[g].noalias() += dz.transpose() * c.input;
      if (layer.has_bias()) {
        check_grad_shape(grads[g + 1], layer.bias, li);
        grads[g + 1] += dz.colwise().sum().transpose();
      }
      d.noalias() = dz * layer.weight;
    }
    return d;
  }

  GradientTape backward(const Matrix& upstream) {
    GradientTape tape(parameters());
    backward(upstream, std::span<Matrix>(tape.grads()));
    return tape;
  }

  std::vector<Matrix*> parameters() {
    std::vector<Matrix*> out;
    for (DenseLayer& l : layers_) {
      out.push_back(&l.weight);
      if (l.has_bias()) out.push_back(&l.bias);
      if (l.batch_norm) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      }
    }
    return out;
  }

  std::vector<const Matrix*> parameters() const {
    std::vector<const Matrix*> out;
    for (const DenseLayer& l : layers_) {
      out.push_back(&l.weight);
      if (l.has_bias()) out.push_back(&l.bias);
      if (l.batch_norm) {
        out.push_back(&l.gamma);
        out.push_back(&l.beta);
      }
    }
    return out;
  }

  std::size_t parameter_tensor_count() const {
    std::size_t n = 0;
    for (const DenseLayer& l : layers_) n += tensors_in_layer(l);
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const Matrix* p : parameters()) n += static_cast<std::size_t>(p->size());
    return n;
  }

  bool same_architecture(const DenseNet& other) const {
    if (layers_.size() != other.layers_.size()) return false;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const DenseLayer& a = layers_[i];
      const DenseLayer& b = other.layers_[i];
      if (a.in() != b.in() || a.out() != b.out() || a.activation != b.activation ||
          a.batch_norm != b.batch_norm || a.has_bias() != b.has_bias())
        return false;
    }
    return true;
  }

  // Copies parameters and batch-norm running statistics.
  void copy_parameters_from(const DenseNet& other) {
    if (!same_architecture(other)) throw ShapeError("DenseNet::copy_parameters_from: architecture mismatch");
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].weight = other.layers_[i].weight;
      layers_[i].bias = other.layers_[i].bias;
      layers_[i].gamma = other.layers_[i].gamma;
      layers_[i].beta = other.layers_[i].beta;
      layers_[i].running_mean = other.layers_[i].running_mean;
      layers_[i].running_var = other.layers_[i].running_var;
    }
  }

  // this <- tau * other + (1 - tau) * this
  void soft_update_from(const DenseNet& other, double tau) {
    if (!same_architecture(other)) throw ShapeError("DenseNet::soft_update_from: architecture mismatch");
    auto mine = parameters();
    auto theirs = other.parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) *mine[i] = tau * *theirs[i] + (1.0 - tau) * *mine[i];
  }

  bool parameters_equal(const DenseNet& other) const {
    if (!same_architecture(other)) return false;
    auto a = parameters();
    auto b = other.parameters();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (*a[i] != *b[i]) return false;
    return true;
  }

 private:
  struct LayerCache {
    Matrix input;
    Matrix normalized;
    Eigen::RowVectorXd inv_std;
    Matrix pre_activation;
    Matrix output;
  };

  static std::size_t tensors_in_layer(const DenseLayer& l) {
    return 1 + (l.has_bias() ? 1 : 0) + (l.batch_norm ? 2 : 0);
  }

  static void check_grad_shape(const Matrix& g, const Matrix& p, std::size_t layer) {
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw ShapeError("DenseNet::backward: gradient buffer shape mismatch at layer " + std::to_string(layer));
  }

  // `stats` receives running-statistic updates; null leaves them untouched.
  Matrix run_layer(std::size_t i, const Matrix& x, LayerCache* cache, DenseLayer* stats) const {
    const DenseLayer& layer = layers_[i];
    if (x.cols() != layer.in())
      throw ShapeError("DenseNet::forward: input width " + std::to_string(x.cols()) + " does not match layer " +
                       std::to_string(i) + " (expects " + std::to_string(layer.in()) + ")");
    Matrix z(x.rows(), layer.out());
    z.noalias() = x * layer.weight.transpose();
    if (layer.has_bias()) z.rowwise() += layer.bias.col(0).transpose();

    Matrix u;
    if (layer.batch_norm) {
      Eigen::RowVectorXd mean;
      Eigen::RowVectorXd var;
      if (training_) {
        if (x.rows() < 2) throw ShapeError("DenseNet: batch normalization needs a batch of at least 2 in training mode");
        const double n = static_cast<double>(x.rows());
        mean = z.colwise().sum() / n;
        var = (z.rowwise() - mean).array().square().colwise().sum().matrix() / n;
        if (stats) {
          stats->running_mean = (1.0 - kBatchNormMomentum) * stats->running_mean +
                                kBatchNormMomentum * mean.transpose();
          stats->running_var = (1.0 - kBatchNormMomentum) * stats->running_var +
                               kBatchNormMomentum * (var.transpose() * (n / (n - 1.0)));
        }
      } else {
        mean = layer.running_mean.transpose();
        var = layer.running_var.transpose();
      }
      Eigen::RowVectorXd inv_std = (var.array() + kBatchNormEps).rsqrt().matrix();
      Matrix xhat = ((z.rowwise() - mean).array().rowwise() * inv_std.array()).matrix();
      u = (xhat.array().rowwise() * layer.gamma.col(0).transpose().array()).matrix();
      u.rowwise() += layer.beta.col(0).transpose();
      if (cache) {
        cache->normalized = std::move(xhat);
        cache->inv_std = std::move(inv_std);
      }
    } else {
      u = std::move(z);
    }
    Matrix y = u;
    apply_activation(layer.activation, y);
    if (cache) {
      cache->input = x;
      cache->pre_activation = std::move(u);
      cache->output = y;
    }
    return y;
  }

  std::vector<DenseLayer> layers_;
  std::vector<LayerCache> cache_;
  bool recorded_ = false;
  bool training_ = true;
};

// Concatenated parameter lists for composite models.
inline std::vector<Matrix*> concat_parameters(std::initializer_list<DenseNet*> nets) {
  std::vector<Matrix*> out;
  for (DenseNet* n : nets) {
    auto p = n->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

enum class OptimizerKind { adam, sgd };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  static Optimizer adam(double lr) { return Optimizer({OptimizerKind::adam, lr}); }
  static Optimizer sgd(double lr) { return Optimizer({OptimizerKind::sgd, lr}); }

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return steps_; }

  void reset() {
    first_.clear();
    second_.clear();
    steps_ = 0;
  }

  void step(const std::vector<Matrix*>& params, const GradientTape& tape) { step(params, tape.grads()); }

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
    if (params.size() != grads.size()) throw ShapeError("Optimizer::step: gradient tape not aligned with parameters");
    for (std::size_t i = 0; i < params.size(); ++i)
      if (params[i]->rows() != grads[i].rows() || params[i]->cols() != grads[i].cols())
        throw ShapeError("Optimizer::step: gradient shape mismatch for parameter " + std::to_string(i));
    ++steps_;
    if (config_.kind == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) *params[i] -= config_.lr * grads[i];
    } else {
      if (first_.empty()) {
        for (Matrix* p : params) {
          first_.push_back(Matrix::Zero(p->rows(), p->cols()));
          second_.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
      }
      if (first_.size() != params.size()) throw ShapeError("Optimizer::step: moment state not aligned with parameters");
      const double t = static_cast<double>(steps_);
      const double c1 = 1.0 - std::pow(config_.beta1, t);
      const double c2 = 1.0 - std::pow(config_.beta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (first_[i].rows() != params[i]->rows() || first_[i].cols() != params[i]->cols())
          throw ShapeError("Optimizer::step: moment state shape mismatch for parameter " + std::to_string(i));
        first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * grads[i];
        second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * grads[i].cwiseAbs2();
        *params[i] -= (config_.lr * (first_[i].array() / c1) /
                       ((second_[i].array() / c2).sqrt() + config_.eps))
                          .matrix();
      }
    }
    for (std::size_t i = 0; i < params.size(); ++i)
      if (!params[i]->allFinite())
        throw NumericalError("Optimizer::step produced a non-finite parameter (tensor " + std::to_string(i) + ")");
  }

 private:
  OptimizerConfig config_;
  std::vector<Matrix> first_;
  std::vector<Matrix> second_;
  long steps_ = 0;
};

inline constexpr double kCosineEps = 1e-8;

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // an input norm was below kCosineEps; value forced to 0
};

inline CosineResult cosine_similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine_similarity: dimension mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na < kCosineEps || nb < kCosineEps) return {0.0, true};
  return {std::clamp(a.dot(b) / (na * nb), -1.0, 1.0), false};
}

// ---- checkpoint format -----------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json j;
  j["rows"] = m.rows();
  j["cols"] = m.cols();
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  j["data"] = std::move(data);
  return j;
}

inline Matrix matrix_from_json(const nlohmann::json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ShapeError("checkpoint: matrix data size mismatch");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
  return m;
}

inline nlohmann::json to_json(const DenseNet& net) {
  nlohmann::json j;
  j["format"] = "pbrl.dense_net";
  j["version"] = kCheckpointVersion;
  j["training"] = net.training();
  j["layers"] = nlohmann::json::array();
  for (const DenseLayer& l : net.layers()) {
    nlohmann::json lj;
    lj["in"] = l.in();
    lj["out"] = l.out();
    lj["activation"] = to_string(l.activation);
    lj["batch_norm"] = l.batch_norm;
    lj["weight"] = matrix_to_json(l.weight);
    if (l.has_bias()) lj["bias"] = matrix_to_json(l.bias);
    if (l.batch_norm) {
      lj["gamma"] = matrix_to_json(l.gamma);
      lj["beta"] = matrix_to_json(l.beta);
      lj["running_mean"] = matrix_to_json(l.running_mean);
      lj["running_var"] = matrix_to_json(l.running_var);
    }
    j["layers"].push_back(std::move(lj));
  }
  return j;
}

inline DenseNet dense_net_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "pbrl.dense_net") throw ConfigError("checkpoint: not a dense_net record");
  if (j.value("version", 0) != kCheckpointVersion)
    throw ConfigError("checkpoint: unsupported version " + std::to_string(j.value("version", 0)));
  DenseNet net;
  Eigen::Index prev_out = -1;
  for (const auto& lj : j.at("layers")) {
    DenseLayer l;
    l.activation = activation_from_string(lj.at("activation").get<std::string>());
    l.batch_norm = lj.at("batch_norm").get<bool>();
    l.weight = matrix_from_json(lj.at("weight"));
    if (l.weight.rows() != lj.at("out").get<Eigen::Index>() || l.weight.cols() != lj.at("in").get<Eigen::Index>())
      throw ShapeError("checkpoint: weight shape disagrees with declared layer shape");
    if (prev_out >= 0 && prev_out != l.in()) throw ShapeError("checkpoint: layer widths do not chain");
    prev_out = l.out();
    if (lj.contains("bias")) l.bias = matrix_from_json(lj.at("bias"));
    if (l.batch_norm) {
      l.gamma = matrix_from_json(lj.at("gamma"));
      l.beta = matrix_from_json(lj.at("beta"));
      l.running_mean = matrix_from_json(lj.at("running_mean"));
      l.running_var = matrix_from_json(lj.at("running_var"));
    }
    net.layers().push_back(std::move(l));
  }
  net.set_training(j.value("training", true));
  return net;
}

inline void save_json(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << j.dump();
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return nlohmann::json::parse(in);
}

}  // namespace pbrl::nn
