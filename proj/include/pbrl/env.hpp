#pragma once

// Toy environments with analytic ground-truth rewards.
//
//   pointmass2d         damped 2-D point mass driven towards a goal
//   pointmass2d_static  pointmass2d plus constant per-episode context features
//   chain               small discrete chain for brute-force oracles

#include <array>
#include <cmath>
#include <memory>
#include <string>

#include "json.hpp"
#include "pbrl/core.hpp"

namespace pbrl::env {

struct EnvSpec {
  std::string id;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
  int horizon = 0;
  // Upper bound on |reward|; per-step rewards lie in [-reward_bound, 0] for
  // the point-mass family and in [0, reward_bound] for chain.
  double reward_bound = 1.0;
  // Added to every ground-truth reward to obtain a non-negative evaluation
  // score (normalized-return ratios need positive denominators).
  double score_offset = 0.0;
  bool renderable = false;
  // Observation slices used by the trace renderer.
  Eigen::Index position_offset = 0;
  Eigen::Index goal_offset = 0;
};

struct EnvState {
  Vector observation;
  int step = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool action_clipped = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual EnvState reset(std::uint64_t seed) = 0;
  virtual StepResult step(const Vector& action) = 0;
  virtual const EnvState& state() const = 0;
  // Distance-to-goal style diagnostic; environments without one return 0.
  virtual double goal_distance() const { return 0.0; }
};

// Clips into [-1, 1]^d and reports whether anything changed.
inline bool clip_action(Vector& a) {
  bool clipped = false;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a(i))) throw ShapeError("action contains a non-finite value");
    if (a(i) > 1.0 || a(i) < -1.0) {
      a(i) = std::clamp(a(i), -1.0, 1.0);
      clipped = true;
    }
  }
  return clipped;
}

struct PointMassParams {
  double dt = 0.05;
  double damping = 0.95;
  double force = 2.0;          // steady-state speed under a constant unit action
  double arena = 2.0;          // positions clipped to [-arena, arena]^2
  double start_region = 1.0;   // start positions uniform in [-r, r]^2
  double goal_region = 1.0;    // goals uniform in [-g, g]^2; 0 pins the goal at the origin
  int horizon = 100;
};

// Observation: [position(2), velocity(2), goal(2)].
class PointMass2D : public Environment {
 public:
  explicit PointMass2D(PointMassParams params = {}) : params_(params) {
    spec_.id = "pointmass2d";
    spec_.state_dim = 6;
    spec_.action_dim = 2;
    spec_.horizon = params_.horizon;
    spec_.reward_bound = std::sqrt(2.0) * (params_.arena + params_.goal_region);
    spec_.score_offset = spec_.reward_bound;
    spec_.renderable = true;
    spec_.position_offset = 0;
    spec_.goal_offset = 4;
  }

  const EnvSpec& spec() const override { return spec_; }
  const PointMassParams& params() const { return params_; }

  EnvState reset(std::uint64_t seed) override {
    Rng rng(Rng::mix(seed));
    for (int i = 0; i < 2; ++i) position_[i] = rng.uniform(-params_.start_region, params_.start_region);
    velocity_ = {0.0, 0.0};
    for (int i = 0; i < 2; ++i)
      goal_[i] = params_.goal_region > 0.0 ? rng.uniform(-params_.goal_region, params_.goal_region) : 0.0;
    state_.step = 0;
    state_.done = false;
    state_.observation = observe();
    return state_;
  }

  StepResult step(const Vector& action) override {
    if (state_.done) throw ProtocolError("PointMass2D::step on a finished episode");
    if (action.size() != 2) throw ShapeError("PointMass2D::step: action must have 2 components");
    Vector a = action;
    const bool clipped = clip_action(a);
    const double reward = ground_truth_reward();
    for (int i = 0; i < 2; ++i) {
      velocity_[i] = params_.damping * velocity_[i] + params_.dt * params_.force * a(i);
      position_[i] += params_.dt * velocity_[i];
      if (position_[i] > params_.arena || position_[i] < -params_.arena) {
        position_[i] = std::clamp(position_[i], -params_.arena, params_.arena);
        velocity_[i] = 0.0;
      }
    }
    ++state_.step;
    state_.done = state_.step >= params_.horizon;
    state_.observation = observe();
    return {state_, reward, clipped};
  }

  const EnvState& state() const override { return state_; }

  double goal_distance() const override { return std::hypot(position_[0] - goal_[0], position_[1] - goal_[1]); }

  // r(s, a) = -|position - goal|, evaluated on the state the action is taken in.
  double ground_truth_reward() const { return -goal_distance(); }

  std::array<double, 2> position() const { return position_; }
  std::array<double, 2> velocity() const { return velocity_; }
  std::array<double, 2> goal() const { return goal_; }

  // Test hook: place the mass explicitly.
  void set_state(std::array<double, 2> position, std::array<double, 2> velocity, std::array<double, 2> goal) {
    position_ = position;
    velocity_ = velocity;
    goal_ = goal;
    state_.observation = observe();
  }

 private:
  Vector observe() const {
    Vector o(6);
    o << position_[0], position_[1], velocity_[0], velocity_[1], goal_[0], goal_[1];
    return o;
  }

  PointMassParams params_;
  EnvSpec spec_;
  EnvState state_;
  std::array<double, 2> position_{0.0, 0.0};
  std::array<double, 2> velocity_{0.0, 0.0};
  std::array<double, 2> goal_{0.0, 0.0};
};

struct StaticFeatureParams {
  int context_dim = 16;
  // Base context: fixed per environment instance (drawn from layout_seed),
  // magnitudes in [magnitude_lo, magnitude_hi] with random signs.
  double magnitude_lo = 2.0;
  double magnitude_hi = 3.0;
  // Per-episode uniform offset in [-jitter, jitter] added to each feature.
  double jitter = 0.25;
  std::uint64_t layout_seed = 0x5a17c0deULL;
};

// PointMass2D with context features drawn once per episode that never change
// within it. The shared base dominates the observation norm, so any two
// observations (not only adjacent ones) are nearly parallel.
class StaticFeatureEnv : public Environment {
 public:
  explicit StaticFeatureEnv(PointMassParams params = {}, StaticFeatureParams features = {})
      : inner_(params), features_(features) {
    if (features_.context_dim <= 0) throw ConfigError("StaticFeatureEnv needs at least one context feature");
    spec_ = inner_.spec();
    spec_.id = "pointmass2d_static";
    spec_.state_dim = inner_.spec().state_dim + features_.context_dim;
    Rng rng(Rng::mix(features_.layout_seed));
    base_.resize(features_.context_dim);
    for (int i = 0; i < features_.context_dim; ++i) {
      const double magnitude = rng.uniform(features_.magnitude_lo, features_.magnitude_hi);
      base_(i) = rng.bernoulli(0.5) ? magnitude : -magnitude;
    }
  }

  const EnvSpec& spec() const override { return spec_; }
  int context_dim() const { return features_.context_dim; }
  const Vector& base_context() const { return base_; }

  EnvState reset(std::uint64_t seed) override {
    inner_.reset(seed);
    Rng rng(Rng::mix(seed ^ 0x5a17c0de5a17c0deULL));
    context_ = base_;
    for (int i = 0; i < features_.context_dim; ++i) context_(i) += rng.uniform(-features_.jitter, features_.jitter);
    state_ = inner_.state();
    state_.observation = augment(inner_.state().observation);
    return state_;
  }

  StepResult step(const Vector& action) override {
    if (state_.done) throw ProtocolError("StaticFeatureEnv::step on a finished episode");
    StepResult r = inner_.step(action);
    r.state.observation = augment(r.state.observation);
    state_ = r.state;
    return r;
  }

  const EnvState& state() const override { return state_; }
  double goal_distance() const override { return inner_.goal_distance(); }
  const Vector& context() const { return context_; }

 private:
  Vector augment(const Vector& base) const {
    Vector o(base.size() + features_.context_dim);
    o << base, context_;
    return o;
  }

  PointMass2D inner_;
  StaticFeatureParams features_;
  EnvSpec spec_;
  EnvState state_;
  Vector base_;
  Vector context_;
};

struct ChainParams {
  int states = 5;
  int horizon = 6;
  bool random_start = false;
};

// Discrete chain with one-hot observations. A 1-D action moves right when
// a >= 0 and left otherwise; the reward of (s, a) is index(s) / (states - 1).
class ChainEnv : public Environment {
 public:
  explicit ChainEnv(ChainParams params = {}) : params_(params) {
    if (params_.states < 2) throw ConfigError("ChainEnv needs at least 2 states");
    spec_.id = "chain";
    spec_.state_dim = params_.states;
    spec_.action_dim = 1;
    spec_.horizon = params_.horizon;
    spec_.reward_bound = 1.0;
    spec_.score_offset = 0.0;
    spec_.renderable = false;
  }

  const EnvSpec& spec() const override { return spec_; }

  EnvState reset(std::uint64_t seed) override {
    Rng rng(Rng::mix(seed));
    position_ = params_.random_start ? static_cast<int>(rng.index(static_cast<std::size_t>(params_.states))) : 0;
    state_.step = 0;
    state_.done = false;
    state_.observation = observe();
    return state_;
  }

  StepResult step(const Vector& action) override {
    if (state_.done) throw ProtocolError("ChainEnv::step on a finished episode");
    if (action.size() != 1) throw ShapeError("ChainEnv::step: action must have 1 component");
    Vector a = action;
    const bool clipped = clip_action(a);
    const double reward = reward_of(position_);
    position_ = std::clamp(position_ + (a(0) >= 0.0 ? 1 : -1), 0, params_.states - 1);
    ++state_.step;
    state_.done = state_.step >= params_.horizon;
    state_.observation = observe();
    return {state_, reward, clipped};
  }

  const EnvState& state() const override { return state_; }
  int position() const { return position_; }
  double reward_of(int index) const { return static_cast<double>(index) / (params_.states - 1); }

 private:
  Vector observe() const {
    Vector o = Vector::Zero(params_.states);
    o(position_) = 1.0;
    return o;
  }

  ChainParams params_;
  EnvSpec spec_;
  EnvState state_;
  int position_ = 0;
};

inline std::unique_ptr<Environment> make_environment(const std::string& id) {
  if (id == "pointmass2d") return std::make_unique<PointMass2D>();
  if (id == "pointmass2d_static") return std::make_unique<StaticFeatureEnv>();
  if (id == "chain") return std::make_unique<ChainEnv>();
  throw ConfigError("unknown environment id: " + id);
}

// ---- trace rendering ---------------------------------------------------------

struct TraceFrame {
  int t = 0;
  std::array<double, 2> position{0.0, 0.0};
};

// Drawable per-timestep positions plus the goal marker. JSON schema (v1):
//   {"version": 1, "env": "<id>", "goal": [x, y],
//    "frames": [{"t": 0, "pos": [x, y]}, ...]}
struct RenderTrace {
  std::string env_id;
  std::array<double, 2> goal{0.0, 0.0};
  std::vector<TraceFrame> frames;
};

inline constexpr int kTraceVersion = 1;

// `observations` holds one row per timestep.
inline RenderTrace render_trace(const EnvSpec& spec, const Matrix& observations) {
  if (!spec.renderable) throw UnsupportedError("environment '" + spec.id + "' has no 2-D rendering");
  if (observations.cols() != spec.state_dim) throw ShapeError("render_trace: observation width mismatch");
  RenderTrace trace;
  trace.env_id = spec.id;
  if (observations.rows() > 0)
    trace.goal = {observations(0, spec.goal_offset), observations(0, spec.goal_offset + 1)};
  for (Eigen::Index t = 0; t < observations.rows(); ++t)
    trace.frames.push_back({static_cast<int>(t),
                            {observations(t, spec.position_offset), observations(t, spec.position_offset + 1)}});
  return trace;
}

inline nlohmann::json to_json(const RenderTrace& trace) {
  nlohmann::json j;
  j["version"] = kTraceVersion;
  j["env"] = trace.env_id;
  j["goal"] = {trace.goal[0], trace.goal[1]};
  j["frames"] = nlohmann::json::array();
  for (const TraceFrame& f : trace.frames) j["frames"].push_back({{"t", f.t}, {"pos", {f.position[0], f.position[1]}}});
  return j;
}

inline RenderTrace trace_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != kTraceVersion) throw ConfigError("unsupported trace version");
  RenderTrace trace;
  trace.env_id = j.at("env").get<std::string>();
  trace.goal = {j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>()};
  for (const auto& f : j.at("frames"))
    trace.frames.push_back({f.at("t").get<int>(), {f.at("pos")[0].get<double>(), f.at("pos")[1].get<double>()}});
  return trace;
}

}  // namespace pbrl::env
