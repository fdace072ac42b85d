#pragma once

// Transition storage, fixed-length segment extraction and learned-reward
// relabelling.

#include <optional>
#include <unordered_set>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pbrl/core.hpp"
#include "pbrl/nn.hpp"

namespace pbrl {

class ReplayBuffer;

class Transition {
 public:
  Transition() = default;
  Transition(Vector state, Vector action, Vector next_state, double ground_truth_reward, bool done, long episode,
             int step, bool terminal = false)
      : state(std::move(state)),
        action(std::move(action)),
        next_state(std::move(next_state)),
        done(done),
        terminal(terminal),
        episode(episode),
        step(step),
        ground_truth_reward_(ground_truth_reward) {}

  Vector state;
  Vector action;
  Vector next_state;
  double learned_reward = 0.0;
  bool done = false;      // last transition of its episode
  bool terminal = false;  // true environment termination (no bootstrapping)
  long episode = 0;
  int step = 0;

  double ground_truth_reward(GroundTruthKey) const { return ground_truth_reward_; }

 private:
  friend class ReplayBuffer;
  double ground_truth_reward_ = 0.0;
};

// l consecutive transitions of a single episode, stored as row matrices.
class Segment {
 public:
  Segment() = default;

  // Segment without ground-truth information (for model-side tests and tools).
  Segment(Matrix states, Matrix actions, long episode = 0, int start_step = 0)
      : states(std::move(states)), actions(std::move(actions)), episode(episode), start_step(start_step) {
    if (this->states.rows() != this->actions.rows()) throw ShapeError("Segment: state/action length mismatch");
    ground_truth_ = Vector::Zero(this->states.rows());
  }

  Segment(Matrix states, Matrix actions, Vector ground_truth_rewards, GroundTruthKey, long episode = 0,
          int start_step = 0)
      : Segment(std::move(states), std::move(actions), episode, start_step) {
    if (ground_truth_rewards.size() != this->states.rows()) throw ShapeError("Segment: reward length mismatch");
    ground_truth_ = std::move(ground_truth_rewards);
  }

  Matrix states;       // l x d_s
  Matrix actions;      // l x d_a
  Matrix next_states;  // l x d_s (empty for hand-built segments)
  long episode = 0;
  int start_step = 0;

  int length() const { return static_cast<int>(states.rows()); }

  const Vector& ground_truth_rewards(GroundTruthKey) const { return ground_truth_; }
  double ground_truth_return(GroundTruthKey) const { return ground_truth_.sum(); }

 private:
  friend class ReplayBuffer;
  Vector ground_truth_;
};

using SegmentPair = std::pair<Segment, Segment>;

// Row-matrix view of a minibatch as consumed by learners.
struct TransitionBatch {
  Matrix states;
  Matrix actions;
  Matrix next_states;
  Vector rewards;
  Vector not_terminal;  // 1 where bootstrapping applies
};

class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, Eigen::Index state_dim, Eigen::Index action_dim)
      : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
    if (capacity == 0) throw ConfigError("ReplayBuffer capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 20));
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  long insertions() const { return insertions_; }
  bool empty() const { return data_.empty(); }
  Eigen::Index state_dim() const { return state_dim_; }
  Eigen::Index action_dim() const { return action_dim_; }

  // Logical index: 0 is the oldest stored transition.
  const Transition& operator[](std::size_t i) const { return data_[physical(i)]; }
  const Transition& back() const { return (*this)[size() - 1]; }

  void set_learned_reward(std::size_t i, double r) { data_[physical(i)].learned_reward = r; }

  void push(Transition t) {
    if (t.state.size() != state_dim_ || t.next_state.size() != state_dim_ || t.action.size() != action_dim_)
      throw ShapeError("ReplayBuffer::push: transition dimensions do not match the buffer");
    if (!empty()) {
      const Transition& last = back();
      if (last.done) {
        if (t.episode == last.episode)
          throw ProtocolError("ReplayBuffer::push: a new episode id is required after a done transition");
        if (t.step != 0) throw ProtocolError("ReplayBuffer::push: new episode must start at step 0");
      } else {
        if (t.episode != last.episode)
          throw ProtocolError("ReplayBuffer::push: interleaved episodes (previous episode not finished)");
        if (t.step != last.step + 1) throw ProtocolError("ReplayBuffer::push: non-consecutive step index");
      }
    }
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
    ++insertions_;
  }

  // Logical start indices of every length-l window inside a single episode.
  std::vector<std::size_t> window_starts(int length) const {
    std::vector<std::size_t> starts;
    if (length <= 0) return starts;
    const std::size_t l = static_cast<std::size_t>(length);
    std::size_t run_start = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      const bool run_ends = (*this)[i].done || i + 1 == size() || (*this)[i + 1].episode != (*this)[i].episode;
      if (run_ends) {
        const std::size_t run_len = i - run_start + 1;
        for (std::size_t s = run_start; s + l <= run_start + run_len; ++s) starts.push_back(s);
        run_start = i + 1;
      }
    }
    return starts;
  }

  Segment segment(std::size_t start, int length) const {
    if (length <= 0 || start + static_cast<std::size_t>(length) > size())
      throw ShapeError("ReplayBuffer::segment: window out of range");
    Segment seg;
    seg.states.resize(length, state_dim_);
    seg.actions.resize(length, action_dim_);
    seg.next_states.resize(length, state_dim_);
    seg.ground_truth_.resize(length);
    const Transition& first = (*this)[start];
    seg.episode = first.episode;
    seg.start_step = first.step;
    for (int t = 0; t < length; ++t) {
      const Transition& tr = (*this)[start + static_cast<std::size_t>(t)];
      if (tr.episode != first.episode || tr.step != first.step + t)
        throw ProtocolError("ReplayBuffer::segment: window spans an episode boundary");
      seg.states.row(t) = tr.state.transpose();
      seg.actions.row(t) = tr.action.transpose();
      seg.next_states.row(t) = tr.next_state.transpose();
      seg.ground_truth_(t) = tr.ground_truth_reward_;
    }
    return seg;
  }

  TransitionBatch gather(const std::vector<std::size_t>& indices) const {
    TransitionBatch b;
    const auto n = static_cast<Eigen::Index>(indices.size());
    b.states.resize(n, state_dim_);
    b.actions.resize(n, action_dim_);
    b.next_states.resize(n, state_dim_);
    b.rewards.resize(n);
    b.not_terminal.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Transition& t = (*this)[indices[static_cast<std::size_t>(r)]];
      b.states.row(r) = t.state.transpose();
      b.actions.row(r) = t.action.transpose();
      b.next_states.row(r) = t.next_state.transpose();
      b.rewards(r) = t.learned_reward;
      b.not_terminal(r) = t.terminal ? 0.0 : 1.0;
    }
    return b;
  }

  Matrix all_states() const {
    Matrix m(static_cast<Eigen::Index>(size()), state_dim_);
    for (std::size_t i = 0; i < size(); ++i) m.row(static_cast<Eigen::Index>(i)) = (*this)[i].state.transpose();
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["format"] = "pbrl.replay_buffer";
    j["version"] = nn::kCheckpointVersion;
    j["capacity"] = capacity_;
    j["state_dim"] = state_dim_;
    j["action_dim"] = action_dim_;
    j["insertions"] = insertions_;
    j["transitions"] = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) {
      const Transition& t = (*this)[i];
      j["transitions"].push_back({{"s", std::vector<double>(t.state.data(), t.state.data() + t.state.size())},
                                  {"a", std::vector<double>(t.action.data(), t.action.data() + t.action.size())},
                                  {"s_next", std::vector<double>(t.next_state.data(),
                                                                 t.next_state.data() + t.next_state.size())},
                                  {"r_hat", t.learned_reward},
                                  {"r", t.ground_truth_reward_},
                                  {"done", t.done},
                                  {"terminal", t.terminal},
                                  {"episode", t.episode},
                                  {"step", t.step}});
    }
    return j;
  }

  static ReplayBuffer from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "pbrl.replay_buffer") throw ConfigError("checkpoint: not a replay_buffer record");
    if (j.value("version", 0) != nn::kCheckpointVersion) throw ConfigError("checkpoint: unsupported version");
    ReplayBuffer b(j.at("capacity").get<std::size_t>(), j.at("state_dim").get<Eigen::Index>(),
                   j.at("action_dim").get<Eigen::Index>());
    auto vec = [](const nlohmann::json& a) {
      auto v = a.get<std::vector<double>>();
      return Vector(Eigen::Map<Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    for (const auto& tj : j.at("transitions")) {
      Transition t(vec(tj.at("s")), vec(tj.at("a")), vec(tj.at("s_next")), tj.at("r").get<double>(),
                   tj.at("done").get<bool>(), tj.at("episode").get<long>(), tj.at("step").get<int>(),
                   tj.at("terminal").get<bool>());
      t.learned_reward = tj.at("r_hat").get<double>();
      b.push(std::move(t));
    }
    b.insertions_ = j.at("insertions").get<long>();
    return b;
  }

 private:
  std::size_t physical(std::size_t i) const {
    if (i >= data_.size()) throw std::out_of_range("ReplayBuffer index out of range");
    return data_.size() < capacity_ ? i : (head_ + i) % capacity_;
  }

  std::size_t capacity_;
  Eigen::Index state_dim_;
  Eigen::Index action_dim_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;
  long insertions_ = 0;
};

// N independent pairs of uniformly chosen length-l windows. Returns nullopt
// when no episode in the buffer holds a full window.
inline std::optional<std::vector<SegmentPair>> sample_segment_pairs(const ReplayBuffer& buffer, int count,
                                                                    int length, Rng& rng) {
  const auto starts = buffer.window_starts(length);
  if (starts.empty()) return std::nullopt;
  std::vector<SegmentPair> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    const std::size_t a = starts[rng.index(starts.size())];
    const std::size_t b = starts[rng.index(starts.size())];
    out.emplace_back(buffer.segment(a, length), buffer.segment(b, length));
  }
  return out;
}

// Uniform sample of `count` distinct logical indices (Floyd's algorithm),
// returned in random order.
inline std::vector<std::size_t> sample_indices(std::size_t size, std::size_t count, Rng& rng) {
  if (count > size) throw ShapeError("sample_indices: batch larger than buffer");
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t j = size - count; j < size; ++j) {
    const std::size_t t = rng.index(j + 1);
    if (chosen.insert(t).second) {
      out.push_back(t);
    } else {
      chosen.insert(j);
      out.push_back(j);
    }
  }
  rng.shuffle(out.begin(), out.end());
  return out;
}

inline std::vector<std::size_t> sample_transitions(const ReplayBuffer& buffer, std::size_t batch, Rng& rng) {
  return sample_indices(buffer.size(), batch, rng);
}

// Any reward model exposing the ensemble-mean prediction for one (s, a).
template <typename M>
concept MeanRewardPredictor = requires(const M& m, const Vector& s, const Vector& a) {
  { m.predict_mean(s, a) } -> std::convertible_to<double>;
};

// Rewrites every stored learned reward with the model's prediction; the
// remaining transition fields are untouched.
template <MeanRewardPredictor M>
void relabel(ReplayBuffer& buffer, const M& model) {
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    const Transition& t = buffer[i];
    buffer.set_learned_reward(i, model.predict_mean(t.state, t.action));
  }
}

}  // namespace pbrl
