#pragma once

// Simulated labelling strategies over ground-truth segment returns.

#include <cmath>
#include <deque>
#include <numeric>
#include <string>
#include <vector>

#include "pbrl/core.hpp"
#include "pbrl/replay.hpp"
#include "pbrl/reward_model.hpp"

namespace pbrl::teachers {

enum class Style { oracle, skip, myopic, equal, mistake, noisy };

inline std::string to_string(Style s) {
  switch (s) {
    case Style::oracle: return "oracle";
    case Style::skip: return "skip";
    case Style::myopic: return "myopic";
    case Style::equal: return "equal";
    case Style::mistake: return "mistake";
    case Style::noisy: return "noisy";
  }
  return "oracle";
}

inline Style style_from_string(const std::string& s) {
  for (Style st : {Style::oracle, Style::skip, Style::myopic, Style::equal, Style::mistake, Style::noisy})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown teacher style: " + s);
}

enum class Label { prefer_first, prefer_second, equal, discard };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::prefer_first: return "first";
    case Label::prefer_second: return "second";
    case Label::equal: return "equal";
    case Label::discard: return "discard";
  }
  return "discard";
}

// Discard has no distribution; callers drop it before building triplets.
inline PreferenceLabel to_distribution(Label l) {
  switch (l) {
    case Label::prefer_first: return PreferenceLabel::prefer_first();
    case Label::prefer_second: return PreferenceLabel::prefer_second();
    case Label::equal: return PreferenceLabel::equal();
    case Label::discard: break;
  }
  throw ProtocolError("a discarded query has no preference distribution");
}

struct TeacherConfig {
  Style style = Style::oracle;
  double gamma = 0.9;
  double skip_rate = 0.1;
  double mistake_rate = 0.1;
  double equal_fraction = 0.005;
  double beta = 1.0;
  // w_t = γ^(l−1−t) (late steps dominate); false gives w_t = γ^t.
  bool myopic_weight_late = true;
  // Noisy teacher compares returns divided by segment length.
  bool noisy_per_step = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (skip_rate < 0.0 || skip_rate > 1.0 || mistake_rate < 0.0 || mistake_rate > 1.0)
      throw ConfigError("teacher rates must lie in [0, 1]");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("myopic gamma must lie in (0, 1]");
    if (!(beta > 0.0)) throw ConfigError("noisy teacher beta must be positive");
    if (equal_fraction < 0.0) throw ConfigError("equal threshold fraction must be non-negative");
  }
};

// Ground-truth episode returns whose steps fall inside the last K policy steps.
class ReturnStats {
 public:
  explicit ReturnStats(long window_steps) : window_(window_steps) {
    if (window_steps <= 0) throw ConfigError("ReturnStats window must be positive");
  }

  void add(double episode_return, long episode_steps) {
    if (episode_steps <= 0) throw ShapeError("ReturnStats: episode length must be positive");
    episodes_.push_back({episode_return, episode_steps});
    steps_ += episode_steps;
    // The newest episode always stays.
    while (episodes_.size() > 1 && steps_ - episodes_.front().steps >= window_) {
      steps_ -= episodes_.front().steps;
      episodes_.pop_front();
    }
  }

  bool empty() const { return episodes_.empty(); }
  std::size_t episodes() const { return episodes_.size(); }
  long steps() const { return steps_; }
  long window() const { return window_; }

  // Mean per-episode return in the window.
  double mean() const {
    if (episodes_.empty()) throw StateError("ReturnStats: no episodes recorded");
    double s = 0.0;
    for (const auto& e : episodes_) s += e.ret;
    return s / static_cast<double>(episodes_.size());
  }

 private:
  struct Entry {
    double ret;
    long steps;
  };
  long window_;
  std::deque<Entry> episodes_;
  long steps_ = 0;
};

struct LabelDecision {
  Style style = Style::oracle;
  double return_first = 0.0;
  double return_second = 0.0;
  Label label = Label::discard;
  bool perturbed = false;
};

inline std::size_t perturbation_count(double rate, std::size_t m) {
  return static_cast<std::size_t>(std::max(0L, std::lround(rate * static_cast<double>(m))));
}

class SimulatedTeacher {
 public:
  explicit SimulatedTeacher(TeacherConfig config) : config_(config), rng_(config.seed) { config_.validate(); }

  const TeacherConfig& config() const { return config_; }

  std::vector<Label> label_batch(const std::vector<SegmentPair>& queries, const ReturnStats* stats = nullptr) {
    if (config_.style == Style::equal && stats == nullptr)
      throw ConfigError("equal teacher requires return statistics");
    const GroundTruthKey key;
    const std::size_t m = queries.size();
    std::vector<Label> labels(m);
    std::vector<bool> tied(m, false);
    audit_.assign(m, {});
    double threshold = 0.0;
    if (stats && config_.style == Style::equal) threshold = config_.equal_fraction * std::abs(stats->mean());

    for (std::size_t i = 0; i < m; ++i) {
      const Segment& a = queries[i].first;
      const Segment& b = queries[i].second;
      const double r1 = a.ground_truth_return(key);
      const double r2 = b.ground_truth_return(key);
      audit_[i] = {config_.style, r1, r2, Label::equal, false};
      if (r1 == r2) {
        tied[i] = true;
        labels[i] = Label::equal;
        continue;
      }
      switch (config_.style) {
        case Style::myopic: {
          const double w1 = weighted_return(a.ground_truth_rewards(key));
          const double w2 = weighted_return(b.ground_truth_rewards(key));
          labels[i] = compare(w1, w2);
          break;
        }
        case Style::equal:
          labels[i] = std::abs(r1 - r2) < threshold ? Label::equal : compare(r1, r2);
          break;
        case Style::noisy: {
          const double scale = config_.noisy_per_step ? 1.0 / static_cast<double>(std::max(1, a.length())) : 1.0;
          const double p = bradley_terry(config_.beta * r1 * scale, config_.beta * r2 * scale);
          labels[i] = rng_.bernoulli(p) ? Label::prefer_first : Label::prefer_second;
          break;
        }
        default:
          labels[i] = compare(r1, r2);
      }
    }

    if (config_.style == Style::skip || config_.style == Style::mistake) {
      const double rate = config_.style == Style::skip ? config_.skip_rate : config_.mistake_rate;
      auto order = iota_indices(m);
      rng_.shuffle(order.begin(), order.end());
      const std::size_t count = std::min(m, perturbation_count(rate, m));
      for (std::size_t k = 0; k < count; ++k) {
        const std::size_t i = order[k];
        if (tied[i]) continue;
        audit_[i].perturbed = true;
        if (config_.style == Style::skip) {
          labels[i] = Label::discard;
        } else if (labels[i] == Label::prefer_first) {
          labels[i] = Label::prefer_second;
        } else if (labels[i] == Label::prefer_second) {
          labels[i] = Label::prefer_first;
        }
      }
    }
    for (std::size_t i = 0; i < m; ++i) audit_[i].label = labels[i];
    return labels;
  }

  // Decisions of the most recent label_batch call.
  const std::vector<LabelDecision>& audit() const { return audit_; }

 private:
  static Label compare(double r1, double r2) {
    if (r1 > r2) return Label::prefer_first;
    if (r2 > r1) return Label::prefer_second;
    return Label::equal;
  }

  double weighted_return(const Vector& rewards) const {
    const auto l = rewards.size();
    double acc = 0.0;
    for (Eigen::Index t = 0; t < l; ++t) {
      const double exponent = config_.myopic_weight_late ? static_cast<double>(l - 1 - t) : static_cast<double>(t);
      acc += std::pow(config_.gamma, exponent) * rewards(t);
    }
    return acc;
  }

  TeacherConfig config_;
  Rng rng_;
  std::vector<LabelDecision> audit_;
};

}  // namespace pbrl::teachers
