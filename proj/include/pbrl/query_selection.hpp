#pragma once

// Choosing which segment pairs to show a teacher.

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "pbrl/core.hpp"
#include "pbrl/replay.hpp"
#include "pbrl/reward_model.hpp"

namespace pbrl::query {

enum class Strategy { uniform, entropy, disagreement, coverage, entropy_coverage, disagreement_coverage };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::uniform: return "uniform";
    case Strategy::entropy: return "entropy";
    case Strategy::disagreement: return "disagreement";
    case Strategy::coverage: return "coverage";
    case Strategy::entropy_coverage: return "entropy_coverage";
    case Strategy::disagreement_coverage: return "disagreement_coverage";
  }
  return "uniform";
}

inline Strategy strategy_from_string(const std::string& s) {
  for (Strategy st : {Strategy::uniform, Strategy::entropy, Strategy::disagreement, Strategy::coverage,
                      Strategy::entropy_coverage, Strategy::disagreement_coverage})
    if (to_string(st) == s) return st;
  throw ConfigError("unknown query selection strategy: " + s);
}

struct QueryConfig {
  Strategy strategy = Strategy::disagreement;
  std::size_t m = 10;
  std::size_t n = 0;        // candidate pool; 0 means 10·M
  std::size_t m_prime = 0;  // hybrid intermediate size; 0 means 5·M
  int segment_length = 25;
  bool entropy_member_zero = false;
  int kmeans_iterations = 25;

  std::size_t pool() const { return n ? n : 10 * m; }
  std::size_t intermediate() const { return m_prime ? m_prime : 5 * m; }
};

struct QueryBatch {
  std::vector<SegmentPair> pairs;
  std::vector<std::size_t> candidate_indices;  // into the N-candidate pool
  std::vector<double> scores;                  // per selected pair; empty for uniform/coverage
  Strategy strategy = Strategy::uniform;
  std::size_t pool_size = 0;
  std::size_t intermediate_size = 0;
};

// Indices of the m largest scores; equal scores keep ascending index order.
inline std::vector<std::size_t> top_m(const std::vector<double>& scores, std::size_t m) {
  if (m > scores.size()) throw ConfigError("top_m: M exceeds the number of candidates");
  auto idx = iota_indices(scores.size());
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(m);
  return idx;
}

struct KMeansResult {
  std::vector<std::size_t> assignment;
  Matrix centroids;                   // k x d
  std::vector<double> inertia_trace;  // after each assignment step
};

namespace detail {

inline double squared_distance(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

inline double assign(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& assignment) {
  double inertia = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double d = squared_distance(points, i, centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(c);
      }
    }
    assignment[static_cast<std::size_t>(i)] = arg;
    inertia += best;
  }
  return inertia;
}

}  // namespace detail

// k-means++ seeding followed by Lloyd iterations; an emptied cluster is
// re-seeded at the point farthest from its current centroid.
inline KMeansResult kmeans(const Matrix& points, std::size_t k, int iterations, Rng& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  if (k == 0 || n < k) throw ConfigError("kmeans: need at least k points and k > 0");
  KMeansResult out;
  out.centroids.resize(static_cast<Eigen::Index>(k), points.cols());
  out.assignment.assign(n, 0);

  out.centroids.row(0) = points.row(static_cast<Eigen::Index>(rng.index(n)));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = detail::squared_distance(points, static_cast<Eigen::Index>(i), out.centroids, 0);
  for (std::size_t c = 1; c < k; ++c) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.index(n);
    } else {
      double u = rng.uniform(0.0, total);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (u < d2[i]) {
          pick = i;
          break;
        }
        u -= d2[i];
      }
    }
    out.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], detail::squared_distance(points, static_cast<Eigen::Index>(i), out.centroids,
                                                       static_cast<Eigen::Index>(c)));
  }

  for (int it = 0; it < std::max(1, iterations); ++it) {
    out.inertia_trace.push_back(detail::assign(points, out.centroids, out.assignment));
    Matrix sums = Matrix::Zero(out.centroids.rows(), points.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(static_cast<Eigen::Index>(out.assignment[i])) += points.row(static_cast<Eigen::Index>(i));
      ++counts[out.assignment[i]];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        out.centroids.row(static_cast<Eigen::Index>(c)) = sums.row(static_cast<Eigen::Index>(c)) / static_cast<double>(counts[c]);
        continue;
      }
      double far = -1.0;
      std::size_t arg = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = detail::squared_distance(points, static_cast<Eigen::Index>(i), out.centroids,
                                                  static_cast<Eigen::Index>(out.assignment[i]));
        if (d > far) {
          far = d;
          arg = i;
        }
      }
      out.centroids.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(arg));
    }
  }
  out.inertia_trace.push_back(detail::assign(points, out.centroids, out.assignment));
  return out;
}

// Per pair: time-mean of [s; a] for σ¹ followed by the same for σ².
inline Matrix coverage_features(const std::vector<SegmentPair>& pairs, const std::vector<std::size_t>& subset) {
  if (subset.empty()) return Matrix();
  const Segment& ref = pairs[subset.front()].first;
  const Eigen::Index w = ref.states.cols() + ref.actions.cols();
  Matrix f(static_cast<Eigen::Index>(subset.size()), 2 * w);
  for (std::size_t r = 0; r < subset.size(); ++r) {
    const SegmentPair& p = pairs[subset[r]];
    const auto row = static_cast<Eigen::Index>(r);
    f.row(row).segment(0, ref.states.cols()) = p.first.states.colwise().mean();
    f.row(row).segment(ref.states.cols(), ref.actions.cols()) = p.first.actions.colwise().mean();
    f.row(row).segment(w, ref.states.cols()) = p.second.states.colwise().mean();
    f.row(row).segment(w + ref.states.cols(), ref.actions.cols()) = p.second.actions.colwise().mean();
  }
  return f;
}

// k-means with k = m over the features; for each centroid the nearest
// not-yet-chosen candidate. Returns positions into `features`.
inline std::vector<std::size_t> coverage_select(const Matrix& features, std::size_t m, int iterations, Rng& rng) {
  const auto km = kmeans(features, m, iterations, rng);
  std::vector<bool> used(static_cast<std::size_t>(features.rows()), false);
  std::vector<std::size_t> out;
  for (Eigen::Index c = 0; c < km.centroids.rows(); ++c) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
      if (used[static_cast<std::size_t>(i)]) continue;
      const double d = detail::squared_distance(features, i, km.centroids, c);
      if (d < best) {
        best = d;
        arg = static_cast<std::size_t>(i);
      }
    }
    used[arg] = true;
    out.push_back(arg);
  }
  return out;
}

// Member preference probabilities for each pair: E x n.
inline Matrix pair_probabilities(const RewardEnsemble& ensemble, const std::vector<SegmentPair>& pairs) {
  std::vector<const Segment*> segs;
  segs.reserve(2 * pairs.size());
  for (const auto& p : pairs) segs.push_back(&p.first);
  for (const auto& p : pairs) segs.push_back(&p.second);
  const Matrix r = ensemble.segment_returns(segs);
  const auto n = static_cast<Eigen::Index>(pairs.size());
  Matrix prob(r.rows(), n);
  for (Eigen::Index e = 0; e < r.rows(); ++e)
    for (Eigen::Index k = 0; k < n; ++k) prob(e, k) = bradley_terry(r(e, k), r(e, n + k));
  return prob;
}

inline std::vector<double> disagreement_scores(const RewardEnsemble& ensemble, const std::vector<SegmentPair>& pairs) {
  if (ensemble.size() < 2) throw ConfigError("disagreement sampling requires at least two ensemble members");
  const Matrix prob = pair_probabilities(ensemble, pairs);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (Eigen::Index k = 0; k < prob.cols(); ++k) {
    std::vector<double> col(prob.col(k).data(), prob.col(k).data() + prob.rows());
    out.push_back(population_variance(col));
  }
  return out;
}

inline std::vector<double> entropy_scores(const RewardEnsemble& ensemble, const std::vector<SegmentPair>& pairs,
                                          bool member_zero_only = false) {
  const Matrix prob = pair_probabilities(ensemble, pairs);
  std::vector<double> out;
  out.reserve(pairs.size());
  for (Eigen::Index k = 0; k < prob.cols(); ++k)
    out.push_back(binary_entropy(member_zero_only ? prob(0, k) : prob.col(k).mean()));
  return out;
}

// Returns nullopt when the buffer has no full-length window.
inline std::optional<QueryBatch> select_queries(const ReplayBuffer& buffer, const RewardEnsemble& ensemble,
                                                const QueryConfig& config, Rng& rng) {
  const std::size_t m = config.m;
  QueryBatch out;
  out.strategy = config.strategy;
  if (m == 0) return out;
  if (config.strategy == Strategy::uniform) {
    auto pairs = sample_segment_pairs(buffer, static_cast<int>(m), config.segment_length, rng);
    if (!pairs) return std::nullopt;
    out.pairs = std::move(*pairs);
    out.candidate_indices = iota_indices(m);
    out.pool_size = m;
    return out;
  }
  const std::size_t n = config.pool();
  if (m > n) throw ConfigError("select_queries: M exceeds the candidate pool N");
  auto cand = sample_segment_pairs(buffer, static_cast<int>(n), config.segment_length, rng);
  if (!cand) return std::nullopt;
  out.pool_size = n;

  std::vector<double> scores;
  if (config.strategy == Strategy::entropy || config.strategy == Strategy::entropy_coverage)
    scores = entropy_scores(ensemble, *cand, config.entropy_member_zero);
  else if (config.strategy == Strategy::disagreement || config.strategy == Strategy::disagreement_coverage)
    scores = disagreement_scores(ensemble, *cand);

  std::vector<std::size_t> chosen;
  switch (config.strategy) {
    case Strategy::entropy:
    case Strategy::disagreement:
      chosen = top_m(scores, m);
      break;
    case Strategy::coverage:
      chosen = coverage_select(coverage_features(*cand, iota_indices(n)), m, config.kmeans_iterations, rng);
      break;
    default: {
      const std::size_t mp = std::min(n, std::max(m, config.intermediate()));
      out.intermediate_size = mp;
      const auto shortlist = top_m(scores, mp);
      for (std::size_t pos : coverage_select(coverage_features(*cand, shortlist), m, config.kmeans_iterations, rng))
        chosen.push_back(shortlist[pos]);
    }
  }
  for (std::size_t i : chosen) {
    out.pairs.push_back((*cand)[i]);
    out.candidate_indices.push_back(i);
    if (!scores.empty()) out.scores.push_back(scores[i]);
  }
  return out;
}

}  // namespace pbrl::query
