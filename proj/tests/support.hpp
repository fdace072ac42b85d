#pragma once

#include <functional>

#include "pbrl/pbrl.hpp"

namespace pbrl {

struct GroundTruthTestAccess {
  static GroundTruthKey key() { return GroundTruthKey(); }
};

}  // namespace pbrl

namespace pbrl::test {

inline GroundTruthKey gt_key() { return GroundTruthTestAccess::key(); }

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline Segment random_segment(int length, Eigen::Index d_s, Eigen::Index d_a, Rng& rng) {
  Vector gt(length);
  for (int t = 0; t < length; ++t) gt(t) = rng.normal();
  return Segment(random_matrix(length, d_s, rng), random_matrix(length, d_a, rng), gt, gt_key());
}

// Segment whose per-step ground-truth rewards are given explicitly.
inline Segment segment_with_rewards(const Vector& rewards, Eigen::Index d_s = 2, Eigen::Index d_a = 1) {
  const auto l = rewards.size();
  return Segment(Matrix::Zero(l, d_s), Matrix::Zero(l, d_a), rewards, gt_key());
}

// Episodes of fixed length with random states; ground truth = first state coordinate.
inline void fill_buffer(ReplayBuffer& buffer, int episodes, int length, Rng& rng, long first_episode = 0) {
  for (int e = 0; e < episodes; ++e) {
    for (int t = 0; t < length; ++t) {
      Vector s = random_matrix(buffer.state_dim(), 1, rng);
      Vector a = random_matrix(buffer.action_dim(), 1, rng);
      Vector s2 = random_matrix(buffer.state_dim(), 1, rng);
      buffer.push(Transition(s, a, s2, s(0), t == length - 1, first_episode + e, t));
    }
  }
}

// Central finite difference of a scalar function of a matrix.
inline Matrix numeric_gradient(Matrix& x, const std::function<double()>& f, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f();
    x.data()[i] = keep - h;
    const double down = f();
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

}  // namespace pbrl::test
