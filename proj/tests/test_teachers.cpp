#include <gtest/gtest.h>

#include "support.hpp"

using namespace pbrl;
using namespace pbrl::teachers;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SegmentPair pair_of(const Vector& a, const Vector& b) {
  return {test::segment_with_rewards(a), test::segment_with_rewards(b)};
}

// m untied pairs with distinct random returns; the first always wins iff flag.
std::vector<SegmentPair> untied_queries(std::size_t m, Rng& rng) {
  std::vector<SegmentPair> q;
  for (std::size_t i = 0; i < m; ++i) {
    const double x = rng.uniform(-5, 5);
    const double y = x + (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 2.0);
    q.push_back(pair_of(vec({x, 0.0}), vec({y, 0.0})));
  }
  return q;
}

Label oracle_of(const SegmentPair& p) {
  const double r1 = p.first.ground_truth_return(test::gt_key()), r2 = p.second.ground_truth_return(test::gt_key());
  return r1 > r2 ? Label::prefer_first : r2 > r1 ? Label::prefer_second : Label::equal;
}

TeacherConfig with(Style s) {
  TeacherConfig c;
  c.style = s;
  c.seed = 17;
  return c;
}

}  // namespace

TEST(Teacher, OracleFollowsReturns) {
  Rng rng(1);
  auto q = untied_queries(200, rng);
  q.push_back(pair_of(vec({1.0, 2.0}), vec({3.0, 0.0})));
  SimulatedTeacher t(with(Style::oracle));
  const auto labels = t.label_batch(q);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_EQ(labels[i], oracle_of(q[i]));
  EXPECT_EQ(labels.back(), Label::equal);
  EXPECT_EQ(t.audit().size(), q.size());
  EXPECT_EQ(t.audit()[0].return_first, q[0].first.ground_truth_return(test::gt_key()));
}

TEST(Teacher, TiesAreEqualForEveryStyleAndNeverPerturbed) {
  std::vector<SegmentPair> q(10, pair_of(vec({1.0, 1.0}), vec({0.5, 1.5})));
  ReturnStats stats(1000);
  stats.add(-50.0, 100);
  for (Style s : {Style::oracle, Style::skip, Style::myopic, Style::equal, Style::mistake, Style::noisy}) {
    TeacherConfig c = with(s);
    c.skip_rate = c.mistake_rate = 1.0;
    SimulatedTeacher t(c);
    for (Label l : t.label_batch(q, &stats)) EXPECT_EQ(l, Label::equal) << to_string(s);
    for (const auto& d : t.audit()) EXPECT_FALSE(d.perturbed);
  }
}

TEST(Teacher, SkipDiscardsExactlyRoundedRate) {
  Rng rng(2);
  for (const auto& [m, expected] : std::vector<std::pair<std::size_t, std::size_t>>{{10, 1}, {4, 0}, {5, 1}, {128, 13}}) {
    const auto q = untied_queries(m, rng);
    SimulatedTeacher t(with(Style::skip));
    const auto labels = t.label_batch(q);
    std::size_t discards = 0;
    for (std::size_t i = 0; i < m; ++i) {
      if (labels[i] == Label::discard) {
        ++discards;
        EXPECT_TRUE(t.audit()[i].perturbed);
      } else {
        EXPECT_EQ(labels[i], oracle_of(q[i]));
      }
    }
    EXPECT_EQ(discards, expected) << "m=" << m;
  }
}

TEST(Teacher, MistakeFlipsExactlyRoundedRate) {
  Rng rng(3);
  const auto q = untied_queries(100, rng);
  SimulatedTeacher t(with(Style::mistake));
  const auto labels = t.label_batch(q);
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const bool wrong = labels[i] != oracle_of(q[i]);
    EXPECT_EQ(wrong, t.audit()[i].perturbed);
    flipped += wrong;
  }
  EXPECT_EQ(flipped, 10u);
}

TEST(Teacher, PerturbedSubsetVariesAcrossBatchesButIsSeeded) {
  Rng rng(4);
  const auto q = untied_queries(50, rng);
  SimulatedTeacher a(with(Style::mistake)), b(with(Style::mistake));
  const auto first = a.label_batch(q);
  EXPECT_EQ(first, b.label_batch(q));
  bool differs = false;
  for (int k = 0; k < 5 && !differs; ++k) differs = a.label_batch(q) != first;
  EXPECT_TRUE(differs);
}

TEST(Teacher, MyopicWeightsLateSteps) {
  // Oracle prefers the first (1.0 > 0.95); γ-weighted: 0.9·1.0 < 0.95.
  const std::vector<SegmentPair> q{pair_of(vec({1.0, 0.0}), vec({0.0, 0.95}))};
  EXPECT_EQ(SimulatedTeacher(with(Style::oracle)).label_batch(q)[0], Label::prefer_first);
  EXPECT_EQ(SimulatedTeacher(with(Style::myopic)).label_batch(q)[0], Label::prefer_second);
  TeacherConfig early = with(Style::myopic);
  early.myopic_weight_late = false;
  EXPECT_EQ(SimulatedTeacher(early).label_batch(q)[0], Label::prefer_first);
  TeacherConfig flat = with(Style::myopic);
  flat.gamma = 1.0;
  EXPECT_EQ(SimulatedTeacher(flat).label_batch(q)[0], Label::prefer_first);
}

TEST(Teacher, MyopicMatchesBruteForceWeights) {
  Rng rng(5);
  TeacherConfig c = with(Style::myopic);
  c.gamma = 0.7;
  SimulatedTeacher t(c);
  for (int k = 0; k < 200; ++k) {
    Vector a(6), b(6);
    for (int i = 0; i < 6; ++i) {
      a(i) = rng.normal();
      b(i) = rng.normal();
    }
    double wa = 0, wb = 0;
    for (int i = 0; i < 6; ++i) {
      wa += std::pow(0.7, 5 - i) * a(i);
      wb += std::pow(0.7, 5 - i) * b(i);
    }
    EXPECT_EQ(t.label_batch({pair_of(a, b)})[0], wa > wb ? Label::prefer_first : Label::prefer_second);
  }
}

TEST(Teacher, EqualUsesFractionOfMeanAbsoluteReturn) {
  ReturnStats stats(1000);
  stats.add(-100.0, 100);  // threshold 0.005·100 = 0.5
  SimulatedTeacher t(with(Style::equal));
  const std::vector<SegmentPair> q{pair_of(vec({1.0, 0.0}), vec({0.6, 0.0})),
                                   pair_of(vec({1.0, 0.0}), vec({0.4, 0.0})),
                                   pair_of(vec({0.4, 0.0}), vec({1.0, 0.0}))};
  const auto labels = t.label_batch(q, &stats);
  EXPECT_EQ(labels[0], Label::equal);
  EXPECT_EQ(labels[1], Label::prefer_first);
  EXPECT_EQ(labels[2], Label::prefer_second);
  EXPECT_THROW(t.label_batch(q), ConfigError);
}

TEST(Teacher, NoisyFrequencyMatchesBradleyTerry) {
  TeacherConfig c = with(Style::noisy);
  c.beta = 2.0;
  SimulatedTeacher t(c);
  // Per-step returns 0.5 and 0.25: P(first) = logistic(2·0.25).
  const std::vector<SegmentPair> q(4000, pair_of(vec({1.0, 0.0}), vec({0.5, 0.0})));
  const auto labels = t.label_batch(q);
  const double p = 1.0 / (1.0 + std::exp(-0.5));
  const double freq = std::count(labels.begin(), labels.end(), Label::prefer_first) / 4000.0;
  EXPECT_NEAR(freq, p, 4.0 * std::sqrt(p * (1 - p) / 4000.0));
  for (Label l : labels) EXPECT_NE(l, Label::equal);
}

TEST(Teacher, ValidationAndNames) {
  for (Style s : {Style::oracle, Style::skip, Style::myopic, Style::equal, Style::mistake, Style::noisy})
    EXPECT_EQ(style_from_string(to_string(s)), s);
  EXPECT_THROW(style_from_string("lazy"), ConfigError);
  TeacherConfig c;
  c.skip_rate = 1.5;
  EXPECT_THROW(SimulatedTeacher{c}, ConfigError);
  c = {};
  c.gamma = 0.0;
  EXPECT_THROW(SimulatedTeacher{c}, ConfigError);
  c = {};
  c.beta = 0.0;
  EXPECT_THROW(SimulatedTeacher{c}, ConfigError);
  EXPECT_THROW(to_distribution(Label::discard), ProtocolError);
  EXPECT_EQ(to_distribution(Label::equal).first, 0.5);
}

TEST(ReturnStats, KeepsEpisodesInsideTheStepWindow) {
  ReturnStats s(250);
  EXPECT_THROW(s.mean(), StateError);
  s.add(-10, 100);
  s.add(-20, 100);
  EXPECT_DOUBLE_EQ(s.mean(), -15.0);
  s.add(-30, 100);  // 300 steps; oldest would leave 200 < 250, keep
  EXPECT_EQ(s.episodes(), 3u);
  s.add(-40, 100);  // drop oldest: 300 remain
  EXPECT_EQ(s.episodes(), 3u);
  EXPECT_DOUBLE_EQ(s.mean(), -30.0);
  ReturnStats one(50);
  one.add(-5, 100);
  one.add(-7, 100);
  EXPECT_EQ(one.episodes(), 1u);
  EXPECT_DOUBLE_EQ(one.mean(), -7.0);
  EXPECT_THROW(ReturnStats(0), ConfigError);
  EXPECT_THROW(s.add(0.0, 0), ShapeError);
}
