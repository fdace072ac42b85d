#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace pbrl;
using namespace pbrl::query;

namespace {

RewardEnsemble small_ensemble(std::size_t members, Rng& rng) {
  RewardNetConfig net;
  net.state_embed = 4;
  net.action_embed = 2;
  net.hidden = 8;
  net.layers = 2;
  return RewardEnsemble(3, 2, {static_cast<int>(members), net, 3e-4}, rng);
}

ReplayBuffer random_buffer(Rng& rng) {
  ReplayBuffer b(2000, 3, 2);
  test::fill_buffer(b, 10, 50, rng);
  return b;
}

// Three well-separated blobs of 10 points each in 2-D.
Matrix three_blobs(Rng& rng) {
  Matrix p(30, 2);
  const double cx[] = {0.0, 10.0, 0.0}, cy[] = {0.0, 0.0, 10.0};
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) {
      p(c * 10 + i, 0) = cx[c] + 0.3 * rng.normal();
      p(c * 10 + i, 1) = cy[c] + 0.3 * rng.normal();
    }
  return p;
}

}  // namespace

TEST(TopM, MatchesSortOracleWithStableTies) {
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    std::vector<double> s(40);
    for (double& x : s) x = std::round(rng.uniform(0, 8));  // many ties
    const std::size_t m = 1 + rng.index(40);
    std::vector<std::pair<double, std::size_t>> oracle;
    for (std::size_t i = 0; i < s.size(); ++i) oracle.push_back({-s[i], i});
    std::sort(oracle.begin(), oracle.end());
    const auto got = top_m(s, m);
    ASSERT_EQ(got.size(), m);
    for (std::size_t i = 0; i < m; ++i) EXPECT_EQ(got[i], oracle[i].second);
  }
  EXPECT_THROW(top_m({1.0, 2.0}, 3), ConfigError);
}

TEST(KMeans, RecoversSeparatedClustersAndInertiaNeverRises) {
  Rng rng(2);
  const Matrix p = three_blobs(rng);
  const auto km = kmeans(p, 3, 10, rng);
  for (int c = 0; c < 3; ++c)
    for (int i = 1; i < 10; ++i) EXPECT_EQ(km.assignment[c * 10 + i], km.assignment[c * 10]);
  EXPECT_EQ(std::set<std::size_t>(km.assignment.begin(), km.assignment.end()).size(), 3u);
  for (std::size_t i = 1; i < km.inertia_trace.size(); ++i)
    EXPECT_LE(km.inertia_trace[i], km.inertia_trace[i - 1] + 1e-9);
  EXPECT_THROW(kmeans(p, 31, 5, rng), ConfigError);
  EXPECT_THROW(kmeans(p, 0, 5, rng), ConfigError);
}

TEST(KMeans, IdenticalPointsDoNotBreakSeeding) {
  Rng rng(3);
  const auto km = kmeans(Matrix::Ones(6, 2), 3, 5, rng);
  EXPECT_EQ(km.inertia_trace.back(), 0.0);
}

TEST(Coverage, FeaturesAreTimeMeansOfBothSegments) {
  Rng rng(4);
  const Segment a = test::random_segment(5, 3, 2, rng), b = test::random_segment(5, 3, 2, rng);
  const std::vector<SegmentPair> pairs{{a, b}};
  const Matrix f = coverage_features(pairs, {0});
  ASSERT_EQ(f.cols(), 10);
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(f(0, c), a.states.col(c).sum() / 5.0, 1e-14);
    EXPECT_NEAR(f(0, 5 + c), b.states.col(c).sum() / 5.0, 1e-14);
  }
  for (int c = 0; c < 2; ++c) {
    EXPECT_NEAR(f(0, 3 + c), a.actions.col(c).sum() / 5.0, 1e-14);
    EXPECT_NEAR(f(0, 8 + c), b.actions.col(c).sum() / 5.0, 1e-14);
  }
}

TEST(Coverage, PicksOneDistinctCandidatePerCluster) {
  Rng rng(5);
  const Matrix p = three_blobs(rng);
  const auto chosen = coverage_select(p, 3, 10, rng);
  std::set<std::size_t> blobs;
  for (std::size_t i : chosen) blobs.insert(i / 10);
  EXPECT_EQ(blobs.size(), 3u);
  // k = n: every candidate exactly once.
  const auto all = coverage_select(p.topRows(6), 6, 5, rng);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 6u);
}

TEST(Disagreement, SelectsTheTopScoresOfTheReplayedPool) {
  Rng rng(6);
  const ReplayBuffer buffer = random_buffer(rng);
  const RewardEnsemble ens = small_ensemble(3, rng);
  QueryConfig cfg;
  cfg.m = 5;
  cfg.segment_length = 10;
  Rng pick(7), replay(7);
  const auto batch = select_queries(buffer, ens, cfg, pick);
  ASSERT_TRUE(batch);
  EXPECT_EQ(batch->pool_size, 50u);
  // Same seed regenerates the candidate pool; score it independently.
  const auto pool = *sample_segment_pairs(buffer, 50, 10, replay);
  std::vector<double> oracle;
  for (const auto& [x, y] : pool) {
    double p[3], mean = 0.0;
    for (int e = 0; e < 3; ++e) {
      const double d = segment_return(ens.member(e), x) - segment_return(ens.member(e), y);
      p[e] = 1.0 / (1.0 + std::exp(-d));
      mean += p[e] / 3.0;
    }
    double var = 0.0;
    for (double v : p) var += (v - mean) * (v - mean) / 3.0;
    oracle.push_back(var);
  }
  std::vector<double> sorted = oracle;
  std::sort(sorted.rbegin(), sorted.rend());
  ASSERT_EQ(batch->scores.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(batch->scores[i], sorted[i], 1e-12);
    EXPECT_NEAR(oracle[batch->candidate_indices[i]], batch->scores[i], 1e-12);
    EXPECT_EQ(batch->pairs[i].first.states, pool[batch->candidate_indices[i]].first.states);
  }
}

TEST(Disagreement, NeedsTwoMembers) {
  Rng rng(8);
  const ReplayBuffer buffer = random_buffer(rng);
  const RewardEnsemble ens = small_ensemble(1, rng);
  QueryConfig cfg;
  cfg.m = 2;
  cfg.segment_length = 10;
  EXPECT_THROW(select_queries(buffer, ens, cfg, rng), ConfigError);
}

TEST(Entropy, MemberZeroOptionUsesFirstMemberOnly) {
  Rng rng(9);
  const RewardEnsemble ens = small_ensemble(3, rng);
  std::vector<SegmentPair> pairs;
  for (int i = 0; i < 6; ++i) pairs.push_back({test::random_segment(5, 3, 2, rng), test::random_segment(5, 3, 2, rng)});
  const auto s0 = entropy_scores(ens, pairs, true);
  const auto sm = entropy_scores(ens, pairs, false);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double p0 = preference_probability(ens.member(0), pairs[k].first, pairs[k].second);
    EXPECT_NEAR(s0[k], binary_entropy(p0), 1e-12);
    double mean = 0.0;
    for (int e = 0; e < 3; ++e) mean += preference_probability(ens.member(e), pairs[k].first, pairs[k].second) / 3.0;
    EXPECT_NEAR(sm[k], binary_entropy(mean), 1e-12);
    EXPECT_LE(sm[k], std::log(2.0) + 1e-15);
  }
}

TEST(Hybrid, ChoosesFromTheShortlist) {
  Rng rng(10);
  const ReplayBuffer buffer = random_buffer(rng);
  const RewardEnsemble ens = small_ensemble(3, rng);
  QueryConfig cfg;
  cfg.strategy = Strategy::disagreement_coverage;
  cfg.m = 4;
  cfg.segment_length = 10;
  Rng pick(11), replay(11);
  const auto batch = select_queries(buffer, ens, cfg, pick);
  ASSERT_TRUE(batch);
  EXPECT_EQ(batch->intermediate_size, 20u);
  const auto pool = *sample_segment_pairs(buffer, 40, 10, replay);
  const auto shortlist = top_m(disagreement_scores(ens, pool), 20);
  const std::set<std::size_t> allowed(shortlist.begin(), shortlist.end());
  std::set<std::size_t> seen;
  for (std::size_t i : batch->candidate_indices) {
    EXPECT_TRUE(allowed.count(i));
    EXPECT_TRUE(seen.insert(i).second);
  }
}

TEST(Uniform, PoolIsMAndScoresAreEmpty) {
  Rng rng(12);
  const ReplayBuffer buffer = random_buffer(rng);
  const RewardEnsemble ens = small_ensemble(1, rng);
  QueryConfig cfg;
  cfg.strategy = Strategy::uniform;
  cfg.m = 7;
  cfg.segment_length = 10;
  const auto batch = select_queries(buffer, ens, cfg, rng);
  ASSERT_TRUE(batch);
  EXPECT_EQ(batch->pairs.size(), 7u);
  EXPECT_EQ(batch->pool_size, 7u);
  EXPECT_TRUE(batch->scores.empty());
}

TEST(SelectQueries, ShortBufferAndZeroBudget) {
  Rng rng(13);
  ReplayBuffer buffer(100, 3, 2);
  test::fill_buffer(buffer, 2, 8, rng);
  const RewardEnsemble ens = small_ensemble(3, rng);
  QueryConfig cfg;
  cfg.m = 2;
  cfg.segment_length = 10;
  EXPECT_FALSE(select_queries(buffer, ens, cfg, rng));
  cfg.m = 0;
  EXPECT_TRUE(select_queries(buffer, ens, cfg, rng)->pairs.empty());
  cfg.m = 5;
  cfg.n = 3;
  cfg.segment_length = 5;
  EXPECT_THROW(select_queries(buffer, ens, cfg, rng), ConfigError);
  for (Strategy s : {Strategy::uniform, Strategy::entropy, Strategy::disagreement, Strategy::coverage,
                     Strategy::entropy_coverage, Strategy::disagreement_coverage})
    EXPECT_EQ(strategy_from_string(to_string(s)), s);
  EXPECT_THROW(strategy_from_string("random"), ConfigError);
}
