#include <gtest/gtest.h>

#include "support.hpp"

using namespace pbrl;
using namespace pbrl::env;

namespace {

Vector action2(double x, double y) {
  Vector a(2);
  a << x, y;
  return a;
}

}  // namespace

TEST(PointMass, ResetIsDeterministicPerSeed) {
  PointMass2D a, b;
  EXPECT_EQ(a.reset(7).observation, b.reset(7).observation);
  EXPECT_NE(a.reset(7).observation, b.reset(8).observation);
  EXPECT_EQ(a.reset(7).step, 0);
  EXPECT_FALSE(a.state().done);
}

TEST(PointMass, StartsCoverTheStartRegion) {
  PointMass2D env;
  double lo = 1e9, hi = -1e9;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const Vector o = env.reset(s).observation;
    for (int i = 0; i < 2; ++i) {
      lo = std::min(lo, o(i));
      hi = std::max(hi, o(i));
      EXPECT_LE(std::abs(o(4 + i)), env.params().goal_region);
    }
  }
  EXPECT_GE(lo, -env.params().start_region);
  EXPECT_LE(hi, env.params().start_region);
  // 1000 uniform draws reach within 5% of both edges.
  EXPECT_LT(lo, -0.95 * env.params().start_region);
  EXPECT_GT(hi, 0.95 * env.params().start_region);
}

TEST(PointMass, RewardIsNegativeDistance) {
  PointMass2D env;
  env.reset(0);
  env.set_state({0.3, -0.2}, {0.0, 0.0}, {0.3, -0.2});
  EXPECT_DOUBLE_EQ(env.step(action2(0, 0)).reward, 0.0);
  env.reset(0);
  env.set_state({1.0, 0.5}, {0.0, 0.0}, {0.0, 0.5});
  EXPECT_DOUBLE_EQ(env.step(action2(0.4, -0.7)).reward, -1.0);
}

TEST(PointMass, RewardIsTranslationInvariant) {
  PointMass2D env;
  Rng rng(3);
  for (int k = 0; k < 100; ++k) {
    const double px = rng.uniform(-1, 1), py = rng.uniform(-1, 1), gx = rng.uniform(-1, 1), gy = rng.uniform(-1, 1);
    const double dx = rng.uniform(-0.5, 0.5), dy = rng.uniform(-0.5, 0.5);
    env.set_state({px, py}, {0, 0}, {gx, gy});
    const double r1 = env.ground_truth_reward();
    env.set_state({px + dx, py + dy}, {0, 0}, {gx + dx, gy + dy});
    EXPECT_NEAR(env.ground_truth_reward(), r1, 1e-12);
    EXPECT_LE(r1, 0.0);
    EXPECT_GT(r1, -env.spec().reward_bound);
  }
}

TEST(PointMass, ProportionalControllerReachesGoal) {
  PointMass2D env;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    env.reset(seed);
    bool reached = false;
    while (!env.state().done) {
      const auto p = env.position(), v = env.velocity(), g = env.goal();
      env.step(action2(4.0 * (g[0] - p[0]) - 1.5 * v[0], 4.0 * (g[1] - p[1]) - 1.5 * v[1]));
      if (env.goal_distance() < 0.05) reached = true;
    }
    EXPECT_TRUE(reached) << "seed " << seed;
  }
}

TEST(PointMass, HorizonAndProtocol) {
  PointMass2D env;
  env.reset(1);
  for (int t = 0; t < 100; ++t) {
    EXPECT_FALSE(env.state().done);
    EXPECT_EQ(env.state().step, t);
    env.step(action2(0.1, 0.1));
  }
  EXPECT_TRUE(env.state().done);
  EXPECT_THROW(env.step(action2(0, 0)), ProtocolError);
  env.reset(1);
  EXPECT_THROW(env.step(Vector::Zero(3)), ShapeError);
}

TEST(PointMass, ClipsAndFlagsActions) {
  PointMass2D a, b;
  a.reset(4);
  b.reset(4);
  const auto ra = a.step(action2(5.0, -3.0));
  const auto rb = b.step(action2(1.0, -1.0));
  EXPECT_TRUE(ra.action_clipped);
  EXPECT_FALSE(rb.action_clipped);
  EXPECT_EQ(ra.state.observation, rb.state.observation);
}

TEST(PointMass, SeedAndActionsDetermineTrajectory) {
  Rng rng(5);
  std::vector<Vector> actions;
  for (int t = 0; t < 100; ++t) actions.push_back(action2(rng.uniform(-1, 1), rng.uniform(-1, 1)));
  PointMass2D a, b;
  a.reset(9);
  b.reset(9);
  for (const auto& act : actions) {
    const auto ra = a.step(act);
    const auto rb = b.step(act);
    EXPECT_EQ(ra.state.observation, rb.state.observation);
    EXPECT_EQ(ra.reward, rb.reward);
  }
}

TEST(StaticFeature, SuffixIsConstantAndAdjacentObservationsAreParallel) {
  StaticFeatureEnv env;
  Rng rng(6);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Vector prev = env.reset(seed).observation;
    const Vector suffix = prev.tail(env.context_dim());
    while (!env.state().done) {
      const Vector o = env.step(action2(rng.uniform(-1, 1), rng.uniform(-1, 1))).state.observation;
      EXPECT_EQ(o.tail(env.context_dim()), suffix);
      EXPECT_GT(nn::cosine_similarity(prev, o).value, 0.99);
      prev = o;
    }
  }
  EXPECT_EQ(env.spec().state_dim, 6 + 16);
}

TEST(StaticFeature, RewardMatchesWrappedPointMass) {
  StaticFeatureEnv s;
  PointMass2D p;
  s.reset(11);
  p.reset(11);
  for (int t = 0; t < 30; ++t) {
    const auto rs = s.step(action2(0.5, -0.2));
    const auto rp = p.step(action2(0.5, -0.2));
    EXPECT_EQ(rs.reward, rp.reward);
    EXPECT_EQ(rs.state.observation.head(6), rp.state.observation);
  }
}

TEST(Chain, RewardAndMoves) {
  ChainEnv env;
  env.reset(0);
  Vector right = Vector::Ones(1), left = -Vector::Ones(1);
  EXPECT_DOUBLE_EQ(env.step(right).reward, 0.0);
  EXPECT_DOUBLE_EQ(env.step(right).reward, 0.25);
  EXPECT_EQ(env.position(), 2);
  EXPECT_DOUBLE_EQ(env.step(left).reward, 0.5);
  EXPECT_EQ(env.state().observation.sum(), 1.0);
  EXPECT_EQ(env.state().observation(1), 1.0);
}

TEST(Factory, KnownIdsOnly) {
  EXPECT_EQ(make_environment("pointmass2d")->spec().state_dim, 6);
  EXPECT_EQ(make_environment("pointmass2d_static")->spec().state_dim, 22);
  EXPECT_EQ(make_environment("chain")->spec().action_dim, 1);
  EXPECT_THROW(make_environment("cheetah"), ConfigError);
}

TEST(RenderTrace, FramesFollowObservations) {
  PointMass2D env;
  Matrix obs(25, 6);
  obs.row(0) = env.reset(3).observation.transpose();
  for (int t = 1; t < 25; ++t) obs.row(t) = env.step(action2(0.7, 0.1)).state.observation.transpose();
  const RenderTrace trace = render_trace(env.spec(), obs);
  ASSERT_EQ(trace.frames.size(), 25u);
  for (int t = 0; t < 25; ++t) {
    EXPECT_EQ(trace.frames[t].position[0], obs(t, 0));
    EXPECT_EQ(trace.frames[t].position[1], obs(t, 1));
  }
  EXPECT_EQ(trace.goal[0], env.goal()[0]);

  const RenderTrace back = trace_from_json(nlohmann::json::parse(to_json(trace).dump()));
  ASSERT_EQ(back.frames.size(), trace.frames.size());
  for (std::size_t t = 0; t < trace.frames.size(); ++t) {
    EXPECT_NEAR(back.frames[t].position[0], trace.frames[t].position[0], 1e-9);
    EXPECT_NEAR(back.frames[t].position[1], trace.frames[t].position[1], 1e-9);
  }
  EXPECT_EQ(to_json(trace)["version"], kTraceVersion);
}

TEST(RenderTrace, NonRenderableEnvironmentIsUnsupported) {
  ChainEnv env;
  EXPECT_THROW(render_trace(env.spec(), Matrix::Zero(3, 5)), UnsupportedError);
}
