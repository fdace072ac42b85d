#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "support.hpp"

using namespace pbrl;

TEST(ConfigText, ParsesCommentsAndWhitespace) {
  const auto kv = parse_config_text("# header\n  group = reed # trailing\n\nbudget=100\n");
  ASSERT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv[0], (std::pair<std::string, std::string>{"group", "reed"}));
  EXPECT_EQ(kv[1].second, "100");
  EXPECT_THROW(parse_config_text("budget 100"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3"), ConfigError);
  EXPECT_THROW(parse_config_text("a = 1\na = 2"), ConfigError);
}

TEST(ConfigText, TypedValuesAreChecked) {
  EXPECT_THROW(config_from_map({{"budget", "ten"}}), ConfigError);
  EXPECT_THROW(config_from_map({{"budget", "-5"}}), ConfigError);
  EXPECT_THROW(config_from_map({{"reward_lr", "1e-3x"}}), ConfigError);
  EXPECT_THROW(config_from_map({{"reed_literal", "maybe"}}), ConfigError);
  EXPECT_THROW(config_from_map({{"teacher", "lazy"}}), ConfigError);
  EXPECT_THROW(config_from_map({{"wobble", "1"}}), ConfigError);
  EXPECT_EQ(config_from_map({{"reed_literal", "yes"}}).reed.literal_contrastive, true);
}

TEST(ConfigText, ResolvedTextRoundTrips) {
  RunConfig c = config_from_map({{"group", "reed_simsiam"},
                                 {"reward_net", "saf"},
                                 {"reed", "simsiam"},
                                 {"teacher", "noisy"},
                                 {"noisy_beta", "0.25"},
                                 {"strategy", "entropy_coverage"},
                                 {"budget", "100"},
                                 {"queries_per_session", "10"},
                                 {"seed", "7"}});
  const RunConfig back = config_from_map(parse_config_text(c.to_text()));
  EXPECT_EQ(back.to_pairs(), c.to_pairs());
  EXPECT_EQ(back.query.m, 10u);
  EXPECT_EQ(back.reed.objective, reed::Objective::simsiam);
  EXPECT_TRUE(back.reed_enabled);
  EXPECT_EQ(back.teacher.beta, 0.25);
}

TEST(ConfigText, HumanAndNoneSwitches) {
  const RunConfig h = config_from_map({{"teacher", "human"}});
  EXPECT_TRUE(h.human_teacher);
  EXPECT_EQ(config_from_map(parse_config_text(h.to_text())).human_teacher, true);
  EXPECT_FALSE(config_from_map({{"reed", "none"}}).reed_enabled);
}

TEST(RunConfigSchedule, SessionArithmetic) {
  RunConfig c;  // explore 9000, K 2000, budget 50, M 5
  EXPECT_EQ(c.sessions(), 10u);
  EXPECT_EQ(c.session_step(0), 9000);
  EXPECT_EQ(c.session_step(9), 27000);
  c.reward_source = RewardSource::ground_truth;
  EXPECT_EQ(c.explore_steps(), 0);
  c.budget = 0;
  EXPECT_EQ(c.sessions(), 0u);
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfigValidation, RejectsInconsistentSettings) {
  auto expect_invalid = [](ConfigMap kv) { EXPECT_THROW(config_from_map(kv).validate(), ConfigError) << kv[0].first; };
  EXPECT_NO_THROW(RunConfig{}.validate());
  expect_invalid({{"budget", "52"}});
  expect_invalid({{"total_steps", "20000"}});
  expect_invalid({{"reed", "contrastive"}});  // needs saf
  expect_invalid({{"ensemble_size", "1"}});   // disagreement
  expect_invalid({{"reward_source", "ground_truth"}, {"teacher", "human"}});
  expect_invalid({{"candidate_pool", "3"}});
  expect_invalid({{"reward_target_accuracy", "0"}});
  expect_invalid({{"skip_rate", "2"}});
  expect_invalid({{"reward_net", "saf"}, {"reed", "contrastive"}, {"reed_temperature", "0"}});
  EXPECT_NO_THROW(config_from_map({{"ensemble_size", "1"}, {"strategy", "uniform"}}).validate());
  EXPECT_NO_THROW(config_from_map({{"reward_net", "saf"}, {"reed", "contrastive"}}).validate());
}

TEST(Grid, CartesianProductWithLabels) {
  std::vector<std::uint64_t> seeds;
  const auto points = expand_grid(
      parse_config_text("group = g\nbudget = 50, 100\nreed = none, simsiam, contrastive\nseeds = 1, 2, 3\n"), seeds);
  EXPECT_EQ(seeds, (std::vector<std::uint64_t>{1, 2, 3}));
  ASSERT_EQ(points.size(), 6u);
  std::set<std::string> labels;
  for (const auto& p : points) {
    labels.insert(p.label);
    EXPECT_EQ(p.config.front(), (std::pair<std::string, std::string>{"group", "g"}));
    for (const auto& kv : p.config) EXPECT_NE(kv.first, "seeds");
  }
  EXPECT_EQ(labels.size(), 6u);
  EXPECT_TRUE(labels.count("budget=100_reed=simsiam"));
}

TEST(Grid, NoAxesGivesOnePointAndDefaultSeed) {
  std::vector<std::uint64_t> seeds{9};
  const auto points = expand_grid({{"budget", "50"}}, seeds);
  EXPECT_EQ(points.size(), 1u);
  EXPECT_EQ(points[0].label, "");
  EXPECT_EQ(seeds, std::vector<std::uint64_t>{0});
}

TEST(ConfigFile, MissingFileIsAConfigError) {
  EXPECT_THROW(read_config_file("/nonexistent/pbrl.cfg"), ConfigError);
}

TEST(ConfigFile, ShippedConfigsAndGridsValidate) {
  std::size_t seen = 0;
  for (const auto& entry : std::filesystem::directory_iterator(PBRL_SOURCE_DIR "/configs")) {
    const auto path = entry.path();
    if (path.extension() == ".cfg") {
      EXPECT_NO_THROW(config_from_map(read_config_file(path.string())).validate()) << path;
      ++seen;
    } else if (path.extension() == ".grid") {
      std::vector<std::uint64_t> seeds;
      for (const auto& point : expand_grid(read_config_file(path.string()), seeds))
        EXPECT_NO_THROW(config_from_map(point.config).validate()) << path << " " << point.label;
      ++seen;
    }
  }
  EXPECT_GE(seen, 10u);
}
