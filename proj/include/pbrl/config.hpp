#pragma once

// Run configuration: a flat key=value schema shared by the CLI, sweep grids
// and the per-run resolved config written next to the outputs.
//
//   # comment
//   group = reed_contrastive
//   env = pointmass2d
//   budget = 50
//
// Unknown keys are rejected.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pbrl/agent.hpp"
#include "pbrl/core.hpp"
#include "pbrl/query_selection.hpp"
#include "pbrl/reed.hpp"
#include "pbrl/reward_model.hpp"
#include "pbrl/teachers.hpp"

namespace pbrl {

enum class RewardSource { learned, ground_truth };

struct RunConfig {
  std::string group = "pebble";
  std::string env_id = "pointmass2d";
  double goal_region = 1.0;
  long total_steps = 50000;
  long feedback_interval = 2000;  // K
  std::size_t budget = 50;
  std::size_t queries_per_session = 5;  // M
  int segment_length = 25;
  RewardSource reward_source = RewardSource::learned;

  // "human" routes queries to the labelling service instead of a simulated teacher.
  bool human_teacher = false;
  teachers::TeacherConfig teacher;
  query::QueryConfig query;

  RewardEnsembleConfig ensemble{3, {RewardNetVariant::concat}, 3e-4};
  int reward_max_epochs = 200;
  double reward_target_accuracy = 0.97;

  bool reed_enabled = false;
  reed::ReedConfig reed;
  bool reed_continue = false;  // keep REED updates going after the budget is spent

  agent::SacConfig sac{64, 2, 3e-4, 3e-4, 3e-4, 0.99, 5e-3, 0.1, 64};
  agent::IntrinsicConfig intrinsic;
  bool reset_critic_after_explore = true;

  std::size_t embedding_sample = 256;
  double human_timeout_seconds = 600.0;
  std::uint64_t seed = 0;

  std::size_t sessions() const {
    return budget == 0 ? 0 : budget / std::max<std::size_t>(1, queries_per_session);
  }

  long explore_steps() const { return reward_source == RewardSource::ground_truth ? 0 : intrinsic.pretrain_steps; }

  long session_step(std::size_t j) const { return explore_steps() + static_cast<long>(j) * feedback_interval; }

  void validate() const;
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_pairs()) os << k << " = " << v << "\n";
    return os.str();
  }
};

using ConfigMap = std::vector<std::pair<std::string, std::string>>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    for (auto& kv : out)
      if (kv.first == key) throw ConfigError("config: duplicate key '" + key + "'");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline ConfigMap read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

namespace detail {

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline long to_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects an integer, got '" + v + "'");
  }
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  const long x = to_long(key, v);
  if (x < 0) throw ConfigError("config: '" + key + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::string fmt(double x) {
  std::ostringstream os;
  os.precision(10);
  os << x;
  return os.str();
}

inline std::string fmt(bool b) { return b ? "true" : "false"; }

}  // namespace detail

inline void apply_config(RunConfig& c, const ConfigMap& kv) {
  using namespace detail;
  for (const auto& [k, v] : kv) {
    if (k == "group") c.group = v;
    else if (k == "env") c.env_id = v;
    else if (k == "goal_region") c.goal_region = to_double(k, v);
    else if (k == "total_steps") c.total_steps = to_long(k, v);
    else if (k == "feedback_interval") c.feedback_interval = to_long(k, v);
    else if (k == "budget") c.budget = to_size(k, v);
    else if (k == "queries_per_session") c.queries_per_session = to_size(k, v);
    else if (k == "segment_length") c.segment_length = static_cast<int>(to_long(k, v));
    else if (k == "reward_source") {
      if (v == "learned") c.reward_source = RewardSource::learned;
      else if (v == "ground_truth") c.reward_source = RewardSource::ground_truth;
      else throw ConfigError("config: reward_source must be learned or ground_truth");
    } else if (k == "teacher") {
      c.human_teacher = v == "human";
      if (!c.human_teacher) c.teacher.style = teachers::style_from_string(v);
    } else if (k == "teacher_gamma") c.teacher.gamma = to_double(k, v);
    else if (k == "skip_rate") c.teacher.skip_rate = to_double(k, v);
    else if (k == "mistake_rate") c.teacher.mistake_rate = to_double(k, v);
    else if (k == "equal_fraction") c.teacher.equal_fraction = to_double(k, v);
    else if (k == "noisy_beta") c.teacher.beta = to_double(k, v);
    else if (k == "noisy_per_step") c.teacher.noisy_per_step = to_bool(k, v);
    else if (k == "myopic_weight_late") c.teacher.myopic_weight_late = to_bool(k, v);
    else if (k == "strategy") c.query.strategy = query::strategy_from_string(v);
    else if (k == "candidate_pool") c.query.n = to_size(k, v);
    else if (k == "intermediate_pool") c.query.m_prime = to_size(k, v);
    else if (k == "entropy_member_zero") c.query.entropy_member_zero = to_bool(k, v);
    else if (k == "kmeans_iterations") c.query.kmeans_iterations = static_cast<int>(to_long(k, v));
    else if (k == "reward_net") c.ensemble.net.variant = reward_variant_from_string(v);
    else if (k == "ensemble_size") c.ensemble.members = static_cast<int>(to_long(k, v));
    else if (k == "reward_lr") c.ensemble.lr = to_double(k, v);
    else if (k == "reward_hidden") c.ensemble.net.hidden = to_long(k, v);
    else if (k == "reward_layers") c.ensemble.net.layers = static_cast<int>(to_long(k, v));
    else if (k == "state_embed") c.ensemble.net.state_embed = to_long(k, v);
    else if (k == "action_embed") c.ensemble.net.action_embed = to_long(k, v);
    else if (k == "reward_max_epochs") c.reward_max_epochs = static_cast<int>(to_long(k, v));
    else if (k == "reward_target_accuracy") c.reward_target_accuracy = to_double(k, v);
    else if (k == "reed") {
      c.reed_enabled = v != "none";
      if (c.reed_enabled) c.reed.objective = reed::objective_from_string(v);
    } else if (k == "reed_temperature") c.reed.temperature = to_double(k, v);
    else if (k == "reed_epochs") c.reed.epochs = static_cast<int>(to_long(k, v));
    else if (k == "reed_batch") c.reed.batch_size = to_size(k, v);
    else if (k == "reed_max_batches") c.reed.max_batches_per_epoch = to_size(k, v);
    else if (k == "reed_lr") c.reed.optimizer.lr = to_double(k, v);
    else if (k == "reed_optimizer") {
      if (v == "adam") c.reed.optimizer.kind = nn::OptimizerKind::adam;
      else if (v == "sgd") c.reed.optimizer.kind = nn::OptimizerKind::sgd;
      else throw ConfigError("config: reed_optimizer must be adam or sgd");
    } else if (k == "reed_literal") c.reed.literal_contrastive = to_bool(k, v);
    else if (k == "reed_continue") c.reed_continue = to_bool(k, v);
    else if (k == "sac_hidden") c.sac.hidden = to_long(k, v);
    else if (k == "sac_layers") c.sac.hidden_layers = static_cast<int>(to_long(k, v));
    else if (k == "sac_batch") c.sac.batch_size = to_size(k, v);
    else if (k == "actor_lr") c.sac.actor_lr = to_double(k, v);
    else if (k == "critic_lr") c.sac.critic_lr = to_double(k, v);
    else if (k == "alpha_lr") c.sac.alpha_lr = to_double(k, v);
    else if (k == "discount") c.sac.gamma = to_double(k, v);
    else if (k == "ema_tau") c.sac.tau = to_double(k, v);
    else if (k == "init_temperature") c.sac.init_temperature = to_double(k, v);
    else if (k == "explore_steps") c.intrinsic.pretrain_steps = to_long(k, v);
    else if (k == "random_steps") c.intrinsic.random_steps = to_long(k, v);
    else if (k == "knn_k") c.intrinsic.k = static_cast<int>(to_long(k, v));
    else if (k == "knn_reference") c.intrinsic.reference_size = to_size(k, v);
    else if (k == "reset_critic") c.reset_critic_after_explore = to_bool(k, v);
    else if (k == "embedding_sample") c.embedding_sample = to_size(k, v);
    else if (k == "human_timeout") c.human_timeout_seconds = to_double(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(to_long(k, v));
    else throw ConfigError("config: unknown key '" + k + "'");
  }
  c.query.m = c.queries_per_session;
  c.query.segment_length = c.segment_length;
}

inline RunConfig config_from_map(const ConfigMap& kv) {
  RunConfig c;
  apply_config(c, kv);
  return c;
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  using detail::fmt;
  const bool gt = reward_source == RewardSource::ground_truth;
  return {
      {"group", group},
      {"env", env_id},
      {"goal_region", fmt(goal_region)},
      {"total_steps", std::to_string(total_steps)},
      {"feedback_interval", std::to_string(feedback_interval)},
      {"budget", std::to_string(budget)},
      {"queries_per_session", std::to_string(queries_per_session)},
      {"segment_length", std::to_string(segment_length)},
      {"reward_source", gt ? "ground_truth" : "learned"},
      {"teacher", human_teacher ? "human" : teachers::to_string(teacher.style)},
      {"teacher_gamma", fmt(teacher.gamma)},
      {"skip_rate", fmt(teacher.skip_rate)},
      {"mistake_rate", fmt(teacher.mistake_rate)},
      {"equal_fraction", fmt(teacher.equal_fraction)},
      {"noisy_beta", fmt(teacher.beta)},
      {"noisy_per_step", fmt(teacher.noisy_per_step)},
      {"myopic_weight_late", fmt(teacher.myopic_weight_late)},
      {"strategy", query::to_string(query.strategy)},
      {"candidate_pool", std::to_string(query.pool())},
      {"intermediate_pool", std::to_string(query.intermediate())},
      {"entropy_member_zero", fmt(query.entropy_member_zero)},
      {"kmeans_iterations", std::to_string(query.kmeans_iterations)},
      {"reward_net", to_string(ensemble.net.variant)},
      {"ensemble_size", std::to_string(ensemble.members)},
      {"reward_lr", fmt(ensemble.lr)},
      {"reward_hidden", std::to_string(ensemble.net.hidden)},
      {"reward_layers", std::to_string(ensemble.net.layers)},
      {"state_embed", std::to_string(ensemble.net.state_embed)},
      {"action_embed", std::to_string(ensemble.net.action_embed)},
      {"reward_max_epochs", std::to_string(reward_max_epochs)},
      {"reward_target_accuracy", fmt(reward_target_accuracy)},
      {"reed", reed_enabled ? reed::to_string(reed.objective) : "none"},
      {"reed_temperature", fmt(reed.temperature)},
      {"reed_epochs", std::to_string(reed.epochs)},
      {"reed_batch", std::to_string(reed.batch_size)},
      {"reed_max_batches", std::to_string(reed.max_batches_per_epoch)},
      {"reed_lr", fmt(reed.optimizer.lr)},
      {"reed_optimizer", reed.optimizer.kind == nn::OptimizerKind::adam ? "adam" : "sgd"},
      {"reed_literal", fmt(reed.literal_contrastive)},
      {"reed_continue", fmt(reed_continue)},
      {"sac_hidden", std::to_string(sac.hidden)},
      {"sac_layers", std::to_string(sac.hidden_layers)},
      {"sac_batch", std::to_string(sac.batch_size)},
      {"actor_lr", fmt(sac.actor_lr)},
      {"critic_lr", fmt(sac.critic_lr)},
      {"alpha_lr", fmt(sac.alpha_lr)},
      {"discount", fmt(sac.gamma)},
      {"ema_tau", fmt(sac.tau)},
      {"init_temperature", fmt(sac.init_temperature)},
      {"explore_steps", std::to_string(intrinsic.pretrain_steps)},
      {"random_steps", std::to_string(intrinsic.random_steps)},
      {"knn_k", std::to_string(intrinsic.k)},
      {"knn_reference", std::to_string(intrinsic.reference_size)},
      {"reset_critic", fmt(reset_critic_after_explore)},
      {"embedding_sample", std::to_string(embedding_sample)},
      {"human_timeout", fmt(human_timeout_seconds)},
      {"seed", std::to_string(seed)},
  };
}

inline void RunConfig::validate() const {
  if (total_steps <= 0) throw ConfigError("total_steps must be positive");
  if (feedback_interval <= 0) throw ConfigError("feedback_interval must be positive");
  if (segment_length <= 0) throw ConfigError("segment_length must be positive");
  if (budget > 0) {
    if (queries_per_session == 0) throw ConfigError("queries_per_session must be positive when budget > 0");
    if (budget % queries_per_session != 0)
      throw ConfigError("budget must be a whole number of sessions (budget = M x sessions)");
    if (session_step(sessions() - 1) >= total_steps)
      throw ConfigError("the last feedback session falls after total_steps");
  }
  if (reed_enabled && ensemble.net.variant != RewardNetVariant::saf)
    throw ConfigError("REED requires reward_net = saf");
  if (reward_source == RewardSource::ground_truth && human_teacher)
    throw ConfigError("the ground-truth reference run takes no teacher");
  if (ensemble.members < 1) throw ConfigError("ensemble_size must be at least 1");
  if (query.strategy != query::Strategy::uniform && query.strategy != query::Strategy::coverage &&
      query.strategy != query::Strategy::entropy && query.strategy != query::Strategy::entropy_coverage &&
      ensemble.members < 2)
    throw ConfigError("disagreement sampling requires ensemble_size >= 2");
  if (budget > 0 && query.pool() < queries_per_session) throw ConfigError("candidate_pool must be at least M");
  if (intrinsic.random_steps > total_steps) throw ConfigError("random_steps exceeds total_steps");
  if (reward_target_accuracy <= 0.0 || reward_target_accuracy > 1.0)
    throw ConfigError("reward_target_accuracy must lie in (0, 1]");
  if (reward_max_epochs < 0) throw ConfigError("reward_max_epochs must be non-negative");
  teacher.validate();
  sac.validate();
  intrinsic.validate();
  if (reed_enabled) reed.validate();
}

// Expands a grid: any value containing commas is an axis. `seeds` lists the
// seeds to run for every combination and is removed from the returned maps.
struct GridPoint {
  ConfigMap config;
  std::string label;  // axis assignments, e.g. "budget=50_reed=contrastive"
};

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

inline std::vector<GridPoint> expand_grid(const ConfigMap& grid, std::vector<std::uint64_t>& seeds) {
  ConfigMap base;
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  seeds.clear();
  for (const auto& [k, v] : grid) {
    if (k == "seeds") {
      for (const auto& s : split_list(v)) seeds.push_back(static_cast<std::uint64_t>(detail::to_long(k, s)));
    } else if (v.find(',') != std::string::npos) {
      axes.emplace_back(k, split_list(v));
    } else {
      base.emplace_back(k, v);
    }
  }
  if (seeds.empty()) seeds.push_back(0);
  std::vector<GridPoint> points{{base, ""}};
  for (const auto& [k, values] : axes) {
    std::vector<GridPoint> next;
    for (const auto& p : points)
      for (const auto& v : values) {
        GridPoint q = p;
        q.config.emplace_back(k, v);
        q.label += (q.label.empty() ? "" : "_") + k + "=" + v;
        next.push_back(std::move(q));
      }
    points = std::move(next);
  }
  return points;
}

}  // namespace pbrl
