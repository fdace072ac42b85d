#pragma once

// The preference-learning outer loop: exploration, feedback sessions
// (REED update, query selection, labelling, reward training, relabelling),
// SAC updates on learned rewards, per-episode evaluation and the normalized
// return metrics.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbrl/agent.hpp"
#include "pbrl/config.hpp"
#include "pbrl/core.hpp"
#include "pbrl/env.hpp"
#include "pbrl/query_selection.hpp"
#include "pbrl/reed.hpp"
#include "pbrl/replay.hpp"
#include "pbrl/reward_model.hpp"
#include "pbrl/teachers.hpp"

namespace pbrl {

// ---- labelling -----------------------------------------------------------------

struct LabelRequest {
  int session = 0;
  long step = 0;
  const std::vector<SegmentPair>* pairs = nullptr;
  const env::EnvSpec* spec = nullptr;
};

// Anything that turns query pairs into labels: a simulated teacher or the
// human labelling service.
class LabelSource {
 public:
  virtual ~LabelSource() = default;
  virtual std::vector<teachers::Label> label(const LabelRequest& request, const teachers::ReturnStats* stats) = 0;
  virtual std::string style_name() const = 0;
  // Per-pair perturbation flags of the last call, when the source has them.
  virtual std::vector<bool> perturbed() const { return {}; }
};

class SimulatedLabelSource : public LabelSource {
 public:
  explicit SimulatedLabelSource(teachers::TeacherConfig config) : teacher_(config) {}

  std::vector<teachers::Label> label(const LabelRequest& request, const teachers::ReturnStats* stats) override {
    ++calls_;
    return teacher_.label_batch(*request.pairs, stats);
  }

  std::string style_name() const override { return teachers::to_string(teacher_.config().style); }

  std::vector<bool> perturbed() const override {
    std::vector<bool> out;
    for (const auto& d : teacher_.audit()) out.push_back(d.perturbed);
    return out;
  }

  std::size_t calls() const { return calls_; }

 private:
  teachers::SimulatedTeacher teacher_;
  std::size_t calls_ = 0;
};

struct FeedbackResult {
  std::optional<query::QueryBatch> batch;
  std::vector<teachers::Label> labels;
  std::size_t appended = 0;
};

// select → label → append every non-discarded label as a triplet.
inline FeedbackResult feedback_session(const ReplayBuffer& buffer, const RewardEnsemble& ensemble,
                                       const query::QueryConfig& qcfg, LabelSource& source,
                                       const teachers::ReturnStats* stats, PreferenceDataset& dataset, Rng& rng,
                                       LabelRequest request = {}) {
  FeedbackResult out;
  out.batch = query::select_queries(buffer, ensemble, qcfg, rng);
  if (!out.batch) return out;
  request.pairs = &out.batch->pairs;
  out.labels = source.label(request, stats);
  if (out.labels.size() != out.batch->pairs.size()) throw ProtocolError("label source returned the wrong label count");
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    if (out.labels[i] == teachers::Label::discard) continue;
    dataset.append({out.batch->pairs[i].first, out.batch->pairs[i].second, teachers::to_distribution(out.labels[i])});
    ++out.appended;
  }
  return out;
}

// ---- metrics -----------------------------------------------------------------

inline constexpr double kRatioFloor = 1e-6;

// Mean over the grid of learned[t] / max(reference[t], 1e-6).
inline double normalized_return(const std::vector<double>& learned, const std::vector<double>& reference) {
  if (learned.size() != reference.size() || learned.empty())
    throw ShapeError("normalized_return: learned and reference grids differ");
  double acc = 0.0;
  for (std::size_t t = 0; t < learned.size(); ++t) acc += learned[t] / std::max(reference[t], kRatioFloor);
  return acc / static_cast<double>(learned.size());
}

inline std::size_t final_window_size(std::size_t episodes) {
  return static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(episodes)));
}

// normalized_return restricted to the last ⌈0.1·T⌉ episodes.
inline double final_window_return(const std::vector<double>& learned, const std::vector<double>& reference) {
  if (learned.size() != reference.size()) throw ShapeError("final_window_return: grids differ");
  if (learned.size() < 10) throw ShapeError("final_window_return: run shorter than 10 episodes");
  const std::size_t w = final_window_size(learned.size());
  const std::vector<double> l(learned.end() - static_cast<std::ptrdiff_t>(w), learned.end());
  const std::vector<double> r(reference.end() - static_cast<std::ptrdiff_t>(w), reference.end());
  return normalized_return(l, r);
}

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

// Sample standard deviation (n − 1); 0 for a single value.
inline MeanSd mean_sd(const std::vector<double>& v) {
  MeanSd out;
  out.n = v.size();
  if (v.empty()) return out;
  for (double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    for (double x : v) out.sd += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(out.sd / static_cast<double>(v.size() - 1));
  }
  return out;
}

// "0.74±0.18"
inline std::string format_mean_sd(const MeanSd& m, int precision = 2) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << m.mean << "±" << m.sd;
  return os.str();
}

inline std::string csv_num(double x) {
  if (std::isnan(x)) return "";
  std::ostringstream os;
  os << std::setprecision(9) << x;
  return os.str();
}

// ---- experiment runner ----------------------------------------------------------

struct RunResult {
  nlohmann::json summary;
  std::vector<double> eval_scores;     // per training episode, offset ground-truth return
  std::vector<double> eval_returns;    // raw ground-truth return
  std::vector<double> final_distances; // per evaluation episode
  std::string metrics_csv;
  std::string events_csv;
  std::string audit_csv;
  std::size_t labels = 0;
  std::size_t sessions = 0;
  std::size_t teacher_calls = 0;
  std::uint64_t spr_forward_passes = 0;
  double last_embedding_variance = std::numeric_limits<double>::quiet_NaN();
};

inline std::unique_ptr<env::Environment> make_environment(const RunConfig& c) {
  env::PointMassParams p;
  p.goal_region = c.goal_region;
  if (c.env_id == "pointmass2d") return std::make_unique<env::PointMass2D>(p);
  if (c.env_id == "pointmass2d_static") return std::make_unique<env::StaticFeatureEnv>(p);
  return env::make_environment(c.env_id);
}

// Per-episode evaluation start seed shared by every run with the same seed.
inline std::uint64_t evaluation_seed(std::uint64_t seed, long episode) {
  return Rng::mix(Rng::mix(seed ^ 0xe7a1u) + static_cast<std::uint64_t>(episode));
}

class ExperimentRunner {
 public:
  // Called after every logged event with its kind; lets tests inspect state.
  using Observer = std::function<void(const ExperimentRunner&, const std::string& kind)>;

  explicit ExperimentRunner(RunConfig config, LabelSource* external_source = nullptr)
      : config_(std::move(config)), external_(external_source) {
    config_.query.m = config_.queries_per_session;
    config_.query.segment_length = config_.segment_length;
    config_.validate();
    if (config_.human_teacher && !external_) throw ConfigError("teacher = human needs a labelling service");
  }

  void set_observer(Observer obs) { observer_ = std::move(obs); }

  // Before each external (human) session the ensemble and policy are written
  // to <dir>/checkpoint.json so a stalled labelling session loses no training.
  void set_checkpoint_dir(std::filesystem::path dir) { checkpoint_dir_ = std::move(dir); }

  const RunConfig& config() const { return config_; }
  const ReplayBuffer& buffer() const { return *buffer_; }
  const RewardEnsemble& ensemble() const { return *ensemble_; }
  const PreferenceDataset& dataset() const { return *dataset_; }
  long current_step() const { return step_; }
  long event_count() const { return event_; }

  RunResult run(const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
    const auto t0 = std::chrono::steady_clock::now();
    setup();
    if (out_dir) std::filesystem::create_directories(*out_dir);

    metrics_ << "step,episode,phase,train_return,eval_return,eval_score,eval_learned_return,eval_final_distance,"
                "critic_loss,actor_loss,alpha,labels,sessions,reward_loss,reward_accuracy,reed_loss,"
                "embedding_variance,disagreement\n";
    events_ << "event,step,kind,member,value,detail\n";
    audit_ << "event,session,step,pair,style,return_first,return_second,label,perturbed,candidate,score\n";

    const long explore = config_.explore_steps();
    const bool gt_mode = config_.reward_source == RewardSource::ground_truth;
    agent::RolloutState roll;
    std::size_t next_session = 0;
    const std::size_t sessions = config_.sessions();
    bool relabelled_once = false;

    for (step_ = 0; step_ < config_.total_steps; ++step_) {
      if (!gt_mode && step_ == explore) {
        if (explore > 0) {
          log_event("explore_end", -1, static_cast<double>(buffer_->size()), "");
          if (config_.reset_critic_after_explore) sac_->reset_critics(agent_rng_);
        }
      }
      if (!gt_mode && step_ >= explore && (step_ - explore) % config_.feedback_interval == 0) {
        if (next_session < sessions && step_ == config_.session_step(next_session)) {
          run_session(static_cast<int>(next_session));
          ++next_session;
          relabelled_once = true;
        } else if (next_session >= sessions && (config_.reed_continue && config_.reed_enabled) && sessions > 0) {
          reed_update();
          relabel_buffer();
        } else if (!relabelled_once && sessions == 0) {
          // Zero budget: the random initial ensemble defines the reward.
          relabel_buffer();
          relabelled_once = true;
        }
      }

      const bool random = step_ < config_.intrinsic.random_steps;
      const std::size_t before = buffer_->size();
      agent::rollout_step(
          *env_, *buffer_, roll,
          [&](const Vector& s) {
            return random ? agent::random_action(spec_.action_dim, env_rng_) : sac_->act(s, agent::ActMode::stochastic);
          },
          env_rng_);
      if (buffer_->size() == before) throw StateError("rollout did not store a transition");
      if (gt_mode) buffer_->set_learned_reward(buffer_->size() - 1, buffer_->back().ground_truth_reward(key()));
      if (!gt_mode && relabelled_once)
        buffer_->set_learned_reward(buffer_->size() - 1,
                                    ensemble_->predict_mean(buffer_->back().state, buffer_->back().action));

      if (!random && buffer_->size() >= config_.sac.batch_size) {
        TransitionBatch b = buffer_->gather(sample_transitions(*buffer_, config_.sac.batch_size, agent_rng_));
        if (!gt_mode && step_ < explore) agent::assign_intrinsic_rewards(b, *buffer_, config_.intrinsic, agent_rng_);
        last_sac_ = sac_->update(b);
      }

      if (roll.needs_reset) end_episode(roll, step_ < explore ? "explore" : (gt_mode ? "reference" : "learn"));
    }

    if (!sac_->parameters_finite()) throw NumericalError("SAC parameters became non-finite");
    RunResult result = finish(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (out_dir) write_outputs(*out_dir, result);
    return result;
  }

 private:
  static GroundTruthKey key() { return GroundTruthKey(); }

  void setup() {
    Rng root(Rng::mix(config_.seed));
    env_rng_ = root.split();
    agent_rng_ = root.split();
    query_rng_ = root.split();
    reed_rng_ = root.split();
    diag_rng_ = root.split();
    Rng init = root.split();
    env_ = make_environment(config_);
    eval_env_ = make_environment(config_);
    spec_ = env_->spec();
    if (config_.segment_length > spec_.horizon) throw ConfigError("segment_length exceeds the episode horizon");
    buffer_ = std::make_unique<ReplayBuffer>(static_cast<std::size_t>(config_.total_steps), spec_.state_dim,
                                             spec_.action_dim);
    ensemble_ = std::make_unique<RewardEnsemble>(spec_.state_dim, spec_.action_dim, config_.ensemble, init);
    dataset_ = std::make_unique<PreferenceDataset>(config_.budget);
    sac_ = std::make_unique<agent::Sac>(spec_.state_dim, spec_.action_dim, config_.sac, init);
    spr_.clear();
    reed_opts_.clear();
    if (config_.reed_enabled) {
      for (std::size_t e = 0; e < ensemble_->size(); ++e) {
        spr_.emplace_back(ensemble_->member(e), init);
        reed_opts_.emplace_back(config_.reed.optimizer);
      }
    }
    stats_ = std::make_unique<teachers::ReturnStats>(config_.feedback_interval);
    if (!config_.human_teacher && config_.reward_source == RewardSource::learned) {
      teachers::TeacherConfig t = config_.teacher;
      t.seed = Rng::mix(config_.seed ^ 0x7eac4e5u);
      simulated_ = std::make_unique<SimulatedLabelSource>(t);
    }
    reed::spr_forward_counter() = 0;
    step_ = 0;
    event_ = 0;
    episode_ = 0;
    metrics_.str("");
    events_.str("");
    audit_.str("");
    eval_scores_.clear();
    eval_returns_.clear();
    final_distances_.clear();
    labels_ = 0;
    sessions_done_ = 0;
    teacher_calls_ = 0;
    last_reward_loss_ = last_reward_acc_ = last_reed_loss_ = last_disagreement_ = last_embedding_var_ =
        std::numeric_limits<double>::quiet_NaN();
  }

  LabelSource& source() { return external_ ? *external_ : *simulated_; }

  void log_event(const std::string& kind, int member, double value, const std::string& detail) {
    events_ << event_ << "," << step_ << "," << kind << "," << (member >= 0 ? std::to_string(member) : "") << ","
            << csv_num(value) << "," << detail << "\n";
    ++event_;
    if (observer_) observer_(*this, kind);
  }

  void reed_update() {
    double loss_sum = 0.0;
    for (std::size_t e = 0; e < spr_.size(); ++e) {
      spr_[e].load_shared_params(ensemble_->member(e));
      const auto trace = reed::train_reed(spr_[e], *buffer_, config_.reed, reed_opts_[e], reed_rng_);
      spr_[e].sync_shared_params(ensemble_->member(e));
      const double last = trace.epoch_losses.empty() ? 0.0 : trace.epoch_losses.back();
      loss_sum += last;
      log_event("reed", static_cast<int>(e), last, "collapse_warnings=" + std::to_string(trace.collapse_warnings));
    }
    last_reed_loss_ = spr_.empty() ? last_reed_loss_ : loss_sum / static_cast<double>(spr_.size());
  }

  void relabel_buffer() {
    relabel(*buffer_, *ensemble_);
    log_event("relabel", -1, static_cast<double>(buffer_->size()), "");
  }

  void run_session(int session) {
    if (config_.reed_enabled) reed_update();
    if (ensemble_->member(0).is_saf() && buffer_->size() >= config_.embedding_sample) {
      last_embedding_var_ = reed::embedding_variance(ensemble_->member(0), *buffer_, config_.embedding_sample, diag_rng_);
      log_event("embedding_variance", 0, last_embedding_var_, "");
    }

    if (external_ && checkpoint_dir_) write_checkpoint(session);
    LabelRequest req{session, step_, nullptr, &spec_};
    const std::size_t before = dataset_->size();
    const FeedbackResult fb =
        feedback_session(*buffer_, *ensemble_, config_.query, source(), stats_.get(), *dataset_, query_rng_, req);
    if (!fb.batch) throw StateError("feedback session: buffer holds no full-length segment");
    if (dataset_->size() != before + fb.appended || dataset_->size() > config_.budget)
      throw ProtocolError("feedback budget exceeded");
    ++teacher_calls_;
    labels_ = dataset_->size();
    ++sessions_done_;
    const auto perturbed = source().perturbed();
    const GroundTruthKey k = key();
    for (std::size_t i = 0; i < fb.batch->pairs.size(); ++i) {
      const auto& p = fb.batch->pairs[i];
      audit_ << event_ << "," << session << "," << step_ << "," << i << "," << source().style_name() << ","
             << csv_num(p.first.ground_truth_return(k)) << "," << csv_num(p.second.ground_truth_return(k)) << ","
             << teachers::to_string(fb.labels[i]) << "," << (i < perturbed.size() && perturbed[i] ? 1 : 0) << ","
             << fb.batch->candidate_indices[i] << ","
             << (i < fb.batch->scores.size() ? csv_num(fb.batch->scores[i]) : "") << "\n";
    }
    if (!fb.batch->scores.empty()) {
      double s = 0.0;
      for (double x : fb.batch->scores) s += x;
      last_disagreement_ = s / static_cast<double>(fb.batch->scores.size());
    }
    log_event("feedback", -1, static_cast<double>(fb.appended), "session=" + std::to_string(session));

    if (!dataset_->empty()) {
      PreferenceTrainConfig pc;
      pc.max_epochs = config_.reward_max_epochs;
      pc.batch_size = config_.queries_per_session;
      pc.target_accuracy = config_.reward_target_accuracy;
      const auto trace = ensemble_->train(*dataset_, pc);
      double loss = 0.0;
      for (const auto& m : trace.member_losses) loss += m.empty() ? 0.0 : m.back();
      last_reward_loss_ = loss / static_cast<double>(trace.member_losses.size());
      last_reward_acc_ = trace.mean_accuracy.empty() ? last_reward_acc_ : trace.mean_accuracy.back();
      log_event("reward_update", -1, last_reward_loss_, "epochs=" + std::to_string(trace.epochs));
    }
    relabel_buffer();
  }

  void write_checkpoint(int session) const {
    std::filesystem::create_directories(*checkpoint_dir_);
    const nlohmann::json j = {{"format", "pbrl.checkpoint"},
                              {"version", nn::kCheckpointVersion},
                              {"session", session},
                              {"step", step_},
                              {"ensemble", ensemble_->to_json()},
                              {"policy", sac_->to_json()}};
    std::ofstream out(*checkpoint_dir_ / "checkpoint.json");
    out << j.dump() << "\n";
  }

  void end_episode(const agent::RolloutState& roll, const std::string& phase) {
    const GroundTruthKey k = key();
    double train_return = 0.0;
    for (std::size_t i = buffer_->size() - static_cast<std::size_t>(roll.episode_steps); i < buffer_->size(); ++i)
      train_return += (*buffer_)[i].ground_truth_reward(k);
    stats_->add(train_return, roll.episode_steps);

    // One deterministic evaluation episode.
    eval_env_->reset(evaluation_seed(config_.seed, episode_));
    double eval_return = 0.0, learned_return = 0.0;
    int steps = 0;
    while (!eval_env_->state().done) {
      const Vector s = eval_env_->state().observation;
      const Vector a = sac_->act(s, agent::ActMode::deterministic);
      learned_return += ensemble_->predict_mean(s, a);
      eval_return += eval_env_->step(a).reward;
      ++steps;
    }
    const double score = eval_return + spec_.score_offset * steps;
    eval_returns_.push_back(eval_return);
    eval_scores_.push_back(score);
    final_distances_.push_back(eval_env_->goal_distance());

    metrics_ << step_ + 1 << "," << episode_ << "," << phase << "," << csv_num(train_return) << ","
             << csv_num(eval_return) << "," << csv_num(score) << "," << csv_num(learned_return) << ","
             << csv_num(final_distances_.back()) << "," << csv_num(last_sac_.critic) << ","
             << csv_num(last_sac_.actor) << "," << csv_num(last_sac_.alpha) << "," << labels_ << ","
             << sessions_done_ << "," << csv_num(last_reward_loss_) << "," << csv_num(last_reward_acc_) << ","
             << csv_num(last_reed_loss_) << "," << csv_num(last_embedding_var_) << ","
             << csv_num(last_disagreement_) << "\n";
    ++episode_;
  }

  RunResult finish(double runtime) {
    RunResult r;
    r.eval_scores = eval_scores_;
    r.eval_returns = eval_returns_;
    r.final_distances = final_distances_;
    r.metrics_csv = metrics_.str();
    r.events_csv = events_.str();
    r.audit_csv = audit_.str();
    r.labels = labels_;
    r.sessions = sessions_done_;
    r.teacher_calls = teacher_calls_;
    r.spr_forward_passes = reed::spr_forward_counter();
    r.last_embedding_variance = last_embedding_var_;
    const std::size_t w = final_window_size(final_distances_.size());
    double dist = 0.0;
    for (std::size_t i = final_distances_.size() - w; i < final_distances_.size(); ++i) dist += final_distances_[i];
    r.summary = {{"group", config_.group},
                 {"seed", config_.seed},
                 {"env", config_.env_id},
                 {"reward_source", config_.reward_source == RewardSource::ground_truth ? "ground_truth" : "learned"},
                 {"episodes", eval_scores_.size()},
                 {"eval_scores", eval_scores_},
                 {"eval_returns", eval_returns_},
                 {"final_distances", final_distances_},
                 {"final_window_distance", w ? dist / static_cast<double>(w) : 0.0},
                 {"labels", labels_},
                 {"sessions", sessions_done_},
                 {"spr_forward_passes", r.spr_forward_passes},
                 {"embedding_variance", std::isnan(last_embedding_var_) ? nlohmann::json() : nlohmann::json(last_embedding_var_)},
                 {"runtime_seconds", runtime}};
    return r;
  }

  void write_outputs(const std::filesystem::path& dir, const RunResult& r) const {
    auto write = [&](const std::string& name, const std::string& text) {
      std::ofstream out(dir / name);
      if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
      out << text;
    };
    write("metrics.csv", r.metrics_csv);
    write("events.csv", r.events_csv);
    write("labels_audit.csv", r.audit_csv);
    write("config.txt", config_.to_text());
    write("summary.json", r.summary.dump(2) + "\n");
  }

  RunConfig config_;
  LabelSource* external_ = nullptr;
  std::unique_ptr<SimulatedLabelSource> simulated_;
  Observer observer_;
  std::optional<std::filesystem::path> checkpoint_dir_;

  Rng env_rng_, agent_rng_, query_rng_, reed_rng_, diag_rng_;
  std::unique_ptr<env::Environment> env_, eval_env_;
  env::EnvSpec spec_;
  std::unique_ptr<ReplayBuffer> buffer_;
  std::unique_ptr<RewardEnsemble> ensemble_;
  std::unique_ptr<PreferenceDataset> dataset_;
  std::unique_ptr<agent::Sac> sac_;
  std::vector<reed::SprNet> spr_;
  std::vector<nn::Optimizer> reed_opts_;
  std::unique_ptr<teachers::ReturnStats> stats_;

  long step_ = 0;
  long event_ = 0;
  long episode_ = 0;
  std::ostringstream metrics_, events_, audit_;
  std::vector<double> eval_scores_, eval_returns_, final_distances_;
  std::size_t labels_ = 0, sessions_done_ = 0, teacher_calls_ = 0;
  agent::SacLosses last_sac_;
  double last_reward_loss_ = 0.0, last_reward_acc_ = 0.0, last_reed_loss_ = 0.0, last_disagreement_ = 0.0,
         last_embedding_var_ = 0.0;
};

inline RunResult run_experiment(const RunConfig& config, const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                LabelSource* source = nullptr) {
  ExperimentRunner runner(config, source);
  return runner.run(out_dir);
}

// ---- evaluation over a directory of runs -----------------------------------

struct RunRecord {
  std::filesystem::path dir;
  std::string group;
  std::uint64_t seed = 0;
  bool reference = false;
  std::vector<double> scores;
  std::optional<double> embedding_variance;
  double final_window_distance = 0.0;
};

inline std::vector<RunRecord> collect_runs(const std::filesystem::path& root) {
  std::vector<RunRecord> out;
  if (!std::filesystem::exists(root)) throw ConfigError("runs directory does not exist: " + root.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(root))
    if (entry.is_regular_file() && entry.path().filename() == "summary.json" && entry.path().parent_path() != root)
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    std::ifstream in(f);
    const auto j = nlohmann::json::parse(in);
    if (!j.contains("eval_scores")) continue;
    RunRecord r;
    r.dir = f.parent_path();
    r.group = j.at("group").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.reference = j.at("reward_source").get<std::string>() == "ground_truth";
    r.scores = j.at("eval_scores").get<std::vector<double>>();
    if (j.contains("embedding_variance") && !j.at("embedding_variance").is_null())
      r.embedding_variance = j.at("embedding_variance").get<double>();
    r.final_window_distance = j.value("final_window_distance", 0.0);
    out.push_back(std::move(r));
  }
  return out;
}

struct GroupScore {
  std::string group;
  std::vector<std::uint64_t> seeds;
  std::vector<double> normalized;
  std::vector<double> final_window;
};

// Pairs every learned run with the reference run of the same seed.
inline std::vector<GroupScore> score_runs(const std::vector<RunRecord>& runs) {
  std::map<std::uint64_t, const RunRecord*> refs;
  for (const auto& r : runs)
    if (r.reference) refs[r.seed] = &r;
  std::map<std::string, GroupScore> groups;
  for (const auto& r : runs) {
    if (r.reference) continue;
    const auto it = refs.find(r.seed);
    if (it == refs.end()) throw ConfigError("no reference run for seed " + std::to_string(r.seed) + " (" + r.group + ")");
    auto& g = groups[r.group];
    g.group = r.group;
    g.seeds.push_back(r.seed);
    g.normalized.push_back(normalized_return(r.scores, it->second->scores));
    g.final_window.push_back(final_window_return(r.scores, it->second->scores));
  }
  std::vector<GroupScore> out;
  for (auto& [_, g] : groups) out.push_back(std::move(g));
  return out;
}

// Writes <root>/summary.json and returns the printable ratio table.
inline std::string evaluate_runs(const std::filesystem::path& root) {
  const auto runs = collect_runs(root);
  const auto groups = score_runs(runs);
  nlohmann::json j = {{"groups", nlohmann::json::array()}};
  std::ostringstream table;
  table << std::left << std::setw(28) << "group" << std::setw(6) << "n" << std::setw(16) << "normalized"
        << "final_window\n";
  for (const auto& g : groups) {
    const auto n = mean_sd(g.normalized);
    const auto f = mean_sd(g.final_window);
    table << std::left << std::setw(28) << g.group << std::setw(6) << n.n << std::setw(16) << format_mean_sd(n)
          << format_mean_sd(f) << "\n";
    j["groups"].push_back({{"group", g.group},
                           {"seeds", g.seeds},
                           {"normalized_return", g.normalized},
                           {"final_window_return", g.final_window},
                           {"normalized_mean", n.mean},
                           {"normalized_sd", n.sd},
                           {"final_window_mean", f.mean},
                           {"final_window_sd", f.sd}});
  }
  std::ofstream out(root / "summary.json");
  out << j.dump(2) << "\n";
  return table.str();
}

}  // namespace pbrl
