#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include "pbrl/labeling_service.hpp"
#include "support.hpp"

using namespace pbrl;
using namespace pbrl::service;
using nlohmann::json;

namespace {

std::vector<PendingPair> pairs(int n) {
  std::vector<PendingPair> out;
  for (int i = 0; i < n; ++i) out.push_back({i, json::object(), json::object(), {{"i", i}}});
  return out;
}

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    port_ = server_.start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  json get(const std::string& path, int expect_status = 200) {
    auto res = client_->Get(path);
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect_status) << path;
    return json::parse(res->body);
  }

  json post_label(int session, const std::string& body, int expect_status) {
    auto res = client_->Post("/api/session/" + std::to_string(session) + "/label", body, "application/json");
    EXPECT_TRUE(res);
    if (!res) return {};
    EXPECT_EQ(res->status, expect_status) << body;
    return json::parse(res->body);
  }

  SessionStore store_;
  LabelingServer server_{store_};
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

RunConfig human_run() {
  return config_from_map({{"total_steps", "3000"}, {"explore_steps", "500"}, {"random_steps", "200"},
                          {"feedback_interval", "250"}, {"budget", "10"}, {"queries_per_session", "2"},
                          {"knn_reference", "128"}, {"sac_hidden", "32"}, {"reward_max_epochs", "50"},
                          {"teacher", "human"}});
}

}  // namespace

TEST(Choices, RoundTrip) {
  for (auto l : {teachers::Label::prefer_first, teachers::Label::prefer_second, teachers::Label::equal,
                 teachers::Label::discard})
    EXPECT_EQ(choice_from_string(choice_to_string(l)), l);
  EXPECT_FALSE(choice_from_string("both"));
}

TEST(Store, SubmitOutcomes) {
  SessionStore s;
  EXPECT_FALSE(s.active());
  const int id = s.open(100, pairs(2));
  EXPECT_THROW(s.open(200, pairs(1)), StateError);
  EXPECT_EQ(s.submit(id + 1, 0, teachers::Label::equal), SubmitResult::unknown_session);
  EXPECT_EQ(s.submit(id, 5, teachers::Label::equal), SubmitResult::unknown_pair);
  EXPECT_EQ(s.submit(id, 0, teachers::Label::equal), SubmitResult::ok);
  EXPECT_EQ(s.submit(id, 0, teachers::Label::prefer_first), SubmitResult::already_labelled);
  EXPECT_EQ(s.get(id)->labels.at(0), teachers::Label::equal);  // first submission wins
  EXPECT_EQ(s.submit(id, 1, teachers::Label::discard), SubmitResult::ok);
  EXPECT_EQ(s.get(id)->status, SessionStatus::completed);
  EXPECT_FALSE(s.active());
  EXPECT_NO_THROW(s.open(300, pairs(1)));
}

TEST(Store, TimeoutSuspendsAndLateCompletionResumes) {
  SessionStore s;
  const int id = s.open(0, pairs(1));
  EXPECT_FALSE(s.wait(id, std::chrono::milliseconds(20)));
  EXPECT_EQ(s.get(id)->status, SessionStatus::suspended);
  EXPECT_EQ(s.active()->id, id);
  std::thread late([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    s.submit(id, 0, teachers::Label::prefer_second);
  });
  EXPECT_TRUE(s.wait(id, std::chrono::seconds(5)));
  late.join();
  EXPECT_EQ(s.get(id)->status, SessionStatus::completed);
}

TEST_F(ServiceTest, IdleUntilASessionOpens) {
  const json idle = get("/api/session");
  EXPECT_EQ(idle["status"], "idle");
  EXPECT_EQ(idle["version"], kApiVersion);
  const int id = store_.open(1234, pairs(3));
  const json active = get("/api/session");
  EXPECT_EQ(active["status"], "active");
  EXPECT_EQ(active["session"], id);
  EXPECT_EQ(active["step"], 1234);
  EXPECT_EQ(active["pending"], 3);
  EXPECT_EQ(active["total"], 3);
}

TEST_F(ServiceTest, LabellingShrinksPendingAndFillsState) {
  const int id = store_.open(10, pairs(3));
  const std::string base = "/api/session/" + std::to_string(id);
  EXPECT_EQ(get(base + "/pending")["pairs"].size(), 3u);
  const json ok = post_label(id, R"({"pair_id": 1, "choice": "second"})", 200);
  EXPECT_EQ(ok["ok"], true);
  EXPECT_EQ(ok["remaining"], 2);
  const json pending = get(base + "/pending")["pairs"];
  ASSERT_EQ(pending.size(), 2u);
  EXPECT_EQ(pending[0]["pair_id"], 0);
  EXPECT_EQ(pending[1]["pair_id"], 2);
  EXPECT_EQ(pending[1]["meta"]["i"], 2);
  const json state = get(base + "/state");
  EXPECT_EQ(state["completed"], 1);
  EXPECT_EQ(state["pending"], 2);
  EXPECT_EQ(state["labels"]["1"], "second");
  EXPECT_EQ(state["status"], "active");
  post_label(id, R"({"pair_id": 0, "choice": "skip"})", 200);
  post_label(id, R"({"pair_id": 2, "choice": "equal"})", 200);
  EXPECT_EQ(get(base + "/state")["status"], "completed");
  EXPECT_EQ(get("/api/session")["status"], "idle");
}

TEST_F(ServiceTest, ErrorStatuses) {
  const int id = store_.open(0, pairs(2));
  get("/api/session/99/pending", 404);
  get("/api/session/abc/state", 404);
  post_label(99, R"({"pair_id": 0, "choice": "first"})", 404);
  post_label(id, R"({"pair_id": 7, "choice": "first"})", 404);
  post_label(id, "not json", 400);
  post_label(id, R"({"pair_id": "0", "choice": "first"})", 400);
  post_label(id, R"({"pair_id": 0})", 400);
  const json bad = post_label(id, R"({"pair_id": 0, "choice": "both"})", 400);
  EXPECT_TRUE(bad.contains("error"));
  EXPECT_EQ(bad["version"], kApiVersion);
  post_label(id, R"({"pair_id": 0, "choice": "first"})", 200);
  post_label(id, R"({"pair_id": 0, "choice": "second"})", 409);
  EXPECT_EQ(get("/api/session/" + std::to_string(id) + "/state")["labels"]["0"], "first");
}

TEST_F(ServiceTest, HumanTeacherPublishesTracesAndWaitsForEveryPair) {
  Rng rng(1);
  env::PointMass2D e;
  ReplayBuffer buffer(1000, 6, 2);
  agent::RolloutState roll;
  for (int t = 0; t < 300; ++t)
    agent::rollout_step(e, buffer, roll, [&](const Vector&) { return agent::random_action(2, rng); }, rng);
  const auto segs = *sample_segment_pairs(buffer, 2, 25, rng);
  const env::EnvSpec spec = e.spec();

  HumanTeacher teacher(store_, std::chrono::milliseconds(20));
  std::vector<teachers::Label> labels;
  std::thread trainer([&] { labels = teacher.label({0, 4242, &segs, &spec}, nullptr); });

  json session;
  for (int k = 0; k < 200 && !session.contains("session"); ++k) {
    session = get("/api/session");
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  ASSERT_TRUE(session.contains("session"));
  EXPECT_EQ(session["step"], 4242);
  const int id = session["session"];
  const json pending = get("/api/session/" + std::to_string(id) + "/pending")["pairs"];
  ASSERT_EQ(pending.size(), 2u);
  const auto trace = env::trace_from_json(pending[0]["trace_a"]);
  ASSERT_EQ(trace.frames.size(), 25u);
  EXPECT_NEAR(trace.frames[3].position[0], segs[0].first.states(3, 0), 1e-9);
  EXPECT_EQ(pending[1]["meta"]["length"], 25);

  // Let the session time out once before answering.
  std::this_thread::sleep_for(std::chrono::milliseconds(60));
  EXPECT_EQ(get("/api/session")["status"], "suspended");
  post_label(id, R"({"pair_id": 1, "choice": "second"})", 200);
  post_label(id, R"({"pair_id": 0, "choice": "first"})", 200);
  trainer.join();
  EXPECT_EQ(labels, (std::vector<teachers::Label>{teachers::Label::prefer_first, teachers::Label::prefer_second}));
  EXPECT_GT(teacher.suspensions(), 0u);
  EXPECT_EQ(teacher.style_name(), "human");
}

TEST_F(ServiceTest, HumanRunEndToEnd) {
  HumanTeacher teacher(store_, std::chrono::seconds(30));
  RunResult result;
  std::atomic<bool> done{false};
  std::thread trainer([&] {
    result = run_experiment(human_run(), std::nullopt, &teacher);
    done = true;
  });
  int answered = 0;
  while (!done) {
    const json s = get("/api/session");
    if (s.contains("session")) {
      const int id = s["session"];
      const json pending = get("/api/session/" + std::to_string(id) + "/pending");
      for (const auto& p : pending["pairs"]) {
        const int pid = p["pair_id"];
        post_label(id, json{{"pair_id", pid}, {"choice", pid % 2 ? "equal" : "first"}}.dump(), 200);
        ++answered;
      }
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  trainer.join();
  EXPECT_EQ(answered, 10);
  EXPECT_EQ(result.labels, 10u);
  EXPECT_EQ(result.sessions, 5u);
  EXPECT_NE(result.audit_csv.find(",human,"), std::string::npos);
}
