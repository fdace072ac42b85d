#pragma once

// HTTP labelling service for a human teacher.
//
// JSON API, schema version 1 (every response carries "version": 1):
//   GET  /api/session                  {"status": "idle"} or {"status", "session", "step", "pending", "total"}
//   GET  /api/session/{id}/pending     {"session", "status", "pairs": [{"pair_id", "trace_a", "trace_b", "meta"}]}
//   POST /api/session/{id}/label       body {"pair_id": n, "choice": "first"|"second"|"equal"|"skip"}
//                                      200 {"ok": true, "remaining"}; 400 malformed; 404 unknown; 409 already labelled
//   GET  /api/session/{id}/state       {"session", "status", "pending", "completed", "labels", "step"}
// Errors are {"version": 1, "error": "<message>"}.
//
// Handlers only touch the SessionStore, whose mutex makes it the single
// writer; the training thread blocks in HumanTeacher::label until the store
// reports the session complete.

#include <chrono>
#include <condition_variable>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "pbrl/env.hpp"
#include "pbrl/orchestrator.hpp"
#include "pbrl/teachers.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro clashes with
// Eigen parameter names.
#include "httplib.h"

namespace pbrl::service {

inline constexpr int kApiVersion = 1;

enum class SessionStatus { active, suspended, completed };

inline std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::active: return "active";
    case SessionStatus::suspended: return "suspended";
    case SessionStatus::completed: return "completed";
  }
  return "active";
}

inline std::optional<teachers::Label> choice_from_string(const std::string& c) {
  if (c == "first") return teachers::Label::prefer_first;
  if (c == "second") return teachers::Label::prefer_second;
  if (c == "equal") return teachers::Label::equal;
  if (c == "skip") return teachers::Label::discard;
  return std::nullopt;
}

inline std::string choice_to_string(teachers::Label l) {
  return l == teachers::Label::discard ? "skip" : teachers::to_string(l);
}

struct PendingPair {
  int pair_id = 0;
  nlohmann::json trace_a;
  nlohmann::json trace_b;
  nlohmann::json meta;
};

struct LabelSession {
  int id = 0;
  long step = 0;
  std::vector<PendingPair> pairs;
  std::map<int, teachers::Label> labels;  // pair_id → label; each pair at most once
  SessionStatus status = SessionStatus::active;

  std::size_t pending() const { return pairs.size() - labels.size(); }
};

enum class SubmitResult { ok, unknown_session, unknown_pair, already_labelled, session_closed };

class SessionStore {
 public:
  int open(long step, std::vector<PendingPair> pairs) {
    std::lock_guard lock(mu_);
    if (active_ && sessions_.at(*active_).status != SessionStatus::completed)
      throw StateError("a labelling session is already open");
    const int id = next_id_++;
    LabelSession s;
    s.id = id;
    s.step = step;
    s.pairs = std::move(pairs);
    if (s.pairs.empty()) s.status = SessionStatus::completed;
    sessions_[id] = std::move(s);
    active_ = id;
    cv_.notify_all();
    return id;
  }

  SubmitResult submit(int session, int pair_id, teachers::Label label) {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(session);
    if (it == sessions_.end()) return SubmitResult::unknown_session;
    LabelSession& s = it->second;
    bool known = false;
    for (const auto& p : s.pairs) known = known || p.pair_id == pair_id;
    if (!known) return SubmitResult::unknown_pair;
    if (s.labels.count(pair_id)) return SubmitResult::already_labelled;
    if (s.status == SessionStatus::completed) return SubmitResult::session_closed;
    s.labels.emplace(pair_id, label);
    if (s.pending() == 0) {
      s.status = SessionStatus::completed;
      cv_.notify_all();
    }
    return SubmitResult::ok;
  }

  // Blocks until the session completes or the timeout passes; a timeout marks
  // it suspended, and a later completion still resumes the waiter.
  bool wait(int session, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    const bool done = cv_.wait_for(lock, timeout, [&] {
      return sessions_.at(session).status == SessionStatus::completed;
    });
    if (!done) sessions_.at(session).status = SessionStatus::suspended;
    return done;
  }

  std::optional<LabelSession> get(int session) const {
    std::lock_guard lock(mu_);
    const auto it = sessions_.find(session);
    if (it == sessions_.end()) return std::nullopt;
    return it->second;
  }

  std::optional<LabelSession> active() const {
    std::lock_guard lock(mu_);
    if (!active_) return std::nullopt;
    const auto& s = sessions_.at(*active_);
    if (s.status == SessionStatus::completed) return std::nullopt;
    return s;
  }

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<int, LabelSession> sessions_;
  std::optional<int> active_;
  int next_id_ = 1;
};

// ---- HTTP ----------------------------------------------------------------------

class LabelingServer {
 public:
  explicit LabelingServer(SessionStore& store, std::string static_dir = "") : store_(store) {
    if (!static_dir.empty()) server_.set_mount_point("/", static_dir);
    routes();
  }

  ~LabelingServer() { stop(); }

  LabelingServer(const LabelingServer&) = delete;
  LabelingServer& operator=(const LabelingServer&) = delete;

  // Binds and serves on a background thread; port 0 picks a free port.
  int start(const std::string& host, int port) {
    bound_port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound_port_ < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound_port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return bound_port_; }

 private:
  static void reply(httplib::Response& res, int status, nlohmann::json body) {
    body["version"] = kApiVersion;
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void error(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, {{"error", message}});
  }

  static std::optional<int> parse_id(const std::string& s) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(s, &used);
      if (used != s.size()) return std::nullopt;
      return v;
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }

  void routes() {
    server_.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
      const auto s = store_.active();
      if (!s) return reply(res, 200, {{"status", "idle"}, {"pairs", nlohmann::json::array()}});
      reply(res, 200,
            {{"status", to_string(s->status)}, {"session", s->id}, {"step", s->step}, {"pending", s->pending()},
             {"total", s->pairs.size()}});
    });

    server_.Get(R"(/api/session/([^/]+)/pending)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      const auto s = id ? store_.get(*id) : std::nullopt;
      if (!s) return error(res, 404, "unknown session");
      nlohmann::json pairs = nlohmann::json::array();
      for (const auto& p : s->pairs)
        if (!s->labels.count(p.pair_id))
          pairs.push_back({{"pair_id", p.pair_id}, {"trace_a", p.trace_a}, {"trace_b", p.trace_b}, {"meta", p.meta}});
      reply(res, 200, {{"session", s->id}, {"status", to_string(s->status)}, {"pairs", pairs}});
    });

    server_.Get(R"(/api/session/([^/]+)/state)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      const auto s = id ? store_.get(*id) : std::nullopt;
      if (!s) return error(res, 404, "unknown session");
      nlohmann::json labels = nlohmann::json::object();
      for (const auto& [pid, l] : s->labels) labels[std::to_string(pid)] = choice_to_string(l);
      reply(res, 200,
            {{"session", s->id}, {"status", to_string(s->status)}, {"pending", s->pending()},
             {"completed", s->labels.size()}, {"labels", labels}, {"step", s->step}});
    });

    server_.Post(R"(/api/session/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
      const auto id = parse_id(req.matches[1]);
      if (!id) return error(res, 404, "unknown session");
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded() || !body.is_object() || !body.contains("pair_id") ||
          !body["pair_id"].is_number_integer() || !body.contains("choice") || !body["choice"].is_string())
        return error(res, 400, "body must be {\"pair_id\": int, \"choice\": string}");
      const auto choice = choice_from_string(body["choice"].get<std::string>());
      if (!choice) return error(res, 400, "choice must be first, second, equal or skip");
      switch (store_.submit(*id, body["pair_id"].get<int>(), *choice)) {
        case SubmitResult::ok: {
          const auto s = store_.get(*id);
          return reply(res, 200, {{"ok", true}, {"remaining", s ? s->pending() : 0}});
        }
        case SubmitResult::unknown_session: return error(res, 404, "unknown session");
        case SubmitResult::unknown_pair: return error(res, 404, "unknown pair");
        case SubmitResult::already_labelled: return error(res, 409, "pair already labelled");
        case SubmitResult::session_closed: return error(res, 409, "session already completed");
      }
    });
  }

  SessionStore& store_;
  httplib::Server server_;
  std::thread thread_;
  int bound_port_ = -1;
};

// ---- the human label source ------------------------------------------------------

class HumanTeacher : public LabelSource {
 public:
  explicit HumanTeacher(SessionStore& store, std::chrono::milliseconds suspend_after = std::chrono::minutes(10))
      : store_(store), suspend_after_(suspend_after) {}

  std::vector<teachers::Label> label(const LabelRequest& request, const teachers::ReturnStats*) override {
    if (!request.pairs || !request.spec) throw ProtocolError("human label request needs pairs and an env spec");
    std::vector<PendingPair> pending;
    int pid = 0;
    for (const auto& [a, b] : *request.pairs) {
      pending.push_back({pid++, env::to_json(env::render_trace(*request.spec, a.states)),
                         env::to_json(env::render_trace(*request.spec, b.states)),
                         {{"episode_a", a.episode},
                          {"start_a", a.start_step},
                          {"episode_b", b.episode},
                          {"start_b", b.start_step},
                          {"length", a.length()}}});
    }
    last_session_ = store_.open(request.step, std::move(pending));
    // The loop never moves past the feedback step until every pair is resolved.
    while (!store_.wait(last_session_, suspend_after_)) ++suspensions_;
    const auto s = store_.get(last_session_);
    std::vector<teachers::Label> out;
    for (std::size_t i = 0; i < request.pairs->size(); ++i) out.push_back(s->labels.at(static_cast<int>(i)));
    return out;
  }

  std::string style_name() const override { return "human"; }

  int last_session() const { return last_session_; }
  std::size_t suspensions() const { return suspensions_; }

 private:
  SessionStore& store_;
  std::chrono::milliseconds suspend_after_;
  int last_session_ = 0;
  std::size_t suspensions_ = 0;
};

}  // namespace pbrl::service
