#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cshi/harness.hpp"

namespace cshi {

struct SessionEvent {
  std::uint64_t seq = 0;
  std::string kind;  // created | message | profile | control | status
  Json payload;
};

void to_json(Json& j, const SessionEvent& v);
void from_json(const Json& j, SessionEvent& v);

enum class ControlMode { kAuto, kTakeover };

struct ServiceConfig {
  ExperimentContext experiment;
  // Append-only event log per session (<dir>/<session_id>.jsonl).
  std::optional<std::filesystem::path> data_dir;
  // When set, every request must carry "Authorization: Bearer <token>".
  std::optional<std::string> token;
};

// Interactive sessions for the operator UI. Every mutation is recorded as
// an event; the event log alone is enough to rebuild a session.
class SessionService {
 public:
  explicit SessionService(ServiceConfig config);
  ~SessionService();

  // {user, persona?, target_item_ids, prefix?, seed?, simulator?, mode?}
  Json create(const Json& request);
  Json get(const std::string& id) const;
  Json list() const;
  // {persona_text?, taste_summary?, basic_info?, facets?}; rejects text
  // naming a target (kLeakageRejected) and edits while a turn runs.
  Json patch_profile(const std::string& id, const Json& patch);
  // Human turn in takeover mode: {text}.
  Json post_message(const std::string& id, const Json& body);
  // {mode: "auto" | "takeover"} and/or {action: "step"}.
  Json control(const std::string& id, const Json& body);
  // One round: CRS turn, then the simulator's reply in auto mode.
  Json step(const std::string& id);

  std::vector<SessionEvent> events(const std::string& id, std::uint64_t since = 0) const;
  // Blocks until an event newer than `since` exists or the timeout passes.
  std::vector<SessionEvent> wait_events(const std::string& id, std::uint64_t since,
                                        std::chrono::milliseconds timeout) const;

  // Rebuilds sessions from the event logs in data_dir.
  std::size_t reload();

  const ServiceConfig& config() const { return config_; }

 private:
  struct Live;
  std::shared_ptr<Live> find(const std::string& id) const;
  void emit(Live& live, const std::string& kind, Json payload);
  void build_runtime(Live& live, const Json& request);
  Json summary(const Live& live) const;

  ServiceConfig config_;
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Live>> sessions_;
  std::atomic<std::uint64_t> next_id_{1};
};

// REST front end: /sessions, /sessions/{id}, /sessions/{id}/profile,
// /sessions/{id}/messages, /sessions/{id}/control, /sessions/{id}/step and
// /sessions/{id}/events (server-sent events).
class ServiceServer {
 public:
  explicit ServiceServer(SessionService& service);
  ~ServiceServer();

  // Binds and serves on a background thread; returns the bound port.
  int start(const std::string& host, int port);
  void stop();
  // Serves on the calling thread.
  bool listen(const std::string& host, int port);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cshi
