#include "cshi/service.hpp"

#include <fstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"
#include "http_util.hpp"

namespace cshi {

void to_json(Json& j, const SessionEvent& v) {
  j = Json{{"seq", v.seq}, {"kind", v.kind}, {"payload", v.payload}};
}

void from_json(const Json& j, SessionEvent& v) {
  v.seq = j.at("seq").get<std::uint64_t>();
  v.kind = j.at("kind").get<std::string>();
  v.payload = j.at("payload");
}

namespace {

std::string_view to_string(ControlMode mode) {
  return mode == ControlMode::kAuto ? "auto" : "takeover";
}

ControlMode mode_from_string(const std::string& text) {
  if (text == "auto") return ControlMode::kAuto;
  if (text == "takeover") return ControlMode::kTakeover;
  throw Error(ErrorCode::kPrecondition, "unknown control mode '" + text + "'");
}

bool valid_session_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) {
      return false;
    }
  }
  return id != "." && id != "..";
}

}  // namespace

struct SessionService::Live {
  mutable std::mutex mutex;
  mutable std::condition_variable changed;
  std::atomic<bool> busy{false};
  SessionState state;
  SessionSeed seed;
  ControlMode mode = ControlMode::kAuto;
  int round = 0;
  std::optional<int> hit_rank;
  std::shared_ptr<TitleOracle> oracle;
  std::unique_ptr<UserSimulator> simulator;
  std::unique_ptr<CrsAdapter> crs;
  std::vector<SessionEvent> events;
  std::optional<std::filesystem::path> log_path;
};

SessionService::SessionService(ServiceConfig config) : config_(std::move(config)) {
  if (config_.data_dir) std::filesystem::create_directories(*config_.data_dir);
}

SessionService::~SessionService() = default;

std::shared_ptr<SessionService::Live> SessionService::find(const std::string& id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::kSessionNotFound, "session '" + id + "'");
  return it->second;
}

void SessionService::emit(Live& live, const std::string& kind, Json payload) {
  SessionEvent event{live.events.size() + 1, kind, std::move(payload)};
  if (live.log_path) {
    std::ofstream out(*live.log_path, std::ios::app);
    out << Json(event).dump() << '\n';
  }
  live.events.push_back(std::move(event));
  live.changed.notify_all();
}

void SessionService::build_runtime(Live& live, const Json& request) {
  const auto& ctx = config_.experiment;
  if (ctx.catalog == nullptr || !ctx.backend_for || !ctx.crs_for) {
    throw Error(ErrorCode::kConfig, "service needs a catalog, backend and CRS factory");
  }
  auto& seed = live.seed;
  seed.targets.clear();
  for (const auto& id : request.at("target_item_ids")) {
    const std::string key = id.is_string() ? id.get<std::string>() : id.dump();
    seed.targets.push_back(ctx.catalog->at(key));
  }
  if (seed.targets.empty()) throw Error(ErrorCode::kPrecondition, "at least one target required");
  seed.user_record = request.value("user", Json::object());
  if (!seed.user_record.contains("user_id")) seed.user_record["user_id"] = seed.session_id;
  seed.user_id = seed.user_record.at("user_id").is_string()
                     ? seed.user_record.at("user_id").get<std::string>()
                     : seed.user_record.at("user_id").dump();
  seed.persona = request.value("persona", "");
  seed.seed = request.value("seed", session_seed(0, seed.session_id));

  const auto kind = simulator_kind_from_string(request.value("simulator", "cshi"));
  auto backend = ctx.backend_for(seed.session_id);
  auto services = std::make_shared<SimulatorServices>();
  services->catalog = ctx.catalog;
  services->llm = backend;
  services->prompts = ctx.prompts;
  live.oracle = std::make_shared<TitleOracle>(seed.targets);
  services->oracle = live.oracle;
  services->split = ctx.split;
  services->split.k1 = request.value("k1", ctx.split.k1);
  services->split.k2 = request.value("k2", ctx.split.k2);
  services->split.seed = seed.seed;
  services->split.validate();
  services->anonymization = ctx.anonymization;
  services->generation_temperature = ctx.generation_temperature;
  live.simulator = make_simulator(kind, services, ctx.pipeline ? &*ctx.pipeline : nullptr);
  live.crs = ctx.crs_for(seed.session_id, backend);
}

Json SessionService::summary(const Live& live) const {
  return Json{{"session_id", live.state.session_id},
              {"mode", to_string(live.mode)},
              {"round", live.round},
              {"status", live.state.status},
              {"hit_rank", live.hit_rank ? Json(*live.hit_rank) : Json()},
              {"memory", live.state.memory},
              {"transcript", live.state.transcript},
              {"leakage", live.state.leakage},
              {"targets", live.state.target_items},
              {"last_seq", live.events.size()}};
}

Json SessionService::create(const Json& request) {
  if (!request.is_object() || !request.contains("target_item_ids") ||
      !request.at("target_item_ids").is_array()) {
    throw Error(ErrorCode::kPrecondition, "create needs a target_item_ids array");
  }
  auto live = std::make_shared<Live>();
  std::string id = request.value("session_id", "");
  if (id.empty()) id = "s" + std::to_string(next_id_++);
  if (!valid_session_id(id)) throw Error(ErrorCode::kPrecondition, "invalid session id '" + id + "'");
  {
    std::lock_guard lock(mutex_);
    if (sessions_.count(id) > 0) throw Error(ErrorCode::kPrecondition, "session '" + id + "' exists");
  }
  live->seed.session_id = id;
  live->state.session_id = id;
  build_runtime(*live, request);
  live->mode = mode_from_string(request.value("mode", "auto"));
  live->state.target_items = live->seed.targets;
  live->state.rng_seed = live->seed.seed;
  if (auto it = request.find("prefix"); it != request.end() && it->is_array()) {
    for (const auto& m : *it) {
      Message msg;
      msg.role = role_from_string(m.at("role").get<std::string>());
      msg.text = m.at("text").get<std::string>();
      live->state.append(std::move(msg));
    }
  }
  live->state.seed_prefix_length = live->state.transcript.size();

  SimulatorInit init;
  init.raw_user_record = live->seed.user_record;
  init.persona = live->seed.persona;
  init.target_info = target_info(live->seed.targets);
  for (const auto& t : live->seed.targets) init.target_titles.push_back(t.title);
  init.seed = live->seed.seed;
  live->simulator->initialize(live->state, init);

  if (config_.data_dir) {
    live->log_path = *config_.data_dir / (id + ".jsonl");
    std::filesystem::remove(*live->log_path);
  }
  Json created = request;
  created["session_id"] = id;
  created["seed"] = live->seed.seed;
  emit(*live, "created", Json{{"request", created}, {"memory", live->state.memory},
                              {"transcript", live->state.transcript}});

  if (live->mode == ControlMode::kAuto &&
      (live->state.transcript.empty() || live->state.transcript.back().role == Role::kCrs)) {
    auto reply = live->simulator->respond(live->state, 0);
    Message m;
    m.role = Role::kSimulator;
    m.text = reply.text;
    emit(*live, "message", live->state.append(std::move(m)));
  }
  live->state.leakage = audit_leakage(live->state);
  {
    std::lock_guard lock(mutex_);
    sessions_[id] = live;
  }
  std::lock_guard lock(live->mutex);
  return summary(*live);
}

Json SessionService::get(const std::string& id) const {
  auto live = find(id);
  std::lock_guard lock(live->mutex);
  return summary(*live);
}

Json SessionService::list() const {
  std::lock_guard lock(mutex_);
  Json out = Json::array();
  for (const auto& [id, live] : sessions_) {
    std::lock_guard inner(live->mutex);
    out.push_back({{"session_id", id},
                   {"status", live->state.status},
                   {"mode", to_string(live->mode)},
                   {"round", live->round}});
  }
  return out;
}

Json SessionService::patch_profile(const std::string& id, const Json& patch) {
  auto live = find(id);
  if (live->busy) throw Error(ErrorCode::kEditDuringTurn, "session '" + id + "' is mid-turn");
  std::unique_lock lock(live->mutex, std::try_to_lock);
  if (!lock.owns_lock() || live->busy) {
    throw Error(ErrorCode::kEditDuringTurn, "session '" + id + "' is mid-turn");
  }
  if (!patch.is_object()) throw Error(ErrorCode::kPrecondition, "profile patch must be an object");

  AgentMemory memory = live->state.memory;
  std::vector<std::string> texts;
  if (auto it = patch.find("persona_text"); it != patch.end()) {
    memory.long_term.persona_text = it->get<std::string>();
    texts.push_back(memory.long_term.persona_text);
  }
  if (auto it = patch.find("taste_summary"); it != patch.end()) {
    memory.long_term.taste_summary = it->get<std::string>();
    texts.push_back(memory.long_term.taste_summary);
  }
  if (auto it = patch.find("basic_info"); it != patch.end()) {
    memory.long_term.basic_info = it->get<std::map<std::string, std::string>>();
    for (const auto& [k, v] : memory.long_term.basic_info) texts.push_back(v);
  }
  if (auto it = patch.find("facets"); it != patch.end()) {
    memory.real_time = it->get<std::vector<PreferenceFacet>>();
    for (const auto& f : memory.real_time) texts.push_back(f.value);
  }
  for (const auto& t : texts) {
    if (live->oracle->leaks(t)) {
      throw Error(ErrorCode::kLeakageRejected, "profile edit names a target item");
    }
  }
  live->state.memory = std::move(memory);
  emit(*live, "profile", Json{{"memory", live->state.memory}});
  return summary(*live);
}

Json SessionService::post_message(const std::string& id, const Json& body) {
  auto live = find(id);
  std::lock_guard lock(live->mutex);
  if (live->mode != ControlMode::kTakeover) {
    throw Error(ErrorCode::kNotInTakeover, "session '" + id + "' is in auto mode");
  }
  if (live->state.status.kind != StatusKind::kOngoing) {
    throw Error(ErrorCode::kPrecondition, "session '" + id + "' has finished");
  }
  if (!body.is_object() || !body.contains("text") || !body.at("text").is_string() ||
      trim(body.at("text").get<std::string>()).empty()) {
    throw Error(ErrorCode::kPrecondition, "message needs non-empty text");
  }
  Message m;
  m.role = Role::kHuman;
  m.text = body.at("text").get<std::string>();
  m.round = live->round;
  emit(*live, "message", live->state.append(std::move(m)));
  live->state.leakage = audit_leakage(live->state);
  return summary(*live);
}

Json SessionService::control(const std::string& id, const Json& body) {
  if (!body.is_object()) throw Error(ErrorCode::kPrecondition, "control body must be an object");
  if (body.contains("mode")) {
    auto live = find(id);
    std::lock_guard lock(live->mutex);
    const auto mode = mode_from_string(body.at("mode").get<std::string>());
    if (mode != live->mode) {
      live->mode = mode;
      emit(*live, "control", Json{{"mode", to_string(mode)}});
    }
  }
  if (body.value("action", "") == "step") return step(id);
  return get(id);
}

Json SessionService::step(const std::string& id) {
  auto live = find(id);
  std::lock_guard lock(live->mutex);
  if (live->state.status.kind != StatusKind::kOngoing) {
    throw Error(ErrorCode::kPrecondition, "session '" + id + "' has finished");
  }
  live->busy = true;
  struct Clear {
    std::atomic<bool>& flag;
    ~Clear() { flag = false; }
  } clear{live->busy};

  const auto& scenario = config_.experiment.scenario;
  const int round = live->round + 1;
  auto finish = [&](SessionStatus status) {
    live->state.status = std::move(status);
    live->state.leakage = audit_leakage(live->state);
    emit(*live, "status", Json{{"status", live->state.status},
                               {"hit_rank", live->hit_rank ? Json(*live->hit_rank) : Json()}});
  };
  try {
    CrsRequest request{id, round, live->state.transcript, scenario.max_items};
    const auto turn = live->crs->respond(request);
    live->round = round;
    const auto& message = live->state.append(turn.to_message(round));
    emit(*live, "message", message);
    bool success = false;
    if (message.recommended_items) {
      live->hit_rank = live->oracle->first_hit(*message.recommended_items);
      success = live->hit_rank.has_value();
    }
    if (live->mode == ControlMode::kAuto) {
      auto reply = live->simulator->respond(live->state, round);
      Message m;
      m.role = Role::kSimulator;
      m.text = reply.text;
      m.round = round;
      emit(*live, "message", live->state.append(std::move(m)));
    }
    live->state.leakage = audit_leakage(live->state);
    if (success) {
      finish(SessionStatus::succeeded(round));
    } else if (round >= scenario.max_turns) {
      finish(SessionStatus::max_turns(scenario.max_turns));
    }
  } catch (const std::exception& e) {
    finish(SessionStatus::errored(round, e.what()));
  }
  return summary(*live);
}

std::vector<SessionEvent> SessionService::events(const std::string& id, std::uint64_t since) const {
  auto live = find(id);
  std::lock_guard lock(live->mutex);
  std::vector<SessionEvent> out;
  for (const auto& e : live->events) {
    if (e.seq > since) out.push_back(e);
  }
  return out;
}

std::vector<SessionEvent> SessionService::wait_events(const std::string& id, std::uint64_t since,
                                                      std::chrono::milliseconds timeout) const {
  auto live = find(id);
  std::unique_lock lock(live->mutex);
  live->changed.wait_for(lock, timeout, [&] { return live->events.size() > since; });
  std::vector<SessionEvent> out;
  for (const auto& e : live->events) {
    if (e.seq > since) out.push_back(e);
  }
  return out;
}

std::size_t SessionService::reload() {
  if (!config_.data_dir) return 0;
  std::size_t loaded = 0;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(*config_.data_dir)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::vector<SessionEvent> events;
    for (const auto& row : read_jsonl(path)) events.push_back(row.get<SessionEvent>());
    if (events.empty() || events.front().kind != "created") {
      spdlog::warn("{}: event log does not start with 'created'; skipped", path.string());
      continue;
    }
    auto live = std::make_shared<Live>();
    const Json& request = events.front().payload.at("request");
    live->seed.session_id = request.at("session_id").get<std::string>();
    live->state.session_id = live->seed.session_id;
    build_runtime(*live, request);
    live->state.target_items = live->seed.targets;
    live->state.rng_seed = live->seed.seed;
    live->mode = mode_from_string(request.value("mode", "auto"));
    for (const auto& e : events) {
      if (e.kind == "created") {
        live->state.memory = e.payload.at("memory").get<AgentMemory>();
        live->state.transcript = e.payload.at("transcript").get<std::vector<Message>>();
        live->state.seed_prefix_length = live->state.transcript.size();
      } else if (e.kind == "message") {
        auto m = e.payload.get<Message>();
        live->round = std::max(live->round, m.round);
        live->state.transcript.push_back(std::move(m));
      } else if (e.kind == "profile") {
        live->state.memory = e.payload.at("memory").get<AgentMemory>();
      } else if (e.kind == "control") {
        live->mode = mode_from_string(e.payload.at("mode").get<std::string>());
      } else if (e.kind == "status") {
        live->state.status = e.payload.at("status").get<SessionStatus>();
        if (!e.payload.at("hit_rank").is_null()) live->hit_rank = e.payload.at("hit_rank").get<int>();
      }
    }
    live->events = std::move(events);
    live->log_path = path;
    live->state.leakage = audit_leakage(live->state);
    std::lock_guard lock(mutex_);
    sessions_[live->seed.session_id] = live;
    ++loaded;
  }
  return loaded;
}

// ---- HTTP ----------------------------------------------------------------------

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSessionNotFound: return 404;
    case ErrorCode::kEditDuringTurn:
    case ErrorCode::kNotInTakeover: return 409;
    case ErrorCode::kLeakageRejected: return 422;
    case ErrorCode::kPrecondition:
    case ErrorCode::kConfig:
    case ErrorCode::kSchemaMismatch:
    case ErrorCode::kInvalidSplit: return 400;
    default: return 500;
  }
}

void reply_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

struct ServiceServer::Impl {
  SessionService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(SessionService& s) : service(s) { routes(); }

  template <typename F>
  httplib::Server::Handler guard(F f) {
    return [this, f](const httplib::Request& req, httplib::Response& res) {
      const auto& token = service.config().token;
      if (token && req.get_header_value("Authorization") != "Bearer " + *token) {
        reply_json(res, 401, {{"error", "Unauthorized"}});
        return;
      }
      try {
        Json body = Json::object();
        if (!req.body.empty()) {
          body = Json::parse(req.body, nullptr, false);
          if (body.is_discarded()) {
            reply_json(res, 400, {{"error", "body is not JSON"}});
            return;
          }
        }
        f(req, res, body);
      } catch (const Error& e) {
        reply_json(res, http_status(e.code()), {{"error", to_string(e.code())}, {"detail", e.what()}});
      } catch (const Json::exception& e) {
        reply_json(res, 400, {{"error", "Precondition"}, {"detail", e.what()}});
      } catch (const std::exception& e) {
        reply_json(res, 500, {{"error", "Internal"}, {"detail", e.what()}});
      }
    };
  }

  void routes() {
    using Req = const httplib::Request&;
    using Res = httplib::Response&;
    server.Post("/sessions", guard([this](Req, Res res, const Json& body) {
      reply_json(res, 201, service.create(body));
    }));
    server.Get("/sessions", guard([this](Req, Res res, const Json&) {
      reply_json(res, 200, service.list());
    }));
    server.Get(R"(/sessions/([^/]+))", guard([this](Req req, Res res, const Json&) {
      reply_json(res, 200, service.get(req.matches[1]));
    }));
    server.Patch(R"(/sessions/([^/]+)/profile)", guard([this](Req req, Res res, const Json& body) {
      reply_json(res, 200, service.patch_profile(req.matches[1], body));
    }));
    server.Post(R"(/sessions/([^/]+)/messages)", guard([this](Req req, Res res, const Json& body) {
      reply_json(res, 201, service.post_message(req.matches[1], body));
    }));
    server.Post(R"(/sessions/([^/]+)/control)", guard([this](Req req, Res res, const Json& body) {
      reply_json(res, 200, service.control(req.matches[1], body));
    }));
    server.Post(R"(/sessions/([^/]+)/step)", guard([this](Req req, Res res, const Json&) {
      reply_json(res, 200, service.step(req.matches[1]));
    }));
    server.Get(R"(/sessions/([^/]+)/events)", guard([this](Req req, Res res, const Json&) {
      const std::string id = req.matches[1];
      std::uint64_t since = 0;
      if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
      if (req.has_header("Last-Event-ID")) since = std::stoull(req.get_header_value("Last-Event-ID"));
      int wait_ms = 0;
      if (req.has_param("wait_ms")) wait_ms = std::clamp(std::stoi(req.get_param_value("wait_ms")), 0, 60000);
      const auto events = wait_ms > 0 ? service.wait_events(id, since, std::chrono::milliseconds(wait_ms))
                                      : service.events(id, since);
      std::string body;
      for (const auto& e : events) {
        body += "id: " + std::to_string(e.seq) + "\nevent: " + e.kind + "\ndata: " + Json(e).dump() + "\n\n";
      }
      res.status = 200;
      res.set_header("Cache-Control", "no-cache");
      res.set_content(body, "text/event-stream");
    }));
  }
};

ServiceServer::ServiceServer(SessionService& service) : impl_(std::make_unique<Impl>(service)) {}

ServiceServer::~ServiceServer() { stop(); }

int ServiceServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host)
                              : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::kConfig, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ServiceServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

bool ServiceServer::listen(const std::string& host, int port) {
  return impl_->server.listen(host, port);
}

}  // namespace cshi
