#include "cshi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"

namespace cshi {

// ---- TitleOracle -------------------------------------------------------------

TitleOracle::TitleOracle(std::vector<CatalogItem> targets) : targets_(std::move(targets)) {
  for (const auto& t : targets_) normalized_.push_back(normalize_title(t.title));
}

bool TitleOracle::matches(const ItemRef& item) const {
  for (std::size_t i = 0; i < targets_.size(); ++i) {
    if (item.item_id && *item.item_id == targets_[i].item_id) return true;
    if (!item.item_id && !normalized_[i].empty() && normalize_title(item.title) == normalized_[i]) {
      return true;
    }
  }
  return false;
}

bool TitleOracle::leaks(std::string_view text) const {
  return std::any_of(normalized_.begin(), normalized_.end(), [&](const std::string& n) {
    return !n.empty() && contains_title(text, n);
  });
}

std::string TitleOracle::redact(std::string_view text) const {
  std::string out(text);
  for (const auto& n : normalized_) {
    if (!n.empty()) out = redact_title(out, n);
  }
  return out;
}

std::optional<int> TitleOracle::first_hit(const std::vector<ItemRef>& items) const {
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (matches(items[i])) return static_cast<int>(i) + 1;
  }
  return std::nullopt;
}

// ---- scenario ------------------------------------------------------------------

std::string_view to_string(Scenario scenario) {
  return scenario == Scenario::kAnnotated ? "annotated" : "fresh";
}

Scenario scenario_from_string(std::string_view text) {
  if (text == "annotated") return Scenario::kAnnotated;
  if (text == "fresh") return Scenario::kFresh;
  throw Error(ErrorCode::kConfig, "unknown scenario '" + std::string(text) + "'");
}

ScenarioConfig ScenarioConfig::annotated() {
  return ScenarioConfig{Scenario::kAnnotated, 5, 50, {1, 10, 50}, {}};
}

ScenarioConfig ScenarioConfig::fresh() {
  return ScenarioConfig{Scenario::kFresh, 10, 10, {}, {3, 5, 10}};
}

// ---- records -----------------------------------------------------------------

void to_json(Json& j, const TurnTrace& v) {
  j = Json{{"turn", v.turn},
           {"round", v.round},
           {"handled_by", v.handled_by ? Json(*v.handled_by) : Json()},
           {"regenerations", v.regenerations},
           {"redacted", v.redacted},
           {"activated", v.activated}};
}

void from_json(const Json& j, TurnTrace& v) {
  v.turn = j.at("turn").get<int>();
  v.round = j.at("round").get<int>();
  v.handled_by.reset();
  if (j.contains("handled_by") && !j.at("handled_by").is_null()) {
    v.handled_by = j.at("handled_by").get<std::string>();
  }
  v.regenerations = j.value("regenerations", 0);
  v.redacted = j.value("redacted", false);
  v.activated = j.value("activated", std::vector<PreferenceFacet>{});
}

SessionOutcome SessionResult::outcome() const {
  SessionOutcome o;
  o.status = state.status.kind;
  if (o.status == StatusKind::kSucceeded) {
    o.success_round = state.status.round;
    o.hit_rank = hit_rank;
  }
  o.history_leak = state.leakage.history_leak;
  o.response_leak = state.leakage.response_leak;
  return o;
}

Json session_record(const SessionResult& result, const ScenarioConfig& scenario,
                    std::string_view simulator) {
  Json j{{"session_id", result.seed.session_id},
         {"user_id", result.seed.user_id},
         {"conversation_id",
          result.seed.conversation_id ? Json(*result.seed.conversation_id) : Json()},
         {"scenario", to_string(scenario.kind)},
         {"simulator", simulator},
         {"max_turns", scenario.max_turns},
         {"seed", result.seed.seed},
         {"state", result.state},
         {"hit_rank", result.hit_rank ? Json(*result.hit_rank) : Json()},
         {"outcome", result.outcome()},
         {"traces", result.traces}};
  return j;
}

SessionResult session_from_record(const Json& record) {
  SessionResult r;
  r.seed.session_id = record.at("session_id").get<std::string>();
  r.seed.user_id = record.value("user_id", "");
  if (record.contains("conversation_id") && !record.at("conversation_id").is_null()) {
    r.seed.conversation_id = record.at("conversation_id").get<std::string>();
  }
  r.seed.seed = record.value("seed", std::uint64_t{0});
  r.state = record.at("state").get<SessionState>();
  r.seed.targets = r.state.target_items;
  if (record.contains("hit_rank") && !record.at("hit_rank").is_null()) {
    r.hit_rank = record.at("hit_rank").get<int>();
  }
  r.traces = record.value("traces", std::vector<TurnTrace>{});
  return r;
}

// ---- sessions ----------------------------------------------------------------

std::vector<AttributeMap> target_info(const std::vector<CatalogItem>& targets) {
  std::vector<AttributeMap> out;
  for (const auto& t : targets) out.push_back(t.attributes);
  return out;
}

LeakageFlags audit_leakage(const SessionState& state) {
  std::vector<LeakEvidence> evidence;
  for (std::size_t i = 0; i < state.transcript.size(); ++i) {
    const auto& m = state.transcript[i];
    const bool prefix = i < state.seed_prefix_length;
    if (!prefix && m.role != Role::kSimulator) continue;
    for (const auto& target : state.target_items) {
      const std::string n = normalize_title(target.title);
      if (!n.empty() && contains_title(m.text, n)) {
        evidence.push_back({prefix ? LeakKind::kHistory : LeakKind::kResponse, m.turn, target.title});
      }
    }
  }
  return LeakageFlags::from_evidence(std::move(evidence));
}

namespace {

void reply_into(SessionState& state, UserSimulator& simulator, int round,
                std::vector<TurnTrace>& traces) {
  auto reply = simulator.respond(state, round);
  Message m;
  m.role = Role::kSimulator;
  m.text = reply.text;
  m.round = round;
  const auto& appended = state.append(std::move(m));
  traces.push_back(TurnTrace{appended.turn, round, reply.handled_by, reply.regenerations,
                             reply.redacted, std::move(reply.activated)});
}

}  // namespace

SessionResult run_session(const SessionSeed& seed, const ExperimentContext& ctx) {
  if (!ctx.backend_for || !ctx.crs_for) {
    throw Error(ErrorCode::kPrecondition, "experiment needs backend and CRS factories");
  }
  SessionResult result;
  result.seed = seed;
  auto& state = result.state;
  state.session_id = seed.session_id;
  state.target_items = seed.targets;
  state.rng_seed = seed.seed;
  for (const auto& m : seed.prefix) {
    Message copy = m;
    copy.round = 0;
    state.append(std::move(copy));
  }
  state.seed_prefix_length = state.transcript.size();

  auto oracle = std::make_shared<TitleOracle>(seed.targets);
  int round = 0;
  try {
    auto backend = ctx.backend_for(seed.session_id);
    auto services = std::make_shared<SimulatorServices>();
    services->catalog = ctx.catalog;
    services->llm = backend;
    services->prompts = ctx.prompts;
    services->oracle = oracle;
    services->split = ctx.split;
    services->split.seed = seed.seed;
    services->anonymization = ctx.anonymization;
    services->generation_temperature = ctx.generation_temperature;

    auto simulator =
        make_simulator(ctx.simulator, services, ctx.pipeline ? &*ctx.pipeline : nullptr);
    auto crs = ctx.crs_for(seed.session_id, backend);

    SimulatorInit init;
    init.raw_user_record = seed.user_record;
    init.persona = seed.persona;
    init.target_info = target_info(seed.targets);
    for (const auto& t : seed.targets) init.target_titles.push_back(t.title);
    init.seed = seed.seed;
    simulator->initialize(state, init);

    if (state.transcript.empty() || state.transcript.back().role == Role::kCrs) {
      reply_into(state, *simulator, 0, result.traces);
    }
    for (round = 1; round <= ctx.scenario.max_turns; ++round) {
      CrsRequest request{seed.session_id, round, state.transcript, ctx.scenario.max_items};
      const auto turn = crs->respond(request);
      const auto& message = state.append(turn.to_message(round));
      if (message.recommended_items) {
        if (auto rank = oracle->first_hit(*message.recommended_items)) {
          result.hit_rank = rank;
          state.status = SessionStatus::succeeded(round);
          reply_into(state, *simulator, round, result.traces);
          break;
        }
      }
      reply_into(state, *simulator, round, result.traces);
    }
    if (state.status.kind == StatusKind::kOngoing) {
      state.status = SessionStatus::max_turns(ctx.scenario.max_turns);
    }
  } catch (const std::exception& e) {
    spdlog::warn("session {} errored in round {}: {}", seed.session_id, round, e.what());
    state.status = SessionStatus::errored(round, e.what());
  }
  state.leakage = audit_leakage(state);
  return result;
}

std::vector<SessionResult> run_experiment(const std::vector<SessionSeed>& seeds,
                                          const ExperimentContext& ctx) {
  std::vector<SessionResult> results(seeds.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < seeds.size(); i = next++) {
      results[i] = run_session(seeds[i], ctx);
      spdlog::info("session {} -> {}", seeds[i].session_id, to_string(results[i].state.status.kind));
    }
  };
  const int workers = std::max(1, std::min<int>(ctx.workers, static_cast<int>(seeds.size())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  return results;
}

// ---- seeds ---------------------------------------------------------------------

std::uint64_t session_seed(std::uint64_t base, const std::string& session_id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : session_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = h ^ (base + 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

Json user_record(const std::string& user_id, const std::vector<RatingRecord>& history,
                 const std::map<std::string, Json>& users, std::string& persona) {
  Json record = Json::object();
  if (auto it = users.find(user_id); it != users.end()) {
    record = it->second;
    if (record.contains("persona")) {
      persona = record.at("persona").is_string() ? record.at("persona").get<std::string>() : "";
      record.erase("persona");
    }
  }
  record["user_id"] = user_id;
  record["ratings"] = history;
  return record;
}

}  // namespace

std::vector<SessionSeed> fresh_seeds(const Catalog& catalog,
                                     const std::vector<RatingRecord>& ratings,
                                     const std::map<std::string, Json>& users,
                                     std::uint64_t base_seed, std::size_t holdout) {
  std::vector<SessionSeed> out;
  for (const auto& [user_id, split] : holdout_latest(ratings, holdout)) {
    std::vector<RatingRecord> history;
    for (const auto& r : split.history) {
      if (catalog.find(r.item_id) != nullptr) history.push_back(r);
    }
    for (const auto& target : split.held_out) {
      const auto* item = catalog.find(target.item_id);
      if (item == nullptr) {
        spdlog::warn("held-out item {} of user {} is not in the catalog", target.item_id, user_id);
        continue;
      }
      SessionSeed seed;
      seed.session_id = user_id + "-" + item->item_id;
      seed.user_id = user_id;
      seed.user_record = user_record(user_id, history, users, seed.persona);
      seed.targets = {*item};
      seed.seed = session_seed(base_seed, seed.session_id);
      out.push_back(std::move(seed));
    }
  }
  return out;
}

std::vector<SessionSeed> annotated_seeds(const Catalog& catalog,
                                         const std::vector<Conversation>& conversations,
                                         const std::vector<RatingRecord>& ratings,
                                         const std::map<std::string, Json>& users,
                                         std::uint64_t base_seed) {
  std::map<std::string, std::vector<RatingRecord>> by_user;
  for (const auto& r : ratings) {
    if (catalog.find(r.item_id) != nullptr) by_user[r.user_id].push_back(r);
  }
  std::vector<SessionSeed> out;
  for (const auto& c : conversations) {
    SessionSeed seed;
    for (const auto& id : c.target_item_ids) {
      if (const auto* item = catalog.find(id)) seed.targets.push_back(*item);
    }
    if (seed.targets.empty()) {
      spdlog::warn("conversation {} has no target in the catalog; skipped", c.conversation_id);
      continue;
    }
    const TitleOracle oracle(seed.targets);
    for (const auto& t : c.turns) {
      if (t.role == Role::kCrs && oracle.leaks(t.text)) break;
      Message m;
      m.role = t.role == Role::kCrs ? Role::kCrs : Role::kSimulator;
      m.text = t.text;
      seed.prefix.push_back(std::move(m));
    }
    seed.session_id = c.conversation_id;
    seed.conversation_id = c.conversation_id;
    seed.user_id = c.user_id.value_or(c.conversation_id);
    const auto rs = by_user.find(seed.user_id);
    seed.user_record = user_record(seed.user_id,
                                   rs != by_user.end() ? rs->second : std::vector<RatingRecord>{},
                                   users, seed.persona);
    seed.seed = session_seed(base_seed, seed.session_id);
    out.push_back(std::move(seed));
  }
  return out;
}

// ---- outputs -------------------------------------------------------------------

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string per_turn_csv(const std::vector<SessionResult>& results) {
  std::ostringstream out;
  out << "session_id,turn,round,role,action,n_items,target_rank,handled_by,regenerations,"
         "redacted,activated,text\n";
  for (const auto& r : results) {
    const TitleOracle oracle(r.state.target_items);
    for (const auto& m : r.state.transcript) {
      const TurnTrace* trace = nullptr;
      for (const auto& t : r.traces) {
        if (t.turn == m.turn) trace = &t;
      }
      std::string rank;
      std::size_t n_items = 0;
      if (m.recommended_items) {
        n_items = m.recommended_items->size();
        if (auto hit = oracle.first_hit(*m.recommended_items)) rank = std::to_string(*hit);
      }
      std::vector<std::string> activated;
      if (trace != nullptr) {
        for (const auto& f : trace->activated) activated.push_back(f.attribute + "=" + f.value);
      }
      out << csv_field(r.state.session_id) << ',' << m.turn << ',' << m.round << ','
          << to_string(m.role) << ',' << csv_field(m.action.value_or("")) << ',' << n_items << ','
          << rank << ',' << (trace && trace->handled_by ? *trace->handled_by : "") << ','
          << (trace ? trace->regenerations : 0) << ',' << (trace && trace->redacted ? 1 : 0) << ','
          << csv_field(join(activated, ";")) << ',' << csv_field(m.text) << '\n';
    }
  }
  return out.str();
}

RunOutputs summarize(const std::vector<SessionResult>& results, const ExperimentContext& ctx,
                     const Json& config) {
  RunOutputs out;
  std::vector<SessionOutcome> outcomes;
  for (const auto& r : results) {
    outcomes.push_back(r.outcome());
    out.sessions.push_back(session_record(r, ctx.scenario, to_string(ctx.simulator)));
  }
  ReportSpec spec;
  spec.scenario = std::string(to_string(ctx.scenario.kind));
  spec.simulator = std::string(to_string(ctx.simulator));
  spec.max_turns = ctx.scenario.max_turns;
  spec.ks = ctx.scenario.ks;
  spec.ts = ctx.scenario.ts;
  spec.config = config;
  out.report = build_report(outcomes, spec);
  out.per_turn_csv = per_turn_csv(results);
  return out;
}

void write_outputs(const RunOutputs& outputs, const std::filesystem::path& directory) {
  std::filesystem::create_directories(directory);
  {
    std::ofstream report(directory / "report.json", std::ios::trunc);
    if (!report) throw Error(ErrorCode::kConfig, "cannot write into " + directory.string());
    report << outputs.report.dump(2) << '\n';
  }
  write_jsonl(directory / "sessions.jsonl", outputs.sessions);
  std::ofstream csv(directory / "per_turn.csv", std::ios::trunc);
  csv << outputs.per_turn_csv;
}

}  // namespace cshi
