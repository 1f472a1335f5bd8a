#include "cshi/domain.hpp"

#include <algorithm>
#include <set>

#include "cshi/error.hpp"
#include "cshi/text.hpp"

namespace cshi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPrecondition: return "PreconditionViolation";
    case ErrorCode::kConfig: return "ConfigError";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kDuplicatePlugin: return "DuplicatePlugin";
    case ErrorCode::kUnknownStage: return "UnknownStage";
    case ErrorCode::kPluginFailure: return "PluginFailure";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kInvalidSplit: return "InvalidSplit";
    case ErrorCode::kUnparseableValue: return "UnparseableValue";
    case ErrorCode::kBackendError: return "BackendError";
    case ErrorCode::kBackendUnavailable: return "BackendUnavailable";
    case ErrorCode::kRateLimited: return "RateLimited";
    case ErrorCode::kScriptMiss: return "ScriptMiss";
    case ErrorCode::kReplayMiss: return "ReplayMiss";
    case ErrorCode::kProtocolViolation: return "ProtocolViolation";
    case ErrorCode::kAdapterError: return "AdapterError";
    case ErrorCode::kSessionNotFound: return "SessionNotFound";
    case ErrorCode::kEditDuringTurn: return "EditDuringTurn";
    case ErrorCode::kNotInTakeover: return "NotInTakeover";
    case ErrorCode::kLeakageRejected: return "LeakageRejected";
  }
  return "Unknown";
}

const std::vector<std::string>& default_attribute_vocabulary() {
  static const std::vector<std::string> kVocabulary = {
      attr::kGenre,       attr::kDirector, attr::kActor,       attr::kLanguage,
      attr::kReleaseDate, attr::kRuntime,  attr::kPlotKeywords};
  return kVocabulary;
}

Catalog::Catalog(std::vector<CatalogItem> items) : items_(std::move(items)) {
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const auto& item = items_[i];
    if (item.item_id.empty()) {
      throw Error(ErrorCode::kSchemaMismatch, "catalog item without item_id");
    }
    if (!by_id_.emplace(item.item_id, i).second) {
      throw Error(ErrorCode::kSchemaMismatch, "duplicate item_id '" + item.item_id + "'");
    }
    if (auto it = item.attributes.find(attr::kReleaseDate); it != item.attributes.end()) {
      for (const auto& v : it->second) {
        if (!parse_calendar_date(v)) {
          throw Error(ErrorCode::kSchemaMismatch,
                      "item " + item.item_id + ": release_date '" + v + "' is not a full date");
        }
      }
    }
    if (auto it = item.attributes.find(attr::kRuntime); it != item.attributes.end()) {
      for (const auto& v : it->second) {
        if (!parse_runtime_minutes(v)) {
          throw Error(ErrorCode::kSchemaMismatch,
                      "item " + item.item_id + ": runtime '" + v + "' is not a minute count");
        }
      }
    }
    by_title_.emplace(normalize_title(item.title), i);
  }
}

const CatalogItem* Catalog::find(const std::string& item_id) const {
  auto it = by_id_.find(item_id);
  return it == by_id_.end() ? nullptr : &items_[it->second];
}

const CatalogItem& Catalog::at(const std::string& item_id) const {
  if (const auto* item = find(item_id)) return *item;
  throw Error(ErrorCode::kSchemaMismatch, "unknown item_id '" + item_id + "'");
}

const CatalogItem* Catalog::find_by_title(const std::string& title) const {
  auto it = by_title_.find(normalize_title(title));
  return it == by_title_.end() ? nullptr : &items_[it->second];
}

std::vector<std::string> Catalog::attribute_vocabulary() const {
  std::vector<std::string> out = default_attribute_vocabulary();
  std::set<std::string> seen(out.begin(), out.end());
  for (const auto& item : items_) {
    for (const auto& [name, values] : item.attributes) {
      if (seen.insert(name).second) out.push_back(name);
    }
  }
  return out;
}

Intent Intent::ask(std::string rel_attr) {
  if (rel_attr.empty()) {
    throw Error(ErrorCode::kPrecondition, "ask intent requires a related attribute");
  }
  return Intent(IntentKind::kAsk, std::move(rel_attr));
}

LeakageFlags LeakageFlags::from_evidence(std::vector<LeakEvidence> evidence) {
  LeakageFlags flags;
  for (const auto& e : evidence) {
    (e.kind == LeakKind::kHistory ? flags.history_leak : flags.response_leak) = true;
  }
  flags.evidence = std::move(evidence);
  return flags;
}

const Message& SessionState::append(Message message) {
  message.turn = next_turn();
  transcript.push_back(std::move(message));
  return transcript.back();
}

int SessionState::crs_turns() const {
  return static_cast<int>(std::count_if(
      transcript.begin() + static_cast<std::ptrdiff_t>(seed_prefix_length), transcript.end(),
      [](const Message& m) { return m.role == Role::kCrs; }));
}

std::string_view to_string(Role role) {
  switch (role) {
    case Role::kSimulator: return "simulator";
    case Role::kCrs: return "crs";
    case Role::kHuman: return "human";
  }
  return "simulator";
}

std::string_view to_string(IntentKind kind) {
  switch (kind) {
    case IntentKind::kAsk: return "ask";
    case IntentKind::kRecommend: return "recommend";
    case IntentKind::kChitChat: return "chit-chat";
  }
  return "chit-chat";
}

std::string_view to_string(Visibility visibility) {
  return visibility == Visibility::kKnown ? "known" : "unknown";
}

std::string_view to_string(StatusKind kind) {
  switch (kind) {
    case StatusKind::kOngoing: return "ongoing";
    case StatusKind::kSucceeded: return "succeeded";
    case StatusKind::kMaxTurnsReached: return "max_turns_reached";
    case StatusKind::kErrored: return "errored";
  }
  return "ongoing";
}

Role role_from_string(std::string_view text) {
  const std::string t = to_lower(text);
  if (t == "crs" || t == "assistant" || t == "system" || t == "recommender") return Role::kCrs;
  if (t == "human") return Role::kHuman;
  if (t == "simulator" || t == "user" || t == "seeker") return Role::kSimulator;
  throw Error(ErrorCode::kSchemaMismatch, "unknown role '" + std::string(text) + "'");
}

StatusKind status_kind_from_string(std::string_view text) {
  for (auto k : {StatusKind::kOngoing, StatusKind::kSucceeded, StatusKind::kMaxTurnsReached,
                 StatusKind::kErrored}) {
    if (to_string(k) == text) return k;
  }
  throw Error(ErrorCode::kSchemaMismatch, "unknown status '" + std::string(text) + "'");
}

// ---- JSON ---------------------------------------------------------------

void to_json(Json& j, const CatalogItem& v) {
  j = Json{{"item_id", v.item_id}, {"title", v.title}, {"attributes", v.attributes}};
  j["year"] = v.year ? Json(*v.year) : Json(nullptr);
}

void from_json(const Json& j, CatalogItem& v) {
  v.item_id = j.at("item_id").is_string() ? j.at("item_id").get<std::string>()
                                           : j.at("item_id").dump();
  v.title = j.at("title").get<std::string>();
  v.year.reset();
  if (auto it = j.find("year"); it != j.end() && it->is_number_integer()) v.year = it->get<int>();
  v.attributes.clear();
  if (auto it = j.find("attributes"); it != j.end()) {
    for (const auto& [name, values] : it->items()) {
      auto& out = v.attributes[name];
      if (values.is_array()) {
        for (const auto& value : values) {
          out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
        }
      } else {
        out.push_back(values.is_string() ? values.get<std::string>() : values.dump());
      }
    }
  }
}

void to_json(Json& j, const RatingRecord& v) {
  j = Json{{"user_id", v.user_id}, {"item_id", v.item_id}, {"rating", v.rating}};
  j["timestamp"] = v.timestamp ? Json(*v.timestamp) : Json(nullptr);
}

namespace {
std::string id_string(const Json& j) { return j.is_string() ? j.get<std::string>() : j.dump(); }
}  // namespace

void from_json(const Json& j, RatingRecord& v) {
  v.user_id = id_string(j.at("user_id"));
  v.item_id = id_string(j.at("item_id"));
  v.rating = j.at("rating").get<double>();
  v.timestamp.reset();
  if (auto it = j.find("timestamp"); it != j.end() && it->is_number()) {
    v.timestamp = it->get<std::int64_t>();
  }
}

void to_json(Json& j, const UserProfile& v) {
  j = Json{{"user_id", v.user_id},
           {"persona_text", v.persona_text},
           {"taste_summary", v.taste_summary},
           {"basic_info", v.basic_info},
           {"interaction_history", v.interaction_history}};
}

void from_json(const Json& j, UserProfile& v) {
  v.user_id = j.value("user_id", "");
  v.persona_text = j.value("persona_text", "");
  v.taste_summary = j.value("taste_summary", "");
  v.basic_info = j.value("basic_info", std::map<std::string, std::string>{});
  v.interaction_history = j.value("interaction_history", std::vector<RatingRecord>{});
}

void to_json(Json& j, const PreferenceFacet& v) {
  j = Json{{"attribute", v.attribute},
           {"value", v.value},
           {"visibility", to_string(v.visibility)},
           {"origin", v.origin == FacetOrigin::kInitial ? "initial" : "activated"},
           {"anonymized", v.anonymized}};
  if (v.promoted_at_round) j["promoted_at_round"] = *v.promoted_at_round;
}

void from_json(const Json& j, PreferenceFacet& v) {
  v.attribute = j.at("attribute").get<std::string>();
  v.value = j.at("value").get<std::string>();
  v.visibility = j.value("visibility", "known") == "unknown" ? Visibility::kUnknown
                                                              : Visibility::kKnown;
  v.origin = j.value("origin", "initial") == "activated" ? FacetOrigin::kActivated
                                                         : FacetOrigin::kInitial;
  v.anonymized = j.value("anonymized", false);
  v.promoted_at_round.reset();
  if (auto it = j.find("promoted_at_round"); it != j.end() && it->is_number_integer()) {
    v.promoted_at_round = it->get<int>();
  }
}

void to_json(Json& j, const ItemRef& v) {
  j = Json{{"title", v.title}};
  if (v.item_id) j["item_id"] = *v.item_id;
}

void from_json(const Json& j, ItemRef& v) {
  v.title = j.at("title").get<std::string>();
  v.item_id.reset();
  if (auto it = j.find("item_id"); it != j.end() && !it->is_null()) v.item_id = id_string(*it);
}

void to_json(Json& j, const Message& v) {
  j = Json{{"role", to_string(v.role)}, {"text", v.text}, {"turn", v.turn}, {"round", v.round}};
  if (v.recommended_items) j["items"] = *v.recommended_items;
  if (v.action) j["action"] = *v.action;
}

void from_json(const Json& j, Message& v) {
  v.role = role_from_string(j.at("role").get<std::string>());
  v.text = j.value("text", "");
  v.turn = j.value("turn", 0);
  v.round = j.value("round", 0);
  v.recommended_items.reset();
  if (auto it = j.find("items"); it != j.end() && it->is_array()) {
    v.recommended_items = it->get<std::vector<ItemRef>>();
  }
  v.action.reset();
  if (auto it = j.find("action"); it != j.end() && it->is_string()) v.action = it->get<std::string>();
}

void to_json(Json& j, const AgentMemory& v) {
  j = Json{{"long_term", v.long_term}, {"real_time", v.real_time}, {"dialogue_log", v.dialogue_log}};
}

void from_json(const Json& j, AgentMemory& v) {
  v.long_term = j.at("long_term").get<UserProfile>();
  v.real_time = j.value("real_time", std::vector<PreferenceFacet>{});
  v.dialogue_log = j.value("dialogue_log", std::vector<Message>{});
}

void to_json(Json& j, const LeakEvidence& v) {
  j = Json{{"kind", v.kind == LeakKind::kHistory ? "history" : "response"},
           {"turn", v.turn},
           {"title", v.title}};
}

void from_json(const Json& j, LeakEvidence& v) {
  v.kind = j.at("kind").get<std::string>() == "history" ? LeakKind::kHistory : LeakKind::kResponse;
  v.turn = j.at("turn").get<int>();
  v.title = j.at("title").get<std::string>();
}

void to_json(Json& j, const LeakageFlags& v) {
  j = Json{{"history_leak", v.history_leak},
           {"response_leak", v.response_leak},
           {"evidence", v.evidence}};
}

void from_json(const Json& j, LeakageFlags& v) {
  v = LeakageFlags::from_evidence(j.value("evidence", std::vector<LeakEvidence>{}));
}

void to_json(Json& j, const SessionStatus& v) {
  j = Json{{"kind", to_string(v.kind)}, {"round", v.round}};
  if (!v.error.empty()) j["error"] = v.error;
}

void from_json(const Json& j, SessionStatus& v) {
  v.kind = status_kind_from_string(j.at("kind").get<std::string>());
  v.round = j.value("round", 0);
  v.error = j.value("error", "");
}

void to_json(Json& j, const SessionState& v) {
  j = Json{{"session_id", v.session_id},
           {"target_items", v.target_items},
           {"memory", v.memory},
           {"transcript", v.transcript},
           {"seed_prefix_length", v.seed_prefix_length},
           {"status", v.status},
           {"leakage", v.leakage},
           {"rng_seed", v.rng_seed}};
}

void from_json(const Json& j, SessionState& v) {
  v.session_id = j.at("session_id").get<std::string>();
  v.target_items = j.at("target_items").get<std::vector<CatalogItem>>();
  v.memory = j.at("memory").get<AgentMemory>();
  v.transcript = j.at("transcript").get<std::vector<Message>>();
  v.seed_prefix_length = j.value("seed_prefix_length", std::size_t{0});
  v.status = j.at("status").get<SessionStatus>();
  v.leakage = j.value("leakage", LeakageFlags{});
  v.rng_seed = j.value("rng_seed", std::uint64_t{0});
}

}  // namespace cshi
