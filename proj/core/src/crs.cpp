#include "cshi/crs.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "cshi/plugins.hpp"
#include "cshi/text.hpp"
#include "http_util.hpp"

namespace cshi {
namespace {

constexpr std::size_t kMaxTextBytes = 64 * 1024;

std::string normalize_kind(const std::string& raw) {
  const std::string k = normalize_text(raw);
  if (k == "ask" || k == "question") return crs_action::kAsk;
  if (k == "recommend" || k == "recommendation") return crs_action::kRecommend;
  if (k == "chit chat" || k == "chitchat" || k == "chat") return crs_action::kChitChat;
  return {};
}

std::string wire_role(Role role) { return role == Role::kCrs ? "assistant" : "user"; }

}  // namespace

Message CrsTurn::to_message(int round) const {
  Message m;
  m.role = Role::kCrs;
  m.text = text;
  m.round = round;
  m.action = kind;
  if (kind == crs_action::kRecommend) m.recommended_items = items;
  return m;
}

void to_json(Json& j, const CrsTurn& v) {
  j = Json{{"kind", v.kind}, {"text", v.text}, {"items", v.items}};
}

ProtocolViolation::ProtocolViolation(std::vector<std::string> diagnostics)
    : Error(ErrorCode::kProtocolViolation, join(diagnostics, "; ")),
      diagnostics_(std::move(diagnostics)) {}

bool is_valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      extra = 1;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      extra = 2;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      extra = 3;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + extra >= s.size()) return false;
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto d = static_cast<unsigned char>(s[i + k]);
      if ((d & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (d & 0x3F);
    }
    static constexpr std::uint32_t kMin[] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += extra + 1;
  }
  return true;
}

CrsTurn validate_crs_reply(const Json& reply, std::size_t max_items) {
  std::vector<std::string> problems;
  if (!reply.is_object()) throw ProtocolViolation({"reply must be a JSON object"});

  CrsTurn turn;
  if (auto it = reply.find("text"); it == reply.end() || !it->is_string()) {
    problems.push_back("\"text\" must be a string");
  } else {
    turn.text = it->get<std::string>();
    if (!is_valid_utf8(turn.text)) problems.push_back("\"text\" is not valid UTF-8");
    if (turn.text.size() > kMaxTextBytes) problems.push_back("\"text\" exceeds 64 KiB");
  }

  std::string kind;
  if (auto it = reply.find("kind"); it != reply.end() && !it->is_null()) {
    if (!it->is_string()) {
      problems.push_back("\"kind\" must be a string");
    } else {
      kind = normalize_kind(it->get<std::string>());
      if (kind.empty()) problems.push_back("unknown kind '" + it->get<std::string>() + "'");
    }
  }

  if (auto it = reply.find("items"); it != reply.end() && !it->is_null()) {
    if (!it->is_array()) {
      problems.push_back("\"items\" must be an array");
    } else {
      std::size_t index = 0;
      for (const auto& entry : *it) {
        const std::string where = "items[" + std::to_string(index++) + "]";
        ItemRef ref;
        if (entry.is_string()) {
          ref.title = entry.get<std::string>();
        } else if (entry.is_object()) {
          auto title = entry.find("title");
          if (title == entry.end() || !title->is_string()) {
            problems.push_back(where + ".title must be a string");
            continue;
          }
          ref.title = title->get<std::string>();
          if (auto id = entry.find("item_id"); id != entry.end() && !id->is_null()) {
            if (id->is_string()) {
              ref.item_id = id->get<std::string>();
            } else if (id->is_number_integer()) {
              ref.item_id = id->dump();
            } else {
              problems.push_back(where + ".item_id must be a string or integer");
              continue;
            }
          }
        } else {
          problems.push_back(where + " must be an object");
          continue;
        }
        if (!is_valid_utf8(ref.title) || (ref.item_id && !is_valid_utf8(*ref.item_id))) {
          problems.push_back(where + " is not valid UTF-8");
          continue;
        }
        if (trim(ref.title).empty()) {
          problems.push_back(where + ".title is empty");
          continue;
        }
        turn.items.push_back(std::move(ref));
      }
    }
  }

  if (kind.empty()) kind = turn.items.empty() ? crs_action::kChitChat : crs_action::kRecommend;
  if (kind == crs_action::kRecommend && turn.items.empty() && problems.empty()) {
    problems.push_back("recommend reply without items");
  }
  if (kind != crs_action::kRecommend && !turn.items.empty()) kind = crs_action::kRecommend;
  if (problems.empty() && trim(turn.text).empty() && turn.items.empty()) {
    problems.push_back("empty reply");
  }
  if (turn.items.size() > max_items) {
    problems.push_back(std::to_string(turn.items.size()) + " items exceed the cap of " +
                       std::to_string(max_items));
  }
  if (!problems.empty()) throw ProtocolViolation(std::move(problems));

  turn.kind = kind;
  return turn;
}

CrsTurn validate_crs_reply_text(const std::string& body, std::size_t max_items) {
  if (!is_valid_utf8(body)) throw ProtocolViolation({"body is not valid UTF-8"});
  Json parsed = Json::parse(body, nullptr, false);
  if (parsed.is_discarded()) throw ProtocolViolation({"body is not JSON"});
  return validate_crs_reply(parsed, max_items);
}

Json CrsRequest::to_wire() const {
  Json messages = Json::array();
  for (const auto& m : transcript) {
    Json entry{{"role", wire_role(m.role)}, {"text", m.text}};
    if (m.recommended_items) entry["items"] = *m.recommended_items;
    messages.push_back(std::move(entry));
  }
  return Json{{"session_id", session_id},
              {"turn", turn},
              {"transcript", std::move(messages)},
              {"max_items", max_items}};
}

// ---- ExternalCrs -----------------------------------------------------------------

ExternalCrs::ExternalCrs(std::string url, int timeout_ms)
    : url_(std::move(url)), timeout_ms_(timeout_ms) {
  detail::parse_url(url_);
}

CrsTurn ExternalCrs::respond(const CrsRequest& request) {
  const auto url = detail::parse_url(url_);
  auto client = detail::make_client(url.origin, timeout_ms_);
  auto result = client->Post(url.path, request.to_wire().dump(), "application/json");
  if (!result) {
    throw Error(ErrorCode::kAdapterError,
                "CRS " + url_ + ": transport error: " + httplib::to_string(result.error()));
  }
  if (result->status != 200) {
    throw Error(ErrorCode::kAdapterError,
                "CRS " + url_ + ": HTTP " + std::to_string(result->status));
  }
  return validate_crs_reply_text(result->body, request.max_items);
}

// ---- BuiltinCrs ------------------------------------------------------------------

std::string ask_question_draft(const std::string& attribute) {
  if (attribute == attr::kGenre) return "What kind of movies do you enjoy? Any favorite genres?";
  if (attribute == attr::kDirector) return "Do you have any favorite directors?";
  if (attribute == attr::kActor) return "Are there any actors you especially like watching?";
  if (attribute == attr::kLanguage) return "Do you prefer movies in a particular language?";
  if (attribute == attr::kReleaseDate) return "Do you prefer older classics or more recent movies?";
  if (attribute == attr::kRuntime) return "How long a movie are you up for?";
  if (attribute == attr::kPlotKeywords) return "What kind of story are you in the mood for?";
  return "Do you have any preference about " + attribute_label(attribute) + "?";
}

BuiltinCrs::BuiltinCrs(const Catalog* catalog, std::shared_ptr<ChatBackend> llm,
                       std::shared_ptr<const PromptLibrary> prompts, BuiltinCrsConfig config)
    : catalog_(catalog), llm_(std::move(llm)), prompts_(std::move(prompts)),
      config_(std::move(config)) {
  if (catalog_ == nullptr || catalog_->empty()) {
    throw Error(ErrorCode::kPrecondition, "built-in CRS needs a non-empty catalog");
  }
  if (!llm_) throw Error(ErrorCode::kPrecondition, "built-in CRS needs a chat backend");
}

std::string BuiltinCrs::call(const std::string& tag,
                             std::map<std::string, std::string> values) const {
  static const PromptLibrary kDefaults = PromptLibrary::defaults();
  const auto& prompt = (prompts_ ? *prompts_ : kDefaults).get(tag);
  ChatRequest request;
  request.tag = tag;
  request.temperature = config_.temperature;
  request.system_text = prompt.system.render(values);
  request.messages.push_back({"user", prompt.user.render(values)});
  return llm_->complete(request).text;
}

std::vector<const CatalogItem*> BuiltinCrs::rank_items(const std::vector<Message>& transcript,
                                                       std::size_t limit) const {
  std::string said;
  std::set<std::string> already;
  for (const auto& m : transcript) {
    if (m.role != Role::kCrs) said += " | " + m.text;
    if (m.recommended_items) {
      for (const auto& item : *m.recommended_items) {
        const CatalogItem* found = item.item_id ? catalog_->find(*item.item_id) : nullptr;
        if (found == nullptr) found = catalog_->find_by_title(item.title);
        if (found != nullptr) already.insert(found->item_id);
      }
    }
  }
  std::vector<std::pair<int, const CatalogItem*>> scored;
  for (const auto& item : catalog_->items()) {
    if (already.count(item.item_id) > 0) continue;
    int score = 0;
    for (const auto& [name, values] : item.attributes) {
      for (const auto& v : values) {
        const std::string n = normalize_text(v);
        if (!n.empty() && contains_title(said, n)) ++score;
      }
    }
    scored.emplace_back(score, &item);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<const CatalogItem*> out;
  for (std::size_t i = 0; i < scored.size() && i < limit; ++i) out.push_back(scored[i].second);
  return out;
}

CrsDecision BuiltinCrs::decide(const CrsRequest& request) {
  std::set<std::string> asked;
  for (const auto& d : state_.decision_log) {
    if (d.action == crs_action::kAsk) asked.insert(d.attribute);
  }
  std::string next_unasked;
  for (const auto& a : config_.ask_order) {
    if (asked.count(a) == 0) {
      next_unasked = a;
      break;
    }
  }
  const bool crs_spoke = std::any_of(request.transcript.begin(), request.transcript.end(),
                                     [](const Message& m) { return m.role == Role::kCrs; });

  CrsDecision draft{request.turn, crs_action::kRecommend, ""};
  if (static_cast<int>(asked.size()) < config_.ask_budget && !next_unasked.empty()) {
    draft = {request.turn, crs_action::kAsk, next_unasked};
  }

  Json log = Json::array();
  for (const auto& d : state_.decision_log) {
    log.push_back({{"round", d.round}, {"action", d.action}, {"attribute", d.attribute}});
  }
  std::string last_user;
  for (auto it = request.transcript.rbegin(); it != request.transcript.rend(); ++it) {
    if (it->role != Role::kCrs) {
      last_user = it->text;
      break;
    }
  }
  Json draft_json{{"action", draft.action},
                  {"attribute", draft.attribute.empty() ? Json() : Json(draft.attribute)}};
  const std::string reply =
      call("crs_strategy", {{"round", std::to_string(request.turn)},
                            {"decision_log", log.dump()},
                            {"preferences", state_.elicited_preferences.empty()
                                                ? "none"
                                                : join(state_.elicited_preferences, " | ")},
                            {"last_message", last_user.empty() ? "none" : last_user},
                            {"attributes", join(catalog_->attribute_vocabulary(), ", ")},
                            {"draft", draft_json.dump()}});

  CrsDecision decision{request.turn, crs_action::kChitChat, ""};
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  Json parsed = open != std::string::npos && close != std::string::npos && close > open
                    ? Json::parse(reply.substr(open, close - open + 1), nullptr, false)
                    : Json(nullptr);
  if (parsed.is_object() && parsed.contains("action") && parsed.at("action").is_string()) {
    decision.action = normalize_kind(parsed.at("action").get<std::string>());
    if (decision.action.empty()) decision.action = crs_action::kChitChat;
    if (decision.action == crs_action::kAsk) {
      std::string raw = parsed.value("attribute", Json()).is_string()
                            ? parsed.at("attribute").get<std::string>()
                            : std::string();
      auto mapped = map_attribute(raw, catalog_->attribute_vocabulary());
      decision.attribute = mapped ? *mapped : next_unasked;
      if (decision.attribute.empty()) decision.action = crs_action::kRecommend;
    }
  } else {
    spdlog::warn("unparseable CRS strategy output; falling back to chit-chat");
  }
  if (decision.action == crs_action::kRecommend && !crs_spoke && !next_unasked.empty()) {
    decision = {request.turn, crs_action::kAsk, next_unasked};
  }
  return decision;
}

CrsTurn BuiltinCrs::respond(const CrsRequest& request) {
  // Whatever the user said since our last question is the answer to it.
  std::string last_user;
  for (auto it = request.transcript.rbegin(); it != request.transcript.rend(); ++it) {
    if (it->role == Role::kCrs) break;
    last_user = it->text + (last_user.empty() ? "" : " " + last_user);
  }
  if (!last_user.empty()) state_.elicited_preferences.push_back(last_user);

  const CrsDecision decision = decide(request);
  state_.decision_log.push_back(decision);
  const std::string preferences =
      state_.elicited_preferences.empty() ? "none" : join(state_.elicited_preferences, " | ");

  CrsTurn turn;
  turn.kind = decision.action;
  if (decision.action == crs_action::kAsk) {
    const std::string draft = ask_question_draft(decision.attribute);
    turn.text = trim(call("crs_ask", {{"attribute", decision.attribute},
                                      {"preferences", preferences},
                                      {"draft", draft}}));
    if (turn.text.empty()) turn.text = draft;
    return turn;
  }
  if (decision.action == crs_action::kChitChat) {
    const std::string draft = "Sounds great! Tell me a bit more about what you'd like to watch.";
    turn.text = trim(call("crs_chit_chat", {{"last_message", last_user.empty() ? "none" : last_user},
                                            {"draft", draft}}));
    if (turn.text.empty()) turn.text = draft;
    return turn;
  }

  const auto ranked = rank_items(request.transcript, request.max_items);
  Json draft{{"text", "Based on what you told me, you might enjoy these."}, {"items", Json::array()}};
  std::vector<std::string> already;
  for (const auto& m : request.transcript) {
    if (m.recommended_items) {
      for (const auto& item : *m.recommended_items) already.push_back(item.title);
    }
  }
  for (const auto* item : ranked) {
    draft["items"].push_back({{"item_id", item->item_id}, {"title", item->title}});
  }
  const std::string reply = call(
      "crs_recommend", {{"max_items", std::to_string(request.max_items)},
                        {"round", std::to_string(request.turn)},
                        {"preferences", preferences},
                        {"already", already.empty() ? "none" : join(already, "; ")},
                        {"last_message", last_user.empty() ? "none" : last_user},
                        {"draft", draft.dump()}});
  Json parsed = Json::parse(reply, nullptr, false);
  if (!parsed.is_object() || !parsed.contains("items")) {
    const auto open = reply.find('{');
    const auto close = reply.rfind('}');
    if (open != std::string::npos && close != std::string::npos && close > open) {
      parsed = Json::parse(reply.substr(open, close - open + 1), nullptr, false);
    }
  }
  if (!parsed.is_object() || !parsed.contains("items")) {
    spdlog::warn("unparseable CRS recommendation; using the ranked draft");
    parsed = draft;
  }
  parsed["kind"] = crs_action::kRecommend;
  if (auto& items = parsed["items"]; items.is_array() && items.size() > request.max_items) {
    items.erase(items.begin() + static_cast<std::ptrdiff_t>(request.max_items), items.end());
  }
  if (!parsed.contains("text") || !parsed.at("text").is_string()) parsed["text"] = draft.at("text");
  try {
    turn = validate_crs_reply(parsed, request.max_items);
  } catch (const ProtocolViolation&) {
    turn = validate_crs_reply(draft, request.max_items);
    turn.kind = crs_action::kRecommend;
  }
  for (auto& item : turn.items) {
    if (!item.item_id) {
      if (const auto* found = catalog_->find_by_title(item.title)) item.item_id = found->item_id;
    }
  }
  return turn;
}

}  // namespace cshi
