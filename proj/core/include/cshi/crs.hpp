#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cshi/domain.hpp"
#include "cshi/error.hpp"
#include "cshi/llm.hpp"
#include "cshi/prompt.hpp"

namespace cshi {

namespace crs_action {
inline constexpr const char* kAsk = "ask";
inline constexpr const char* kRecommend = "recommend";
inline constexpr const char* kChitChat = "chit-chat";
}  // namespace crs_action

struct CrsTurn {
  std::string kind = crs_action::kChitChat;
  std::string text;
  std::vector<ItemRef> items;

  Message to_message(int round) const;
  bool operator==(const CrsTurn&) const = default;
};

void to_json(Json& j, const CrsTurn& v);

class ProtocolViolation : public Error {
 public:
  explicit ProtocolViolation(std::vector<std::string> diagnostics);

  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

// Validates a CRS reply {kind, text, items:[{item_id?, title}]}. Lists
// longer than max_items and anything malformed throw ProtocolViolation
// listing every problem found.
CrsTurn validate_crs_reply(const Json& reply, std::size_t max_items);
CrsTurn validate_crs_reply_text(const std::string& body, std::size_t max_items);

bool is_valid_utf8(std::string_view text);

struct CrsRequest {
  std::string session_id;
  int turn = 0;  // 1-based interaction round
  std::vector<Message> transcript;
  std::size_t max_items = 10;

  Json to_wire() const;
};

class CrsAdapter {
 public:
  virtual ~CrsAdapter() = default;
  virtual CrsTurn respond(const CrsRequest& request) = 0;
};

// Creates one adapter per session.
using CrsFactory = std::function<std::unique_ptr<CrsAdapter>(const std::string& session_id)>;

// HTTP JSON endpoint. Transport failures raise kAdapterError, malformed
// replies raise ProtocolViolation.
class ExternalCrs : public CrsAdapter {
 public:
  explicit ExternalCrs(std::string url, int timeout_ms = 60000);
  CrsTurn respond(const CrsRequest& request) override;

 private:
  std::string url_;
  int timeout_ms_;
};

struct CrsDecision {
  int round = 0;
  std::string action;
  std::string attribute;

  bool operator==(const CrsDecision&) const = default;
};

struct CrsAgentState {
  std::vector<CrsDecision> decision_log;
  std::vector<std::string> elicited_preferences;
};

struct BuiltinCrsConfig {
  // Attributes asked before the first recommendation, in order.
  std::vector<std::string> ask_order = {"genre", "director", "actor", "release_date"};
  int ask_budget = 2;
  double temperature = 0.0;
};

// LLM-driven recommender: a strategy call picks ask / recommend /
// chit-chat, then an action call produces the utterance. Each call carries a
// deterministic draft so scripted backends can echo it.
class BuiltinCrs : public CrsAdapter {
 public:
  BuiltinCrs(const Catalog* catalog, std::shared_ptr<ChatBackend> llm,
             std::shared_ptr<const PromptLibrary> prompts, BuiltinCrsConfig config = {});

  CrsTurn respond(const CrsRequest& request) override;

  const CrsAgentState& state() const { return state_; }

  // Catalog ranking used for recommendation drafts: items whose attribute
  // values appear in the user's messages first, catalog order breaking ties.
  std::vector<const CatalogItem*> rank_items(const std::vector<Message>& transcript,
                                             std::size_t limit) const;

 private:
  std::string call(const std::string& tag, std::map<std::string, std::string> values) const;
  CrsDecision decide(const CrsRequest& request);

  const Catalog* catalog_;
  std::shared_ptr<ChatBackend> llm_;
  std::shared_ptr<const PromptLibrary> prompts_;
  BuiltinCrsConfig config_;
  CrsAgentState state_;
};

std::string ask_question_draft(const std::string& attribute);

}  // namespace cshi
