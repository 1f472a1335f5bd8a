#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cshi {

using Json = nlohmann::json;

// Attribute vocabulary shared by catalog items, facets and intents.
namespace attr {
inline constexpr const char* kGenre = "genre";
inline constexpr const char* kDirector = "director";
inline constexpr const char* kActor = "actor";
inline constexpr const char* kLanguage = "language";
inline constexpr const char* kReleaseDate = "release_date";
inline constexpr const char* kRuntime = "runtime";
inline constexpr const char* kPlotKeywords = "plot_keywords";
}  // namespace attr

const std::vector<std::string>& default_attribute_vocabulary();

struct CatalogItem {
  std::string item_id;
  std::string title;
  std::optional<int> year;
  std::map<std::string, std::vector<std::string>> attributes;

  bool operator==(const CatalogItem&) const = default;
};

// Id-indexed item store. Construction validates uniqueness and the
// release_date / runtime value formats.
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(std::vector<CatalogItem> items);

  const CatalogItem* find(const std::string& item_id) const;
  const CatalogItem& at(const std::string& item_id) const;
  // Lookup by normalized title; nullptr when absent.
  const CatalogItem* find_by_title(const std::string& title) const;

  const std::vector<CatalogItem>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }

  // Attribute names present anywhere in the catalog, merged with the
  // default vocabulary.
  std::vector<std::string> attribute_vocabulary() const;

 private:
  std::vector<CatalogItem> items_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::unordered_map<std::string, std::size_t> by_title_;
};

struct RatingScale {
  double min = 0.5;
  double max = 5.0;

  bool contains(double rating) const { return rating >= min && rating <= max; }
};

struct RatingRecord {
  std::string user_id;
  std::string item_id;
  double rating = 0.0;
  std::optional<std::int64_t> timestamp;

  bool operator==(const RatingRecord&) const = default;
};

struct UserProfile {
  std::string user_id;
  std::string persona_text;
  std::string taste_summary;
  std::map<std::string, std::string> basic_info;
  std::vector<RatingRecord> interaction_history;

  bool operator==(const UserProfile&) const = default;
};

enum class Visibility { kKnown, kUnknown };
enum class FacetOrigin { kInitial, kActivated };

struct PreferenceFacet {
  std::string attribute;
  std::string value;
  Visibility visibility = Visibility::kKnown;
  FacetOrigin origin = FacetOrigin::kInitial;
  bool anonymized = false;
  // Round in which an Unknown facet was promoted; set only when activated.
  std::optional<int> promoted_at_round;

  bool operator==(const PreferenceFacet&) const = default;
};

struct ItemRef {
  std::optional<std::string> item_id;
  std::string title;

  bool operator==(const ItemRef&) const = default;
};

enum class Role { kSimulator, kCrs, kHuman };

struct Message {
  Role role = Role::kSimulator;
  std::string text;
  // Sequence index within the transcript; strictly increasing.
  int turn = 0;
  // Interaction round; 0 for annotated prefix messages and the opener.
  int round = 0;
  std::optional<std::vector<ItemRef>> recommended_items;
  // CRS action label ("ask", "recommend", "chit-chat") when known.
  std::optional<std::string> action;

  bool operator==(const Message&) const = default;
};

struct AgentMemory {
  UserProfile long_term;
  std::vector<PreferenceFacet> real_time;
  std::vector<Message> dialogue_log;

  bool operator==(const AgentMemory&) const = default;
};

enum class IntentKind { kAsk, kRecommend, kChitChat };

class Intent {
 public:
  static Intent ask(std::string rel_attr);
  static Intent recommend() { return Intent(IntentKind::kRecommend, std::nullopt); }
  static Intent chit_chat() { return Intent(IntentKind::kChitChat, std::nullopt); }

  IntentKind kind() const { return kind_; }
  const std::optional<std::string>& rel_attr() const { return rel_attr_; }

  bool operator==(const Intent&) const = default;

 private:
  Intent(IntentKind kind, std::optional<std::string> rel_attr)
      : kind_(kind), rel_attr_(std::move(rel_attr)) {}

  IntentKind kind_;
  std::optional<std::string> rel_attr_;
};

enum class LeakKind { kHistory, kResponse };

struct LeakEvidence {
  LeakKind kind = LeakKind::kHistory;
  int turn = 0;
  std::string title;

  bool operator==(const LeakEvidence&) const = default;
};

struct LeakageFlags {
  bool history_leak = false;
  bool response_leak = false;
  std::vector<LeakEvidence> evidence;

  static LeakageFlags from_evidence(std::vector<LeakEvidence> evidence);

  bool operator==(const LeakageFlags&) const = default;
};

enum class StatusKind { kOngoing, kSucceeded, kMaxTurnsReached, kErrored };

struct SessionStatus {
  StatusKind kind = StatusKind::kOngoing;
  // Success round for kSucceeded, rounds played otherwise.
  int round = 0;
  std::string error;

  static SessionStatus succeeded(int round) { return {StatusKind::kSucceeded, round, {}}; }
  static SessionStatus max_turns(int round) { return {StatusKind::kMaxTurnsReached, round, {}}; }
  static SessionStatus errored(int round, std::string why) {
    return {StatusKind::kErrored, round, std::move(why)};
  }

  bool operator==(const SessionStatus&) const = default;
};

struct SessionState {
  std::string session_id;
  std::vector<CatalogItem> target_items;
  AgentMemory memory;
  std::vector<Message> transcript;
  // Number of leading transcript messages that came from the annotated prefix.
  std::size_t seed_prefix_length = 0;
  SessionStatus status;
  LeakageFlags leakage;
  std::uint64_t rng_seed = 0;

  // Appends with the next turn index; returns the stored message.
  const Message& append(Message message);
  int next_turn() const { return transcript.empty() ? 0 : transcript.back().turn + 1; }
  int crs_turns() const;

  bool operator==(const SessionState&) const = default;
};

std::string_view to_string(Role role);
std::string_view to_string(IntentKind kind);
std::string_view to_string(Visibility visibility);
std::string_view to_string(StatusKind kind);
Role role_from_string(std::string_view text);
StatusKind status_kind_from_string(std::string_view text);

void to_json(Json& j, const CatalogItem& v);
void from_json(const Json& j, CatalogItem& v);
void to_json(Json& j, const RatingRecord& v);
void from_json(const Json& j, RatingRecord& v);
void to_json(Json& j, const UserProfile& v);
void from_json(const Json& j, UserProfile& v);
void to_json(Json& j, const PreferenceFacet& v);
void from_json(const Json& j, PreferenceFacet& v);
void to_json(Json& j, const ItemRef& v);
void from_json(const Json& j, ItemRef& v);
void to_json(Json& j, const Message& v);
void from_json(const Json& j, Message& v);
void to_json(Json& j, const AgentMemory& v);
void from_json(const Json& j, AgentMemory& v);
void to_json(Json& j, const LeakEvidence& v);
void from_json(const Json& j, LeakEvidence& v);
void to_json(Json& j, const LeakageFlags& v);
void from_json(const Json& j, LeakageFlags& v);
void to_json(Json& j, const SessionStatus& v);
void from_json(const Json& j, SessionStatus& v);
void to_json(Json& j, const SessionState& v);
void from_json(const Json& j, SessionState& v);

}  // namespace cshi
