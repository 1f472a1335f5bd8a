#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cshi/domain.hpp"
#include "cshi/llm.hpp"
#include "cshi/pipeline.hpp"
#include "cshi/prompt.hpp"

namespace cshi {

using AttributeMap = std::map<std::string, std::vector<std::string>>;

struct SplitConfig {
  double k1 = 1.0;  // Known share
  double k2 = 0.0;  // Unknown share
  std::uint64_t seed = 0;

  // Throws kInvalidSplit unless both shares are in [0,1] and k1 + k2 <= 1.
  void validate() const;
};

struct AnonymizationPolicy {
  bool enabled = true;
  std::set<std::string> sensitive = {attr::kReleaseDate, attr::kRuntime};

  bool is_sensitive(const std::string& attribute) const { return sensitive.count(attribute) > 0; }
};

// Harness-held knowledge of the session's target items. Agent code only
// ever sees this interface, so target titles never enter AgentMemory.
class TargetOracle {
 public:
  virtual ~TargetOracle() = default;
  virtual bool matches(const ItemRef& item) const = 0;
  virtual bool leaks(std::string_view text) const = 0;
  virtual std::string redact(std::string_view text) const = 0;
};

// Everything the built-in plugins need besides the per-call context.
struct SimulatorServices {
  const Catalog* catalog = nullptr;
  std::shared_ptr<ChatBackend> llm;
  std::shared_ptr<const PromptLibrary> prompts;
  std::shared_ptr<const TargetOracle> oracle;
  SplitConfig split;
  AnonymizationPolicy anonymization;
  double generation_temperature = 0.7;
  double classification_temperature = 0.0;

  std::vector<std::string> vocabulary() const;
  // Renders the tagged prompt pair and calls the backend.
  std::string ask_llm(const std::string& tag, const std::map<std::string, std::string>& values,
                      double temperature) const;
};

// ---- User profile init ---------------------------------------------------

struct RatingPartition {
  std::vector<RatingRecord> liked;     // rating >= 3
  std::vector<RatingRecord> disliked;  // rating < 3
};

inline constexpr double kLikedThreshold = 3.0;

RatingPartition partition_ratings(const std::vector<RatingRecord>& ratings);

// Taste summary from the rating history. Items the oracle recognizes as
// targets are dropped before the prompt is built. Throws kEmptyHistory.
std::string plugin1_summarize_preferences(const std::vector<RatingRecord>& ratings,
                                          const SimulatorServices& services);

// Extracts basic info and interaction history from a raw dataset record
// {user_id, ratings: [...], <scalar fields>}. Absent fields stay absent.
// Throws kSchemaMismatch.
UserProfile plugin2_basic_info(const Json& raw_user_record);

// ---- Preferences init ----------------------------------------------------

// Deterministic Fisher-Yates over [0, n) driven by mt19937_64(seed); the
// swap index for position i is draw % (i + 1).
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Known and Unknown counts for n candidates, rounding to nearest with ties
// going down (0.5 -> 0, 1.5 -> 1).
std::pair<std::size_t, std::size_t> split_counts(std::size_t n, double k1, double k2);

// Attribute/value pairs of the targets, de-duplicated in attribute order,
// skipping any value that names a target.
std::vector<PreferenceFacet> candidate_facets(const std::vector<AttributeMap>& target_info,
                                              const TargetOracle* oracle = nullptr);

std::vector<PreferenceFacet> plugin3_realtime_preferences(
    const std::vector<AttributeMap>& target_info, const SplitConfig& split,
    const AnonymizationPolicy& policy, const TargetOracle* oracle = nullptr);

std::string decade_phrase(int year);             // 2012 -> "the 2010s"
std::string approximate_hours_phrase(int minutes);  // 144 -> "about 2 hours"

// Coarsens sensitive facets; others pass through unchanged.
// Throws kUnparseableValue.
PreferenceFacet anonymize_facet(const PreferenceFacet& facet,
                                const AnonymizationPolicy& policy = {});

// ---- Message handling ----------------------------------------------------

// Maps free-form attribute names ("genres", "directed by", "year") onto
// the vocabulary; nullopt when nothing fits.
std::optional<std::string> map_attribute(std::string_view raw,
                                         const std::vector<std::string>& vocabulary);

Intent plugin4_intent(const Message& last_message, const SimulatorServices& services);

struct AskRouteResult {
  bool handled = false;
  std::optional<std::string> response_text;
  std::vector<std::string> referenced_items;  // history titles the reply draws on
};

AskRouteResult plugin5_personalized_ask(const Intent& intent, const UserProfile& profile,
                                        const std::vector<PreferenceFacet>& facets,
                                        const std::string& question,
                                        const SimulatorServices& services);

std::string plugin6_nonpersonalized_ask(const Intent& intent,
                                        const std::vector<PreferenceFacet>& facets,
                                        const std::string& question,
                                        const std::string& persona,
                                        const SimulatorServices& services);

struct RecommendOutcome {
  bool accepted = false;
  std::string response_text;
  std::vector<PreferenceFacet> activated_facets;
};

RecommendOutcome plugin7_recommend_response(const Intent& intent, const Message& crs_message,
                                            const std::vector<PreferenceFacet>& facets,
                                            int round, const std::string& persona,
                                            const SimulatorServices& services);

// Promotes the activated facets inside `facets` (Unknown -> Known only).
void apply_activations(std::vector<PreferenceFacet>& facets,
                       const std::vector<PreferenceFacet>& activated);

std::string plugin8_chitchat(const Intent& intent, const std::vector<PreferenceFacet>& facets,
                             const std::vector<Message>& transcript, int round,
                             const std::string& persona, const SimulatorServices& services);

std::string opening_message(const std::string& persona, const SimulatorServices& services);

// Natural-language rendering used in drafts ("movies directed by X").
std::string facet_phrase(const PreferenceFacet& facet);
std::string attribute_label(const std::string& attribute);

// ---- Built-in plugin registration ----------------------------------------

namespace plugin_id {
inline constexpr const char* kBasicInfo = "basic_info";
inline constexpr const char* kPreferenceSummary = "preference_summary";
inline constexpr const char* kRealtimePreferences = "realtime_preferences";
inline constexpr const char* kOpener = "conversation_opener";
inline constexpr const char* kIntent = "intent_understanding";
inline constexpr const char* kPersonalizedAsk = "personalized_ask";
inline constexpr const char* kNonPersonalizedAsk = "nonpersonalized_ask";
inline constexpr const char* kRecommendResponse = "recommend_response";
inline constexpr const char* kChitChat = "chit_chat";
}  // namespace plugin_id

// Scratch / input keys shared between built-in plugins.
namespace ctx_key {
inline constexpr const char* kRawUserRecord = "raw_user_record";
inline constexpr const char* kTargetInfo = "target_info";
inline constexpr const char* kActivated = "activated";
inline constexpr const char* kAccepted = "accepted";
inline constexpr const char* kRegenerate = "regenerate";
}  // namespace ctx_key

// Registers the nine built-in plugins. Config entries may disable a plugin
// or change its priority.
std::vector<RegistrationHandle> register_builtin_plugins(
    PluginManager& manager, std::shared_ptr<const SimulatorServices> services,
    const PipelineConfig* config = nullptr);

}  // namespace cshi
