#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cshi/crs.hpp"
#include "cshi/dataset.hpp"
#include "cshi/domain.hpp"
#include "cshi/llm.hpp"
#include "cshi/metrics.hpp"
#include "cshi/pipeline.hpp"
#include "cshi/plugins.hpp"
#include "cshi/simulator.hpp"

namespace cshi {

// Knows the session's targets. Matching is by item id, or by normalized
// title equality when ids are missing; leak detection is token-aligned
// title containment.
class TitleOracle : public TargetOracle {
 public:
  explicit TitleOracle(std::vector<CatalogItem> targets);

  bool matches(const ItemRef& item) const override;
  bool leaks(std::string_view text) const override;
  std::string redact(std::string_view text) const override;

  // 1-based rank of the first target in `items`.
  std::optional<int> first_hit(const std::vector<ItemRef>& items) const;

 private:
  std::vector<CatalogItem> targets_;
  std::vector<std::string> normalized_;
};

enum class Scenario { kAnnotated, kFresh };

std::string_view to_string(Scenario scenario);
Scenario scenario_from_string(std::string_view text);

struct ScenarioConfig {
  Scenario kind = Scenario::kFresh;
  int max_turns = 10;
  std::size_t max_items = 10;
  std::vector<int> ks;
  std::vector<int> ts;

  static ScenarioConfig annotated();  // 5 turns, recall@{1,10,50}, 50 items
  static ScenarioConfig fresh();      // 10 turns, SR@{3,5,10} + AT, 10 items
};

struct SessionSeed {
  std::string session_id;
  std::string user_id;
  std::optional<std::string> conversation_id;
  Json user_record = Json::object();
  std::string persona;
  std::vector<CatalogItem> targets;
  std::vector<Message> prefix;
  std::uint64_t seed = 0;
};

// Per-reply bookkeeping kept next to the transcript.
struct TurnTrace {
  int turn = 0;
  int round = 0;
  std::optional<std::string> handled_by;
  int regenerations = 0;
  bool redacted = false;
  std::vector<PreferenceFacet> activated;
};

void to_json(Json& j, const TurnTrace& v);
void from_json(const Json& j, TurnTrace& v);

struct SessionResult {
  SessionSeed seed;
  SessionState state;
  std::optional<int> hit_rank;
  std::vector<TurnTrace> traces;

  SessionOutcome outcome() const;
};

Json session_record(const SessionResult& result, const ScenarioConfig& scenario,
                    std::string_view simulator);
SessionResult session_from_record(const Json& record);

struct ExperimentContext {
  const Catalog* catalog = nullptr;
  ScenarioConfig scenario = ScenarioConfig::fresh();
  SimulatorKind simulator = SimulatorKind::kCshi;
  SplitConfig split;
  AnonymizationPolicy anonymization;
  std::shared_ptr<const PromptLibrary> prompts;
  std::optional<PipelineConfig> pipeline;
  double generation_temperature = 0.7;
  // Backend for one session; receives the session id so record/replay can
  // partition by session.
  std::function<std::shared_ptr<ChatBackend>(const std::string& session_id)> backend_for;
  // CRS adapter for one session; receives that session's backend.
  std::function<std::unique_ptr<CrsAdapter>(const std::string& session_id,
                                            std::shared_ptr<ChatBackend> backend)>
      crs_for;
  int workers = 1;
};

// Target attributes handed to the simulator (the title itself never is).
std::vector<AttributeMap> target_info(const std::vector<CatalogItem>& targets);

SessionResult run_session(const SessionSeed& seed, const ExperimentContext& ctx);
// Results come back in seed order whatever the worker count.
std::vector<SessionResult> run_experiment(const std::vector<SessionSeed>& seeds,
                                          const ExperimentContext& ctx);

// Brute-force title scan: history evidence comes from the seeded prefix,
// response evidence from simulator messages after it.
LeakageFlags audit_leakage(const SessionState& state);

std::uint64_t session_seed(std::uint64_t base, const std::string& session_id);

// One session per held-out rating (latest five per user).
std::vector<SessionSeed> fresh_seeds(const Catalog& catalog,
                                     const std::vector<RatingRecord>& ratings,
                                     const std::map<std::string, Json>& users,
                                     std::uint64_t base_seed, std::size_t holdout = 5);

// One session per annotated conversation; the prefix runs up to the first
// recommender turn that names a target.
std::vector<SessionSeed> annotated_seeds(const Catalog& catalog,
                                         const std::vector<Conversation>& conversations,
                                         const std::vector<RatingRecord>& ratings,
                                         const std::map<std::string, Json>& users,
                                         std::uint64_t base_seed);

struct RunOutputs {
  Json report;
  std::vector<Json> sessions;
  std::string per_turn_csv;
};

RunOutputs summarize(const std::vector<SessionResult>& results, const ExperimentContext& ctx,
                     const Json& config = Json::object());
void write_outputs(const RunOutputs& outputs, const std::filesystem::path& directory);
std::string per_turn_csv(const std::vector<SessionResult>& results);

}  // namespace cshi
