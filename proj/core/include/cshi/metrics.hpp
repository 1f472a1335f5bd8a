#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cshi/domain.hpp"

namespace cshi {

// Which leakage-affected successes are discarded.
enum class Variant { kRaw, kMinusHistory, kMinusResponse, kMinusBoth };

inline constexpr Variant kAllVariants[] = {Variant::kRaw, Variant::kMinusHistory,
                                           Variant::kMinusResponse, Variant::kMinusBoth};

std::string_view to_string(Variant variant);
Variant variant_from_string(std::string_view text);

// What a metric needs to know about one finished session.
struct SessionOutcome {
  StatusKind status = StatusKind::kMaxTurnsReached;
  std::optional<int> success_round;  // set iff status == kSucceeded
  std::optional<int> hit_rank;       // 1-based rank of the first target in the winning list
  bool history_leak = false;
  bool response_leak = false;

  bool operator==(const SessionOutcome&) const = default;
};

void to_json(Json& j, const SessionOutcome& v);
void from_json(const Json& j, SessionOutcome& v);

struct MetricOptions {
  Variant variant = Variant::kRaw;
  // false: excluded sessions count as failures (denominator unchanged).
  // true: excluded sessions are dropped from the denominator too.
  bool shrink_denominator = false;
};

bool excluded(const SessionOutcome& outcome, Variant variant);

// Errored sessions never enter any metric. An empty population yields nullopt.
std::optional<double> recall_at_k(const std::vector<SessionOutcome>& outcomes, int k,
                                  const MetricOptions& options = {});
std::optional<double> sr_at_t(const std::vector<SessionOutcome>& outcomes, int t,
                              const MetricOptions& options = {});
// Mean rounds to success; sessions that do not count as successes are
// charged max_turns.
std::optional<double> average_turns(const std::vector<SessionOutcome>& outcomes, int max_turns,
                                    const MetricOptions& options = {});

struct ReportSpec {
  std::string scenario;
  std::string simulator;
  int max_turns = 10;
  std::vector<int> ks;  // recall@k cut-offs
  std::vector<int> ts;  // SR@t cut-offs
  bool shrink_denominator = false;
  Json config = Json::object();
};

// Deterministic report: object keys are sorted and no wall-clock data is
// included, so identical runs give byte-identical files.
Json build_report(const std::vector<SessionOutcome>& outcomes, const ReportSpec& spec);
std::string format_metric(const std::optional<double>& value);

}  // namespace cshi
