#include "cshi/metrics.hpp"

#include "cshi/error.hpp"

namespace cshi {

std::string_view to_string(Variant variant) {
  switch (variant) {
    case Variant::kRaw: return "raw";
    case Variant::kMinusHistory: return "minus_history";
    case Variant::kMinusResponse: return "minus_response";
    case Variant::kMinusBoth: return "minus_both";
  }
  return "raw";
}

Variant variant_from_string(std::string_view text) {
  for (auto v : kAllVariants) {
    if (to_string(v) == text) return v;
  }
  throw Error(ErrorCode::kConfig, "unknown metric variant '" + std::string(text) + "'");
}

void to_json(Json& j, const SessionOutcome& v) {
  j = Json{{"status", to_string(v.status)},
           {"success_round", v.success_round ? Json(*v.success_round) : Json()},
           {"hit_rank", v.hit_rank ? Json(*v.hit_rank) : Json()},
           {"history_leak", v.history_leak},
           {"response_leak", v.response_leak}};
}

void from_json(const Json& j, SessionOutcome& v) {
  v.status = status_kind_from_string(j.at("status").get<std::string>());
  v.success_round.reset();
  v.hit_rank.reset();
  if (j.contains("success_round") && !j.at("success_round").is_null()) {
    v.success_round = j.at("success_round").get<int>();
  }
  if (j.contains("hit_rank") && !j.at("hit_rank").is_null()) v.hit_rank = j.at("hit_rank").get<int>();
  v.history_leak = j.value("history_leak", false);
  v.response_leak = j.value("response_leak", false);
}

bool excluded(const SessionOutcome& o, Variant variant) {
  switch (variant) {
    case Variant::kRaw: return false;
    case Variant::kMinusHistory: return o.history_leak;
    case Variant::kMinusResponse: return o.response_leak;
    case Variant::kMinusBoth: return o.history_leak || o.response_leak;
  }
  return false;
}

namespace {

template <typename Hit>
std::optional<double> success_rate(const std::vector<SessionOutcome>& outcomes,
                                   const MetricOptions& options, Hit hit) {
  std::size_t population = 0;
  std::size_t hits = 0;
  for (const auto& o : outcomes) {
    if (o.status == StatusKind::kErrored) continue;
    const bool out = excluded(o, options.variant);
    if (out && options.shrink_denominator) continue;
    ++population;
    if (!out && o.status == StatusKind::kSucceeded && hit(o)) ++hits;
  }
  if (population == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(population);
}

}  // namespace

std::optional<double> recall_at_k(const std::vector<SessionOutcome>& outcomes, int k,
                                  const MetricOptions& options) {
  if (k < 1) throw Error(ErrorCode::kPrecondition, "recall cut-off must be >= 1");
  return success_rate(outcomes, options,
                      [k](const SessionOutcome& o) { return o.hit_rank && *o.hit_rank <= k; });
}

std::optional<double> sr_at_t(const std::vector<SessionOutcome>& outcomes, int t,
                              const MetricOptions& options) {
  if (t < 1) throw Error(ErrorCode::kPrecondition, "SR cut-off must be >= 1");
  return success_rate(outcomes, options, [t](const SessionOutcome& o) {
    return o.success_round && *o.success_round <= t;
  });
}

std::optional<double> average_turns(const std::vector<SessionOutcome>& outcomes, int max_turns,
                                    const MetricOptions& options) {
  if (max_turns < 1) throw Error(ErrorCode::kPrecondition, "max_turns must be >= 1");
  std::size_t population = 0;
  long long total = 0;
  for (const auto& o : outcomes) {
    if (o.status == StatusKind::kErrored) continue;
    const bool out = excluded(o, options.variant);
    if (out && options.shrink_denominator) continue;
    ++population;
    const bool success = !out && o.status == StatusKind::kSucceeded && o.success_round;
    total += success ? *o.success_round : max_turns;
  }
  if (population == 0) return std::nullopt;
  return static_cast<double>(total) / static_cast<double>(population);
}

std::string format_metric(const std::optional<double>& value) {
  if (!value) return "null";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *value);
  return buf;
}

Json build_report(const std::vector<SessionOutcome>& outcomes, const ReportSpec& spec) {
  Json counts{{"sessions", outcomes.size()},
              {"succeeded", 0},
              {"max_turns_reached", 0},
              {"errored", 0},
              {"history_leak", 0},
              {"response_leak", 0}};
  for (const auto& o : outcomes) {
    switch (o.status) {
      case StatusKind::kSucceeded: counts["succeeded"] = counts["succeeded"].get<int>() + 1; break;
      case StatusKind::kErrored: counts["errored"] = counts["errored"].get<int>() + 1; break;
      default: counts["max_turns_reached"] = counts["max_turns_reached"].get<int>() + 1; break;
    }
    if (o.history_leak) counts["history_leak"] = counts["history_leak"].get<int>() + 1;
    if (o.response_leak) counts["response_leak"] = counts["response_leak"].get<int>() + 1;
  }

  auto as_json = [](const std::optional<double>& v) { return v ? Json(*v) : Json(); };
  Json metrics = Json::object();
  for (auto variant : kAllVariants) {
    MetricOptions options{variant, spec.shrink_denominator};
    Json m = Json::object();
    for (int k : spec.ks) m["recall@" + std::to_string(k)] = as_json(recall_at_k(outcomes, k, options));
    for (int t : spec.ts) m["sr@" + std::to_string(t)] = as_json(sr_at_t(outcomes, t, options));
    if (!spec.ts.empty()) m["average_turns"] = as_json(average_turns(outcomes, spec.max_turns, options));
    metrics[std::string(to_string(variant))] = std::move(m);
  }
  return Json{{"scenario", spec.scenario},
              {"simulator", spec.simulator},
              {"max_turns", spec.max_turns},
              {"shrink_denominator", spec.shrink_denominator},
              {"config", spec.config},
              {"counts", counts},
              {"metrics", metrics}};
}

}  // namespace cshi
