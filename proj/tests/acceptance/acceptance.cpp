// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any FAIL.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cshi/crs.hpp"
#include "cshi/error.hpp"
#include "cshi/harness.hpp"
#include "cshi/metrics.hpp"
#include "cshi/plugins.hpp"
#include "cshi/run_config.hpp"
#include "cshi/simulator.hpp"
#include "cshi/text.hpp"
#include "support.hpp"

#include <spdlog/spdlog.h>

namespace {

using namespace cshi;
namespace fs = std::filesystem;

// Tolerances.
constexpr double kExact = 0.0;             // metric comparisons against oracles
constexpr double kGoldenBudgetSeconds = 10.0;
constexpr int kMetricFixtures = 200;
constexpr int kLeakSessions = 100;
constexpr int kAnonymizationSamples = 1000;
constexpr int kFuzzPayloads = 1000;

struct Failure {
  std::string what;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw Failure{message};
}

bool close(double a, double b) { return std::fabs(a - b) <= kExact; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

const fs::path kData = testing::source_path("data");

RunOptions golden_options() {
  RunOptions o;
  o.scenario = Scenario::kFresh;
  o.items = kData / "fixture/items.jsonl";
  o.ratings = kData / "fixture/ratings.jsonl";
  o.users = kData / "fixture/users.jsonl";
  o.backend = "scripted:" + (kData / "scripts/golden.json").string();
  o.seed = 7;
  return o;
}

// ---- 1. golden run ---------------------------------------------------------------

std::string golden_run() {
  const auto start = std::chrono::steady_clock::now();
  auto prepared = prepare_run(golden_options());
  const auto results = run_experiment(prepared.seeds, prepared.context);
  const auto outputs = summarize(results, prepared.context, prepared.config);
  testing::TempDir dir;
  write_outputs(outputs, dir.path());
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  require(results.size() == 20, "expected 20 sessions, got " + std::to_string(results.size()));
  const auto golden = read_file(testing::source_path("tests/data/golden/report.json"));
  require(read_file(dir.path() / "report.json") == golden, "report.json differs from the golden copy");

  // Hand-trace oracle: per-session outcome written down independently.
  const auto trace = Json::parse(read_file(testing::source_path("tests/data/golden/hand_trace.json")));
  const auto& sessions = trace.at("sessions");
  require(sessions.size() == results.size(), "hand trace covers a different session count");
  const int max_turns = trace.at("max_turns").get<int>();
  int within[11] = {};
  long total_turns = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& expect = sessions[i];
    const auto& got = results[i];
    require(expect.at("session_id") == got.seed.session_id, "session order differs at " + std::to_string(i));
    const bool succeeded = expect.at("status") == "succeeded";
    require(succeeded == (got.state.status.kind == StatusKind::kSucceeded),
            got.seed.session_id + ": status differs");
    const int rounds = succeeded ? expect.at("success_round").get<int>() : max_turns;
    if (succeeded) {
      require(got.state.status.round == rounds, got.seed.session_id + ": success round differs");
      require(got.hit_rank == expect.at("hit_rank").get<int>(), got.seed.session_id + ": hit rank differs");
      for (int t = rounds; t <= 10; ++t) ++within[t];
    }
    total_turns += rounds;
  }
  const double n = static_cast<double>(sessions.size());
  const auto& raw = outputs.report.at("metrics").at("raw");
  for (int t : {3, 5, 10}) {
    require(close(raw.at("sr@" + std::to_string(t)).get<double>(), within[t] / n),
            "SR@" + std::to_string(t) + " differs from the hand trace");
  }
  require(close(raw.at("average_turns").get<double>(), static_cast<double>(total_turns) / n),
          "AT differs from the hand trace");
  require(seconds < kGoldenBudgetSeconds, "took " + std::to_string(seconds) + " s");

  std::ostringstream detail;
  detail << "20 sessions byte-identical; SR@3=" << within[3] / n << " SR@5=" << within[5] / n
         << " SR@10=" << within[10] / n << " AT=" << total_turns / n << "; " << seconds << " s";
  return detail.str();
}

// ---- 2. metric oracle ------------------------------------------------------------

std::vector<SessionOutcome> random_outcomes(std::mt19937_64& rng, int max_turns) {
  std::vector<SessionOutcome> out(1 + rng() % 30);
  for (auto& o : out) {
    const auto r = rng() % 10;
    if (r < 5) {
      o.status = StatusKind::kSucceeded;
      o.success_round = 1 + static_cast<int>(rng() % max_turns);
      o.hit_rank = 1 + static_cast<int>(rng() % 50);
    } else {
      o.status = r < 9 ? StatusKind::kMaxTurnsReached : StatusKind::kErrored;
    }
    o.history_leak = rng() % 4 == 0;
    o.response_leak = rng() % 4 == 0;
  }
  return out;
}

bool dropped(const SessionOutcome& o, Variant v) {
  return (v == Variant::kMinusHistory && o.history_leak) ||
         (v == Variant::kMinusResponse && o.response_leak) ||
         (v == Variant::kMinusBoth && (o.history_leak || o.response_leak));
}

// Recounts from scratch: {numerator, denominator} for SR@t, recall@k or AT.
std::optional<double> brute(const std::vector<SessionOutcome>& outcomes, Variant v, bool shrink,
                            const std::function<double(const SessionOutcome&, bool)>& value) {
  double num = 0;
  double den = 0;
  for (const auto& o : outcomes) {
    if (o.status == StatusKind::kErrored) continue;
    const bool out = dropped(o, v);
    if (out && shrink) continue;
    den += 1;
    num += value(o, !out && o.status == StatusKind::kSucceeded);
  }
  if (den == 0) return std::nullopt;
  return num / den;
}

bool same(const std::optional<double>& a, const std::optional<double>& b) {
  return a.has_value() == b.has_value() && (!a || close(*a, *b));
}

std::string metric_oracle() {
  std::mt19937_64 rng(2024);
  int comparisons = 0;
  for (int trial = 0; trial < kMetricFixtures; ++trial) {
    const int max_turns = 1 + static_cast<int>(rng() % 10);
    const auto outcomes = random_outcomes(rng, max_turns);
    for (auto v : kAllVariants) {
      for (bool shrink : {false, true}) {
        const MetricOptions opt{v, shrink};
        for (int c = 1; c <= 50; ++c) {
          require(same(sr_at_t(outcomes, c, opt),
                       brute(outcomes, v, shrink,
                             [c](const SessionOutcome& o, bool won) { return won && *o.success_round <= c; })),
                  "SR@" + std::to_string(c) + " mismatch in fixture " + std::to_string(trial));
          require(same(recall_at_k(outcomes, c, opt),
                       brute(outcomes, v, shrink,
                             [c](const SessionOutcome& o, bool won) { return won && *o.hit_rank <= c; })),
                  "recall@" + std::to_string(c) + " mismatch in fixture " + std::to_string(trial));
          comparisons += 2;
        }
        require(same(average_turns(outcomes, max_turns, opt),
                     brute(outcomes, v, shrink,
                           [max_turns](const SessionOutcome& o, bool won) {
                             return won ? *o.success_round : max_turns;
                           })),
                "AT mismatch in fixture " + std::to_string(trial));
        ++comparisons;
        const auto first = sr_at_t(outcomes, 1, opt);
        if (!first) continue;
        for (int c = 1; c < 50; ++c) {
          require(*sr_at_t(outcomes, c, opt) <= *sr_at_t(outcomes, c + 1, opt), "SR not monotone in t");
          require(*recall_at_k(outcomes, c, opt) <= *recall_at_k(outcomes, c + 1, opt),
                  "recall not monotone in k");
        }
      }
    }
  }
  return std::to_string(kMetricFixtures) + " fixtures, " + std::to_string(comparisons) +
         " exact comparisons, monotone in cut-off";
}

// ---- 3. leakage-filter dominance -------------------------------------------------

std::size_t brute_mentions(const SessionState& state, bool history) {
  std::size_t count = 0;
  for (std::size_t i = 0; i < state.transcript.size(); ++i) {
    const auto& m = state.transcript[i];
    const bool prefix = i < state.seed_prefix_length;
    if (history != prefix) continue;
    if (!history && m.role != Role::kSimulator) continue;
    for (const auto& t : state.target_items) count += testing::oracle_mentions(m.text, t.title) ? 1 : 0;
  }
  return count;
}

void check_audit(const SessionState& state, const std::string& label) {
  std::size_t h = 0;
  std::size_t r = 0;
  for (const auto& e : state.leakage.evidence) (e.kind == LeakKind::kHistory ? h : r)++;
  require(h == brute_mentions(state, true), label + ": history evidence count differs");
  require(r == brute_mentions(state, false), label + ": response evidence count differs");
}

std::string leakage_dominance() {
  std::mt19937_64 rng(31);
  int fixtures = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto outcomes = random_outcomes(rng, 10);
    for (bool shrink : {false, true}) {
      auto at = [&](Variant v) { return average_turns(outcomes, 10, {v, shrink}); };
      if (!at(Variant::kRaw) || (shrink && !at(Variant::kMinusBoth))) continue;
      ++fixtures;
      auto le = [](double a, double b) { return a <= b; };
      std::vector<std::function<std::optional<double>(Variant)>> rates = {
          [&](Variant v) { return sr_at_t(outcomes, 3, {v, shrink}); },
          [&](Variant v) { return sr_at_t(outcomes, 10, {v, shrink}); },
          [&](Variant v) { return recall_at_k(outcomes, 10, {v, shrink}); }};
      if (!shrink) {
        for (const auto& rate : rates) {
          const double both = *rate(Variant::kMinusBoth);
          const double hist = *rate(Variant::kMinusHistory);
          const double resp = *rate(Variant::kMinusResponse);
          require(le(both, std::min(hist, resp)) && le(std::max(hist, resp), *rate(Variant::kRaw)),
                  "success-rate dominance violated");
        }
        require(*at(Variant::kMinusBoth) >= std::max(*at(Variant::kMinusHistory), *at(Variant::kMinusResponse)) &&
                    std::min(*at(Variant::kMinusHistory), *at(Variant::kMinusResponse)) >= *at(Variant::kRaw),
                "AT dominance violated");
      }
    }
  }

  // Audit evidence against a brute-force scan: annotated fixture sessions
  // plus random transcripts sprinkled with target titles.
  const auto& fx = testing::fixture();
  const auto seeds = annotated_seeds(*fx.catalog, fx.conversations, fx.ratings, fx.users, 1);
  const auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/golden.json"),
                                             ScenarioConfig::annotated());
  int leaked = 0;
  for (const auto& seed : seeds) {
    const auto result = run_session(seed, ctx);
    check_audit(result.state, seed.session_id);
    leaked += result.state.leakage.history_leak;
  }
  require(leaked == 1, "the annotated fixture should contain exactly one history leak");

  const std::vector<std::string> words = {"Harbor Lights Blues", "harbor", "lights", "blues,",
                                          "Summer at Kettle Pond", "kettle", "the", "I", "loved", "!"};
  for (int trial = 0; trial < 500; ++trial) {
    SessionState state;
    state.target_items = {fx.catalog->at("F1"), fx.catalog->at("F2")};
    const std::size_t n = rng() % 10;
    for (std::size_t i = 0; i < n; ++i) {
      Message m;
      m.role = static_cast<Role>(rng() % 3);
      for (int w = 0, k = static_cast<int>(rng() % 7); w < k; ++w) m.text += words[rng() % words.size()] + " ";
      state.append(std::move(m));
    }
    state.seed_prefix_length = rng() % (n + 1);
    state.leakage = audit_leakage(state);
    check_audit(state, "random transcript " + std::to_string(trial));
  }
  return std::to_string(fixtures) + " outcome fixtures ordered; audit counts equal brute-force scans on " +
         std::to_string(seeds.size()) + " annotated + 500 random transcripts";
}

// ---- 4. target exclusion ---------------------------------------------------------

// Stands in for an LLM that blurts out the target title in generated text.
// Every prompt it is shown is kept for inspection.
class AdversarialBackend : public ChatBackend {
 public:
  AdversarialBackend(std::shared_ptr<ChatBackend> inner, std::string title, std::uint64_t seed)
      : inner_(std::move(inner)), title_(std::move(title)), rng_(seed) {}

  ChatResponse complete(const ChatRequest& request) override {
    std::string prompt = request.system_text;
    for (const auto& m : request.messages) prompt += "\n" + m.text;
    prompts.push_back(std::move(prompt));
    auto response = inner_->complete(request);
    if (request.tag != "intent" && rng_() % 3 == 0) {
      response.text = "Honestly, I'd love " + title_ + ". " + response.text;
      ++injections;
    }
    return response;
  }

  std::vector<std::string> prompts;
  int injections = 0;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::string title_;
  std::mt19937_64 rng_;
};

// Prompts that name the target once everything quoted from the CRS is removed.
int prompts_naming_target(const AdversarialBackend& backend, const SessionResult& result) {
  const auto title = normalize_title(result.seed.targets[0].title);
  int count = 0;
  for (auto prompt : backend.prompts) {
    for (const auto& m : result.state.transcript) {
      if (m.role != Role::kCrs) continue;
      std::vector<std::string> quoted = {m.text};
      if (m.recommended_items) {
        for (const auto& item : *m.recommended_items) quoted.push_back(item.title);
      }
      for (const auto& q : quoted) {
        for (auto pos = prompt.find(q); !q.empty() && pos != std::string::npos; pos = prompt.find(q)) {
          prompt.erase(pos, q.size());
        }
      }
    }
    count += contains_title(prompt, title) ? 1 : 0;
  }
  return count;
}

std::string target_exclusion() {
  const auto& fx = testing::fixture();
  const auto golden = testing::script_backend("data/scripts/golden.json");
  int clean = 0;
  int injections = 0;
  int regenerations = 0;
  int prompt_leaks = 0;
  int sessions = 0;
  const double splits[][2] = {{1, 0}, {0.5, 0.5}, {0, 1}, {0.75, 0.25}, {0.25, 0.5}};
  for (std::uint64_t base = 1; sessions < kLeakSessions; ++base) {
    auto ctx = testing::scripted_context(*fx.catalog, golden);
    ctx.split = SplitConfig{splits[base % 5][0], splits[base % 5][1], 0};
    for (const auto& seed : fresh_seeds(*fx.catalog, fx.ratings, fx.users, base)) {
      if (sessions == kLeakSessions) break;
      auto adversary = std::make_shared<AdversarialBackend>(golden, seed.targets[0].title, seed.seed);
      // The simulator gets the adversary; the CRS keeps the plain script.
      ctx.backend_for = [adversary](const std::string&) { return adversary; };
      ctx.crs_for = [&](const std::string&, std::shared_ptr<ChatBackend>) -> std::unique_ptr<CrsAdapter> {
        return std::make_unique<BuiltinCrs>(fx.catalog.get(), golden, nullptr);
      };
      const auto result = run_session(seed, ctx);
      require(result.state.status.kind != StatusKind::kErrored, seed.session_id + ": " + result.state.status.error);
      ++sessions;
      clean += !result.state.leakage.response_leak;
      injections += adversary->injections;
      prompt_leaks += prompts_naming_target(*adversary, result);
      for (const auto& t : result.traces) regenerations += t.regenerations;
    }
  }
  require(clean == kLeakSessions,
          "CSHI response_leak=false in " + std::to_string(clean) + "/" + std::to_string(kLeakSessions));
  require(prompt_leaks == 0, std::to_string(prompt_leaks) + " simulator prompts named the target");
  require(injections > 0 && regenerations > 0, "the adversary never exercised the guard");

  auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/title_echo.json"),
                                       ScenarioConfig::fresh(), SimulatorKind::kSinglePrompt);
  int echoed = 0;
  int baseline = 0;
  for (std::uint64_t base = 1; baseline < kLeakSessions; ++base) {
    for (const auto& seed : fresh_seeds(*fx.catalog, fx.ratings, fx.users, base)) {
      if (baseline == kLeakSessions) break;
      ++baseline;
      echoed += run_session(seed, ctx).state.leakage.response_leak;
    }
  }
  require(echoed == kLeakSessions,
          "single-prompt response_leak=true in " + std::to_string(echoed) + "/" + std::to_string(kLeakSessions));
  return "CSHI 100/100 clean despite " + std::to_string(injections) + " injected titles (" +
         std::to_string(regenerations) + " regenerations; no prompt named a target except when quoting the CRS); "
         "single-prompt 100/100 leaked";
}

// ---- 5. anonymization ------------------------------------------------------------

PreferenceFacet facet(const std::string& attribute, const std::string& value) {
  PreferenceFacet f;
  f.attribute = attribute;
  f.value = value;
  return f;
}

std::string anonymization() {
  const auto date = anonymize_facet(facet(attr::kReleaseDate, "June 1, 2012"));
  require(date.value == "the 2010s", "June 1, 2012 -> " + date.value);
  const auto runtime = anonymize_facet(facet(attr::kRuntime, "144 minutes"));
  require(runtime.value == "about 2 hours", "144 minutes -> " + runtime.value);

  static const char* kMonths[] = {"January", "February", "March", "April", "May", "June", "July",
                                  "August", "September", "October", "November", "December"};
  static const int kDays[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const std::regex decade(R"(^the \d{3}0s$)");
  const std::regex hours(R"(^about (half an hour|1 hour|1\.5 hours|\d+(\.5)? hours)$)");
  std::mt19937_64 rng(5);
  for (int i = 0; i < kAnonymizationSamples; ++i) {
    const int year = 1900 + static_cast<int>(rng() % 126);
    const int month = 1 + static_cast<int>(rng() % 12);
    const int day = 1 + static_cast<int>(rng() % kDays[month - 1]);
    char buf[64];
    switch (rng() % 4) {
      case 0: std::snprintf(buf, sizeof buf, "%s %d, %d", kMonths[month - 1], day, year); break;
      case 1: std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", year, month, day); break;
      case 2: std::snprintf(buf, sizeof buf, "%d %s %d", day, kMonths[month - 1], year); break;
      default: std::snprintf(buf, sizeof buf, "%d/%d/%d", month, day, year); break;
    }
    const auto out = anonymize_facet(facet(attr::kReleaseDate, buf)).value;
    require(std::regex_match(out, decade), std::string(buf) + " -> " + out);
    require(out == "the " + std::to_string(year / 10 * 10) + "s", std::string(buf) + " -> wrong decade " + out);

    const int minutes = 1 + static_cast<int>(rng() % 400);
    const std::string raw = std::to_string(minutes) + (rng() % 2 ? " min" : " minutes");
    const auto coarse = anonymize_facet(facet(attr::kRuntime, raw)).value;
    require(std::regex_match(coarse, hours), raw + " -> " + coarse);
    require(normalize_text(coarse).find(std::to_string(minutes)) == std::string::npos || minutes < 10,
            raw + " -> " + coarse + " keeps the minute count");
    require(coarse.find("min") == std::string::npos, raw + " -> " + coarse);
  }

  // End to end: simulator messages never carry the exact values.
  const auto& fx = testing::fixture();
  const auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/golden.json"));
  int scanned = 0;
  for (const auto& seed : fresh_seeds(*fx.catalog, fx.ratings, fx.users, 7)) {
    const auto result = run_session(seed, ctx);
    for (const auto& m : result.state.transcript) {
      if (m.role != Role::kSimulator) continue;
      ++scanned;
      for (const auto& name : {attr::kReleaseDate, attr::kRuntime}) {
        const auto& attrs = seed.targets[0].attributes;
        const auto it = attrs.find(name);
        if (it == attrs.end()) continue;
        for (const auto& v : it->second) {
          require(m.text.find(v) == std::string::npos, seed.session_id + " voiced exact value '" + v + "'");
        }
      }
    }
  }
  return "examples hold; " + std::to_string(kAnonymizationSamples) + " dates and runtimes coarsened; " +
         std::to_string(scanned) + " simulator messages free of exact values";
}

// ---- 6. k1/k2 split --------------------------------------------------------------

// Nearest integer to q/4 with exact halves going down.
std::size_t quarter_share(std::size_t q) { return (q + 1) / 4; }

std::string split_sizes() {
  int cases = 0;
  for (std::size_t n = 0; n <= 30; ++n) {
    AttributeMap attributes;
    for (std::size_t i = 0; i < n; ++i) attributes["genre"].push_back("g" + std::to_string(i));
    for (int a = 0; a <= 4; ++a) {
      for (int b = 0; a + b <= 4; ++b) {
        const SplitConfig split{a / 4.0, b / 4.0, 1000 + n};
        const auto facets = plugin3_realtime_preferences({attributes}, split, {});
        std::size_t known = 0;
        std::size_t unknown = 0;
        for (const auto& f : facets) (f.visibility == Visibility::kKnown ? known : unknown)++;
        const std::string where = "n=" + std::to_string(n) + " k1=" + std::to_string(a / 4.0) +
                                  " k2=" + std::to_string(b / 4.0);
        require(known == quarter_share(a * n), where + ": |Known|=" + std::to_string(known));
        require(unknown == quarter_share(b * n), where + ": |Unknown|=" + std::to_string(unknown));
        require(plugin3_realtime_preferences({attributes}, split, {}) == facets, where + ": not reproducible");
        ++cases;
      }
    }
  }

  // Whole sessions with a fixed seed give identical memories.
  const auto& fx = testing::fixture();
  auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/golden.json"));
  ctx.split = SplitConfig{0.5, 0.25, 0};
  const auto seeds = fresh_seeds(*fx.catalog, fx.ratings, fx.users, 99);
  std::set<std::string> layouts;
  for (const auto& seed : seeds) {
    const auto a = run_session(seed, ctx);
    const auto b = run_session(seed, ctx);
    require(Json(a.state).dump() == Json(b.state).dump(), seed.session_id + ": seeded session not reproducible");
    std::string layout;
    for (const auto& f : a.state.memory.real_time) layout += f.attribute + (f.visibility == Visibility::kKnown ? "+" : "-");
    layouts.insert(layout);
  }
  require(layouts.size() > 1, "different seeds never changed the split");
  return std::to_string(cases) + " (n,k1,k2) cases exact (halves round down); " +
         std::to_string(seeds.size()) + " seeded sessions reproducible";
}

// ---- 7. Unknown activation -------------------------------------------------------

std::string unknown_activation() {
  const auto& fx = testing::fixture();
  auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/golden.json"));
  ctx.split = SplitConfig{0.0, 1.0, 0};
  const std::string director = fx.catalog->at("F1").attributes.at(attr::kDirector).at(0);
  ctx.crs_for = [director](const std::string&, std::shared_ptr<ChatBackend>) -> std::unique_ptr<CrsAdapter> {
    return std::make_unique<testing::CallbackCrs>([director](const CrsRequest& r) {
      if (r.turn == 1) return CrsTurn{crs_action::kAsk, "What kind of movies do you enjoy? Any favorite genres?", {}};
      if (r.turn == 2) {
        return CrsTurn{crs_action::kRecommend, "Fans of " + director + " tend to like this one.",
                       {{"F2", "Summer At Kettle Pond (2014)"}}};
      }
      return CrsTurn{crs_action::kAsk, "Do you have any favorite directors?", {}};
    });
  };
  ctx.scenario.max_turns = 3;
  SessionSeed seed;
  for (const auto& s : fresh_seeds(*fx.catalog, fx.ratings, fx.users, 7)) {
    if (s.session_id == "u1-F1") seed = s;
  }
  const auto result = run_session(seed, ctx);
  const auto& st = result.state;
  require(st.status.kind == StatusKind::kMaxTurnsReached, "unexpected status " + st.status.error);

  const PreferenceFacet* facet = nullptr;
  for (const auto& f : st.memory.real_time) {
    if (f.attribute == attr::kDirector) facet = &f;
  }
  require(facet != nullptr && facet->value == director, "director facet missing");
  require(facet->visibility == Visibility::kKnown && facet->origin == FacetOrigin::kActivated &&
              facet->promoted_at_round == 2,
          "director facet was not promoted in round 2");

  const Message* voiced = nullptr;
  for (const auto& m : st.transcript) {
    if (m.role != Role::kSimulator) continue;
    const bool mentions = m.text.find(director) != std::string::npos;
    if (m.round < 2) require(!mentions, "director voiced before activation: " + m.text);
    if (m.round == 2) voiced = &m;
  }
  require(voiced != nullptr && voiced->text.find(director) != std::string::npos,
          "the reply after activation does not voice the director");
  bool traced = false;
  for (const auto& t : result.traces) {
    for (const auto& f : t.activated) traced = traced || (t.round == 2 && f.value == director);
  }
  require(traced, "activation missing from the turn trace");
  return "Unknown director promoted in round 2 and voiced: \"" + voiced->text + "\"";
}

// ---- 8. plugin fallback ----------------------------------------------------------

std::string plugin_fallback() {
  const auto& fx = testing::fixture();
  auto services = std::make_shared<SimulatorServices>();
  services->catalog = fx.catalog.get();
  services->llm = testing::script_backend("data/scripts/golden.json");
  services->oracle = std::make_shared<TitleOracle>(std::vector<CatalogItem>{fx.catalog->at("F1")});
  CshiSimulator sim(services);
  SessionState state;
  SimulatorInit init;
  for (const auto& s : fresh_seeds(*fx.catalog, fx.ratings, fx.users, 7)) {
    if (s.session_id != "u1-F1") continue;
    init.raw_user_record = s.user_record;
    init.target_info = target_info(s.targets);
  }
  sim.initialize(state, init);

  auto ask = [&](const std::string& question) {
    Message m;
    m.role = Role::kCrs;
    m.text = question;
    m.round = state.crs_turns() + 1;
    state.append(std::move(m));
    const auto before5 = sim.plugins().invocations(stage::kMessageHandling, plugin_id::kPersonalizedAsk);
    const auto before6 = sim.plugins().invocations(stage::kMessageHandling, plugin_id::kNonPersonalizedAsk);
    const auto reply = sim.respond(state, state.crs_turns());
    Message r;
    r.text = reply.text;
    state.append(std::move(r));
    return std::tuple{reply.handled_by.value_or(""),
                      sim.plugins().invocations(stage::kMessageHandling, plugin_id::kPersonalizedAsk) - before5,
                      sim.plugins().invocations(stage::kMessageHandling, plugin_id::kNonPersonalizedAsk) - before6};
  };
  // The history items carry no director, so the personalized route declines.
  const auto [dir_by, dir5, dir6] = ask("Do you have any favorite directors?");
  require(dir_by == plugin_id::kNonPersonalizedAsk && dir5 == 1 && dir6 == 1,
          "director question: handled by " + dir_by + ", +" + std::to_string(dir5) + "/+" + std::to_string(dir6));
  const auto [gen_by, gen5, gen6] = ask("What kind of movies do you enjoy? Any favorite genres?");
  require(gen_by == plugin_id::kPersonalizedAsk && gen5 == 1 && gen6 == 0,
          "genre question: handled by " + gen_by + ", +" + std::to_string(gen5) + "/+" + std::to_string(gen6));
  return "director ask: personalized +1 then nonpersonalized +1 (handled); genre ask: personalized +1, nonpersonalized +0";
}

// ---- 9. protocol robustness ------------------------------------------------------

std::string protocol_robustness() {
  std::mt19937_64 rng(777);
  std::string body;
  std::size_t seen_cap = 0;
  testing::StubServer server("/crs", [&](const std::string& request) -> testing::StubServer::Reply {
    seen_cap = Json::parse(request).at("max_items").get<std::size_t>();
    return {200, body};
  });
  ExternalCrs crs(server.base_url() + "/crs", 5000);
  int valid = 0;
  int violations = 0;
  for (int i = 0; i < kFuzzPayloads; ++i) {
    body = testing::fuzz_crs_payload(rng);
    CrsRequest request;
    request.session_id = "fuzz";
    request.turn = 1;
    request.max_items = i % 2 ? 10 : 50;
    try {
      const auto turn = crs.respond(request);
      require(testing::crs_turn_well_formed(turn, request.max_items), "accepted a malformed reply: " + body);
      ++valid;
    } catch (const ProtocolViolation& e) {
      require(!e.diagnostics().empty(), "violation without diagnostics");
      ++violations;
    }
  }
  require(valid > 0 && violations > 0, "fuzzer did not reach both outcomes");

  // Caps follow the scenario: 50 annotated, 10 fresh.
  const auto& fx = testing::fixture();
  for (const auto& scenario : {ScenarioConfig::annotated(), ScenarioConfig::fresh()}) {
    const std::size_t cap = scenario.max_items;
    for (std::size_t n : {cap, cap + 1}) {
      Json items = Json::array();
      for (std::size_t i = 0; i < n; ++i) items.push_back({{"item_id", "Z" + std::to_string(i)}, {"title", "Z"}});
      body = Json{{"kind", "recommend"}, {"text", "t"}, {"items", items}}.dump();
      auto ctx = testing::scripted_context(*fx.catalog, testing::script_backend("data/scripts/golden.json"), scenario);
      const auto url = server.base_url() + "/crs";
      ctx.crs_for = [url](const std::string&, std::shared_ptr<ChatBackend>) -> std::unique_ptr<CrsAdapter> {
        return std::make_unique<ExternalCrs>(url, 5000);
      };
      ctx.scenario.max_turns = 1;
      const auto seed = fresh_seeds(*fx.catalog, fx.ratings, fx.users, 1).front();
      const auto result = run_session(seed, ctx);
      require(seen_cap == cap, "CRS was told max_items=" + std::to_string(seen_cap));
      const bool rejected = result.state.status.kind == StatusKind::kErrored &&
                            result.state.status.error.find("ProtocolViolation") != std::string::npos;
      require(rejected == (n > cap), std::to_string(n) + " items with cap " + std::to_string(cap) +
                                         (rejected ? " rejected" : " accepted"));
    }
  }
  return std::to_string(kFuzzPayloads) + " payloads over HTTP: " + std::to_string(valid) + " valid, " +
         std::to_string(violations) + " violations, 0 crashes; caps 50/10 enforced";
}

// ---- 10. replay determinism ------------------------------------------------------

std::string replay_determinism() {
  testing::TempDir dir;
  auto stub = testing::openai_stub(testing::script_backend("data/scripts/golden.json"));
  auto options = golden_options();
  options.backend = "remote";
  options.remote.base_url = stub->base_url() + "/v1";
  options.remote.max_retries = 0;
  options.remote.timeout_ms = 5000;
  options.record = dir.path() / "cassette";

  auto recorded = prepare_run(options);
  const auto live = run_experiment(recorded.seeds, recorded.context);
  const int calls = stub->requests();
  stub->stop();
  require(calls > 0, "recording never reached the server");

  options.record.reset();
  options.replay = dir.path() / "cassette";
  options.workers = 2;
  auto replayed = prepare_run(options);
  const auto again = run_experiment(replayed.seeds, replayed.context);

  require(live.size() == again.size() && !live.empty(), "session counts differ");
  for (std::size_t i = 0; i < live.size(); ++i) {
    require(live[i].state.status.kind != StatusKind::kErrored, live[i].seed.session_id + ": " + live[i].state.status.error);
    require(Json(live[i].state.transcript).dump() == Json(again[i].state.transcript).dump(),
            live[i].seed.session_id + ": transcript differs on replay");
  }
  const auto a = summarize(live, recorded.context).report;
  const auto b = summarize(again, replayed.context).report;
  require(a.at("metrics").dump() == b.at("metrics").dump() && a.at("counts").dump() == b.at("counts").dump(),
          "metrics differ on replay");
  return std::to_string(live.size()) + " sessions, " + std::to_string(calls) +
         " recorded calls; replay with the server down gives identical transcripts and metrics";
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::err);
  const std::vector<std::pair<std::string, std::function<std::string()>>> criteria = {
      {"C1 golden-run", golden_run},
      {"C2 metric-oracle-equivalence", metric_oracle},
      {"C3 leakage-filter-dominance", leakage_dominance},
      {"C4 target-exclusion", target_exclusion},
      {"C5 anonymization", anonymization},
      {"C6 k1-k2-split", split_sizes},
      {"C7 unknown-activation", unknown_activation},
      {"C8 plugin-fallback", plugin_fallback},
      {"C9 protocol-robustness", protocol_robustness},
      {"C10 replay-determinism", replay_determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    try {
      const auto detail = check();
      std::cout << "PASS " << name << ": " << detail << std::endl;
    } catch (const Failure& f) {
      ++failed;
      std::cout << "FAIL " << name << ": " << f.what << std::endl;
    } catch (const std::exception& e) {
      ++failed;
      std::cout << "FAIL " << name << ": exception: " << e.what() << std::endl;
    }
  }
  return failed == 0 ? 0 : 1;
}
