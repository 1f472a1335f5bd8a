#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "cshi/dataset.hpp"
#include "cshi/harness.hpp"
#include "cshi/metrics.hpp"
#include "cshi/simulator.hpp"
#include "cshi/text.hpp"

namespace {

using namespace cshi;

std::string sample_text(std::size_t words, std::uint64_t seed) {
  static const std::vector<std::string> vocab = {
      "the", "harbor", "lights", "blues", "movie", "comedy", "I'd", "love", "something",
      "like", "Summer", "at", "Kettle", "Pond", "(2014)", "maybe", "drama,", "night!"};
  std::mt19937_64 rng(seed);
  std::string out;
  for (std::size_t i = 0; i < words; ++i) {
    if (i) out += ' ';
    out += vocab[rng() % vocab.size()];
  }
  return out;
}

void BM_NormalizeText(benchmark::State& state) {
  const auto text = sample_text(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(normalize_text(text));
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * text.size()));
}
BENCHMARK(BM_NormalizeText)->Arg(16)->Arg(256)->Arg(4096);

void BM_ContainsTitle(benchmark::State& state) {
  const auto text = sample_text(static_cast<std::size_t>(state.range(0)), 2);
  const auto title = normalize_title("Harbor Lights Blues (2012)");
  for (auto _ : state) benchmark::DoNotOptimize(contains_title(text, title));
}
BENCHMARK(BM_ContainsTitle)->Arg(16)->Arg(256)->Arg(4096);

void BM_Metrics(benchmark::State& state) {
  std::mt19937_64 rng(3);
  std::vector<SessionOutcome> outcomes(static_cast<std::size_t>(state.range(0)));
  for (auto& o : outcomes) {
    if (rng() % 2) {
      o.status = StatusKind::kSucceeded;
      o.success_round = static_cast<int>(rng() % 10) + 1;
      o.hit_rank = static_cast<int>(rng() % 10) + 1;
    }
    o.history_leak = rng() % 5 == 0;
    o.response_leak = rng() % 7 == 0;
  }
  const ReportSpec spec{"fresh", "cshi", 10, {}, {3, 5, 10}, false, Json::object()};
  for (auto _ : state) benchmark::DoNotOptimize(build_report(outcomes, spec));
}
BENCHMARK(BM_Metrics)->Arg(100)->Arg(10000);

void BM_ScriptedSession(benchmark::State& state) {
  const auto dir = std::filesystem::path(CSHI_SOURCE_DIR) / "data";
  const auto catalog = std::make_shared<Catalog>(load_items(dir / "fixture/items.jsonl"));
  const auto ratings = load_ratings(dir / "fixture/ratings.jsonl");
  const auto users = load_users(dir / "fixture/users.jsonl");
  const auto seeds = fresh_seeds(*catalog, ratings, users, 7);
  auto backend = std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(dir / "scripts/golden.json"));
  ExperimentContext ctx;
  ctx.catalog = catalog.get();
  ctx.backend_for = [backend](const std::string&) { return backend; };
  ctx.crs_for = [catalog](const std::string&, std::shared_ptr<ChatBackend> b) -> std::unique_ptr<CrsAdapter> {
    return std::make_unique<BuiltinCrs>(catalog.get(), std::move(b), nullptr);
  };
  for (auto _ : state) benchmark::DoNotOptimize(run_session(seeds.front(), ctx));
}
BENCHMARK(BM_ScriptedSession);

}  // namespace
BENCHMARK_MAIN();
