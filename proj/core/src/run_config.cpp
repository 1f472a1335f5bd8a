#include "cshi/run_config.hpp"

#include "cshi/error.hpp"

namespace cshi {

std::shared_ptr<ChatBackend> make_backend(const std::string& spec,
                                          const RemoteBackendConfig& remote) {
  if (spec.rfind("scripted:", 0) == 0) {
    return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(spec.substr(9)));
  }
  if (spec == "remote") {
    std::shared_ptr<RateLimiter> limiter;
    if (remote.requests_per_minute > 0) limiter = std::make_shared<RateLimiter>(remote.requests_per_minute);
    return std::make_shared<RemoteBackend>(remote, limiter);
  }
  throw Error(ErrorCode::kConfig, "backend must be scripted:PATH or remote, got '" + spec + "'");
}

PreparedRun prepare_run(const RunOptions& o) {
  if (o.replay && o.record) throw Error(ErrorCode::kConfig, "--replay and --record are exclusive");
  SplitConfig split{o.k1, o.k2, o.seed};
  split.validate();

  PreparedRun run;
  run.catalog = std::make_shared<Catalog>(load_items(o.items));
  std::vector<RatingRecord> ratings;
  if (o.ratings) ratings = load_ratings(*o.ratings);
  std::map<std::string, Json> users;
  if (o.users) users = load_users(*o.users);

  auto& ctx = run.context;
  ctx.catalog = run.catalog.get();
  ctx.scenario = o.scenario == Scenario::kAnnotated ? ScenarioConfig::annotated() : ScenarioConfig::fresh();
  if (o.max_turns) {
    if (*o.max_turns < 1) throw Error(ErrorCode::kConfig, "max-turns must be >= 1");
    ctx.scenario.max_turns = *o.max_turns;
  }
  ctx.simulator = o.simulator;
  ctx.split = split;
  ctx.workers = o.workers;
  if (o.prompts) ctx.prompts = std::make_shared<PromptLibrary>(PromptLibrary::from_file(*o.prompts));
  if (o.pipeline) ctx.pipeline = PipelineConfig::from_file(*o.pipeline);

  if (o.scenario == Scenario::kAnnotated) {
    if (!o.conversations) throw Error(ErrorCode::kConfig, "annotated scenario needs --conversations");
    run.seeds = annotated_seeds(*run.catalog, load_conversations(*o.conversations), ratings, users, o.seed);
  } else {
    if (!o.ratings) throw Error(ErrorCode::kConfig, "fresh scenario needs --ratings");
    run.seeds = fresh_seeds(*run.catalog, ratings, users, o.seed, o.holdout);
  }

  std::shared_ptr<ChatBackend> base;
  if (!o.replay) base = make_backend(o.backend, o.remote);
  std::shared_ptr<ReplayStore> store;
  std::optional<ReplayMode> mode;
  if (o.replay) {
    store = std::make_shared<ReplayStore>(*o.replay);
    mode = ReplayMode::kReplay;
  } else if (o.record) {
    store = std::make_shared<ReplayStore>(*o.record);
    mode = ReplayMode::kRecord;
  }
  ctx.backend_for = [base, store, mode](const std::string& session_id) {
    if (!mode) return base;
    return record_and_replay(*mode, store, base, session_id);
  };

  if (o.crs == "builtin") {
    auto catalog = run.catalog;
    auto prompts = ctx.prompts;
    BuiltinCrsConfig crs_config;
    crs_config.ask_budget = o.crs_ask_budget;
    ctx.crs_for = [catalog, prompts, crs_config](const std::string&, std::shared_ptr<ChatBackend> backend)
        -> std::unique_ptr<CrsAdapter> {
      return std::make_unique<BuiltinCrs>(catalog.get(), std::move(backend), prompts, crs_config);
    };
  } else if (o.crs.rfind("http://", 0) == 0 || o.crs.rfind("https://", 0) == 0) {
    const std::string url = o.crs;
    const int timeout = o.crs_timeout_ms;
    ctx.crs_for = [url, timeout](const std::string&, std::shared_ptr<ChatBackend>)
        -> std::unique_ptr<CrsAdapter> { return std::make_unique<ExternalCrs>(url, timeout); };
  } else {
    throw Error(ErrorCode::kConfig, "--crs must be 'builtin' or an http(s) URL");
  }

  run.config = Json{{"k1", o.k1},
                    {"k2", o.k2},
                    {"seed", o.seed},
                    {"crs", o.crs == "builtin" ? "builtin" : "external"},
                    {"backend", o.replay ? "replay" : (o.backend == "remote" ? "remote" : "scripted")},
                    {"max_items", ctx.scenario.max_items}};
  return run;
}

}  // namespace cshi
