#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cshi/dataset.hpp"
#include "cshi/error.hpp"
#include "cshi/harness.hpp"
#include "cshi/metrics.hpp"
#include "cshi/run_config.hpp"
#include "cshi/service.hpp"

namespace {

constexpr int kExitError = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNoSessions = 3;

std::vector<cshi::SessionResult> load_sessions(const std::string& path, cshi::ScenarioConfig& scenario,
                                               std::string& simulator) {
  std::vector<cshi::SessionResult> out;
  for (const auto& row : cshi::read_jsonl(path)) {
    out.push_back(cshi::session_from_record(row));
    scenario = row.value("scenario", "fresh") == "annotated" ? cshi::ScenarioConfig::annotated()
                                                             : cshi::ScenarioConfig::fresh();
    scenario.max_turns = row.value("max_turns", scenario.max_turns);
    simulator = row.value("simulator", "cshi");
  }
  return out;
}

void add_remote_options(CLI::App* cmd, cshi::RunOptions& o) {
  cmd->add_option("--base-url", o.remote.base_url, "OpenAI-compatible API base URL");
  cmd->add_option("--model", o.remote.model, "chat model name");
  cmd->add_option("--api-key-env", o.remote.api_key_env, "environment variable holding the key");
  cmd->add_option("--rpm", o.remote.requests_per_minute, "request rate limit (0 = none)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LLM-based user simulator for conversational recommender evaluation"};
  app.require_subcommand(1);
  std::string log_level = "warn";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->capture_default_str();

  cshi::RunOptions run;
  std::string scenario = "fresh";
  std::string simulator = "cshi";
  std::string out_dir = "out";
  std::optional<std::string> replay, record, ratings, users, conversations, prompts, pipeline;
  auto* run_cmd = app.add_subcommand("run", "run an evaluation experiment");
  run_cmd->add_option("--scenario", scenario)->check(CLI::IsMember({"annotated", "fresh"}))->capture_default_str();
  run_cmd->add_option("--items", run.items, "items JSONL")->required()->check(CLI::ExistingFile);
  run_cmd->add_option("--ratings", ratings, "ratings JSONL")->check(CLI::ExistingFile);
  run_cmd->add_option("--users", users, "users JSONL")->check(CLI::ExistingFile);
  run_cmd->add_option("--conversations", conversations, "conversations JSONL")->check(CLI::ExistingFile);
  run_cmd->add_option("--crs", run.crs, "builtin or an http(s) URL")->capture_default_str();
  run_cmd->add_option("--backend", run.backend, "scripted:PATH or remote")->capture_default_str();
  run_cmd->add_option("--simulator", simulator)
      ->check(CLI::IsMember({"cshi", "cshi-nofilter", "single-prompt", "single-prompt-ui"}))
      ->capture_default_str();
  run_cmd->add_option("--k1", run.k1, "share of Known facets")->capture_default_str();
  run_cmd->add_option("--k2", run.k2, "share of Unknown facets")->capture_default_str();
  run_cmd->add_option("--seed", run.seed)->capture_default_str();
  run_cmd->add_option("--max-turns", run.max_turns, "override the scenario's turn budget");
  run_cmd->add_option("--replay", replay, "replay LLM calls from this recording directory");
  run_cmd->add_option("--record", record, "record LLM calls into this directory");
  run_cmd->add_option("--prompts", prompts, "prompt template overrides (JSON)")->check(CLI::ExistingFile);
  run_cmd->add_option("--pipeline", pipeline, "plugin selection (JSON)")->check(CLI::ExistingFile);
  run_cmd->add_option("--workers", run.workers)->capture_default_str();
  run_cmd->add_option("--crs-ask-budget", run.crs_ask_budget, "built-in CRS questions before recommending")
      ->capture_default_str();
  run_cmd->add_option("--out", out_dir)->capture_default_str();
  add_remote_options(run_cmd, run);

  std::string sessions_path;
  auto* audit_cmd = app.add_subcommand("audit", "recount target leakage in recorded sessions");
  audit_cmd->add_option("--sessions", sessions_path)->required()->check(CLI::ExistingFile);

  bool shrink = false;
  auto* metrics_cmd = app.add_subcommand("metrics", "recompute metrics from recorded sessions");
  metrics_cmd->add_option("--sessions", sessions_path)->required()->check(CLI::ExistingFile);
  metrics_cmd->add_flag("--shrink-denominator", shrink, "drop excluded sessions from denominators");

  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::string> data_dir;
  auto* serve_cmd = app.add_subcommand("serve", "run the interactive session service");
  serve_cmd->add_option("--items", run.items)->required()->check(CLI::ExistingFile);
  serve_cmd->add_option("--crs", run.crs)->capture_default_str();
  serve_cmd->add_option("--backend", run.backend)->capture_default_str();
  serve_cmd->add_option("--host", host)->capture_default_str();
  serve_cmd->add_option("--port", port)->capture_default_str();
  serve_cmd->add_option("--data-dir", data_dir, "event log directory");
  serve_cmd->add_option("--max-turns", run.max_turns);
  add_remote_options(serve_cmd, run);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("cshi"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*run_cmd) {
      run.scenario = cshi::scenario_from_string(scenario);
      run.simulator = cshi::simulator_kind_from_string(simulator);
      if (ratings) run.ratings = *ratings;
      if (users) run.users = *users;
      if (conversations) run.conversations = *conversations;
      if (replay) run.replay = *replay;
      if (record) run.record = *record;
      if (prompts) run.prompts = *prompts;
      if (pipeline) run.pipeline = *pipeline;
      auto prepared = cshi::prepare_run(run);
      auto results = cshi::run_experiment(prepared.seeds, prepared.context);
      auto outputs = cshi::summarize(results, prepared.context, prepared.config);
      cshi::write_outputs(outputs, out_dir);
      std::cout << outputs.report.dump(2) << '\n';
      return results.empty() ? kExitNoSessions : 0;
    }
    if (*audit_cmd) {
      cshi::ScenarioConfig scenario_config;
      std::string sim;
      const auto sessions = load_sessions(sessions_path, scenario_config, sim);
      int history = 0, response = 0, mismatched = 0;
      std::size_t history_evidence = 0, response_evidence = 0;
      for (const auto& s : sessions) {
        const auto flags = cshi::audit_leakage(s.state);
        history += flags.history_leak;
        response += flags.response_leak;
        for (const auto& e : flags.evidence) {
          (e.kind == cshi::LeakKind::kHistory ? history_evidence : response_evidence)++;
        }
        if (!(flags == s.state.leakage)) ++mismatched;
      }
      cshi::Json summary{{"sessions", sessions.size()},
                         {"history_leak_sessions", history},
                         {"response_leak_sessions", response},
                         {"history_evidence", history_evidence},
                         {"response_evidence", response_evidence},
                         {"recorded_flags_mismatched", mismatched}};
      std::cout << summary.dump(2) << '\n';
      return sessions.empty() ? kExitNoSessions : 0;
    }
    if (*metrics_cmd) {
      cshi::ScenarioConfig scenario_config;
      std::string sim;
      const auto sessions = load_sessions(sessions_path, scenario_config, sim);
      std::vector<cshi::SessionOutcome> outcomes;
      for (const auto& s : sessions) outcomes.push_back(s.outcome());
      cshi::ReportSpec spec;
      spec.scenario = std::string(cshi::to_string(scenario_config.kind));
      spec.simulator = sim;
      spec.max_turns = scenario_config.max_turns;
      spec.ks = scenario_config.ks;
      spec.ts = scenario_config.ts;
      spec.shrink_denominator = shrink;
      std::cout << cshi::build_report(outcomes, spec).dump(2) << '\n';
      return sessions.empty() ? kExitNoSessions : 0;
    }
    if (*serve_cmd) {
      cshi::ServiceConfig config;
      auto catalog = std::make_shared<cshi::Catalog>(cshi::load_items(run.items));
      auto backend = cshi::make_backend(run.backend, run.remote);
      config.experiment.catalog = catalog.get();
      if (run.max_turns) config.experiment.scenario.max_turns = *run.max_turns;
      config.experiment.backend_for = [backend](const std::string&) { return backend; };
      if (run.crs == "builtin") {
        config.experiment.crs_for = [catalog](const std::string&, std::shared_ptr<cshi::ChatBackend> b)
            -> std::unique_ptr<cshi::CrsAdapter> {
          return std::make_unique<cshi::BuiltinCrs>(catalog.get(), std::move(b), nullptr);
        };
      } else {
        const std::string url = run.crs;
        config.experiment.crs_for = [url](const std::string&, std::shared_ptr<cshi::ChatBackend>)
            -> std::unique_ptr<cshi::CrsAdapter> { return std::make_unique<cshi::ExternalCrs>(url); };
      }
      if (data_dir) config.data_dir = *data_dir;
      if (const char* token = std::getenv("CSHI_SERVICE_TOKEN"); token != nullptr && *token) {
        config.token = token;
      }
      cshi::SessionService service(std::move(config));
      const auto reloaded = service.reload();
      if (reloaded > 0) spdlog::info("reloaded {} sessions", reloaded);
      cshi::ServiceServer server(service);
      std::cerr << "listening on " << host << ":" << port << '\n';
      return server.listen(host, port) ? 0 : kExitError;
    }
  } catch (const cshi::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    const auto code = e.code();
    return code == cshi::ErrorCode::kConfig || code == cshi::ErrorCode::kInvalidSplit ||
                   code == cshi::ErrorCode::kSchemaMismatch
               ? kExitUsage
               : kExitError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
