#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cshi/harness.hpp"

namespace cshi {

// Everything `cshi run` accepts, independent of the argument parser.
struct RunOptions {
  Scenario scenario = Scenario::kFresh;
  std::filesystem::path items;
  std::optional<std::filesystem::path> ratings;
  std::optional<std::filesystem::path> users;
  std::optional<std::filesystem::path> conversations;
  std::string crs = "builtin";     // "builtin" or an http(s) URL
  std::string backend = "remote";  // "scripted:PATH" or "remote"
  SimulatorKind simulator = SimulatorKind::kCshi;
  double k1 = 1.0;
  double k2 = 0.0;
  std::uint64_t seed = 0;
  std::optional<int> max_turns;
  std::optional<std::filesystem::path> replay;
  std::optional<std::filesystem::path> record;
  std::optional<std::filesystem::path> prompts;
  std::optional<std::filesystem::path> pipeline;
  int workers = 1;
  std::size_t holdout = 5;
  int crs_ask_budget = 2;
  int crs_timeout_ms = 60000;
  RemoteBackendConfig remote;
};

struct PreparedRun {
  std::shared_ptr<Catalog> catalog;
  ExperimentContext context;
  std::vector<SessionSeed> seeds;
  Json config;  // echoed into report.json
};

// "scripted:PATH" or "remote".
std::shared_ptr<ChatBackend> make_backend(const std::string& spec, const RemoteBackendConfig& remote);

// Loads data, validates the split and wires backend, record/replay and CRS
// factories. Throws Error on bad input.
PreparedRun prepare_run(const RunOptions& options);

}  // namespace cshi
