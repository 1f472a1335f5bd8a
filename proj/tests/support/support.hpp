#pragma once

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cshi/crs.hpp"
#include "cshi/dataset.hpp"
#include "cshi/harness.hpp"
#include "cshi/llm.hpp"

namespace cshi::testing {

std::filesystem::path source_path(std::string_view relative);

struct Fixture {
  std::shared_ptr<Catalog> catalog;
  std::vector<RatingRecord> ratings;
  std::map<std::string, Json> users;
  std::vector<Conversation> conversations;
};

// The committed fixture under data/fixture, loaded once.
const Fixture& fixture();

std::shared_ptr<ScriptedBackend> script_backend(std::string_view relative);

// Builtin CRS, one shared backend, no record/replay.
ExperimentContext scripted_context(const Catalog& catalog, std::shared_ptr<ChatBackend> backend,
                                   ScenarioConfig scenario = ScenarioConfig::fresh(),
                                   SimulatorKind simulator = SimulatorKind::kCshi);

class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

// CRS adapter driven by a callback.
class CallbackCrs : public CrsAdapter {
 public:
  using Fn = std::function<CrsTurn(const CrsRequest&)>;
  explicit CallbackCrs(Fn fn) : fn_(std::move(fn)) {}
  CrsTurn respond(const CrsRequest& request) override { return fn_(request); }

 private:
  Fn fn_;
};

// Local HTTP server with one POST route. The handler gets the parsed body
// and returns {status, body}.
class StubServer {
 public:
  struct Reply {
    int status = 200;
    std::string body;
  };
  using Handler = std::function<Reply(const std::string& body)>;

  StubServer(std::string path, Handler handler);
  ~StubServer();

  std::string base_url() const;
  int port() const { return port_; }
  int requests() const { return requests_.load(); }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::atomic<int> requests_{0};
};

// OpenAI-compatible chat-completions stub answering through `backend`: a
// request whose last user message has a "draft:" line is looked up under
// tag "draft", anything else under tag "intent".
std::unique_ptr<StubServer> openai_stub(std::shared_ptr<ChatBackend> backend);

// ---- independent oracles ---------------------------------------------------

// Lower-case alphanumeric tokens; apostrophes vanish, anything else splits.
std::vector<std::string> oracle_tokens(std::string_view text);
// Title tokens without a trailing year and a leading article.
std::vector<std::string> oracle_title_tokens(std::string_view title);
// Contiguous token-subsequence search.
bool oracle_mentions(std::string_view text, std::string_view title);

// Random external-CRS reply body: structurally varied JSON, wrong types,
// oversized lists and byte-level damage (including invalid UTF-8).
std::string fuzz_crs_payload(std::mt19937_64& rng);

// Every field of an accepted reply is within protocol bounds.
bool crs_turn_well_formed(const CrsTurn& turn, std::size_t max_items);

}  // namespace cshi::testing
