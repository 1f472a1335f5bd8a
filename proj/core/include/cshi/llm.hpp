#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <unordered_map>
#include <vector>

#include "cshi/domain.hpp"

namespace cshi {

struct ChatTurn {
  std::string role;  // "user" or "assistant"
  std::string text;

  bool operator==(const ChatTurn&) const = default;
};

struct ChatRequest {
  std::string system_text;
  std::vector<ChatTurn> messages;
  double temperature = 0.7;
  int max_tokens = 512;
  // Identifies the calling component; drives scripted lookups and capture.
  std::string tag;
};

struct TokenUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  double latency_ms = 0.0;
};

// Throws kPrecondition on an empty tag, empty message list or negative
// temperature.
void validate_request(const ChatRequest& request);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

// Token bucket shared by every outbound call that should respect a
// requests-per-minute budget. A non-positive rate disables limiting.
class RateLimiter {
 public:
  explicit RateLimiter(double requests_per_minute, double burst = 1.0);

  void acquire();

 private:
  std::mutex mutex_;
  double rate_per_sec_;
  double capacity_;
  double tokens_;
  std::chrono::steady_clock::time_point last_;
};

// Deterministic backend driven by a rule table. Rules are tried in file
// order; the first rule whose tag equals the request tag (or "*") and whose
// matcher accepts the last user message wins. Otherwise the per-tag default
// applies. Responses may reference {{input}}, {{input.KEY}} (value of a
// "KEY: value" line in the last user message), {{system.KEY}} and {{tag}}.
class ScriptedBackend : public ChatBackend {
 public:
  enum class MatchKind { kAlways, kContains, kRegex };

  struct Rule {
    std::string tag;
    MatchKind kind = MatchKind::kAlways;
    std::string pattern;
    std::string response;
  };

  ScriptedBackend(std::vector<Rule> rules, std::map<std::string, std::string> defaults,
                  bool strict);

  static ScriptedBackend from_json(const Json& script);
  static ScriptedBackend from_file(const std::filesystem::path& path);

  ChatResponse complete(const ChatRequest& request) override;

 private:
  struct Compiled {
    Rule rule;
    std::optional<std::regex> regex;
  };

  std::vector<Compiled> rules_;
  std::map<std::string, std::string> defaults_;
  bool strict_;
};

// Extracts the value of a "key: value" line; empty when absent.
std::string prompt_field(const std::string& text, const std::string& key);

struct RemoteBackendConfig {
  // e.g. "https://api.openai.com/v1"; "/chat/completions" is appended.
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-3.5-turbo-0613";
  std::string api_key_env = "OPENAI_API_KEY";
  int timeout_ms = 60000;
  int max_retries = 3;
  int backoff_ms = 500;
  double requests_per_minute = 0.0;
};

// OpenAI-compatible chat-completions client.
class RemoteBackend : public ChatBackend {
 public:
  explicit RemoteBackend(RemoteBackendConfig config,
                         std::shared_ptr<RateLimiter> limiter = nullptr);

  ChatResponse complete(const ChatRequest& request) override;

  // Attempts used by the most recent call (1 + retries).
  int last_attempts() const { return last_attempts_.load(); }

  static Json to_wire(const ChatRequest& request, const std::string& model);

 private:
  RemoteBackendConfig config_;
  std::shared_ptr<RateLimiter> limiter_;
  std::atomic<int> last_attempts_{0};
};

// Stable replay key: SHA-256 over the canonical request with whitespace
// runs collapsed. Latency and usage never contribute.
std::string request_key(const ChatRequest& request);
Json canonical_request(const ChatRequest& request);

// Directory of per-partition JSONL files, one {key, request, response} per
// line. Appends are serialized per store instance.
class ReplayStore {
 public:
  explicit ReplayStore(std::filesystem::path directory);

  void append(const std::string& partition, const std::string& key, const ChatRequest& request,
              const ChatResponse& response);
  // Serves recorded responses for (partition, key) in recording order,
  // repeating the last one; falls back to any partition holding the key.
  std::optional<ChatResponse> next(const std::string& partition, const std::string& key);
  // Rereads every partition file and resets replay cursors.
  void load();
  void ensure_loaded();

  const std::filesystem::path& directory() const { return directory_; }

 private:
  std::filesystem::path directory_;
  std::once_flag loaded_;
  std::mutex mutex_;
  std::map<std::pair<std::string, std::string>, std::vector<ChatResponse>> entries_;
  std::map<std::pair<std::string, std::string>, std::size_t> cursors_;
  std::map<std::string, std::vector<ChatResponse>> by_key_;
};

enum class ReplayMode { kRecord, kReplay };

class RecordingBackend : public ChatBackend {
 public:
  RecordingBackend(std::shared_ptr<ChatBackend> inner, std::shared_ptr<ReplayStore> store,
                   std::string partition);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ChatBackend> inner_;
  std::shared_ptr<ReplayStore> store_;
  std::string partition_;
};

class ReplayingBackend : public ChatBackend {
 public:
  ReplayingBackend(std::shared_ptr<ReplayStore> store, std::string partition);
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::shared_ptr<ReplayStore> store_;
  std::string partition_;
};

std::shared_ptr<ChatBackend> record_and_replay(ReplayMode mode, std::shared_ptr<ReplayStore> store,
                                               std::shared_ptr<ChatBackend> inner,
                                               std::string partition);

}  // namespace cshi
