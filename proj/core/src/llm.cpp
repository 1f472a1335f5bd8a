#include "cshi/llm.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"
#include "http_util.hpp"

namespace cshi {

namespace detail {

ParsedUrl parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kConfig, "URL without scheme: '" + url + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  return out;
}

std::unique_ptr<httplib::Client> make_client(const std::string& origin, int timeout_ms) {
  auto client = std::make_unique<httplib::Client>(origin);
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  client->set_connection_timeout(sec, usec);
  client->set_read_timeout(sec, usec);
  client->set_write_timeout(sec, usec);
  return client;
}

}  // namespace detail

void validate_request(const ChatRequest& request) {
  if (request.tag.empty()) throw Error(ErrorCode::kPrecondition, "chat request without tag");
  if (request.messages.empty()) {
    throw Error(ErrorCode::kPrecondition, "chat request '" + request.tag + "' has no messages");
  }
  if (request.temperature < 0.0) {
    throw Error(ErrorCode::kPrecondition, "negative temperature");
  }
}

// ---- RateLimiter ----------------------------------------------------------

RateLimiter::RateLimiter(double requests_per_minute, double burst)
    : rate_per_sec_(requests_per_minute / 60.0),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      last_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (rate_per_sec_ <= 0.0) return;
  std::unique_lock lock(mutex_);
  while (true) {
    const auto now = std::chrono::steady_clock::now();
    const double elapsed = std::chrono::duration<double>(now - last_).count();
    tokens_ = std::min(capacity_, tokens_ + elapsed * rate_per_sec_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const double wait = (1.0 - tokens_) / rate_per_sec_;
    lock.unlock();
    std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    lock.lock();
  }
}

// ---- ScriptedBackend -----------------------------------------------------

std::string prompt_field(const std::string& text, const std::string& key) {
  const std::string needle = key + ":";
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string::npos) line_end = text.size();
    if (text.compare(line_start, needle.size(), needle) == 0) {
      return trim(std::string_view(text).substr(line_start + needle.size(),
                                                line_end - line_start - needle.size()));
    }
    line_start = line_end + 1;
  }
  return {};
}

namespace {

const std::string& last_user_text(const ChatRequest& request) {
  for (auto it = request.messages.rbegin(); it != request.messages.rend(); ++it) {
    if (it->role == "user") return it->text;
  }
  return request.messages.back().text;
}

std::string expand(const std::string& response, const ChatRequest& request) {
  const std::string& input = last_user_text(request);
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = response.find("{{", pos);
    const std::size_t close = open == std::string::npos ? open : response.find("}}", open + 2);
    if (close == std::string::npos) break;
    out.append(response, pos, open - pos);
    const std::string name = response.substr(open + 2, close - open - 2);
    if (name == "input") {
      out += input;
    } else if (name.rfind("input.", 0) == 0) {
      out += prompt_field(input, name.substr(6));
    } else if (name.rfind("system.", 0) == 0) {
      out += prompt_field(request.system_text, name.substr(7));
    } else if (name == "tag") {
      out += request.tag;
    } else {
      out.append(response, open, close + 2 - open);
    }
    pos = close + 2;
  }
  out.append(response, pos, std::string::npos);
  return out;
}

ScriptedBackend::MatchKind parse_match(const Json& rule, std::string& pattern) {
  auto it = rule.find("match");
  if (it == rule.end() || it->is_null()) return ScriptedBackend::MatchKind::kAlways;
  if (it->is_string()) {
    pattern = it->get<std::string>();
    return ScriptedBackend::MatchKind::kContains;
  }
  if (it->contains("contains")) {
    pattern = it->at("contains").get<std::string>();
    return ScriptedBackend::MatchKind::kContains;
  }
  if (it->contains("regex")) {
    pattern = it->at("regex").get<std::string>();
    return ScriptedBackend::MatchKind::kRegex;
  }
  throw Error(ErrorCode::kConfig, "script rule match must be a string, {contains} or {regex}");
}

}  // namespace

ScriptedBackend::ScriptedBackend(std::vector<Rule> rules,
                                 std::map<std::string, std::string> defaults, bool strict)
    : defaults_(std::move(defaults)), strict_(strict) {
  for (auto& rule : rules) {
    Compiled c{std::move(rule), std::nullopt};
    if (c.rule.kind == MatchKind::kRegex) {
      try {
        c.regex.emplace(c.rule.pattern, std::regex::ECMAScript | std::regex::icase);
      } catch (const std::regex_error& e) {
        throw Error(ErrorCode::kConfig, "bad script regex '" + c.rule.pattern + "': " + e.what());
      }
    } else if (c.rule.kind == MatchKind::kContains) {
      c.rule.pattern = to_lower(c.rule.pattern);
    }
    rules_.push_back(std::move(c));
  }
}

ScriptedBackend ScriptedBackend::from_json(const Json& script) {
  std::vector<Rule> rules;
  for (const auto& r : script.value("rules", Json::array())) {
    Rule rule;
    rule.tag = r.value("tag", "*");
    rule.kind = parse_match(r, rule.pattern);
    if (!r.contains("response")) throw Error(ErrorCode::kConfig, "script rule without response");
    rule.response = r.at("response").is_string() ? r.at("response").get<std::string>()
                                                  : r.at("response").dump();
    rules.push_back(std::move(rule));
  }
  std::map<std::string, std::string> defaults;
  const Json listed = script.value("defaults", Json::object());
  for (const auto& [tag, value] : listed.items()) {
    defaults[tag] = value.is_string() ? value.get<std::string>() : value.dump();
  }
  return ScriptedBackend(std::move(rules), std::move(defaults), script.value("strict", false));
}

ScriptedBackend ScriptedBackend::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open script " + path.string());
  try {
    return from_json(Json::parse(in));
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, "script " + path.string() + ": " + e.what());
  }
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  validate_request(request);
  const std::string& input = last_user_text(request);
  const std::string lowered = to_lower(input);
  for (const auto& c : rules_) {
    if (c.rule.tag != "*" && c.rule.tag != request.tag) continue;
    bool hit = true;
    if (c.rule.kind == MatchKind::kContains) {
      hit = lowered.find(c.rule.pattern) != std::string::npos;
    } else if (c.rule.kind == MatchKind::kRegex) {
      hit = std::regex_search(input, *c.regex);
    }
    if (hit) return ChatResponse{expand(c.rule.response, request), {}, 0.0};
  }
  if (auto it = defaults_.find(request.tag); it != defaults_.end()) {
    return ChatResponse{expand(it->second, request), {}, 0.0};
  }
  if (auto it = defaults_.find("*"); it != defaults_.end()) {
    return ChatResponse{expand(it->second, request), {}, 0.0};
  }
  if (strict_) {
    throw Error(ErrorCode::kScriptMiss, "no rule or default for tag '" + request.tag + "'");
  }
  return ChatResponse{prompt_field(input, "draft"), {}, 0.0};
}

// ---- RemoteBackend -------------------------------------------------------

RemoteBackend::RemoteBackend(RemoteBackendConfig config, std::shared_ptr<RateLimiter> limiter)
    : config_(std::move(config)), limiter_(std::move(limiter)) {}

Json RemoteBackend::to_wire(const ChatRequest& request, const std::string& model) {
  Json messages = Json::array();
  if (!request.system_text.empty()) {
    messages.push_back({{"role", "system"}, {"content", request.system_text}});
  }
  for (const auto& m : request.messages) {
    messages.push_back({{"role", m.role}, {"content", m.text}});
  }
  return Json{{"model", model},
              {"messages", messages},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens}};
}

ChatResponse RemoteBackend::complete(const ChatRequest& request) {
  validate_request(request);
  const auto url = detail::parse_url(config_.base_url);
  std::string path = url.path;
  if (path.back() == '/') path.pop_back();
  path += "/chat/completions";

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = to_wire(request, config_.model).dump();

  int attempts = 0;
  std::string last_problem;
  bool last_was_rate_limit = false;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    }
    if (limiter_) limiter_->acquire();
    ++attempts;
    last_attempts_ = attempts;
    const auto started = std::chrono::steady_clock::now();
    auto client = detail::make_client(url.origin, config_.timeout_ms);
    auto result = client->Post(path, headers, body, "application/json");
    const double latency =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started)
            .count();
    if (!result) {
      last_problem = "transport error: " + httplib::to_string(result.error());
      last_was_rate_limit = false;
      continue;
    }
    const int status = result->status;
    if (status == 429 || status >= 500) {
      last_problem = "HTTP " + std::to_string(status);
      last_was_rate_limit = status == 429;
      spdlog::warn("llm backend {} on attempt {} ({})", last_problem, attempt + 1, request.tag);
      continue;
    }
    if (status != 200) {
      throw Error(ErrorCode::kBackendError,
                  "HTTP " + std::to_string(status) + ": " + result->body.substr(0, 200));
    }
    try {
      const Json payload = Json::parse(result->body);
      ChatResponse response;
      response.text = payload.at("choices").at(0).at("message").at("content").get<std::string>();
      if (auto usage = payload.find("usage"); usage != payload.end() && usage->is_object()) {
        response.usage.prompt_tokens = usage->value("prompt_tokens", 0);
        response.usage.completion_tokens = usage->value("completion_tokens", 0);
      }
      response.latency_ms = latency;
      return response;
    } catch (const Json::exception& e) {
      throw Error(ErrorCode::kBackendError, std::string("malformed completion payload: ") + e.what());
    }
  }
  throw Error(last_was_rate_limit ? ErrorCode::kRateLimited : ErrorCode::kBackendUnavailable,
              last_problem + " after " + std::to_string(attempts) + " attempts");
}

// ---- Record / replay -----------------------------------------------------

namespace {

std::string collapse_whitespace(const std::string& text) {
  std::string out;
  bool space = false;
  for (unsigned char c : text) {
    if (std::isspace(c) != 0) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(c));
  }
  return out;
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kBackendError, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

Json response_to_json(const ChatResponse& r) {
  return Json{{"text", r.text},
              {"usage",
               {{"prompt_tokens", r.usage.prompt_tokens},
                {"completion_tokens", r.usage.completion_tokens}}},
              {"latency_ms", r.latency_ms}};
}

ChatResponse response_from_json(const Json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (auto u = j.find("usage"); u != j.end()) {
    r.usage.prompt_tokens = u->value("prompt_tokens", 0);
    r.usage.completion_tokens = u->value("completion_tokens", 0);
  }
  r.latency_ms = j.value("latency_ms", 0.0);
  return r;
}

std::string sanitize_partition(const std::string& partition) {
  std::string out;
  for (unsigned char c : partition) {
    out.push_back(std::isalnum(c) != 0 || c == '-' || c == '_' ? static_cast<char>(c) : '_');
  }
  return out.empty() ? "default" : out;
}

}  // namespace

Json canonical_request(const ChatRequest& request) {
  Json messages = Json::array();
  for (const auto& m : request.messages) {
    messages.push_back(Json::array({m.role, collapse_whitespace(m.text)}));
  }
  // Fixed precision keeps the key stable across float formatting quirks.
  char temperature[32];
  std::snprintf(temperature, sizeof temperature, "%.4f", request.temperature);
  return Json{{"tag", request.tag},
              {"system", collapse_whitespace(request.system_text)},
              {"messages", messages},
              {"temperature", temperature},
              {"max_tokens", request.max_tokens}};
}

std::string request_key(const ChatRequest& request) {
  return sha256_hex(canonical_request(request).dump());
}

ReplayStore::ReplayStore(std::filesystem::path directory) : directory_(std::move(directory)) {}

void ReplayStore::load() {
  std::lock_guard lock(mutex_);
  entries_.clear();
  cursors_.clear();
  by_key_.clear();
  if (!std::filesystem::exists(directory_)) return;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(directory_)) {
    if (entry.path().extension() == ".jsonl") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const std::string partition = file.stem().string();
    std::ifstream in(file);
    std::string line;
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const Json j = Json::parse(line);
      const std::string key = j.at("key").get<std::string>();
      auto response = response_from_json(j.at("response"));
      entries_[{partition, key}].push_back(response);
      by_key_[key].push_back(std::move(response));
    }
  }
}

void ReplayStore::ensure_loaded() {
  std::call_once(loaded_, [this] { load(); });
}

void ReplayStore::append(const std::string& partition, const std::string& key,
                         const ChatRequest& request, const ChatResponse& response) {
  std::lock_guard lock(mutex_);
  std::filesystem::create_directories(directory_);
  const std::string name = sanitize_partition(partition);
  std::ofstream out(directory_ / (name + ".jsonl"), std::ios::app);
  out << Json{{"key", key}, {"request", canonical_request(request)},
              {"response", response_to_json(response)}}
             .dump()
      << '\n';
  entries_[{name, key}].push_back(response);
  by_key_[key].push_back(response);
}

std::optional<ChatResponse> ReplayStore::next(const std::string& partition,
                                              const std::string& key) {
  std::lock_guard lock(mutex_);
  const std::pair<std::string, std::string> id{sanitize_partition(partition), key};
  if (auto it = entries_.find(id); it != entries_.end()) {
    auto& cursor = cursors_[id];
    const auto& responses = it->second;
    const auto& chosen = responses[std::min(cursor, responses.size() - 1)];
    ++cursor;
    return chosen;
  }
  if (auto it = by_key_.find(key); it != by_key_.end()) return it->second.front();
  return std::nullopt;
}

RecordingBackend::RecordingBackend(std::shared_ptr<ChatBackend> inner,
                                   std::shared_ptr<ReplayStore> store, std::string partition)
    : inner_(std::move(inner)), store_(std::move(store)), partition_(std::move(partition)) {}

ChatResponse RecordingBackend::complete(const ChatRequest& request) {
  auto response = inner_->complete(request);
  store_->append(partition_, request_key(request), request, response);
  return response;
}

ReplayingBackend::ReplayingBackend(std::shared_ptr<ReplayStore> store, std::string partition)
    : store_(std::move(store)), partition_(std::move(partition)) {}

ChatResponse ReplayingBackend::complete(const ChatRequest& request) {
  validate_request(request);
  const std::string key = request_key(request);
  if (auto response = store_->next(partition_, key)) return *response;
  throw Error(ErrorCode::kReplayMiss,
              "no recorded response for tag '" + request.tag + "' key " + key.substr(0, 12));
}

std::shared_ptr<ChatBackend> record_and_replay(ReplayMode mode, std::shared_ptr<ReplayStore> store,
                                               std::shared_ptr<ChatBackend> inner,
                                               std::string partition) {
  if (mode == ReplayMode::kRecord) {
    if (!inner) throw Error(ErrorCode::kConfig, "record mode needs an inner backend");
    return std::make_shared<RecordingBackend>(std::move(inner), std::move(store),
                                              std::move(partition));
  }
  if (!std::filesystem::exists(store->directory())) {
    throw Error(ErrorCode::kReplayMiss, "replay store " + store->directory().string() +
                                            " does not exist");
  }
  store->ensure_loaded();
  return std::make_shared<ReplayingBackend>(std::move(store), std::move(partition));
}

}  // namespace cshi
