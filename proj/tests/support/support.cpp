#include "support.hpp"

#include <random>
#include <regex>
#include <thread>

#include <httplib.h>

#include "cshi/text.hpp"

namespace cshi::testing {

std::filesystem::path source_path(std::string_view relative) {
  return std::filesystem::path(CSHI_SOURCE_DIR) / std::string(relative);
}

const Fixture& fixture() {
  static const Fixture loaded = [] {
    Fixture f;
    f.catalog = std::make_shared<Catalog>(load_items(source_path("data/fixture/items.jsonl")));
    f.ratings = load_ratings(source_path("data/fixture/ratings.jsonl"));
    f.users = load_users(source_path("data/fixture/users.jsonl"));
    f.conversations = load_conversations(source_path("data/fixture/conversations.jsonl"));
    return f;
  }();
  return loaded;
}

std::shared_ptr<ScriptedBackend> script_backend(std::string_view relative) {
  return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(source_path(relative)));
}

ExperimentContext scripted_context(const Catalog& catalog, std::shared_ptr<ChatBackend> backend,
                                   ScenarioConfig scenario, SimulatorKind simulator) {
  ExperimentContext ctx;
  ctx.catalog = &catalog;
  ctx.scenario = std::move(scenario);
  ctx.simulator = simulator;
  ctx.backend_for = [backend](const std::string&) { return backend; };
  ctx.crs_for = [&catalog](const std::string&, std::shared_ptr<ChatBackend> llm)
      -> std::unique_ptr<CrsAdapter> {
    return std::make_unique<BuiltinCrs>(&catalog, std::move(llm), nullptr);
  };
  return ctx;
}

TempDir::TempDir() {
  std::random_device rd;
  path_ = std::filesystem::temp_directory_path() /
          ("cshi-test-" + std::to_string(rd()) + "-" + std::to_string(rd()));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

struct StubServer::Impl {
  httplib::Server server;
  std::thread thread;
};

StubServer::StubServer(std::string path, Handler handler) : impl_(std::make_unique<Impl>()) {
  impl_->server.Post(path, [this, handler](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    const auto reply = handler(req.body);
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  });
  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

StubServer::~StubServer() { stop(); }

std::string StubServer::base_url() const { return "http://127.0.0.1:" + std::to_string(port_); }

void StubServer::stop() {
  if (impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

std::unique_ptr<StubServer> openai_stub(std::shared_ptr<ChatBackend> backend) {
  return std::make_unique<StubServer>(
      "/v1/chat/completions", [backend](const std::string& body) -> StubServer::Reply {
        const Json wire = Json::parse(body);
        ChatRequest request;
        for (const auto& m : wire.at("messages")) {
          const auto role = m.at("role").get<std::string>();
          if (role == "system") {
            request.system_text = m.at("content").get<std::string>();
          } else {
            request.messages.push_back({role, m.at("content").get<std::string>()});
          }
        }
        request.temperature = wire.value("temperature", 0.7);
        const std::string last = request.messages.empty() ? "" : request.messages.back().text;
        request.tag = prompt_field(last, "draft").empty() ? "intent" : "draft";
        const auto response = backend->complete(request);
        Json out{{"choices", Json::array({{{"index", 0},
                                            {"message", {{"role", "assistant"},
                                                         {"content", response.text}}}}})},
                 {"usage", {{"prompt_tokens", 1}, {"completion_tokens", 1}}}};
        return {200, out.dump()};
      });
}

std::vector<std::string> oracle_tokens(std::string_view text) {
  std::string cleaned;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\'') continue;
    if (text.substr(i, 3) == "\xE2\x80\x99") {
      i += 2;
      continue;
    }
    cleaned.push_back(text[i]);
  }
  static const std::regex word("[A-Za-z0-9\\x80-\\xFF]+");
  std::vector<std::string> out;
  for (std::sregex_iterator it(cleaned.begin(), cleaned.end(), word), end; it != end; ++it) {
    std::string token = it->str();
    for (auto& c : token) {
      if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    }
    out.push_back(token);
  }
  return out;
}

std::vector<std::string> oracle_title_tokens(std::string_view title) {
  static const std::regex year("^\\s*(.*\\S)\\s*\\(\\d{4}\\)\\s*$");
  std::string raw(title);
  std::smatch m;
  if (std::regex_match(raw, m, year)) raw = m[1].str();
  auto tokens = oracle_tokens(raw);
  while (tokens.size() > 1 && (tokens[0] == "the" || tokens[0] == "a" || tokens[0] == "an")) {
    tokens.erase(tokens.begin());
  }
  return tokens;
}

bool oracle_mentions(std::string_view text, std::string_view title) {
  const auto hay = oracle_tokens(text);
  const auto needle = oracle_title_tokens(title);
  if (needle.empty()) return false;
  if (needle.size() == 1 && needle[0].size() < 3) return hay == needle;
  if (hay.size() < needle.size()) return false;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) {
      return true;
    }
  }
  return false;
}

namespace {

Json fuzz_scalar(std::mt19937_64& rng) {
  switch (rng() % 7) {
    case 0: return nullptr;
    case 1: return static_cast<bool>(rng() % 2);
    case 2: return static_cast<int>(rng() % 2000) - 1000;
    case 3: return 3.25;
    case 4: return Json::array();
    case 5: return Json::object();
    default: return std::string(rng() % 4, 'x');
  }
}

Json fuzz_item(std::mt19937_64& rng) {
  switch (rng() % 6) {
    case 0: return "Movie " + std::to_string(rng() % 100);
    case 1: return fuzz_scalar(rng);
    case 2: return Json{{"item_id", static_cast<int>(rng() % 1000)}, {"title", "Film"}};
    case 3: return Json{{"item_id", fuzz_scalar(rng)}, {"title", fuzz_scalar(rng)}};
    case 4: return Json{{"item_id", "F" + std::to_string(rng() % 30)}};
    default:
      return Json{{"item_id", "F" + std::to_string(rng() % 30)},
                  {"title", "Title " + std::to_string(rng() % 100)}};
  }
}

}  // namespace

std::string fuzz_crs_payload(std::mt19937_64& rng) {
  static const char* kKinds[] = {"ask", "recommend", "chit-chat", "Recommendation", "question",
                                 "chat", "dance", ""};
  Json reply = Json::object();
  if (rng() % 8 != 0) {
    reply["text"] = rng() % 6 == 0 ? fuzz_scalar(rng)
                                    : Json("Here are some ideas " + std::to_string(rng() % 100));
  }
  if (rng() % 3 != 0) {
    reply["kind"] = rng() % 6 == 0 ? fuzz_scalar(rng) : Json(kKinds[rng() % std::size(kKinds)]);
  }
  if (rng() % 3 != 0) {
    if (rng() % 8 == 0) {
      reply["items"] = fuzz_scalar(rng);
    } else {
      const std::size_t n = rng() % 4 == 0 ? rng() % 70 : rng() % 6;
      Json items = Json::array();
      const bool clean = rng() % 2 == 0;
      for (std::size_t i = 0; i < n; ++i) {
        items.push_back(clean ? Json{{"item_id", "F" + std::to_string(i)},
                                     {"title", "Title " + std::to_string(i)}}
                              : fuzz_item(rng));
      }
      reply["items"] = std::move(items);
    }
  }
  if (rng() % 10 == 0) reply = Json::array({reply});
  std::string body = reply.dump();

  switch (rng() % 6) {
    case 0: {  // flip bytes
      for (int i = 0, n = 1 + static_cast<int>(rng() % 4); i < n && !body.empty(); ++i) {
        body[rng() % body.size()] = static_cast<char>(rng() % 256);
      }
      break;
    }
    case 1: body.resize(rng() % (body.size() + 1)); break;
    case 2: {  // splice invalid or multi-byte UTF-8 into the text
      static const char* kBytes[] = {"\xC3\xA9", "\xC0\xAF", "\xED\xA0\x80", "\xF4\x90\x80\x80",
                                     "\xE2\x82", "\xF0\x9F\x8E\xAC"};
      const auto pos = body.find("Here");
      if (pos != std::string::npos) body.insert(pos, kBytes[rng() % std::size(kBytes)]);
      break;
    }
    case 3: {  // deep nesting
      const std::size_t depth = 1 + rng() % 3000;
      body = std::string(depth, '[') + body + std::string(rng() % 2 ? depth : 0, ']');
      break;
    }
    default: break;
  }
  return body;
}

bool crs_turn_well_formed(const CrsTurn& turn, std::size_t max_items) {
  const bool known_kind = turn.kind == crs_action::kAsk || turn.kind == crs_action::kRecommend ||
                          turn.kind == crs_action::kChitChat;
  if (!known_kind || !is_valid_utf8(turn.text) || turn.items.size() > max_items) return false;
  if ((turn.kind == crs_action::kRecommend) != !turn.items.empty()) return false;
  if (turn.items.empty() && trim(turn.text).empty()) return false;
  for (const auto& item : turn.items) {
    if (trim(item.title).empty() || !is_valid_utf8(item.title)) return false;
    if (item.item_id && !is_valid_utf8(*item.item_id)) return false;
  }
  return true;
}

}  // namespace cshi::testing
