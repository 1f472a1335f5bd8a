#include <gtest/gtest.h>

#include <random>

#include "cshi/crs.hpp"
#include "cshi/error.hpp"
#include "support.hpp"

namespace cshi {
namespace {

Json items_json(std::size_t n) {
  Json items = Json::array();
  for (std::size_t i = 0; i < n; ++i) {
    items.push_back({{"item_id", "F" + std::to_string(i)}, {"title", "Title " + std::to_string(i)}});
  }
  return items;
}

std::vector<std::string> diagnostics_of(const Json& reply, std::size_t cap = 10) {
  try {
    validate_crs_reply(reply, cap);
  } catch (const ProtocolViolation& e) {
    EXPECT_EQ(e.code(), ErrorCode::kProtocolViolation);
    return e.diagnostics();
  }
  return {};
}

TEST(ValidateCrsReply, AcceptsWellFormedReplies) {
  auto ask = validate_crs_reply(Json::parse(R"({"kind": "ask", "text": "Any genre?"})"), 10);
  EXPECT_EQ(ask.kind, crs_action::kAsk);
  EXPECT_TRUE(ask.items.empty());

  auto rec = validate_crs_reply(Json::parse(R"({"kind": "Recommendation", "text": "Try these",
      "items": [{"item_id": 42, "title": "A"}, {"item_id": "F1", "title": "B"}, "C"]})"), 10);
  EXPECT_EQ(rec.kind, crs_action::kRecommend);
  ASSERT_EQ(rec.items.size(), 3u);
  EXPECT_EQ(rec.items[0].item_id, "42");
  EXPECT_EQ(rec.items[1].item_id, "F1");
  EXPECT_FALSE(rec.items[2].item_id.has_value());
  EXPECT_EQ(rec.items[2].title, "C");

  EXPECT_EQ(validate_crs_reply(Json::parse(R"({"text": "hello"})"), 10).kind, crs_action::kChitChat);
  EXPECT_EQ(validate_crs_reply(Json::parse(R"({"text": "", "items": ["X"]})"), 10).kind,
            crs_action::kRecommend);
  EXPECT_EQ(validate_crs_reply(Json::parse(R"({"kind": "question", "text": "?"})"), 10).kind,
            crs_action::kAsk);
}

TEST(ValidateCrsReply, ReportsEveryProblem) {
  EXPECT_EQ(diagnostics_of(Json::array()), std::vector<std::string>{"reply must be a JSON object"});
  EXPECT_EQ(diagnostics_of(Json::parse(R"({"kind": "recommend", "text": "x"})")),
            std::vector<std::string>{"recommend reply without items"});
  EXPECT_EQ(diagnostics_of(Json::parse(R"({"text": "  "})")), std::vector<std::string>{"empty reply"});
  const auto many = diagnostics_of(Json::parse(
      R"({"text": 5, "kind": "dance", "items": [{"title": ""}, {"item_id": 1.5, "title": "x"}, 7, {}]})"));
  EXPECT_EQ(many, (std::vector<std::string>{
                      "\"text\" must be a string", "unknown kind 'dance'", "items[0].title is empty",
                      "items[1].item_id must be a string or integer", "items[2] must be an object",
                      "items[3].title must be a string"}));
  EXPECT_EQ(diagnostics_of(Json::parse(R"({"text": "x", "items": {}})")),
            std::vector<std::string>{"\"items\" must be an array"});
  EXPECT_EQ(diagnostics_of(Json{{"text", std::string(64 * 1024 + 1, 'a')}}),
            std::vector<std::string>{"\"text\" exceeds 64 KiB"});
}

TEST(ValidateCrsReply, EnforcesItemCaps) {
  for (std::size_t cap : {10u, 50u}) {
    EXPECT_EQ(validate_crs_reply(Json{{"text", "t"}, {"items", items_json(cap)}}, cap).items.size(), cap);
    const auto d = diagnostics_of(Json{{"text", "t"}, {"items", items_json(cap + 1)}}, cap);
    EXPECT_EQ(d, std::vector<std::string>{std::to_string(cap + 1) + " items exceed the cap of " +
                                          std::to_string(cap)});
  }
}

TEST(ValidateCrsReply, RejectsBadBodies) {
  for (const std::string body : {"", "not json", "{\"text\": \"caf\xC3\"}", "[1, 2", "null"}) {
    EXPECT_THROW(validate_crs_reply_text(body, 10), ProtocolViolation) << body;
  }
  EXPECT_EQ(validate_crs_reply_text("{\"text\": \"caf\xC3\xA9\"}", 10).text, "caf\xC3\xA9");
}

TEST(Utf8, Validator) {
  EXPECT_TRUE(is_valid_utf8(""));
  EXPECT_TRUE(is_valid_utf8("plain"));
  EXPECT_TRUE(is_valid_utf8("\xC3\xA9\xE2\x82\xAC\xF0\x9F\x8E\xAC"));
  EXPECT_FALSE(is_valid_utf8("\xC0\xAF"));          // overlong
  EXPECT_FALSE(is_valid_utf8("\xED\xA0\x80"));      // surrogate
  EXPECT_FALSE(is_valid_utf8("\xF4\x90\x80\x80"));  // above U+10FFFF
  EXPECT_FALSE(is_valid_utf8("\xE2\x82"));          // truncated
  EXPECT_FALSE(is_valid_utf8("\x80"));              // stray continuation
  EXPECT_FALSE(is_valid_utf8("\xFF"));
}

TEST(ValidateCrsReply, FuzzedPayloadsNeverEscapeTheProtocol) {
  std::mt19937_64 rng(20240601);
  int accepted = 0;
  int rejected = 0;
  for (int i = 0; i < 3000; ++i) {
    const auto body = testing::fuzz_crs_payload(rng);
    const std::size_t cap = i % 2 ? 10 : 50;
    try {
      const auto turn = validate_crs_reply_text(body, cap);
      EXPECT_TRUE(testing::crs_turn_well_formed(turn, cap)) << body;
      ++accepted;
    } catch (const ProtocolViolation& e) {
      EXPECT_FALSE(e.diagnostics().empty());
      ++rejected;
    }
  }
  // The generator must exercise both outcomes.
  EXPECT_GT(accepted, 300);
  EXPECT_GT(rejected, 300);
}

TEST(CrsTurn, ToMessageCarriesItemsOnlyForRecommendations) {
  CrsTurn rec{crs_action::kRecommend, "t", {{"F1", "A"}}};
  const auto m = rec.to_message(3);
  EXPECT_EQ(m.role, Role::kCrs);
  EXPECT_EQ(m.round, 3);
  EXPECT_EQ(m.action, crs_action::kRecommend);
  ASSERT_TRUE(m.recommended_items);
  EXPECT_EQ(m.recommended_items->size(), 1u);
  EXPECT_FALSE((CrsTurn{crs_action::kAsk, "q", {}}.to_message(1).recommended_items));
}

TEST(CrsRequest, WireFormat) {
  CrsRequest request;
  request.session_id = "s1";
  request.turn = 2;
  request.max_items = 50;
  request.transcript.push_back(CrsTurn{crs_action::kRecommend, "t", {{"F1", "A"}}}.to_message(1));
  Message user;
  user.text = "no";
  request.transcript.push_back(user);
  const auto wire = request.to_wire();
  EXPECT_EQ(wire.at("session_id"), "s1");
  EXPECT_EQ(wire.at("turn"), 2);
  EXPECT_EQ(wire.at("max_items"), 50);
  EXPECT_EQ(wire.at("transcript")[0].at("role"), "assistant");
  EXPECT_EQ(wire.at("transcript")[0].at("items")[0].at("item_id"), "F1");
  EXPECT_EQ(wire.at("transcript")[1].at("role"), "user");
  EXPECT_FALSE(wire.at("transcript")[1].contains("items"));
}

TEST(ExternalCrs, RoundTripsThroughHttp) {
  Json seen;
  testing::StubServer server("/crs", [&seen](const std::string& body) -> testing::StubServer::Reply {
    seen = Json::parse(body);
    return {200, R"({"kind": "recommend", "text": "Try", "items": [{"item_id": "F2", "title": "B"}]})"};
  });
  ExternalCrs crs(server.base_url() + "/crs", 5000);
  CrsRequest request;
  request.session_id = "abc";
  request.turn = 1;
  const auto turn = crs.respond(request);
  EXPECT_EQ(turn.kind, crs_action::kRecommend);
  EXPECT_EQ(turn.items.at(0).item_id, "F2");
  EXPECT_EQ(seen.at("session_id"), "abc");
}

TEST(ExternalCrs, ErrorClasses) {
  int mode = 0;
  testing::StubServer server("/crs", [&mode](const std::string&) -> testing::StubServer::Reply {
    if (mode == 0) return {500, "boom"};
    return {200, R"({"kind": "recommend", "text": "x"})"};
  });
  ExternalCrs crs(server.base_url() + "/crs", 5000);
  try {
    crs.respond({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAdapterError);
  }
  mode = 1;
  EXPECT_THROW(crs.respond({}), ProtocolViolation);

  ExternalCrs dead("http://127.0.0.1:1/crs", 500);
  try {
    dead.respond({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kAdapterError);
  }
  try {
    ExternalCrs bad("localhost/crs");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

class BuiltinCrsTest : public ::testing::Test {
 protected:
  const Catalog& catalog = *testing::fixture().catalog;
  std::shared_ptr<ChatBackend> golden = testing::script_backend("data/scripts/golden.json");

  static Message user(std::string text) {
    Message m;
    m.text = std::move(text);
    return m;
  }
};

TEST_F(BuiltinCrsTest, AsksWithinBudgetThenRecommends) {
  BuiltinCrs crs(&catalog, golden, nullptr);
  CrsRequest request;
  request.session_id = "s";
  request.transcript.push_back(user("Hi! I'm looking for a movie to watch."));
  std::vector<std::string> kinds;
  for (int round = 1; round <= 4; ++round) {
    request.turn = round;
    const auto turn = crs.respond(request);
    kinds.push_back(turn.kind);
    EXPECT_LE(turn.items.size(), request.max_items);
    request.transcript.push_back(turn.to_message(round));
    request.transcript.push_back(user(round == 1 ? "I love comedy and romance." : "Something else."));
  }
  EXPECT_EQ(kinds, (std::vector<std::string>{"ask", "ask", "recommend", "recommend"}));
  ASSERT_EQ(crs.state().decision_log.size(), 4u);
  EXPECT_EQ(crs.state().decision_log[0], (CrsDecision{1, "ask", "genre"}));
  EXPECT_EQ(crs.state().decision_log[1], (CrsDecision{2, "ask", "director"}));
  EXPECT_EQ(crs.state().elicited_preferences.front(), "Hi! I'm looking for a movie to watch.");
}

TEST_F(BuiltinCrsTest, RankingFavorsMentionedAttributesAndSkipsRepeats) {
  BuiltinCrs crs(&catalog, golden, nullptr);
  std::vector<Message> transcript{user("Anything directed by Oskar Brenning please")};
  auto ranked = crs.rank_items(transcript, 3);
  ASSERT_EQ(ranked.size(), 3u);
  EXPECT_EQ(ranked[0]->item_id, "F2");
  transcript.push_back(CrsTurn{crs_action::kRecommend, "t", {{"F2", "x"}}}.to_message(1));
  for (const auto* item : crs.rank_items(transcript, 100)) EXPECT_NE(item->item_id, "F2");
  EXPECT_EQ(crs.rank_items(transcript, 100).size(), catalog.size() - 1);
}

TEST_F(BuiltinCrsTest, NeverRecommendsBeforeSpeaking) {
  auto eager = std::make_shared<ScriptedBackend>(ScriptedBackend::from_json(Json::parse(R"({
    "rules": [{"tag": "crs_strategy", "response": "{\"action\": \"recommend\"}"}],
    "defaults": {"*": "{{input.draft}}"}})")));
  BuiltinCrs crs(&catalog, eager, nullptr);
  CrsRequest request;
  request.turn = 1;
  EXPECT_EQ(crs.respond(request).kind, crs_action::kAsk);
}

TEST_F(BuiltinCrsTest, TrimsOrRepairsLlmRecommendations) {
  Json many{{"text", "So many"}, {"items", items_json(15)}};
  auto verbose = std::make_shared<ScriptedBackend>(ScriptedBackend::from_json(Json{
      {"rules", Json::array({Json{{"tag", "crs_strategy"}, {"response", R"({"action": "recommend"})"}},
                             Json{{"tag", "crs_recommend"}, {"response", many.dump()}}})}}));
  BuiltinCrs crs(&catalog, verbose, nullptr);
  CrsRequest request;
  request.turn = 2;
  request.transcript.push_back(CrsTurn{crs_action::kAsk, "q", {}}.to_message(1));
  const auto turn = crs.respond(request);
  EXPECT_EQ(turn.items.size(), 10u);
  EXPECT_EQ(turn.text, "So many");

  auto garbage = std::make_shared<ScriptedBackend>(ScriptedBackend::from_json(Json{
      {"rules", Json::array({Json{{"tag", "crs_strategy"}, {"response", "no idea"}},
                             Json{{"tag", "crs_recommend"}, {"response", "no json here"}}})},
      {"defaults", Json{{"*", "{{input.draft}}"}}}}));
  BuiltinCrs confused(&catalog, garbage, nullptr);
  EXPECT_EQ(confused.respond(request).kind, crs_action::kChitChat);
}

TEST_F(BuiltinCrsTest, Preconditions) {
  Catalog empty;
  EXPECT_THROW(BuiltinCrs(&empty, golden, nullptr), Error);
  EXPECT_THROW(BuiltinCrs(&catalog, nullptr, nullptr), Error);
  EXPECT_EQ(ask_question_draft("genre"), "What kind of movies do you enjoy? Any favorite genres?");
}

}  // namespace
}  // namespace cshi
