#include <gtest/gtest.h>

#include "cshi/domain.hpp"
#include "cshi/error.hpp"
#include "support.hpp"

namespace cshi {
namespace {

CatalogItem item(std::string id, std::string title) {
  return CatalogItem{std::move(id), std::move(title), std::nullopt, {}};
}

TEST(Catalog, IndexesByIdAndNormalizedTitle) {
  Catalog catalog({item("1", "The Matrix (1999)"), item("2", "Up")});
  EXPECT_EQ(catalog.size(), 2u);
  EXPECT_EQ(catalog.find("2")->title, "Up");
  EXPECT_EQ(catalog.find("3"), nullptr);
  EXPECT_EQ(catalog.find_by_title("matrix")->item_id, "1");
  EXPECT_EQ(catalog.find_by_title("THE MATRIX"), catalog.find("1"));
  EXPECT_THROW(catalog.at("9"), Error);
}

TEST(Catalog, RejectsDuplicatesAndMalformedSensitiveValues) {
  EXPECT_THROW(Catalog({item("1", "a"), item("1", "b")}), Error);
  EXPECT_THROW(Catalog({item("", "a")}), Error);
  auto bad_date = item("1", "a");
  bad_date.attributes[attr::kReleaseDate] = {"2012"};
  try {
    Catalog c({bad_date});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kSchemaMismatch);
  }
  auto bad_runtime = item("1", "a");
  bad_runtime.attributes[attr::kRuntime] = {"quite long"};
  EXPECT_THROW(Catalog({bad_runtime}), Error);
}

TEST(Catalog, VocabularyMergesDefaultsWithCatalogAttributes) {
  auto extra = item("1", "a");
  extra.attributes["studio"] = {"Ghibli"};
  Catalog catalog({extra});
  const auto vocab = catalog.attribute_vocabulary();
  EXPECT_EQ(vocab.back(), "studio");
  for (const auto& name : default_attribute_vocabulary()) {
    EXPECT_NE(std::find(vocab.begin(), vocab.end(), name), vocab.end());
  }
}

TEST(Intent, AskNeedsAttribute) {
  EXPECT_THROW(Intent::ask(""), Error);
  const auto ask = Intent::ask("genre");
  EXPECT_EQ(ask.kind(), IntentKind::kAsk);
  EXPECT_EQ(*ask.rel_attr(), "genre");
  EXPECT_FALSE(Intent::recommend().rel_attr());
}

TEST(SessionState, AppendAssignsIncreasingTurns) {
  SessionState state;
  state.append(Message{Role::kHuman, "hi", 42, 0, std::nullopt, std::nullopt});
  state.seed_prefix_length = 1;
  state.append(Message{Role::kCrs, "q", 0, 1, std::nullopt, "ask"});
  state.append(Message{Role::kSimulator, "a", 0, 1, std::nullopt, std::nullopt});
  state.append(Message{Role::kCrs, "q2", 0, 2, std::nullopt, "ask"});
  for (std::size_t i = 0; i < state.transcript.size(); ++i) {
    EXPECT_EQ(state.transcript[i].turn, static_cast<int>(i));
  }
  EXPECT_EQ(state.crs_turns(), 2);
  EXPECT_EQ(state.next_turn(), 4);
}

TEST(LeakageFlags, FromEvidenceSetsFlags) {
  const auto none = LeakageFlags::from_evidence({});
  EXPECT_FALSE(none.history_leak || none.response_leak);
  const auto flags = LeakageFlags::from_evidence({{LeakKind::kResponse, 3, "X"}});
  EXPECT_FALSE(flags.history_leak);
  EXPECT_TRUE(flags.response_leak);
  EXPECT_EQ(flags.evidence.size(), 1u);
}

TEST(Json, SessionStateRoundTrips) {
  SessionState state;
  state.session_id = "s";
  state.target_items = {testing::fixture().catalog->at("F1")};
  state.memory.long_term.user_id = "u1";
  state.memory.long_term.interaction_history = {{"u1", "L1", 4.5, 10}};
  state.memory.real_time = {{"genre", "comedy", Visibility::kKnown, FacetOrigin::kInitial, false,
                             std::nullopt},
                            {"director", "X", Visibility::kKnown, FacetOrigin::kActivated, false, 3}};
  state.append(Message{Role::kCrs, "try these", 0, 1, std::vector<ItemRef>{{"F1", "Harbor"}},
                       "recommend"});
  state.status = SessionStatus::succeeded(1);
  state.leakage = LeakageFlags::from_evidence({{LeakKind::kHistory, 0, "Harbor"}});
  state.rng_seed = 77;
  const Json j = state;
  EXPECT_EQ(j.get<SessionState>(), state);
}

TEST(Json, EnumStringsRoundTrip) {
  for (auto r : {Role::kSimulator, Role::kCrs, Role::kHuman}) {
    EXPECT_EQ(role_from_string(to_string(r)), r);
  }
  for (auto s : {StatusKind::kOngoing, StatusKind::kSucceeded, StatusKind::kMaxTurnsReached,
                 StatusKind::kErrored}) {
    EXPECT_EQ(status_kind_from_string(to_string(s)), s);
  }
  EXPECT_THROW(role_from_string("robot"), Error);
}

TEST(Json, RatingIdsMayBeNumbers) {
  const auto r = Json::parse(R"({"user_id": 5, "item_id": 12, "rating": 4})").get<RatingRecord>();
  EXPECT_EQ(r.user_id, "5");
  EXPECT_EQ(r.item_id, "12");
  EXPECT_DOUBLE_EQ(r.rating, 4.0);
}

}  // namespace
}  // namespace cshi
