#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cshi/domain.hpp"

namespace cshi {

struct ConversationTurn {
  Role role = Role::kSimulator;
  std::string text;
};

struct Conversation {
  std::string conversation_id;
  std::optional<std::string> user_id;
  std::vector<ConversationTurn> turns;
  std::vector<std::string> target_item_ids;
};

void from_json(const Json& j, Conversation& v);
void to_json(Json& j, const Conversation& v);

// Canonical JSON-lines files. Blank lines are skipped; a malformed line
// raises kSchemaMismatch naming the file and line number.
std::vector<Json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows);

Catalog load_items(const std::filesystem::path& path);
std::vector<RatingRecord> load_ratings(const std::filesystem::path& path,
                                       const RatingScale& scale = {});
// {user_id, persona?, <basic info fields>}
std::map<std::string, Json> load_users(const std::filesystem::path& path);
std::vector<Conversation> load_conversations(const std::filesystem::path& path);

// MovieLens exports: ratings.csv (userId,movieId,rating,timestamp) or
// ratings.dat (UserID::MovieID::Rating::Timestamp); movies.csv / movies.dat.
std::vector<RatingRecord> load_movielens_ratings(const std::filesystem::path& path);
Catalog load_movielens_movies(const std::filesystem::path& path);

// ReDial JSON lines: seeker turns become simulator turns, "@<id>" mentions
// are replaced by titles, and the targets are movies the seeker liked
// after they were suggested.
std::vector<Conversation> load_redial(const std::filesystem::path& path);

std::vector<std::string> split_csv_line(const std::string& line);

struct Holdout {
  std::vector<RatingRecord> history;
  std::vector<RatingRecord> held_out;  // oldest first
};

// Splits each user's ratings by timestamp (ties by item_id): the latest
// `count` become targets. Users with no more than `count` ratings are skipped.
std::map<std::string, Holdout> holdout_latest(const std::vector<RatingRecord>& ratings,
                                              std::size_t count = 5);

}  // namespace cshi
