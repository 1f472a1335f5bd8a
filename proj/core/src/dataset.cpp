#include "cshi/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"

namespace cshi {
namespace {

std::string id_string(const Json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_number_integer()) return j.dump();
  throw Error(ErrorCode::kSchemaMismatch, "id must be a string or integer");
}

std::ifstream open(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open " + path.string());
  return in;
}

template <typename F>
void for_each_line(const std::filesystem::path& path, F&& f) {
  auto in = open(path);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    try {
      f(line, number);
    } catch (const Error& e) {
      throw Error(e.code(), path.string() + ":" + std::to_string(number) + ": " + e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kSchemaMismatch,
                  path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
}

}  // namespace

void from_json(const Json& j, Conversation& v) {
  v.conversation_id = id_string(j.at("conversation_id"));
  v.user_id.reset();
  if (j.contains("user_id") && !j.at("user_id").is_null()) v.user_id = id_string(j.at("user_id"));
  v.turns.clear();
  for (const auto& t : j.at("turns")) {
    v.turns.push_back({role_from_string(t.at("role").get<std::string>()), t.at("text").get<std::string>()});
  }
  v.target_item_ids.clear();
  for (const auto& id : j.at("target_item_ids")) v.target_item_ids.push_back(id_string(id));
}

void to_json(Json& j, const Conversation& v) {
  Json turns = Json::array();
  for (const auto& t : v.turns) {
    turns.push_back({{"role", t.role == Role::kCrs ? "recommender" : "seeker"}, {"text", t.text}});
  }
  j = Json{{"conversation_id", v.conversation_id},
           {"turns", turns},
           {"target_item_ids", v.target_item_ids}};
  if (v.user_id) j["user_id"] = *v.user_id;
}

std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  std::vector<Json> rows;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    Json row = Json::parse(line, nullptr, false);
    if (row.is_discarded()) throw Error(ErrorCode::kSchemaMismatch, "invalid JSON");
    rows.push_back(std::move(row));
  });
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kConfig, "cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

Catalog load_items(const std::filesystem::path& path) {
  std::vector<CatalogItem> items;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    items.push_back(Json::parse(line).get<CatalogItem>());
  });
  try {
    return Catalog(std::move(items));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

std::vector<RatingRecord> load_ratings(const std::filesystem::path& path, const RatingScale& scale) {
  std::vector<RatingRecord> out;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    auto r = Json::parse(line).get<RatingRecord>();
    if (!scale.contains(r.rating)) {
      throw Error(ErrorCode::kSchemaMismatch, "rating " + std::to_string(r.rating) + " out of scale");
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::map<std::string, Json> load_users(const std::filesystem::path& path) {
  std::map<std::string, Json> out;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    Json row = Json::parse(line);
    if (!row.is_object() || !row.contains("user_id")) {
      throw Error(ErrorCode::kSchemaMismatch, "user row needs user_id");
    }
    const std::string id = id_string(row.at("user_id"));
    row["user_id"] = id;
    out[id] = std::move(row);
  });
  return out;
}

std::vector<Conversation> load_conversations(const std::filesystem::path& path) {
  std::vector<Conversation> out;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    out.push_back(Json::parse(line).get<Conversation>());
  });
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

namespace {

std::vector<std::string> split_fields(const std::string& line, bool dat) {
  if (!dat) return split_csv_line(line);
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const auto next = line.find("::", pos);
    out.push_back(line.substr(pos, next - pos));
    if (next == std::string::npos) break;
    pos = next + 2;
  }
  return out;
}

}  // namespace

std::vector<RatingRecord> load_movielens_ratings(const std::filesystem::path& path) {
  const bool dat = path.extension() == ".dat";
  std::vector<RatingRecord> out;
  bool header_checked = dat;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    auto f = split_fields(line, dat);
    if (!header_checked) {
      header_checked = true;
      if (!f.empty() && to_lower(f[0]) == "userid") return;
    }
    if (f.size() < 3) throw Error(ErrorCode::kSchemaMismatch, "expected user,item,rating[,timestamp]");
    RatingRecord r;
    r.user_id = trim(f[0]);
    r.item_id = trim(f[1]);
    r.rating = std::stod(f[2]);
    if (f.size() > 3 && !trim(f[3]).empty()) r.timestamp = std::stoll(f[3]);
    out.push_back(std::move(r));
  });
  return out;
}

Catalog load_movielens_movies(const std::filesystem::path& path) {
  const bool dat = path.extension() == ".dat";
  static const std::regex kYear(R"(\((\d{4})\)\s*$)");
  std::vector<CatalogItem> items;
  bool header_checked = dat;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    auto f = split_fields(line, dat);
    if (!header_checked) {
      header_checked = true;
      if (!f.empty() && to_lower(f[0]) == "movieid") return;
    }
    if (f.size() < 2) throw Error(ErrorCode::kSchemaMismatch, "expected id,title[,genres]");
    CatalogItem item;
    item.item_id = trim(f[0]);
    item.title = trim(f[1]);
    std::smatch m;
    if (std::regex_search(item.title, m, kYear)) item.year = std::stoi(m[1]);
    if (f.size() > 2) {
      std::vector<std::string> genres;
      std::stringstream ss(f[2]);
      std::string g;
      while (std::getline(ss, g, '|')) {
        if (!g.empty() && g != "(no genres listed)") genres.push_back(g);
      }
      if (!genres.empty()) item.attributes["genre"] = std::move(genres);
    }
    items.push_back(std::move(item));
  });
  return Catalog(std::move(items));
}

std::vector<Conversation> load_redial(const std::filesystem::path& path) {
  static const std::regex kMention(R"(@(\d+))");
  std::vector<Conversation> out;
  for_each_line(path, [&](const std::string& line, std::size_t) {
    const Json row = Json::parse(line);
    Conversation c;
    c.conversation_id = id_string(row.at("conversationId"));
    const Json initiator = row.at("initiatorWorkerId");
    c.user_id = id_string(initiator);
    std::map<std::string, std::string> titles;
    if (auto it = row.find("movieMentions"); it != row.end() && it->is_object()) {
      for (const auto& [id, title] : it->items()) {
        if (title.is_string()) titles[id] = title.get<std::string>();
      }
    }
    for (const auto& m : row.at("messages")) {
      std::string text = m.at("text").get<std::string>();
      std::string resolved;
      auto begin = std::sregex_iterator(text.begin(), text.end(), kMention);
      std::size_t last = 0;
      for (auto it = begin; it != std::sregex_iterator(); ++it) {
        const auto& match = *it;
        resolved.append(text, last, match.position() - last);
        auto t = titles.find(match[1]);
        resolved += t != titles.end() ? t->second : match.str();
        last = match.position() + match.length();
      }
      resolved.append(text, last, std::string::npos);
      const bool seeker = m.at("senderWorkerId") == initiator;
      if (!c.turns.empty() && c.turns.back().role == (seeker ? Role::kSimulator : Role::kCrs)) {
        c.turns.back().text += " " + resolved;
      } else {
        c.turns.push_back({seeker ? Role::kSimulator : Role::kCrs, std::move(resolved)});
      }
    }
    if (auto it = row.find("initiatorQuestions"); it != row.end() && it->is_object()) {
      for (const auto& [id, answers] : it->items()) {
        if (answers.value("suggested", 0) == 1 && answers.value("liked", 0) == 1) {
          c.target_item_ids.push_back(id);
        }
      }
    }
    out.push_back(std::move(c));
  });
  return out;
}

std::map<std::string, Holdout> holdout_latest(const std::vector<RatingRecord>& ratings,
                                              std::size_t count) {
  std::map<std::string, std::vector<RatingRecord>> by_user;
  for (const auto& r : ratings) by_user[r.user_id].push_back(r);
  std::map<std::string, Holdout> out;
  for (auto& [user, rs] : by_user) {
    if (rs.size() <= count) {
      spdlog::debug("user {} has {} ratings, not enough to hold out {}", user, rs.size(), count);
      continue;
    }
    std::stable_sort(rs.begin(), rs.end(), [](const RatingRecord& a, const RatingRecord& b) {
      const auto ta = a.timestamp.value_or(0);
      const auto tb = b.timestamp.value_or(0);
      if (ta != tb) return ta < tb;
      return a.item_id < b.item_id;
    });
    Holdout h;
    h.history.assign(rs.begin(), rs.end() - static_cast<std::ptrdiff_t>(count));
    h.held_out.assign(rs.end() - static_cast<std::ptrdiff_t>(count), rs.end());
    out[user] = std::move(h);
  }
  return out;
}

}  // namespace cshi
