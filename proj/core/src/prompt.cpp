#include "cshi/prompt.hpp"

#include <fstream>

#include "cshi/error.hpp"

namespace cshi {
namespace {

void scan(const std::string& text, std::set<std::string>& out) {
  std::size_t pos = 0;
  while ((pos = text.find("{{", pos)) != std::string::npos) {
    const std::size_t close = text.find("}}", pos + 2);
    if (close == std::string::npos) {
      throw Error(ErrorCode::kConfig, "unterminated placeholder in template");
    }
    out.insert(text.substr(pos + 2, close - pos - 2));
    pos = close + 2;
  }
}

PromptPair pair(std::string system, std::string user) {
  return PromptPair{PromptTemplate(std::move(system)), PromptTemplate(std::move(user))};
}

constexpr const char* kRewrite =
    " Rewrite the draft reply in your own words as one short, natural chat message. Keep every "
    "preference the draft states and add no new ones. Never name a movie that is not already "
    "in the prompt.";

}  // namespace

PromptTemplate::PromptTemplate(std::string text) : text_(std::move(text)) {
  scan(text_, placeholders_);
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  std::string out;
  out.reserve(text_.size());
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text_.find("{{", pos);
    if (open == std::string::npos) break;
    const std::size_t close = text_.find("}}", open + 2);
    const std::string name = text_.substr(open + 2, close - open - 2);
    auto it = values.find(name);
    if (it == values.end()) {
      throw Error(ErrorCode::kConfig, "no value for placeholder '" + name + "'");
    }
    out.append(text_, pos, open - pos);
    out.append(it->second);
    pos = close + 2;
  }
  out.append(text_, pos, std::string::npos);
  return out;
}

PromptLibrary PromptLibrary::defaults() {
  PromptLibrary lib;
  const std::string user_role =
      "You are a person chatting with a movie recommender system. {{persona}}";

  lib.set("preference_summary",
          pair("Summarize this moviegoer's personalized movie preferences and rating patterns "
               "in at most four sentences, addressed to them in the second person.",
               "liked_movies: {{liked}}\ndisliked_movies: {{disliked}}\nrating_stats: "
               "{{stats}}\ndraft: {{draft}}"));

  lib.set("intent",
          pair("Classify the recommender's latest message. Reply with JSON only: "
               "{\"intent\": \"ask\" | \"recommend\" | \"chit-chat\", \"attribute\": one of "
               "[{{attributes}}] or null}. Use \"ask\" when the message asks about the user's "
               "preferences and name the attribute it asks about.",
               "message: {{message}}"));

  lib.set("personalized_ask_retrieve",
          pair("You look through a user's viewing history. Decide whether any watched movies "
               "are relevant to the recommender's question about {{attribute}}. Reply with "
               "JSON only: {\"relevant\": true | false, \"items\": [titles from the history]}.",
               "question: {{question}}\nattribute: {{attribute}}\nhistory: {{history}}\n"
               "draft: {{draft}}"));

  lib.set("personalized_ask_reply",
          pair(user_role + " Answer the question about {{attribute}} by recalling movies you "
                           "have watched and what you want right now." +
                   kRewrite,
               "question: {{question}}\nattribute: {{attribute}}\nwatched: {{items}}\n"
               "current_wishes: {{wishes}}\npersona: {{persona}}\ndraft: {{draft}}"));

  lib.set("nonpersonalized_ask",
          pair(user_role + " Answer the question using only your current preferences." +
                   kRewrite,
               "question: {{question}}\nattribute: {{attribute}}\npreferences: "
               "{{preferences}}\npersona: {{persona}}\ndraft: {{draft}}"));

  lib.set("recommend_accept",
          pair(user_role + " The recommendation matches what you want. Give warm, positive "
                           "feedback that refers back to what you said earlier." +
                   kRewrite,
               "recommendation: {{recommendation}}\nearlier_wishes: {{wishes}}\npersona: "
               "{{persona}}\ndraft: {{draft}}"));

  lib.set("recommend_reject",
          pair(user_role + " The recommendation is not what you want. Politely decline and "
                           "say what you are looking for instead." +
                   kRewrite,
               "recommendation: {{recommendation}}\nnew_preferences: {{activated}}\n"
               "preferences: {{preferences}}\npersona: {{persona}}\ndraft: {{draft}}"));

  lib.set("chit_chat",
          pair(user_role + " Continue the small talk naturally and steer the conversation "
                           "toward finding a movie that fits your preferences." +
                   kRewrite,
               "message: {{message}}\npreferences: {{preferences}}\npersona: {{persona}}\n"
               "draft: {{draft}}"));

  lib.set("opening",
          pair(user_role + " Open the conversation by asking for a movie recommendation "
                           "without stating any preference yet." +
                   kRewrite,
               "persona: {{persona}}\ndraft: {{draft}}"));

  lib.set("crs_strategy",
          pair("You are the strategy module of a conversational movie recommender. Choose the "
               "next action: ask about one preference attribute, recommend, or chit-chat. Do "
               "not repeat questions from the decision log and never recommend before the user "
               "has replied. Reply with JSON only: {\"action\": \"ask\" | \"recommend\" | "
               "\"chit-chat\", \"attribute\": one of [{{attributes}}] or null}.",
               "round: {{round}}\ndecision_log: {{decision_log}}\nuser_preferences: "
               "{{preferences}}\nlast_user_message: {{last_message}}\ndraft: {{draft}}"));

  lib.set("crs_ask",
          pair("You are a friendly movie recommender. Ask the user one short question about "
               "their preference for {{attribute}}.",
               "attribute: {{attribute}}\nuser_preferences: {{preferences}}\ndraft: {{draft}}"));

  lib.set("crs_recommend",
          pair("You are a movie recommender. Recommend at most {{max_items}} movies that fit "
               "the user's preferences. Reply with JSON only: {\"text\": a short pitch, "
               "\"items\": [movie titles]}.",
               "round: {{round}}\nuser_preferences: {{preferences}}\nalready_recommended: "
               "{{already}}\nlast_user_message: {{last_message}}\ndraft: {{draft}}"));

  lib.set("crs_chit_chat",
          pair("You are a friendly movie recommender. Reply briefly to the user's small talk "
               "and invite them to share their movie preferences.",
               "last_user_message: {{last_message}}\ndraft: {{draft}}"));

  lib.set("single_prompt",
          pair("You are a seeker chatting with a recommender for movie recommendations.\n"
               "persona: {{persona}}\n"
               "target: {{target_info}}\n"
               "history: {{ui_info}}\n"
               "You must follow the instructions below during chat. If the recommender "
               "recommends the target items, you should accept. If the recommender recommends "
               "other items, you should refuse them and provide the information about the target "
               "items. If the recommender asks for your preference, you should provide the "
               "information about the target items. You should never directly tell the target "
               "item title.",
               "{{dialogue}}"));
  return lib;
}

PromptLibrary PromptLibrary::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open prompt file " + path.string());
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::kConfig, "prompt file " + path.string() + ": " + e.what());
  }
  PromptLibrary lib = defaults();
  for (const auto& [tag, entry] : doc.items()) {
    if (!entry.is_object() || !entry.contains("system") || !entry.contains("user")) {
      throw Error(ErrorCode::kConfig, "prompt '" + tag + "' needs system and user strings");
    }
    lib.set(tag, pair(entry.at("system").get<std::string>(), entry.at("user").get<std::string>()));
  }
  return lib;
}

void PromptLibrary::set(const std::string& tag, PromptPair pair) {
  prompts_[tag] = std::move(pair);
}

const PromptPair& PromptLibrary::get(const std::string& tag) const {
  auto it = prompts_.find(tag);
  if (it == prompts_.end()) throw Error(ErrorCode::kConfig, "no prompt template for '" + tag + "'");
  return it->second;
}

Json PromptLibrary::to_json() const {
  Json out = Json::object();
  for (const auto& [tag, p] : prompts_) {
    out[tag] = Json{{"system", p.system.text()}, {"user", p.user.text()}};
  }
  return out;
}

}  // namespace cshi
