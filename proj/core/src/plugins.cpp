#include "cshi/plugins.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "cshi/error.hpp"
#include "cshi/text.hpp"

namespace cshi {
namespace {

std::string first_json_object(const std::string& text) {
  const auto open = text.find('{');
  const auto close = text.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) return {};
  return text.substr(open, close - open + 1);
}

std::optional<Json> parse_json_object(const std::string& text) {
  const std::string body = first_json_object(text);
  if (body.empty()) return std::nullopt;
  Json j = Json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

std::vector<const PreferenceFacet*> known_facets(const std::vector<PreferenceFacet>& facets) {
  std::vector<const PreferenceFacet*> out;
  for (const auto& f : facets) {
    if (f.visibility == Visibility::kKnown) out.push_back(&f);
  }
  return out;
}

std::vector<std::string> phrases(const std::vector<const PreferenceFacet*>& facets) {
  std::vector<std::string> out;
  for (const auto* f : facets) out.push_back(facet_phrase(*f));
  return out;
}

std::string list_phrase(const std::vector<std::string>& items, const std::string& last_sep) {
  if (items.empty()) return {};
  if (items.size() == 1) return items.front();
  std::vector<std::string> head(items.begin(), items.end() - 1);
  return join(head, ", ") + " " + last_sep + " " + items.back();
}

const PreferenceFacet* rotate(const std::vector<const PreferenceFacet*>& facets, int round) {
  if (facets.empty()) return nullptr;
  const auto index = static_cast<std::size_t>(std::max(round, 0)) % facets.size();
  return facets[index];
}

std::string generate(const SimulatorServices& services, const std::string& tag,
                     std::map<std::string, std::string> values, const std::string& draft) {
  values["draft"] = draft;
  std::string text = trim(services.ask_llm(tag, values, services.generation_temperature));
  return text.empty() ? draft : text;
}

bool same_value(const std::string& a, const std::string& b) {
  return normalize_text(a) == normalize_text(b);
}

}  // namespace

// ---- services --------------------------------------------------------------

std::vector<std::string> SimulatorServices::vocabulary() const {
  return catalog != nullptr ? catalog->attribute_vocabulary() : default_attribute_vocabulary();
}

std::string SimulatorServices::ask_llm(const std::string& tag,
                                       const std::map<std::string, std::string>& values,
                                       double temperature) const {
  if (!llm) throw Error(ErrorCode::kBackendError, "no chat backend configured");
  static const PromptLibrary kDefaults = PromptLibrary::defaults();
  const auto& prompt = (prompts ? *prompts : kDefaults).get(tag);
  ChatRequest request;
  request.tag = tag;
  request.temperature = temperature;
  request.system_text = prompt.system.render(values);
  request.messages.push_back({"user", prompt.user.render(values)});
  try {
    return llm->complete(request).text;
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorCode::kBackendError, e.what());
  }
}

// ---- plugin 1 / 2 ------------------------------------------------------------

RatingPartition partition_ratings(const std::vector<RatingRecord>& ratings) {
  RatingPartition out;
  for (const auto& r : ratings) {
    (r.rating >= kLikedThreshold ? out.liked : out.disliked).push_back(r);
  }
  return out;
}

std::string plugin1_summarize_preferences(const std::vector<RatingRecord>& ratings,
                                          const SimulatorServices& services) {
  if (ratings.empty()) throw Error(ErrorCode::kEmptyHistory, "no ratings to summarize");
  if (services.catalog == nullptr) throw Error(ErrorCode::kPrecondition, "catalog required");

  std::vector<RatingRecord> usable;
  for (const auto& r : ratings) {
    const auto& item = services.catalog->at(r.item_id);
    if (services.oracle && services.oracle->matches(ItemRef{item.item_id, item.title})) continue;
    usable.push_back(r);
  }
  if (usable.empty()) throw Error(ErrorCode::kEmptyHistory, "every rated item is a target");

  const auto split = partition_ratings(usable);
  auto titles = [&](const std::vector<RatingRecord>& rs) {
    std::vector<std::string> out;
    for (const auto& r : rs) {
      std::ostringstream line;
      line << services.catalog->at(r.item_id).title << " (" << r.rating << ")";
      out.push_back(line.str());
    }
    return out.empty() ? std::string("none") : join(out, "; ");
  };

  // Draft: the most frequent genres among liked items.
  std::map<std::string, int> genre_counts;
  for (const auto& r : split.liked) {
    const auto& item = services.catalog->at(r.item_id);
    if (auto it = item.attributes.find(attr::kGenre); it != item.attributes.end()) {
      for (const auto& g : it->second) ++genre_counts[to_lower(g)];
    }
  }
  std::vector<std::pair<std::string, int>> ranked(genre_counts.begin(), genre_counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> top;
  for (std::size_t i = 0; i < ranked.size() && i < 3; ++i) top.push_back(ranked[i].first);

  double sum = 0.0;
  for (const auto& r : usable) sum += r.rating;
  char stats[128];
  std::snprintf(stats, sizeof stats, "%zu liked, %zu disliked, average rating %.2f",
                split.liked.size(), split.disliked.size(), sum / static_cast<double>(usable.size()));

  std::string draft = top.empty() ? "You watch a broad mix of movies"
                                  : "You mostly enjoy " + list_phrase(top, "and") + " movies";
  draft += " (" + std::string(stats) + ").";

  return generate(services, "preference_summary",
                  {{"liked", titles(split.liked)},
                   {"disliked", titles(split.disliked)},
                   {"stats", stats}},
                  draft);
}

UserProfile plugin2_basic_info(const Json& raw) {
  if (!raw.is_object()) throw Error(ErrorCode::kSchemaMismatch, "user record must be an object");
  auto it = raw.find("user_id");
  if (it == raw.end() || !(it->is_string() || it->is_number_integer())) {
    throw Error(ErrorCode::kSchemaMismatch, "user record needs user_id");
  }
  UserProfile profile;
  profile.user_id = it->is_string() ? it->get<std::string>() : it->dump();

  for (const auto& [key, value] : raw.items()) {
    if (key == "user_id" || key == "ratings" || key == "interaction_history") continue;
    if (value.is_null()) continue;
    if (value.is_string()) {
      if (!value.get<std::string>().empty()) profile.basic_info[key] = value.get<std::string>();
    } else if (value.is_number() || value.is_boolean()) {
      profile.basic_info[key] = value.dump();
    }
  }

  const Json* ratings = nullptr;
  if (auto r = raw.find("ratings"); r != raw.end()) ratings = &*r;
  if (auto r = raw.find("interaction_history"); r != raw.end()) ratings = &*r;
  if (ratings != nullptr) {
    if (!ratings->is_array()) throw Error(ErrorCode::kSchemaMismatch, "ratings must be an array");
    for (const auto& entry : *ratings) {
      if (!entry.is_object() || !entry.contains("item_id") || !entry.contains("rating") ||
          !entry.at("rating").is_number()) {
        throw Error(ErrorCode::kSchemaMismatch, "rating entries need item_id and numeric rating");
      }
      Json full = entry;
      if (!full.contains("user_id")) full["user_id"] = profile.user_id;
      profile.interaction_history.push_back(full.get<RatingRecord>());
    }
  }
  return profile;
}

// ---- plugin 3 ------------------------------------------------------------------

void SplitConfig::validate() const {
  auto in_range = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in_range(k1) || !in_range(k2) || k1 + k2 > 1.0 + 1e-9) {
    throw Error(ErrorCode::kInvalidSplit,
                "k1=" + std::to_string(k1) + " k2=" + std::to_string(k2));
  }
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

std::pair<std::size_t, std::size_t> split_counts(std::size_t n, double k1, double k2) {
  // Ties round down, so round(k1 n) + round(k2 n) never exceeds n when k1 + k2 <= 1.
  auto round_half_down = [n](double k) {
    const double x = std::ceil(k * static_cast<double>(n) - 0.5 - 1e-9);
    return static_cast<std::size_t>(std::max(0.0, x));
  };
  const std::size_t known = std::min(round_half_down(k1), n);
  const std::size_t unknown = std::min(round_half_down(k2), n - known);
  return {known, unknown};
}

std::vector<PreferenceFacet> candidate_facets(const std::vector<AttributeMap>& target_info,
                                              const TargetOracle* oracle) {
  std::vector<PreferenceFacet> out;
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& attributes : target_info) {
    for (const auto& [name, values] : attributes) {
      for (const auto& raw : values) {
        std::string value = trim(raw);
        if (value.empty()) continue;
        if (oracle != nullptr && oracle->leaks(value)) continue;
        if (!seen.emplace(name, normalize_text(value)).second) continue;
        out.push_back(PreferenceFacet{name, std::move(value), Visibility::kKnown,
                                      FacetOrigin::kInitial, false, std::nullopt});
      }
    }
  }
  return out;
}

std::vector<PreferenceFacet> plugin3_realtime_preferences(
    const std::vector<AttributeMap>& target_info, const SplitConfig& split,
    const AnonymizationPolicy& policy, const TargetOracle* oracle) {
  split.validate();
  if (target_info.empty()) throw Error(ErrorCode::kPrecondition, "no target information");
  auto candidates = candidate_facets(target_info, oracle);
  const std::size_t n = candidates.size();
  const auto [known, unknown] = split_counts(n, split.k1, split.k2);
  const auto perm = seeded_permutation(n, split.seed);

  std::vector<int> assignment(n, -1);  // 0 Known, 1 Unknown, -1 dropped
  for (std::size_t i = 0; i < known; ++i) assignment[perm[i]] = 0;
  for (std::size_t i = known; i < known + unknown; ++i) assignment[perm[i]] = 1;

  std::vector<PreferenceFacet> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (assignment[i] < 0) continue;
    PreferenceFacet facet = std::move(candidates[i]);
    facet.visibility = assignment[i] == 0 ? Visibility::kKnown : Visibility::kUnknown;
    if (policy.enabled && policy.is_sensitive(facet.attribute)) {
      facet = anonymize_facet(facet, policy);
    }
    out.push_back(std::move(facet));
  }
  return out;
}

std::string decade_phrase(int year) {
  const int decade = year - (year % 10);
  return "the " + std::to_string(decade) + "s";
}

std::string approximate_hours_phrase(int minutes) {
  // Truncated to the half hour: 144 -> 2, 150 -> 2.5.
  const int halves = std::max(1, minutes / 30);
  if (halves == 1) return "about half an hour";
  const int whole = halves / 2;
  if (halves % 2 == 0) return "about " + std::to_string(whole) + (whole == 1 ? " hour" : " hours");
  return "about " + std::to_string(whole) + ".5 hours";
}

PreferenceFacet anonymize_facet(const PreferenceFacet& facet, const AnonymizationPolicy& policy) {
  if (!policy.is_sensitive(facet.attribute) || facet.anonymized) return facet;
  PreferenceFacet out = facet;
  if (facet.attribute == attr::kReleaseDate) {
    int year = 0;
    if (auto date = parse_calendar_date(facet.value)) {
      year = date->year;
    } else if (const auto t = trim(facet.value);
               t.size() == 4 && std::all_of(t.begin(), t.end(), ::isdigit)) {
      year = std::stoi(t);
    } else {
      throw Error(ErrorCode::kUnparseableValue, "release_date '" + facet.value + "'");
    }
    out.value = decade_phrase(year);
  } else if (facet.attribute == attr::kRuntime) {
    auto minutes = parse_runtime_minutes(facet.value);
    if (!minutes) throw Error(ErrorCode::kUnparseableValue, "runtime '" + facet.value + "'");
    out.value = approximate_hours_phrase(*minutes);
  } else {
    throw Error(ErrorCode::kUnparseableValue,
                "no anonymization rule for sensitive attribute '" + facet.attribute + "'");
  }
  out.anonymized = true;
  return out;
}

// ---- plugin 4 ------------------------------------------------------------------

std::optional<std::string> map_attribute(std::string_view raw,
                                         const std::vector<std::string>& vocabulary) {
  const std::string text = normalize_text(raw);
  if (text.empty()) return std::nullopt;
  auto in_vocab = [&](const std::string& a) {
    return std::find(vocabulary.begin(), vocabulary.end(), a) != vocabulary.end();
  };
  for (const auto& a : vocabulary) {
    if (normalize_text(a) == text) return a;
  }
  static const std::vector<std::pair<std::string, std::vector<std::string>>> kAliases = {
      {attr::kReleaseDate,
       {"release date", "released", "release", "year", "years", "decade", "era", "date"}},
      {attr::kRuntime, {"runtime", "run time", "length", "duration", "long", "minutes", "hours"}},
      {attr::kPlotKeywords, {"plot", "plot keywords", "story", "keywords", "theme", "topic"}},
      {attr::kDirector, {"director", "directors", "directed", "filmmaker", "filmmakers"}},
      {attr::kActor,
       {"actor", "actors", "actress", "actresses", "cast", "star", "stars", "starring"}},
      {attr::kLanguage, {"language", "languages"}},
      {attr::kGenre, {"genre", "genres", "kind", "type", "category", "style"}},
  };
  for (const auto& [name, aliases] : kAliases) {
    if (!in_vocab(name)) continue;
    for (const auto& alias : aliases) {
      if (contains_title(text, alias)) return name;
    }
  }
  return std::nullopt;
}

Intent plugin4_intent(const Message& last_message, const SimulatorServices& services) {
  if (last_message.role != Role::kCrs) {
    throw Error(ErrorCode::kPrecondition, "intent understanding expects a CRS message");
  }
  if (last_message.recommended_items && !last_message.recommended_items->empty()) {
    return Intent::recommend();
  }
  const auto vocabulary = services.vocabulary();
  const std::string reply = services.ask_llm(
      "intent", {{"message", last_message.text}, {"attributes", join(vocabulary, ", ")}},
      services.classification_temperature);

  std::string kind;
  std::string attribute;
  if (auto j = parse_json_object(reply)) {
    if (auto it = j->find("intent"); it != j->end() && it->is_string()) kind = it->get<std::string>();
    if (auto it = j->find("attribute"); it != j->end() && it->is_string()) {
      attribute = it->get<std::string>();
    }
  } else {
    // "ask: genre" / "ask genre" / "recommend"
    const std::string text = normalize_text(reply);
    const auto space = text.find(' ');
    kind = text.substr(0, space);
    if (space != std::string::npos) attribute = text.substr(space + 1);
  }
  kind = normalize_text(kind);
  if (kind == "ask" || kind == "asking" || kind == "question" || kind == "inquire") {
    if (auto mapped = map_attribute(attribute, vocabulary)) return Intent::ask(*mapped);
    spdlog::warn("UnmappableAttribute: '{}' is outside the attribute vocabulary; treating as chit-chat",
                 attribute);
    return Intent::chit_chat();
  }
  if (kind == "recommend" || kind == "recommendation") {
    spdlog::warn("recommend intent without structured items; treating as chit-chat");
    return Intent::chit_chat();
  }
  if (kind != "chit chat" && kind != "chitchat" && kind != "chit" && kind != "chat") {
    spdlog::warn("unrecognized intent '{}'; treating as chit-chat", kind);
  }
  return Intent::chit_chat();
}

// ---- plugin 5 / 6 ----------------------------------------------------------------

AskRouteResult plugin5_personalized_ask(const Intent& intent, const UserProfile& profile,
                                        const std::vector<PreferenceFacet>& facets,
                                        const std::string& question,
                                        const SimulatorServices& services) {
  if (intent.kind() != IntentKind::kAsk) throw Error(ErrorCode::kPrecondition, "ask intent required");
  if (profile.interaction_history.empty() || services.catalog == nullptr) return {};
  const std::string& attribute = *intent.rel_attr();

  std::vector<std::string> wish_values;
  for (const auto* f : known_facets(facets)) {
    if (f->attribute == attribute) wish_values.push_back(f->value);
  }

  struct Candidate {
    const CatalogItem* item;
    double rating;
    bool overlaps;
  };
  std::vector<Candidate> candidates;
  std::vector<std::string> history_lines;
  for (const auto& r : profile.interaction_history) {
    const auto* item = services.catalog->find(r.item_id);
    if (item == nullptr) continue;
    if (services.oracle && services.oracle->matches(ItemRef{item->item_id, item->title})) continue;
    auto it = item->attributes.find(attribute);
    std::ostringstream line;
    line << item->title << " [rated " << r.rating;
    if (it != item->attributes.end() && !it->second.empty()) {
      line << "; " << attribute << ": " << join(it->second, ", ");
      if (r.rating >= kLikedThreshold) {
        bool overlaps = false;
        for (const auto& v : it->second) {
          for (const auto& w : wish_values) overlaps = overlaps || same_value(v, w);
        }
        candidates.push_back({item, r.rating, overlaps});
      }
    }
    line << "]";
    history_lines.push_back(line.str());
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.overlaps != b.overlaps) return a.overlaps;
    if (a.rating != b.rating) return a.rating > b.rating;
    return a.item->item_id < b.item->item_id;
  });
  if (candidates.size() > 3) candidates.resize(3);

  Json suggestion{{"relevant", !candidates.empty()}, {"items", Json::array()}};
  for (const auto& c : candidates) suggestion["items"].push_back(c.item->title);

  const std::string verdict = services.ask_llm(
      "personalized_ask_retrieve",
      {{"question", question},
       {"attribute", attribute},
       {"history", history_lines.empty() ? "none" : join(history_lines, "; ")},
       {"draft", suggestion.dump()}},
      services.classification_temperature);

  auto parsed = parse_json_object(verdict);
  if (!parsed || !parsed->value("relevant", false)) return {};
  std::vector<const CatalogItem*> chosen;
  if (auto items = parsed->find("items"); items != parsed->end() && items->is_array()) {
    for (const auto& title : *items) {
      if (!title.is_string()) continue;
      const std::string wanted = normalize_title(title.get<std::string>());
      for (const auto& r : profile.interaction_history) {
        const auto* item = services.catalog->find(r.item_id);
        if (item != nullptr && normalize_title(item->title) == wanted &&
            std::find(chosen.begin(), chosen.end(), item) == chosen.end()) {
          chosen.push_back(item);
        }
      }
    }
  }
  if (chosen.empty()) return {};

  std::vector<std::string> titles;
  std::vector<std::string> values;
  for (const auto* item : chosen) {
    titles.push_back(item->title);
    if (auto it = item->attributes.find(attribute); it != item->attributes.end()) {
      for (const auto& v : it->second) {
        if (std::none_of(values.begin(), values.end(), [&](const auto& x) { return same_value(x, v); })) {
          values.push_back(v);
        }
      }
    }
  }
  std::vector<std::string> wish_phrases;
  for (const auto* f : known_facets(facets)) {
    if (f->attribute == attribute) wish_phrases.push_back(facet_phrase(*f));
  }

  std::string draft = "I really enjoyed " + list_phrase(titles, "and");
  if (!values.empty()) {
    draft += ", so " + facet_phrase(PreferenceFacet{attribute, list_phrase(values, "and")}) +
             " are right up my alley";
  }
  draft += ".";
  if (!wish_phrases.empty()) {
    draft += " Right now I'm especially in the mood for " + list_phrase(wish_phrases, "or") + ".";
  }

  AskRouteResult result;
  result.handled = true;
  result.referenced_items = titles;
  result.response_text = generate(services, "personalized_ask_reply",
                                  {{"question", question},
                                   {"attribute", attribute},
                                   {"items", join(titles, "; ")},
                                   {"wishes", wish_phrases.empty() ? "none" : join(wish_phrases, "; ")},
                                   {"persona", profile.persona_text}},
                                  draft);
  return result;
}

std::string plugin6_nonpersonalized_ask(const Intent& intent,
                                        const std::vector<PreferenceFacet>& facets,
                                        const std::string& question, const std::string& persona,
                                        const SimulatorServices& services) {
  if (intent.kind() != IntentKind::kAsk) throw Error(ErrorCode::kPrecondition, "ask intent required");
  const std::string& attribute = *intent.rel_attr();
  const auto known = known_facets(facets);

  std::vector<const PreferenceFacet*> matching;
  std::vector<const PreferenceFacet*> others;
  for (const auto* f : known) (f->attribute == attribute ? matching : others).push_back(f);

  std::string draft;
  std::vector<std::string> expressed;
  if (!matching.empty()) {
    expressed = phrases(matching);
    draft = "I'm in the mood for " + list_phrase(expressed, "or") + ".";
  } else if (!others.empty()) {
    expressed = {facet_phrase(*others.front())};
    draft = "I don't really have a preference when it comes to " + attribute_label(attribute) +
            ". What I do care about is " + expressed.front() + ".";
  } else {
    draft = "I don't have any particular preference about " + attribute_label(attribute) +
            ". I'm open to suggestions!";
  }
  return generate(services, "nonpersonalized_ask",
                  {{"question", question},
                   {"attribute", attribute},
                   {"preferences", expressed.empty() ? "none" : join(expressed, "; ")},
                   {"persona", persona}},
                  draft);
}

// ---- plugin 7 ------------------------------------------------------------------

RecommendOutcome plugin7_recommend_response(const Intent& intent, const Message& crs_message,
                                            const std::vector<PreferenceFacet>& facets, int round,
                                            const std::string& persona,
                                            const SimulatorServices& services) {
  if (intent.kind() != IntentKind::kRecommend) {
    throw Error(ErrorCode::kPrecondition, "recommend intent required");
  }
  if (!crs_message.recommended_items || crs_message.recommended_items->empty()) {
    throw Error(ErrorCode::kPrecondition, "recommendation without items");
  }
  if (!services.oracle) throw Error(ErrorCode::kPrecondition, "acceptance oracle required");
  const auto& items = *crs_message.recommended_items;

  std::vector<std::string> item_titles;
  for (const auto& item : items) item_titles.push_back(item.title);
  const std::string recommendation = crs_message.text + " [" + join(item_titles, "; ") + "]";
  const auto known = known_facets(facets);

  RecommendOutcome outcome;
  outcome.accepted = std::any_of(items.begin(), items.end(),
                                 [&](const ItemRef& item) { return services.oracle->matches(item); });
  if (outcome.accepted) {
    const auto* recalled = rotate(known, round);
    std::string draft =
        recalled != nullptr
            ? "That sounds perfect! It's exactly what I hoped for when I mentioned " +
                  facet_phrase(*recalled) + ". I'll watch it, thank you!"
            : "That sounds perfect, I'll give it a try. Thank you!";
    outcome.response_text =
        generate(services, "recommend_accept",
                 {{"recommendation", recommendation},
                  {"wishes", known.empty() ? "none" : join(phrases(known), "; ")},
                  {"persona", persona}},
                 draft);
    return outcome;
  }

  // Unknown facets surfaced by the recommendation, either through the
  // structured items' catalog attributes or in the message text.
  std::vector<const CatalogItem*> resolved;
  if (services.catalog != nullptr) {
    for (const auto& item : items) {
      const CatalogItem* found = item.item_id ? services.catalog->find(*item.item_id) : nullptr;
      if (found == nullptr) found = services.catalog->find_by_title(item.title);
      if (found != nullptr) resolved.push_back(found);
    }
  }
  for (const auto& facet : facets) {
    if (facet.visibility != Visibility::kUnknown) continue;
    bool hit = contains_title(crs_message.text, normalize_text(facet.value));
    for (const auto* item : resolved) {
      if (hit) break;
      auto it = item->attributes.find(facet.attribute);
      if (it == item->attributes.end()) continue;
      for (const auto& value : it->second) {
        std::string comparable = value;
        if (facet.anonymized) {
          try {
            comparable = anonymize_facet(PreferenceFacet{facet.attribute, value}, services.anonymization).value;
          } catch (const Error&) {
            continue;
          }
        }
        if (same_value(comparable, facet.value)) {
          hit = true;
          break;
        }
      }
    }
    if (hit) {
      PreferenceFacet promoted = facet;
      promoted.visibility = Visibility::kKnown;
      promoted.origin = FacetOrigin::kActivated;
      promoted.promoted_at_round = round;
      outcome.activated_facets.push_back(std::move(promoted));
    }
  }

  std::vector<std::string> activated_phrases;
  for (const auto& f : outcome.activated_facets) activated_phrases.push_back(facet_phrase(f));

  std::string draft = "Hmm, I don't think that's quite what I'm looking for.";
  if (!activated_phrases.empty()) {
    draft += " But that reminds me, I'd really love " + list_phrase(activated_phrases, "and") + "!";
  } else if (const auto* wish = rotate(known, round); wish != nullptr) {
    draft += " I'm still hoping for " + facet_phrase(*wish) + ".";
  } else {
    draft += " Could you suggest something else?";
  }
  std::vector<std::string> preference_phrases = phrases(known);
  preference_phrases.insert(preference_phrases.end(), activated_phrases.begin(),
                            activated_phrases.end());
  outcome.response_text = generate(
      services, "recommend_reject",
      {{"recommendation", recommendation},
       {"activated", activated_phrases.empty() ? "none" : join(activated_phrases, "; ")},
       {"preferences", preference_phrases.empty() ? "none" : join(preference_phrases, "; ")},
       {"persona", persona}},
      draft);
  return outcome;
}

void apply_activations(std::vector<PreferenceFacet>& facets,
                       const std::vector<PreferenceFacet>& activated) {
  for (const auto& a : activated) {
    for (auto& f : facets) {
      if (f.visibility == Visibility::kUnknown && f.attribute == a.attribute && f.value == a.value) {
        f.visibility = Visibility::kKnown;
        f.origin = FacetOrigin::kActivated;
        f.promoted_at_round = a.promoted_at_round;
      }
    }
  }
}

// ---- plugin 8 / opener ---------------------------------------------------------

std::string plugin8_chitchat(const Intent& intent, const std::vector<PreferenceFacet>& facets,
                             const std::vector<Message>& transcript, int round,
                             const std::string& persona, const SimulatorServices& services) {
  if (intent.kind() != IntentKind::kChitChat) {
    throw Error(ErrorCode::kPrecondition, "chit-chat intent required");
  }
  std::string message;
  for (auto it = transcript.rbegin(); it != transcript.rend(); ++it) {
    if (it->role == Role::kCrs) {
      message = it->text;
      break;
    }
  }
  const auto known = known_facets(facets);
  const auto* steer = rotate(known, round);
  const std::string draft =
      steer != nullptr
          ? "That sounds lovely! By the way, I'm hoping to find " + facet_phrase(*steer) + " to watch."
          : "That sounds nice! Anyway, do you have any movie suggestions for me?";
  return generate(services, "chit_chat",
                  {{"message", message},
                   {"preferences", steer != nullptr ? facet_phrase(*steer) : "none"},
                   {"persona", persona}},
                  draft);
}

std::string opening_message(const std::string& persona, const SimulatorServices& services) {
  return generate(services, "opening", {{"persona", persona}},
                  "Hi! I'm looking for a movie to watch. Could you help me find something?");
}

std::string attribute_label(const std::string& attribute) {
  if (attribute == attr::kGenre) return "genre";
  if (attribute == attr::kDirector) return "directors";
  if (attribute == attr::kActor) return "actors";
  if (attribute == attr::kLanguage) return "language";
  if (attribute == attr::kReleaseDate) return "release date";
  if (attribute == attr::kRuntime) return "movie length";
  if (attribute == attr::kPlotKeywords) return "the story";
  std::string out = attribute;
  std::replace(out.begin(), out.end(), '_', ' ');
  return out;
}

std::string facet_phrase(const PreferenceFacet& facet) {
  const auto& v = facet.value;
  if (facet.attribute == attr::kGenre) return v + " movies";
  if (facet.attribute == attr::kDirector) return "movies directed by " + v;
  if (facet.attribute == attr::kActor) return "movies starring " + v;
  if (facet.attribute == attr::kLanguage) return "movies in " + v;
  if (facet.attribute == attr::kReleaseDate) return "movies from " + v;
  if (facet.attribute == attr::kRuntime) return "movies that run " + v;
  if (facet.attribute == attr::kPlotKeywords) return "movies about " + v;
  return "movies with " + attribute_label(facet.attribute) + " " + v;
}

// ---- registration ----------------------------------------------------------------

namespace {

struct Builtin {
  const char* id;
  StageId stage;
  int priority;
  ActivationPredicate activation;
  std::function<PluginBody(std::shared_ptr<const SimulatorServices>, const Json& params)> make;
};

bool intent_is(const PluginContext& ctx, IntentKind kind) {
  return ctx.intent && ctx.intent->kind() == kind;
}

std::string persona_of(const PluginContext& ctx) { return ctx.memory->long_term.persona_text; }

std::vector<Builtin> builtins() {
  using S = std::shared_ptr<const SimulatorServices>;
  std::vector<Builtin> out;
  out.push_back({plugin_id::kBasicInfo, stage::kUserProfileInit, 10,
                 [](const PluginContext& ctx) { return ctx.input.contains(ctx_key::kRawUserRecord); },
                 [](S, const Json&) -> PluginBody {
                   return [](PluginContext& ctx) {
                     auto parsed = plugin2_basic_info(ctx.input.at(ctx_key::kRawUserRecord));
                     auto& profile = ctx.memory->long_term;
                     profile.user_id = parsed.user_id;
                     profile.basic_info = std::move(parsed.basic_info);
                     profile.interaction_history = std::move(parsed.interaction_history);
                     return StepResult::kContinue;
                   };
                 }});
  out.push_back({plugin_id::kPreferenceSummary, stage::kUserProfileInit, 20,
                 [](const PluginContext& ctx) {
                   return !ctx.memory->long_term.interaction_history.empty();
                 },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     auto& profile = ctx.memory->long_term;
                     profile.taste_summary =
                         plugin1_summarize_preferences(profile.interaction_history, *services);
                     return StepResult::kContinue;
                   };
                 }});
  out.push_back({plugin_id::kRealtimePreferences, stage::kPreferencesInit, 10,
                 [](const PluginContext& ctx) { return ctx.input.contains(ctx_key::kTargetInfo); },
                 [](S services, const Json& params) -> PluginBody {
                   SplitConfig split = services->split;
                   split.k1 = params.value("k1", split.k1);
                   split.k2 = params.value("k2", split.k2);
                   AnonymizationPolicy policy = services->anonymization;
                   policy.enabled = params.value("anonymize", policy.enabled);
                   return [services, split, policy](PluginContext& ctx) {
                     auto info = ctx.input.at(ctx_key::kTargetInfo).get<std::vector<AttributeMap>>();
                     SplitConfig seeded = split;
                     if (ctx.input.contains("seed")) seeded.seed = ctx.input.at("seed").get<std::uint64_t>();
                     ctx.memory->real_time =
                         plugin3_realtime_preferences(info, seeded, policy, services->oracle.get());
                     return StepResult::kContinue;
                   };
                 }});
  out.push_back({plugin_id::kOpener, stage::kMessageHandling, 5,
                 [](const PluginContext& ctx) { return !ctx.last_message.has_value(); },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     ctx.response = opening_message(persona_of(ctx), *services);
                     return StepResult::kHandled;
                   };
                 }});
  out.push_back({plugin_id::kIntent, stage::kMessageHandling, 10,
                 [](const PluginContext& ctx) {
                   return ctx.last_message && ctx.last_message->role == Role::kCrs;
                 },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     ctx.intent = plugin4_intent(*ctx.last_message, *services);
                     return StepResult::kContinue;
                   };
                 }});
  out.push_back({plugin_id::kPersonalizedAsk, stage::kMessageHandling, 20,
                 [](const PluginContext& ctx) { return intent_is(ctx, IntentKind::kAsk); },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     auto result = plugin5_personalized_ask(*ctx.intent, ctx.memory->long_term,
                                                            ctx.memory->real_time,
                                                            ctx.last_message->text, *services);
                     if (!result.handled) return StepResult::kContinue;
                     ctx.response = std::move(result.response_text);
                     ctx.scratch["referenced_items"] = result.referenced_items;
                     return StepResult::kHandled;
                   };
                 }});
  out.push_back({plugin_id::kNonPersonalizedAsk, stage::kMessageHandling, 30,
                 [](const PluginContext& ctx) { return intent_is(ctx, IntentKind::kAsk); },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     ctx.response = plugin6_nonpersonalized_ask(*ctx.intent, ctx.memory->real_time,
                                                                ctx.last_message->text,
                                                                persona_of(ctx), *services);
                     return StepResult::kHandled;
                   };
                 }});
  out.push_back({plugin_id::kRecommendResponse, stage::kMessageHandling, 40,
                 [](const PluginContext& ctx) { return intent_is(ctx, IntentKind::kRecommend); },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     auto outcome = plugin7_recommend_response(*ctx.intent, *ctx.last_message,
                                                               ctx.memory->real_time, ctx.round,
                                                               persona_of(ctx), *services);
                     apply_activations(ctx.memory->real_time, outcome.activated_facets);
                     ctx.scratch[ctx_key::kAccepted] = outcome.accepted;
                     ctx.scratch[ctx_key::kActivated] = outcome.activated_facets;
                     ctx.response = std::move(outcome.response_text);
                     return StepResult::kHandled;
                   };
                 }});
  out.push_back({plugin_id::kChitChat, stage::kMessageHandling, 50,
                 [](const PluginContext& ctx) { return intent_is(ctx, IntentKind::kChitChat); },
                 [](S services, const Json&) -> PluginBody {
                   return [services](PluginContext& ctx) {
                     static const std::vector<Message> kEmpty;
                     ctx.response = plugin8_chitchat(*ctx.intent, ctx.memory->real_time,
                                                     ctx.transcript ? *ctx.transcript : kEmpty,
                                                     ctx.round, persona_of(ctx), *services);
                     return StepResult::kHandled;
                   };
                 }});
  return out;
}

}  // namespace

std::vector<RegistrationHandle> register_builtin_plugins(
    PluginManager& manager, std::shared_ptr<const SimulatorServices> services,
    const PipelineConfig* config) {
  if (!services) throw Error(ErrorCode::kPrecondition, "simulator services required");
  std::vector<RegistrationHandle> handles;
  const auto all = builtins();
  if (config != nullptr) {
    for (const auto& entry : config->plugins) {
      const bool known = std::any_of(all.begin(), all.end(),
                                     [&](const Builtin& b) { return entry.plugin_id == b.id; });
      if (!known) throw Error(ErrorCode::kConfig, "unknown plugin '" + entry.plugin_id + "'");
    }
  }
  for (const auto& b : all) {
    const PluginConfigEntry* entry = config != nullptr ? config->find(b.id) : nullptr;
    if (entry != nullptr && !entry->enabled) continue;
    PluginDescriptor descriptor{b.id, b.stage, b.priority, b.activation};
    if (entry != nullptr && entry->priority) descriptor.priority = *entry->priority;
    if (entry != nullptr && !entry->stage.empty() && entry->stage != b.stage.name) {
      throw Error(ErrorCode::kConfig, "plugin '" + entry->plugin_id + "' belongs to stage " +
                                          b.stage.name);
    }
    const Json params = entry != nullptr ? entry->params : Json::object();
    handles.push_back(manager.register_plugin(std::move(descriptor), b.make(services, params)));
  }
  return handles;
}

}  // namespace cshi
