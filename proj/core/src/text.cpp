#include "cshi/text.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>

namespace cshi {
namespace {

struct Token {
  std::string text;
  std::size_t begin = 0;
  std::size_t end = 0;
};

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

// Length of an apostrophe at `i` (ASCII or U+2019), 0 if none.
std::size_t apostrophe_at(std::string_view s, std::size_t i) {
  if (s[i] == '\'') return 1;
  if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
      static_cast<unsigned char>(s[i + 1]) == 0x80 &&
      static_cast<unsigned char>(s[i + 2]) == 0x99) {
    return 3;
  }
  return 0;
}

std::vector<Token> tokenize(std::string_view s) {
  std::vector<Token> tokens;
  Token current;
  bool open = false;
  std::size_t i = 0;
  while (i < s.size()) {
    if (std::size_t n = apostrophe_at(s, i); n > 0) {
      // Joins the surrounding word without breaking it.
      i += n;
      if (open) current.end = i;
      continue;
    }
    const auto c = static_cast<unsigned char>(s[i]);
    if (is_word_byte(c)) {
      if (!open) {
        current = Token{{}, i, i};
        open = true;
      }
      current.text.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
      current.end = i + 1;
    } else if (open) {
      tokens.push_back(std::move(current));
      open = false;
    }
    ++i;
  }
  if (open) tokens.push_back(std::move(current));
  return tokens;
}

std::vector<std::string> split_spaces(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_article(const std::string& token) {
  return token == "the" || token == "a" || token == "an";
}

std::string_view strip_trailing_year(std::string_view s) {
  // "(dddd)" at the very end, optionally preceded by whitespace.
  if (s.size() < 6 || s.back() != ')') return s;
  const std::size_t open = s.size() - 6;
  if (s[open] != '(') return s;
  for (std::size_t k = open + 1; k < open + 5; ++k) {
    if (std::isdigit(static_cast<unsigned char>(s[k])) == 0) return s;
  }
  std::string_view rest = s.substr(0, open);
  while (!rest.empty() && std::isspace(static_cast<unsigned char>(rest.back())) != 0) {
    rest.remove_suffix(1);
  }
  return rest.empty() ? s : rest;
}

// Start indices (in token units) of every match of `title` in `tokens`.
std::vector<std::size_t> match_positions(const std::vector<Token>& tokens,
                                         const std::vector<std::string>& title) {
  std::vector<std::size_t> hits;
  if (title.empty() || tokens.size() < title.size()) return hits;
  if (title.size() == 1 && title.front().size() < 3) {
    if (tokens.size() == 1 && tokens.front().text == title.front()) hits.push_back(0);
    return hits;
  }
  for (std::size_t i = 0; i + title.size() <= tokens.size(); ++i) {
    bool same = true;
    for (std::size_t k = 0; k < title.size() && same; ++k) {
      same = tokens[i + k].text == title[k];
    }
    if (same) hits.push_back(i);
  }
  return hits;
}

constexpr std::array<std::string_view, 12> kMonths = {
    "january", "february", "march",     "april",   "may",      "june",
    "july",    "august",   "september", "october", "november", "december"};

std::optional<int> month_from_name(std::string_view token) {
  if (token.size() < 3) return std::nullopt;
  for (std::size_t m = 0; m < kMonths.size(); ++m) {
    const auto& name = kMonths[m];
    if (token == name || (token.size() <= name.size() && name.substr(0, token.size()) == token)) {
      return static_cast<int>(m) + 1;
    }
  }
  return std::nullopt;
}

std::optional<int> to_int(std::string_view token) {
  int value = 0;
  auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  if (ec != std::errc() || ptr != token.data() + token.size()) return std::nullopt;
  return value;
}

bool all_digits(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), [](unsigned char c) {
    return std::isdigit(c) != 0;
  });
}

int days_in_month(int year, int month) {
  static constexpr std::array<int, 12> kDays = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
  const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
  return month == 2 && leap ? 29 : kDays[static_cast<std::size_t>(month - 1)];
}

std::optional<CalendarDate> checked(int y, int m, int d) {
  if (y < 1000 || y > 9999 || m < 1 || m > 12 || d < 1 || d > days_in_month(y, m)) {
    return std::nullopt;
  }
  return CalendarDate{y, m, d};
}

}  // namespace

std::string to_lower(std::string_view text) {
  std::string out(text);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b])) != 0) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1])) != 0) --e;
  return std::string(text.substr(b, e - b));
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i > 0) out += sep;
    out += parts[i];
  }
  return out;
}

std::string normalize_title(std::string_view raw) {
  const std::string trimmed = trim(raw);
  auto tokens = tokenize(strip_trailing_year(trimmed));
  std::size_t first = 0;
  while (tokens.size() - first > 1 && is_article(tokens[first].text)) ++first;
  std::string out;
  for (std::size_t i = first; i < tokens.size(); ++i) {
    if (!out.empty()) out.push_back(' ');
    out += tokens[i].text;
  }
  return out;
}

std::string normalize_text(std::string_view raw) {
  std::string out;
  for (const auto& token : tokenize(raw)) {
    if (!out.empty()) out.push_back(' ');
    out += token.text;
  }
  return out;
}

bool contains_title(std::string_view text, std::string_view normalized_title) {
  return !match_positions(tokenize(text), split_spaces(normalized_title)).empty();
}

std::vector<ByteSpan> find_title_spans(std::string_view text,
                                       std::string_view normalized_title) {
  const auto tokens = tokenize(text);
  const auto title = split_spaces(normalized_title);
  std::vector<ByteSpan> spans;
  for (std::size_t start : match_positions(tokens, title)) {
    spans.push_back({tokens[start].begin, tokens[start + title.size() - 1].end});
  }
  return spans;
}

std::string redact_title(std::string_view text, std::string_view normalized_title,
                         std::string_view replacement) {
  const auto spans = find_title_spans(text, normalized_title);
  std::string out;
  std::size_t cursor = 0;
  for (const auto& span : spans) {
    if (span.begin < cursor) continue;  // overlapping repeat, already covered
    out.append(text.substr(cursor, span.begin - cursor));
    out.append(replacement);
    cursor = span.end;
    // Swallow a trailing release year so "Title (2012)" leaves nothing behind.
    std::size_t i = cursor;
    while (i < text.size() && text[i] == ' ') ++i;
    if (i + 6 <= text.size() && text[i] == '(' && text[i + 5] == ')' &&
        std::all_of(text.begin() + i + 1, text.begin() + i + 5,
                    [](char c) { return c >= '0' && c <= '9'; })) {
      cursor = i + 6;
    }
  }
  out.append(text.substr(cursor));
  return out;
}

std::optional<CalendarDate> parse_calendar_date(std::string_view text) {
  const auto tokens = tokenize(text);
  if (tokens.size() != 3) return std::nullopt;
  const auto& a = tokens[0].text;
  const auto& b = tokens[1].text;
  const auto& c = tokens[2].text;
  if (all_digits(a) && all_digits(b) && all_digits(c)) {
    if (a.size() == 4) return checked(*to_int(a), *to_int(b), *to_int(c));  // ISO
    if (c.size() == 4) return checked(*to_int(c), *to_int(a), *to_int(b));  // US m/d/y
    return std::nullopt;
  }
  if (auto m = month_from_name(a); m && all_digits(b) && all_digits(c) && c.size() == 4) {
    return checked(*to_int(c), *m, *to_int(b));
  }
  if (auto m = month_from_name(b); m && all_digits(a) && all_digits(c) && c.size() == 4) {
    return checked(*to_int(c), *m, *to_int(a));
  }
  return std::nullopt;
}

std::optional<int> parse_runtime_minutes(std::string_view text) {
  // Split "2h24m" style runs into number / unit tokens.
  std::vector<std::string> parts;
  for (const auto& token : tokenize(text)) {
    std::size_t i = 0;
    const auto& t = token.text;
    while (i < t.size()) {
      std::size_t j = i;
      const bool digit = std::isdigit(static_cast<unsigned char>(t[i])) != 0;
      while (j < t.size() && (std::isdigit(static_cast<unsigned char>(t[j])) != 0) == digit) ++j;
      parts.push_back(t.substr(i, j - i));
      i = j;
    }
  }
  if (parts.empty()) return std::nullopt;
  long total = 0;
  std::size_t i = 0;
  while (i < parts.size()) {
    if (!all_digits(parts[i])) return std::nullopt;
    auto value = to_int(parts[i]);
    if (!value) return std::nullopt;
    int factor = 1;
    if (i + 1 < parts.size() && !all_digits(parts[i + 1])) {
      const auto& unit = parts[i + 1];
      if (unit == "h" || unit == "hr" || unit == "hrs" || unit == "hour" || unit == "hours") {
        factor = 60;
      } else if (unit != "m" && unit != "min" && unit != "mins" && unit != "minute" &&
                 unit != "minutes") {
        return std::nullopt;
      }
      i += 2;
    } else {
      i += 1;
    }
    total += static_cast<long>(*value) * factor;
  }
  if (total <= 0 || total > 100000) return std::nullopt;
  return static_cast<int>(total);
}

}  // namespace cshi
