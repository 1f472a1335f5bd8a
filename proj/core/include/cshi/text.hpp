#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cshi {

// Canonical title form used for leakage detection and success matching:
// lower-case, trailing "(YYYY)" removed, punctuation stripped, whitespace
// collapsed, leading English articles dropped. Idempotent.
std::string normalize_title(std::string_view raw);

// Token form of free text: lower-case alphanumeric tokens joined by single
// spaces. Apostrophes join their neighbours ("Schindler's" -> "schindlers").
std::string normalize_text(std::string_view raw);

// True iff normalize_text(text) contains `normalized_title` aligned on token
// boundaries. Single-token titles shorter than 3 characters only match when
// they are the entire message.
bool contains_title(std::string_view text, std::string_view normalized_title);

struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
};

// Raw-text byte ranges of every token-aligned occurrence of the title.
std::vector<ByteSpan> find_title_spans(std::string_view text,
                                       std::string_view normalized_title);

// Replaces every occurrence of the title with `replacement`.
std::string redact_title(std::string_view text, std::string_view normalized_title,
                         std::string_view replacement = "[that movie]");

struct CalendarDate {
  int year = 0;
  int month = 0;
  int day = 0;
};

// Accepts "June 1, 2012", "Jun 1 2012", "1 June 2012", "2012-06-01".
std::optional<CalendarDate> parse_calendar_date(std::string_view text);

// Accepts "144", "144 min", "144 minutes", "2h 24m", "2 h 24 min".
std::optional<int> parse_runtime_minutes(std::string_view text);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace cshi
