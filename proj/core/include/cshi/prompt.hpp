#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "cshi/domain.hpp"

namespace cshi {

// Text with {{name}} placeholders.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string text);

  // Every placeholder must have a value; missing ones raise kConfig.
  std::string render(const std::map<std::string, std::string>& values) const;

  const std::set<std::string>& placeholders() const { return placeholders_; }
  bool has(const std::string& name) const { return placeholders_.count(name) > 0; }
  const std::string& text() const { return text_; }

 private:
  std::string text_;
  std::set<std::string> placeholders_;
};

struct PromptPair {
  PromptTemplate system;
  PromptTemplate user;
};

// Named prompt pairs keyed by backend tag. The built-in set covers every
// LLM-calling component; a JSON file {tag: {system, user}} overrides entries.
class PromptLibrary {
 public:
  static PromptLibrary defaults();
  static PromptLibrary from_file(const std::filesystem::path& path);

  void set(const std::string& tag, PromptPair pair);
  const PromptPair& get(const std::string& tag) const;
  bool contains(const std::string& tag) const { return prompts_.count(tag) > 0; }

  Json to_json() const;

 private:
  std::map<std::string, PromptPair> prompts_;
};

}  // namespace cshi
