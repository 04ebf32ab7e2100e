#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lavid/error.hpp"

namespace lavid {

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Lower-cases and folds typographic apostrophes so "I’m" matches "i'm".
inline std::string normalize_for_matching(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    // U+2019 RIGHT SINGLE QUOTATION MARK (E2 80 99) and U+2018 (E2 80 98)
    if (i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
        static_cast<unsigned char>(s[i + 1]) == 0x80 &&
        (static_cast<unsigned char>(s[i + 2]) == 0x99 || static_cast<unsigned char>(s[i + 2]) == 0x98)) {
      out += '\'';
      i += 2;
    } else {
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(s[i])));
    }
  }
  return out;
}

/// Returns the leading yes/no token after markdown, punctuation, list
/// enumerators ("1)") and answer labels ("Answer:") are skipped.
inline std::optional<bool> leading_verdict_token(std::string_view text) {
  const auto s = normalize_for_matching(text);
  std::size_t i = 0;
  auto skip_noise = [&] {
    while (i < s.size()) {
      const unsigned char c = static_cast<unsigned char>(s[i]);
      if (std::isspace(c) || std::string_view("*#_`>\"'([{-:.,;!~|").find(static_cast<char>(c)) != std::string_view::npos) {
        ++i;
      } else if (std::isdigit(c)) {
        // enumerators like "1)" or "1." only
        std::size_t j = i;
        while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        if (j < s.size() && (s[j] == ')' || s[j] == '.')) {
          i = j + 1;
        } else {
          return;
        }
      } else {
        return;
      }
    }
  };
  for (int label_skips = 0; label_skips < 3; ++label_skips) {
    skip_noise();
    std::size_t j = i;
    while (j < s.size() && std::isalpha(static_cast<unsigned char>(s[j]))) ++j;
    const std::string_view word(s.data() + i, j - i);
    if (word == "yes") return true;
    if (word == "no") return false;
    const bool label = word == "answer" || word == "response" || word == "verdict" || word == "final";
    if (!label) return std::nullopt;
    i = j;
  }
  return std::nullopt;
}

/// Phrase-list refusal detector. Patterns are matched as case-insensitive
/// substrings of the normalised response text.
class RefusalClassifier {
 public:
  RefusalClassifier() : patterns_(default_patterns()) {}
  explicit RefusalClassifier(std::vector<std::string> patterns) {
    for (auto& p : patterns) patterns_.push_back(normalize_for_matching(p));
  }

  /// One pattern per line; blank lines and lines starting with '#' are ignored.
  static RefusalClassifier from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigError, "cannot open refusal patterns " + path.string());
    std::vector<std::string> patterns;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
      if (line.empty() || line.front() == '#') continue;
      patterns.push_back(line);
    }
    return RefusalClassifier(std::move(patterns));
  }

  static std::vector<std::string> default_patterns() {
    return {"i'm sorry",          "i am sorry",         "i apologize",       "i can't help",
            "i cannot help",      "i can't assist",     "i cannot assist",   "i'm unable to",
            "i am unable to",     "unable to determine", "i can't determine", "i cannot determine",
            "i can't provide",    "i cannot provide",   "i'm not able to",   "i am not able to",
            "i can't analyze",    "i cannot analyze",   "i won't be able",   "not possible for me",
            "i must decline",     "i can't comply",     "i cannot comply",   "as an ai language model",
            "i can't make that determination"};
  }

  bool matches(std::string_view text) const {
    const auto s = normalize_for_matching(text);
    return std::any_of(patterns_.begin(), patterns_.end(),
                       [&](const std::string& p) { return s.find(p) != std::string::npos; });
  }

  /// A refusal is a matching phrase without a leading yes/no verdict.
  bool is_refusal(std::string_view text) const { return !leading_verdict_token(text) && matches(text); }

  const std::vector<std::string>& patterns() const noexcept { return patterns_; }

 private:
  std::vector<std::string> patterns_;
};

}  // namespace lavid
