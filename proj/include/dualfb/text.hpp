#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dualfb {

inline bool is_word_char(unsigned char c) {
  // Bytes >= 0x80 (multi-byte UTF-8) are treated as word characters.
  return std::isalnum(c) || c >= 0x80;
}

/// Lowercase and split into tokens. Runs of word characters form one token,
/// every punctuation character is its own token, whitespace only separates.
inline std::vector<std::string> normalize_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (is_word_char(c)) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      if (!std::isspace(c)) {
        tokens.push_back(std::string(1, static_cast<char>(c)));
      }
    }
  }
  if (!current.empty()) {
    tokens.push_back(std::move(current));
  }
  return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

/// Canonical single-spaced lowercase form of a string.
inline std::string normalize_join(std::string_view text) {
  return join_tokens(normalize_tokens(text));
}

/// Start positions of every (possibly overlapping) token-boundary match of
/// `needle` inside `haystack`. An empty needle never matches.
inline std::vector<std::size_t> find_token_matches(
    const std::vector<std::string>& haystack,
    const std::vector<std::string>& needle) {
  std::vector<std::size_t> positions;
  if (needle.empty() || haystack.size() < needle.size()) return positions;
  for (std::size_t start = 0; start + needle.size() <= haystack.size(); ++start) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (haystack[start + j] != needle[j]) {
        match = false;
        break;
      }
    }
    if (match) positions.push_back(start);
  }
  return positions;
}

inline bool contains_tokens(const std::vector<std::string>& haystack,
                            const std::vector<std::string>& needle) {
  return !find_token_matches(haystack, needle).empty();
}

}  // namespace dualfb
