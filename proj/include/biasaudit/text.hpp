#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace biasaudit {

std::string to_lower(std::string_view s);

// One span of the input text: either a word token or the separator text
// between words.  Concatenating all segments reproduces the input exactly.
struct Segment {
  std::string text;
  bool is_word = false;
};

// Splits on whitespace and punctuation.  A word is a maximal run of ASCII
// letters, digits or underscores, with apostrophes allowed between word
// characters ("she's" is one token).  The special markers "[MASK]" and
// "[BLANK]" are kept as single tokens.
std::vector<Segment> segment_text(std::string_view text);

// Lowercased word tokens of `text`, punctuation dropped.
std::vector<std::string> word_tokens(std::string_view text);

// True if `word` (lowercase) occurs as a whole token in `text`.
bool contains_word(std::string_view text, std::string_view word);

enum class CasePattern { lower, initial_cap, all_caps, other };

CasePattern case_pattern(std::string_view word);

// Applies the casing of an observed token to a lowercase replacement.
std::string apply_case(std::string_view lower_word, CasePattern pattern);

// Collapses runs of whitespace to single spaces and trims the ends.
std::string collapse_whitespace(std::string_view text);

inline constexpr const char* kMaskToken = "[MASK]";
inline constexpr const char* kBlankToken = "[BLANK]";
inline constexpr const char* kUnknownToken = "[UNK]";

}  // namespace biasaudit
