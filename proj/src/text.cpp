#include "biasaudit/text.hpp"

#include <cctype>

namespace biasaudit {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

// Matches "[MASK]" or "[BLANK]" starting at `pos`.
std::size_t special_length(std::string_view text, std::size_t pos) {
  for (std::string_view marker : {std::string_view(kMaskToken), std::string_view(kBlankToken)}) {
    if (text.substr(pos, marker.size()) == marker) return marker.size();
  }
  return 0;
}

}  // namespace

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<Segment> segment_text(std::string_view text) {
  std::vector<Segment> out;
  std::size_t i = 0;
  auto push = [&out](std::string_view piece, bool word) {
    if (piece.empty()) return;
    if (!out.empty() && out.back().is_word == word && !word) {
      out.back().text.append(piece);
    } else {
      out.push_back({std::string(piece), word});
    }
  };
  while (i < text.size()) {
    if (std::size_t len = special_length(text, i); len > 0) {
      push(text.substr(i, len), true);
      i += len;
      continue;
    }
    if (is_word_char(text[i])) {
      std::size_t j = i + 1;
      while (j < text.size() &&
             (is_word_char(text[j]) ||
              (text[j] == '\'' && j + 1 < text.size() && is_word_char(text[j + 1])))) {
        ++j;
      }
      push(text.substr(i, j - i), true);
      i = j;
    } else {
      std::size_t j = i + 1;
      while (j < text.size() && !is_word_char(text[j]) && special_length(text, j) == 0) ++j;
      push(text.substr(i, j - i), false);
      i = j;
    }
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  for (const Segment& seg : segment_text(text)) {
    if (!seg.is_word) continue;
    if (seg.text == kMaskToken || seg.text == kBlankToken) {
      out.push_back(seg.text);
    } else {
      out.push_back(to_lower(seg.text));
    }
  }
  return out;
}

bool contains_word(std::string_view text, std::string_view word) {
  for (const Segment& seg : segment_text(text)) {
    if (seg.is_word && to_lower(seg.text) == word) return true;
  }
  return false;
}

CasePattern case_pattern(std::string_view word) {
  if (word.empty()) return CasePattern::lower;
  bool any_alpha = false;
  bool all_upper = true;
  bool all_lower = true;
  for (char c : word) {
    if (!std::isalpha(static_cast<unsigned char>(c))) continue;
    any_alpha = true;
    if (std::islower(static_cast<unsigned char>(c))) all_upper = false;
    if (std::isupper(static_cast<unsigned char>(c))) all_lower = false;
  }
  if (!any_alpha || all_lower) return CasePattern::lower;
  if (all_upper && word.size() > 1) return CasePattern::all_caps;
  if (std::isupper(static_cast<unsigned char>(word[0]))) {
    std::string_view rest = word.substr(1);
    bool rest_lower = true;
    for (char c : rest) {
      if (std::isalpha(static_cast<unsigned char>(c)) && std::isupper(static_cast<unsigned char>(c)))
        rest_lower = false;
    }
    if (rest_lower) return word.size() == 1 ? CasePattern::all_caps : CasePattern::initial_cap;
  }
  return CasePattern::other;
}

std::string apply_case(std::string_view lower_word, CasePattern pattern) {
  std::string out(lower_word);
  switch (pattern) {
    case CasePattern::lower:
    case CasePattern::other:
      break;
    case CasePattern::initial_cap:
      if (!out.empty()) out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
      break;
    case CasePattern::all_caps:
      for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      break;
  }
  return out;
}

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool in_space = true;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_space = true;
    } else {
      if (in_space && !out.empty()) out.push_back(' ');
      out.push_back(c);
      in_space = false;
    }
  }
  return out;
}

}  // namespace biasaudit
