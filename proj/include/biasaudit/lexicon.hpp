#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace biasaudit {

struct WordPair {
  std::string female;
  std::string male;
};

enum class WordRole {
  none,
  attribute_female,
  attribute_male,
  stereotype_female,
  stereotype_male,
  name_female,
  name_male,
};

inline bool is_attribute(WordRole r) {
  return r == WordRole::attribute_female || r == WordRole::attribute_male;
}
inline bool is_stereotype(WordRole r) {
  return r == WordRole::stereotype_female || r == WordRole::stereotype_male;
}
inline bool is_name(WordRole r) {
  return r == WordRole::name_female || r == WordRole::name_male;
}

// Gender word lists: definitional attribute pairs (W), stereotype target
// words (X) and optional first-name pairs.  All entries are lowercase single
// tokens; attribute pairs and name pairs are bijections, and the attribute,
// stereotype and name sets are mutually disjoint.
class Lexicon {
 public:
  static Lexicon load(const std::filesystem::path& path);
  static Lexicon from_parts(std::vector<WordPair> attribute_pairs,
                            std::vector<std::string> stereotypes_female,
                            std::vector<std::string> stereotypes_male,
                            std::vector<WordPair> name_pairs = {});

  const std::vector<WordPair>& attribute_pairs() const { return attribute_pairs_; }
  const std::vector<WordPair>& name_pairs() const { return name_pairs_; }
  const std::vector<std::string>& stereotypes_female() const { return stereotypes_female_; }
  const std::vector<std::string>& stereotypes_male() const { return stereotypes_male_; }

  std::vector<std::string> female_attribute_words() const;
  std::vector<std::string> male_attribute_words() const;
  // Female attribute words followed by male attribute words.
  std::vector<std::string> attribute_words() const;
  // Female stereotypes followed by male stereotypes.
  std::vector<std::string> stereotype_words() const;

  WordRole role(const std::string& lower_word) const;

  // Counterfactual counterpart of an attribute term (or name, if enabled).
  std::optional<std::string> counterfactual(const std::string& lower_word,
                                            bool include_names = false) const;

  void save(const std::filesystem::path& path) const;

 private:
  Lexicon() = default;
  void build_index();
  void validate() const;

  std::vector<WordPair> attribute_pairs_;
  std::vector<WordPair> name_pairs_;
  std::vector<std::string> stereotypes_female_;
  std::vector<std::string> stereotypes_male_;
  std::unordered_map<std::string, WordRole> roles_;
  std::unordered_map<std::string, std::string> counterparts_;
};

// Replaces every attribute term (and, optionally, every name) in `text` with
// its counterfactual counterpart, preserving capitalization.  Stereotype
// words are left untouched.  `swapped_count` receives the number of replaced
// tokens when non-null.
std::string swap_gender_terms(const std::string& text, const Lexicon& lexicon,
                              bool include_names = true, int* swapped_count = nullptr);

// Train/test partition of the attribute pairs.  Splitting happens at the
// pair level so a word and its counterpart always land on the same side.
struct AttributeSplit {
  std::vector<WordPair> train_pairs;
  std::vector<WordPair> test_pairs;
  std::uint64_t seed = 0;
  double train_fraction = 0.0;

  std::vector<std::string> train_words() const;
  std::vector<std::string> test_words() const;
};

AttributeSplit split_attribute_pairs(const Lexicon& lexicon, double train_fraction,
                                     std::uint64_t seed);

// The word lists shipped with the toolkit.
Lexicon default_lexicon();

}  // namespace biasaudit
