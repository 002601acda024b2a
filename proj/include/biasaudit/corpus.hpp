#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "biasaudit/model.hpp"

namespace biasaudit {

// One harvested sentence for one query word.  `sentence_id` is the zero-based
// line index in the source corpus, so banks built from the same corpus agree
// on ids.
struct SentenceOccurrence {
  std::uint64_t sentence_id = 0;
  std::string word;
  std::string sentence;
};

struct HarvestReport {
  std::map<std::string, int> sentence_counts;
  std::vector<std::string> missing_words;
  std::vector<std::string> low_coverage_words;
  int excluded_sentences = 0;
};

inline constexpr int kLowCoverageThreshold = 5;

std::vector<std::string> load_corpus(const std::filesystem::path& path);

std::string corpus_content_hash(const std::vector<std::string>& lines);

// Collects, per query word, the sentences containing it as a whole token
// while containing no word from `exclusion`.  When a word matches more than
// `cap` sentences, a uniform sample of `cap` of them is kept, drawn from a
// per-word substream of `seed` so each word's sample is stable regardless of
// the other query words.
std::vector<SentenceOccurrence> harvest_sentences(
    const std::vector<std::string>& lines, const std::vector<std::string>& words,
    const std::set<std::string>& exclusion, int cap, std::uint64_t seed,
    HarvestReport* report = nullptr);

// Raises ValidationError if any harvested sentence contains an excluded word.
void verify_exclusion(const std::vector<SentenceOccurrence>& occurrences,
                      const std::set<std::string>& exclusion);

struct BankMetadata {
  std::string model_id;
  int hidden_size = 0;
  std::string corpus_hash;
  int cap = 0;
  std::uint64_t seed = 0;
};

struct BankOccurrence {
  std::uint64_t sentence_id = 0;
  int position = 0;
  Eigen::VectorXd vector;
};

// Contextual occurrence vectors grouped by word, with enough provenance to
// tell two banks apart.  Persisted as a JSON index next to a flat
// little-endian float32 array.
class EmbeddingBank {
 public:
  EmbeddingBank() = default;

  static EmbeddingBank build(const Model& model,
                             const std::vector<SentenceOccurrence>& occurrences,
                             BankMetadata metadata,
                             std::vector<std::string>* warnings = nullptr);

  const BankMetadata& metadata() const { return metadata_; }
  int hidden_size() const { return metadata_.hidden_size; }

  std::vector<std::string> words() const;
  bool has(const std::string& word) const { return entries_.count(word) > 0; }
  int count(const std::string& word) const;
  const std::vector<BankOccurrence>& occurrences(const std::string& word) const;

  // Words from `required` that have no vectors in the bank.
  std::vector<std::string> missing_from(const std::vector<std::string>& required) const;

  // Mean occurrence vector; the word-level representative.
  Eigen::VectorXd mean_vector(const std::string& word) const;

  void add(const std::string& word, BankOccurrence occurrence);

  // Combines banks over disjoint word sets with identical provenance.
  static EmbeddingBank merge(const EmbeddingBank& a, const EmbeddingBank& b);

  void save(const std::filesystem::path& index_path) const;
  static EmbeddingBank load(const std::filesystem::path& index_path);

  explicit EmbeddingBank(BankMetadata metadata) : metadata_(std::move(metadata)) {}

 private:
  BankMetadata metadata_;
  std::map<std::string, std::vector<BankOccurrence>> entries_;
};

}  // namespace biasaudit
