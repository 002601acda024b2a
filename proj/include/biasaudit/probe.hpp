#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/lexicon.hpp"

namespace biasaudit {

struct ProbeConfig {
  int epochs = 300;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

// Binary logistic gender probe over contextual occurrence vectors.  The
// weight vector has hidden_size + 1 entries, the last being the bias term;
// score() returns the predicted probability that a vector is female-coded.
class ProbeModel {
 public:
  ProbeModel() = default;
  explicit ProbeModel(Eigen::VectorXd weights);

  int hidden_size() const { return static_cast<int>(weights_.size()) - 1; }
  const Eigen::VectorXd& weights() const { return weights_; }

  double score(const Eigen::VectorXd& embedding) const;
  bool predicts_female(const Eigen::VectorXd& embedding) const {
    return score(embedding) >= 0.5;
  }

  // Probe weights reuse the embedding-bank float32 array format.
  void save(const std::filesystem::path& path) const;
  static ProbeModel load(const std::filesystem::path& path);

 private:
  Eigen::VectorXd weights_;
};

struct ProbeTrainDiagnostics {
  std::vector<double> epoch_losses;
  int occurrences = 0;
};

// Trains the probe on every occurrence vector of the training attribute
// pairs (female side labeled 1, male side 0) by full-batch gradient descent.
ProbeModel train_probe(const EmbeddingBank& attribute_bank,
                       const std::vector<WordPair>& train_pairs, const ProbeConfig& config,
                       ProbeTrainDiagnostics* diagnostics = nullptr);

struct GenderEvalResult {
  // Word-level accuracy: majority vote over each word's occurrences.
  double word_accuracy = 0.0;
  // Occurrence-level accuracy over the same words.
  double occurrence_accuracy = 0.0;
  int words_scored = 0;
  std::vector<std::string> warnings;
};

GenderEvalResult evaluate_gender_prediction(const ProbeModel& probe,
                                            const EmbeddingBank& attribute_bank,
                                            const std::vector<WordPair>& test_pairs);

struct WordBiasScore {
  double mean_score = 0.0;
  double female_vote_fraction = 0.0;
  bool predicted_female = false;
};

struct BiasEvalResult {
  // Fraction of stereotype words whose majority-vote gender matches their
  // stereotype list.
  double bias_accuracy = 0.0;
  // Mean |score - 0.5| over all stereotype occurrences.
  double mean_confidence = 0.0;
  std::map<std::string, WordBiasScore> word_scores;
  std::vector<std::string> tie_words;
  std::vector<std::string> warnings;
};

BiasEvalResult evaluate_stereotypes(const ProbeModel& probe,
                                    const EmbeddingBank& stereotype_bank,
                                    const Lexicon& lexicon);

// Headline stereotype numbers, for callers that need just one of them.
double bias_accuracy(const ProbeModel& probe, const EmbeddingBank& stereotype_bank,
                     const Lexicon& lexicon);
double mean_bias_confidence(const ProbeModel& probe,
                            const EmbeddingBank& stereotype_bank, const Lexicon& lexicon);

// Two-sided one-sample Student t-test of `sample` against mean `mu0`.  A
// zero-variance sample is degenerate: p is 1 when the common value equals
// mu0 and 0 otherwise.
double t_test_p_value(const std::vector<double>& sample, double mu0,
                      bool* degenerate = nullptr);

struct RandomizationResult {
  double p_value = 1.0;
  double original_accuracy = 0.0;
  std::vector<double> random_accuracies;
  bool degenerate = false;
  std::vector<std::string> notes;
};

// Label-permutation significance test: the trained probe's per-word
// predictions stay fixed while the stereotype labeling is reshuffled
// `iterations` times (side sizes preserved).  The original accuracy is scored
// as a single draw from the null sample — t = (observed - null mean) / null
// stddev with iterations-1 degrees of freedom — so a signal-free bank yields
// a non-significant p for most seeds while a planted signal many null stddevs
// out can reach p-values far below the 1/(iterations+1) floor of a purely
// empirical permutation count.
RandomizationResult randomization_test(const ProbeModel& probe,
                                       const EmbeddingBank& stereotype_bank,
                                       const Lexicon& lexicon, int iterations,
                                       std::uint64_t seed);

struct ProbeReport {
  double gender_accuracy = 0.0;
  double gender_accuracy_occurrences = 0.0;
  double bias_accuracy = 0.0;
  double mean_bias_confidence = 0.0;
  double p_value = 1.0;
  int train_pair_count = 0;
  int test_pair_count = 0;
  std::map<std::string, WordBiasScore> stereotype_word_scores;
  std::vector<std::string> warnings;
};

// Full probing pipeline: split attribute pairs, train, evaluate held-out
// gender prediction, stereotype leakage, and the significance test.
ProbeReport run_probe(const EmbeddingBank& attribute_bank,
                      const EmbeddingBank& stereotype_bank, const Lexicon& lexicon,
                      double train_fraction, const ProbeConfig& config,
                      int randomization_iterations, std::uint64_t seed);

}  // namespace biasaudit
