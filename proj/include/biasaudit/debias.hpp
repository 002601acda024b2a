#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/lexicon.hpp"
#include "biasaudit/model.hpp"

namespace biasaudit {

struct TrainingRecord {
  std::vector<double> epoch_losses;
  std::vector<std::string> notes;
};

// Orthonormal basis of the estimated bias subspace, with the fraction of
// variance each component explains.
struct BiasSubspace {
  Eigen::MatrixXd basis;  // hidden_size x k
  Eigen::VectorXd explained_variance;

  int k() const { return static_cast<int>(basis.cols()); }
  int hidden_size() const { return static_cast<int>(basis.rows()); }

  void save(const std::filesystem::path& path) const;
  static BiasSubspace load(const std::filesystem::path& path);
};

// Principal components of the pair-centered vectors: each definition pair
// (f, m) contributes f - mu and m - mu with mu the pair mean, so the stacked
// matrix has exact zero mean and its top singular directions span the
// gender-difference geometry.
BiasSubspace compute_bias_subspace(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& definition_pairs, int k);

// Neutralization: removes the subspace component, h - V V^T h.
Eigen::VectorXd sent_debias(const Eigen::VectorXd& vector, const BiasSubspace& subspace);

// Equalization: re-places a counterpart pair symmetrically about their
// neutralized mean, preserving each vector's norm where possible.
std::pair<Eigen::VectorXd, Eigen::VectorXd> equalize_pair(const Eigen::VectorXd& female,
                                                          const Eigen::VectorXd& male,
                                                          const BiasSubspace& subspace);

struct SentDebiasConfig {
  int components = 1;
  // Sentences harvested per attribute word when estimating the subspace.
  int cap = 200;
  bool equalize = false;
};

// Estimates the gender subspace from pooled representations of corpus
// sentences containing attribute words, paired with their counterfactually
// swapped versions.
BiasSubspace estimate_gender_subspace(const Model& model, const Lexicon& lexicon,
                                      const std::vector<std::string>& corpus_lines,
                                      const SentDebiasConfig& config, std::uint64_t seed,
                                      std::vector<std::string>* warnings = nullptr);

// Post-hoc wrapper that projects the bias subspace out of every
// representation the base model produces: occurrence vectors, pooled
// representations, and the mask-slot hidden state feeding the
// language-model head.
ModelPtr apply_sent_debias(ModelPtr base, BiasSubspace subspace);

struct ContextDebiasConfig {
  double alpha = 1.0;
  double beta = 1.0;
  // State indices the losses apply to (0 is the embedding layer); empty
  // means every state.
  std::vector<int> layers;
};

struct ContextDebiasSchedule {
  int epochs = 10;
  double learning_rate = 0.5;
  int max_backtracks = 40;
};

// Fixed per-layer attribute direction vectors v_i(a): the average state
// vector of each attribute word across its sentences, computed once from
// the pretrained parameters.
struct AttributeVectors {
  // by_state[i] maps attribute word -> average vector at state i.
  std::vector<std::map<std::string, Eigen::VectorXd>> by_state;
};

// Sentences prepared for the context-debias objective: token ids, the
// positions the inner-product loss applies to, the frozen attribute
// vectors, and the frozen original states for the regularizer.
struct ContextDebiasData {
  std::vector<std::vector<int>> stereotype_ids;
  std::vector<std::vector<int>> stereotype_positions;
  std::vector<std::vector<int>> attribute_ids;
  std::vector<ForwardStates> attribute_original_states;
  AttributeVectors attribute_vectors;
};

ContextDebiasData prepare_context_debias(const Model& model,
                                         const Lexicon& lexicon,
                                         const std::vector<std::string>& attribute_sentences,
                                         const std::vector<std::string>& stereotype_sentences);

// alpha * sum of squared inner products between stereotype states and the
// attribute vectors, plus beta * squared drift of attribute-sentence states
// from their pretrained values.
double context_debias_loss(const DifferentiableEncoder& encoder, const ContextDebiasData& data,
                           const ContextDebiasConfig& config);

// Exact gradient of context_debias_loss with respect to the encoder
// parameters; `loss_out` receives the loss at the current parameters.
Eigen::VectorXd context_debias_gradient(const DifferentiableEncoder& encoder,
                                        const ContextDebiasData& data,
                                        const ContextDebiasConfig& config,
                                        double* loss_out = nullptr);

// Full-batch gradient descent with backtracking line search on a trainable
// clone of `base`; epoch losses are non-increasing by construction.
ModelPtr run_context_debias(const Model& base, const Lexicon& lexicon,
                            const std::vector<std::string>& attribute_sentences,
                            const std::vector<std::string>& stereotype_sentences,
                            const ContextDebiasConfig& config,
                            const ContextDebiasSchedule& schedule,
                            TrainingRecord* record = nullptr);

// Counterfactually augmented corpus: every original line, followed by the
// swapped version of each line the swap actually changes.
std::vector<std::string> generate_cda_corpus(const std::vector<std::string>& lines,
                                             const Lexicon& lexicon, bool include_names = true,
                                             int* swapped_lines = nullptr);

// Continues masked-language-model pretraining of a trainable clone of
// `base` on the counterfactually augmented corpus.
ModelPtr cda_pretrain(const Model& base, const std::vector<std::string>& corpus_lines,
                      const Lexicon& lexicon, bool include_names, const MlmTrainConfig& config,
                      std::uint64_t seed, TrainingRecord* record = nullptr);

}  // namespace biasaudit
