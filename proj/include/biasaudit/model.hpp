#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace biasaudit {

// Lexical (maskable) token inventory of a model, in id order.  Marker tokens
// such as [MASK] and [UNK] are not part of the lexical vocabulary.
class Vocabulary {
 public:
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct ModelInfo {
  std::string identifier;
  int hidden_size = 0;
  int max_sequence_length = 0;
};

// One occurrence of a word in a sentence: token position plus the final
// layer contextual vector at that position.
struct Occurrence {
  int position = 0;
  Eigen::VectorXd vector;
};

// Probability distribution over a model's lexical vocabulary at a mask slot.
struct VocabDistribution {
  std::shared_ptr<const Vocabulary> vocab;
  Eigen::VectorXd probs;

  // Probability of `token`, zero if the token is not in the vocabulary.
  double prob(const std::string& token) const;
  std::map<std::string, double> as_map() const;
};

// Model adapter.  Everything downstream of this interface is model-agnostic;
// wiring in a new model family means implementing these operations once.
class Model {
 public:
  virtual ~Model() = default;

  const ModelInfo& info() const { return info_; }

  virtual std::shared_ptr<const Vocabulary> vocabulary() const = 0;

  // True if `word` maps to a single vocabulary entry.  Words that would
  // decompose into multiple pieces are excluded from word-level metrics.
  bool is_single_token(const std::string& word) const {
    return vocabulary()->contains(word);
  }

  // Contextual vectors for every whole-token occurrence of `word` (lowercase)
  // in `sentence`.  Inputs longer than the model maximum are truncated, with
  // a note appended to `warnings` when provided.
  virtual std::vector<Occurrence> embed_occurrences(
      const std::string& sentence, const std::string& word,
      std::vector<std::string>* warnings = nullptr) const = 0;

  // Mean of the final-layer vectors over all tokens.
  virtual Eigen::VectorXd pooled_representation(const std::string& text) const = 0;

  // Distribution over the lexical vocabulary at the single [MASK] slot of
  // `template_text`.  [BLANK] marks additional masked-out slots that are not
  // queried.  Zero or multiple [MASK] tokens raise ValidationError.
  virtual VocabDistribution masked_distribution(const std::string& template_text) const;

  // Final hidden state at the [MASK] slot, before the language-model head.
  // Exposed so post-hoc debiasing can transform it; masked_distribution is
  // equivalent to head_distribution(masked_hidden_state(t)).
  virtual Eigen::VectorXd masked_hidden_state(const std::string& template_text) const;
  virtual VocabDistribution head_distribution(const Eigen::VectorXd& hidden) const;

  // Deep copy whose parameters can be updated by training procedures.
  // Raises CapabilityError for models without trainable parameters.
  virtual std::unique_ptr<Model> clone_for_training() const;

 protected:
  ModelInfo info_;
};

using ModelPtr = std::shared_ptr<const Model>;

// Per-token hidden states of every layer, including the embedding layer:
// states[l] has one row per token, states.size() == num_layers + 1.
struct ForwardStates {
  std::vector<Eigen::MatrixXd> states;
};

// Gradient protocol for models whose encoder exposes differentiable
// per-layer states.  Training procedures drive models through this interface
// only, so they stay independent of any concrete architecture.
class DifferentiableEncoder {
 public:
  virtual ~DifferentiableEncoder() = default;

  virtual int num_layers() const = 0;
  virtual std::vector<int> encode(const std::string& sentence) const = 0;
  virtual ForwardStates forward_states(const std::vector<int>& token_ids) const = 0;
  virtual Eigen::VectorXd encoder_parameters() const = 0;
  virtual void set_encoder_parameters(const Eigen::VectorXd& flat) = 0;
  // dLoss/dparameters for the given per-layer state gradients (entries may
  // be empty matrices, meaning zero).
  virtual Eigen::VectorXd encoder_backward(
      const std::vector<int>& token_ids, const ForwardStates& states,
      const std::vector<Eigen::MatrixXd>& state_grads) const = 0;
};

struct MlmTrainConfig {
  int epochs = 5;
  double learning_rate = 0.05;
  double mask_probability = 0.15;
};

// Models that support masked-language-model pretraining on raw text.
class TrainableMlm {
 public:
  virtual ~TrainableMlm() = default;

  // One pass over `lines` with random token masking; updates parameters in
  // place and returns the mean masked-token cross-entropy.
  virtual double mlm_train_epoch(const std::vector<std::string>& lines,
                                 const MlmTrainConfig& config, std::uint64_t seed) = 0;
};

struct HeadTrainConfig {
  int epochs = 4;
  double learning_rate = 2e-5;
  int batch_size = 32;
};

// Multinomial logistic-regression head over fixed feature vectors, trained
// with minibatch Adam.
class SoftmaxHead {
 public:
  SoftmaxHead(int input_dim, int num_classes, std::uint64_t seed);

  int input_dim() const { return static_cast<int>(weight_.cols()); }
  int num_classes() const { return static_cast<int>(weight_.rows()); }

  // Returns the mean cross-entropy over the last epoch.
  double train(const Eigen::MatrixXd& features, const std::vector<int>& labels,
               const HeadTrainConfig& config, std::uint64_t seed);

  Eigen::VectorXd predict_proba(const Eigen::VectorXd& feature) const;
  int predict(const Eigen::VectorXd& feature) const;

 private:
  Eigen::MatrixXd weight_;
  Eigen::VectorXd bias_;
};

// Maps model identifiers like "file:models/toy.json" to loaded models.
class ModelRegistry {
 public:
  using Loader = std::function<ModelPtr(const std::string& locator)>;

  static ModelRegistry& instance();

  void register_scheme(const std::string& scheme, Loader loader);
  std::vector<std::string> schemes() const;

  // Resolves "scheme:locator" identifiers; a bare existing file path is
  // treated as "file:<path>".
  ModelPtr resolve(const std::string& identifier) const;

 private:
  ModelRegistry();
  std::map<std::string, Loader> loaders_;
};

inline ModelPtr resolve_model(const std::string& identifier) {
  return ModelRegistry::instance().resolve(identifier);
}

}  // namespace biasaudit
