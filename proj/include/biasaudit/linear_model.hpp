#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "biasaudit/lexicon.hpp"
#include "biasaudit/model.hpp"

namespace biasaudit {

// Fully linear contextual masked language model.
//
// Token states start at their embedding rows; each layer adds a mixed
// context vector, h^l_i = h^{l-1}_i + W_l * mean_{j != i} h^{l-1}_j, and an
// untied linear head maps the mask-slot state to logits over the lexical
// vocabulary.  Every operation is linear up to the final softmax, so
// gradients are exact and cheap, which makes the model a convenient
// deterministic stand-in for transformer encoders in tests, demos and
// desk-scale audits.
class LinearContextModel final : public Model,
                                 public DifferentiableEncoder,
                                 public TrainableMlm {
 public:
  LinearContextModel(std::string identifier, std::vector<std::string> lexical_tokens,
                     Eigen::MatrixXd embeddings, std::vector<Eigen::MatrixXd> mixing,
                     Eigen::MatrixXd head_weight, Eigen::VectorXd head_bias,
                     int max_sequence_length = 128);

  // Model interface.
  std::shared_ptr<const Vocabulary> vocabulary() const override { return vocab_; }
  std::vector<Occurrence> embed_occurrences(
      const std::string& sentence, const std::string& word,
      std::vector<std::string>* warnings = nullptr) const override;
  Eigen::VectorXd pooled_representation(const std::string& text) const override;
  Eigen::VectorXd masked_hidden_state(const std::string& template_text) const override;
  VocabDistribution head_distribution(const Eigen::VectorXd& hidden) const override;
  std::unique_ptr<Model> clone_for_training() const override;

  // DifferentiableEncoder interface.
  int num_layers() const override { return static_cast<int>(mixing_.size()); }
  std::vector<int> encode(const std::string& sentence) const override;
  ForwardStates forward_states(const std::vector<int>& token_ids) const override;
  Eigen::VectorXd encoder_parameters() const override;
  void set_encoder_parameters(const Eigen::VectorXd& flat) override;
  Eigen::VectorXd encoder_backward(
      const std::vector<int>& token_ids, const ForwardStates& states,
      const std::vector<Eigen::MatrixXd>& state_grads) const override;

  // TrainableMlm interface.
  double mlm_train_epoch(const std::vector<std::string>& lines, const MlmTrainConfig& config,
                         std::uint64_t seed) override;

  int mask_id() const { return vocab_->size(); }
  int unknown_id() const { return vocab_->size() + 1; }

  void save(const std::filesystem::path& path) const;
  static std::shared_ptr<LinearContextModel> load_file(const std::filesystem::path& path);

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  // One row per token id; the last two rows are [MASK] and [UNK].
  Eigen::MatrixXd embeddings_;
  std::vector<Eigen::MatrixXd> mixing_;
  Eigen::MatrixXd head_weight_;
  Eigen::VectorXd head_bias_;
};

// Construction recipe for synthetic models with a known, planted gender
// geometry.  Attribute and stereotype embeddings are displaced along a
// primary gender direction and a weaker secondary direction, so debiasing
// procedures have structure to find and residual structure to miss.
struct PlantedModelConfig {
  int hidden_size = 16;
  int num_layers = 1;
  int max_sequence_length = 128;
  double gender_scale = 1.0;
  double attribute_leak = 0.0;
  double stereotype_scale = 0.6;
  double stereotype_leak = 0.25;
  double name_scale = 0.8;
  double context_scale = 0.05;
  double noise_scale = 0.4;
  std::uint64_t seed = 0;
};

std::shared_ptr<LinearContextModel> make_planted_model(
    const Lexicon& lexicon, const std::vector<std::string>& extra_vocab,
    const PlantedModelConfig& config);

}  // namespace biasaudit
