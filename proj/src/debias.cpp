#include "biasaudit/debias.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"
#include "biasaudit/text.hpp"

namespace biasaudit {

using nlohmann::json;

namespace {

constexpr const char* kSubspaceFormatName = "biasaudit-subspace";
constexpr int kSubspaceFormatVersion = 1;

}  // namespace

BiasSubspace compute_bias_subspace(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& definition_pairs, int k) {
  if (definition_pairs.empty())
    throw ValidationError("subspace estimation needs at least one definition pair");
  const Eigen::Index h = definition_pairs.front().first.size();
  if (k < 1 || k > static_cast<int>(h))
    throw ValidationError("subspace size k must lie in [1, hidden_size]");

  Eigen::MatrixXd centered(2 * static_cast<Eigen::Index>(definition_pairs.size()), h);
  Eigen::Index row = 0;
  for (const auto& [f, m] : definition_pairs) {
    if (f.size() != h || m.size() != h)
      throw ValidationError("definition pair vectors have inconsistent sizes");
    Eigen::VectorXd mu = 0.5 * (f + m);
    centered.row(row++) = (f - mu).transpose();
    centered.row(row++) = (m - mu).transpose();
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Eigen::VectorXd& sigma = svd.singularValues();
  if (sigma.size() < k || sigma[k - 1] == 0.0) {
    int achievable = 0;
    for (Eigen::Index i = 0; i < sigma.size(); ++i)
      if (sigma[i] > 0.0) ++achievable;
    throw ValidationError("definition pairs span only " + std::to_string(achievable) +
                          " directions; requested k=" + std::to_string(k));
  }

  BiasSubspace subspace;
  subspace.basis = svd.matrixV().leftCols(k);
  double total = sigma.array().square().sum();
  subspace.explained_variance = sigma.head(k).array().square() / total;
  return subspace;
}

Eigen::VectorXd sent_debias(const Eigen::VectorXd& vector, const BiasSubspace& subspace) {
  if (vector.size() != subspace.basis.rows())
    throw ValidationError("vector size does not match subspace hidden_size");
  return vector - subspace.basis * (subspace.basis.transpose() * vector);
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> equalize_pair(const Eigen::VectorXd& female,
                                                          const Eigen::VectorXd& male,
                                                          const BiasSubspace& subspace) {
  Eigen::VectorXd mu = 0.5 * (female + male);
  Eigen::VectorXd nu = sent_debias(mu, subspace);
  auto place = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd in_subspace = subspace.basis * (subspace.basis.transpose() * (v - mu));
    const double norm = in_subspace.norm();
    if (norm == 0.0) return nu;
    const double radius = std::sqrt(std::max(0.0, v.squaredNorm() - nu.squaredNorm()));
    return Eigen::VectorXd(nu + radius * in_subspace / norm);
  };
  return {place(female), place(male)};
}

void BiasSubspace::save(const std::filesystem::path& path) const {
  json doc;
  doc["format"] = kSubspaceFormatName;
  doc["version"] = kSubspaceFormatVersion;
  json basis_rows = json::array();
  for (Eigen::Index r = 0; r < basis.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < basis.cols(); ++c) row.push_back(basis(r, c));
    basis_rows.push_back(std::move(row));
  }
  doc["basis"] = std::move(basis_rows);
  json var = json::array();
  for (Eigen::Index i = 0; i < explained_variance.size(); ++i)
    var.push_back(explained_variance[i]);
  doc["explained_variance"] = std::move(var);
  atomic_write_text(path, doc.dump() + "\n");
}

BiasSubspace BiasSubspace::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("subspace file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kSubspaceFormatName)
    throw FormatError("subspace file " + path.string() + " lacks format marker '" +
                      kSubspaceFormatName + "'");
  if (doc.value("version", 0) != kSubspaceFormatVersion)
    throw FormatError("unsupported subspace version in " + path.string());
  BiasSubspace out;
  const json& rows = doc.at("basis");
  const auto r = static_cast<Eigen::Index>(rows.size());
  if (r == 0) throw FormatError("subspace basis is empty in " + path.string());
  const auto c = static_cast<Eigen::Index>(rows[0].size());
  out.basis.resize(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j)
      out.basis(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  const json& var = doc.at("explained_variance");
  out.explained_variance.resize(static_cast<Eigen::Index>(var.size()));
  for (std::size_t i = 0; i < var.size(); ++i)
    out.explained_variance[static_cast<Eigen::Index>(i)] = var[i].get<double>();
  return out;
}

BiasSubspace estimate_gender_subspace(const Model& model, const Lexicon& lexicon,
                                      const std::vector<std::string>& corpus_lines,
                                      const SentDebiasConfig& config, std::uint64_t seed,
                                      std::vector<std::string>* warnings) {
  std::vector<SentenceOccurrence> occurrences =
      harvest_sentences(corpus_lines, lexicon.attribute_words(), {}, config.cap, seed);
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> pairs;
  std::set<std::uint64_t> used_sentences;
  for (const SentenceOccurrence& occ : occurrences) {
    // Each sentence contributes one pair, however many attribute words it has.
    if (!used_sentences.insert(occ.sentence_id).second) continue;
    int swapped = 0;
    std::string counter = swap_gender_terms(occ.sentence, lexicon, false, &swapped);
    if (swapped == 0 || counter == occ.sentence) continue;
    pairs.emplace_back(model.pooled_representation(occ.sentence),
                       model.pooled_representation(counter));
  }
  if (pairs.empty())
    throw CoverageError("no corpus sentences produced counterfactual definition pairs");
  if (warnings)
    warnings->push_back("estimated gender subspace from " + std::to_string(pairs.size()) +
                        " sentence pairs");
  return compute_bias_subspace(pairs, config.components);
}

namespace {

class SentDebiasModel final : public Model {
 public:
  SentDebiasModel(ModelPtr base, BiasSubspace subspace)
      : base_(std::move(base)), subspace_(std::move(subspace)) {
    if (!base_) throw ValidationError("sent-debias wrapper needs a base model");
    if (subspace_.hidden_size() != base_->info().hidden_size)
      throw ValidationError("subspace hidden_size does not match the base model");
    info_ = base_->info();
    info_.identifier += "+sent-debias";
  }

  std::shared_ptr<const Vocabulary> vocabulary() const override { return base_->vocabulary(); }

  std::vector<Occurrence> embed_occurrences(
      const std::string& sentence, const std::string& word,
      std::vector<std::string>* warnings = nullptr) const override {
    std::vector<Occurrence> out = base_->embed_occurrences(sentence, word, warnings);
    for (Occurrence& occ : out) occ.vector = sent_debias(occ.vector, subspace_);
    return out;
  }

  Eigen::VectorXd pooled_representation(const std::string& text) const override {
    return sent_debias(base_->pooled_representation(text), subspace_);
  }

  Eigen::VectorXd masked_hidden_state(const std::string& template_text) const override {
    return sent_debias(base_->masked_hidden_state(template_text), subspace_);
  }

  VocabDistribution head_distribution(const Eigen::VectorXd& hidden) const override {
    return base_->head_distribution(hidden);
  }

 private:
  ModelPtr base_;
  BiasSubspace subspace_;
};

}  // namespace

ModelPtr apply_sent_debias(ModelPtr base, BiasSubspace subspace) {
  return std::make_shared<SentDebiasModel>(std::move(base), std::move(subspace));
}

namespace {

std::vector<int> state_indices(const ContextDebiasConfig& config, int num_states) {
  std::vector<int> out;
  if (config.layers.empty()) {
    for (int i = 0; i < num_states; ++i) out.push_back(i);
    return out;
  }
  for (int i : config.layers) {
    if (i < 0 || i >= num_states)
      throw ValidationError("layer index " + std::to_string(i) + " out of range");
    out.push_back(i);
  }
  return out;
}

const DifferentiableEncoder& as_encoder(const Model& model) {
  const auto* enc = dynamic_cast<const DifferentiableEncoder*>(&model);
  if (!enc)
    throw CapabilityError("model '" + model.info().identifier +
                          "' does not expose encoder gradients");
  return *enc;
}

}  // namespace

ContextDebiasData prepare_context_debias(const Model& model, const Lexicon& lexicon,
                                         const std::vector<std::string>& attribute_sentences,
                                         const std::vector<std::string>& stereotype_sentences) {
  const DifferentiableEncoder& encoder = as_encoder(model);
  std::shared_ptr<const Vocabulary> vocab = model.vocabulary();

  std::set<int> stereotype_token_ids;
  for (const std::string& w : lexicon.stereotype_words())
    if (std::optional<int> id = vocab->id(w)) stereotype_token_ids.insert(*id);
  std::set<int> attribute_token_ids;
  for (const std::string& w : lexicon.attribute_words())
    if (std::optional<int> id = vocab->id(w)) attribute_token_ids.insert(*id);
  if (stereotype_token_ids.empty() || attribute_token_ids.empty())
    throw CoverageError("lexicon words are missing from the model vocabulary");

  const auto max_len = static_cast<std::size_t>(model.info().max_sequence_length);
  ContextDebiasData data;
  for (const std::string& sentence : stereotype_sentences) {
    std::vector<int> ids = encoder.encode(sentence);
    if (ids.size() > max_len) ids.resize(max_len);
    std::vector<int> positions;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (stereotype_token_ids.count(ids[i])) positions.push_back(static_cast<int>(i));
    if (positions.empty()) continue;
    data.stereotype_ids.push_back(std::move(ids));
    data.stereotype_positions.push_back(std::move(positions));
  }
  if (data.stereotype_ids.empty())
    throw CoverageError("no stereotype sentences contain stereotype tokens");

  const int num_states = encoder.num_layers() + 1;
  data.attribute_vectors.by_state.resize(static_cast<std::size_t>(num_states));
  std::vector<std::map<std::string, int>> counts(static_cast<std::size_t>(num_states));
  for (const std::string& sentence : attribute_sentences) {
    std::vector<int> ids = encoder.encode(sentence);
    if (ids.size() > max_len) ids.resize(max_len);
    bool has_attribute = false;
    for (int id : ids)
      if (attribute_token_ids.count(id)) has_attribute = true;
    if (!has_attribute) continue;
    ForwardStates states = encoder.forward_states(ids);
    for (int s = 0; s < num_states; ++s) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!attribute_token_ids.count(ids[i])) continue;
        const std::string& word = vocab->token(ids[i]);
        auto& slot = data.attribute_vectors.by_state[static_cast<std::size_t>(s)][word];
        if (slot.size() == 0)
          slot = Eigen::VectorXd::Zero(states.states[static_cast<std::size_t>(s)].cols());
        slot += states.states[static_cast<std::size_t>(s)].row(static_cast<Eigen::Index>(i)).transpose();
        counts[static_cast<std::size_t>(s)][word] += 1;
      }
    }
    data.attribute_ids.push_back(std::move(ids));
    data.attribute_original_states.push_back(std::move(states));
  }
  if (data.attribute_ids.empty())
    throw CoverageError("no attribute sentences contain attribute tokens");
  for (int s = 0; s < num_states; ++s)
    for (auto& [word, vec] : data.attribute_vectors.by_state[static_cast<std::size_t>(s)])
      vec /= static_cast<double>(counts[static_cast<std::size_t>(s)].at(word));
  return data;
}

namespace {

double accumulate_context_debias(const DifferentiableEncoder& encoder,
                                 const ContextDebiasData& data,
                                 const ContextDebiasConfig& config,
                                 Eigen::VectorXd* gradient) {
  const int num_states = encoder.num_layers() + 1;
  const std::vector<int> states_used = state_indices(config, num_states);
  double loss = 0.0;

  for (std::size_t s = 0; s < data.stereotype_ids.size(); ++s) {
    const std::vector<int>& ids = data.stereotype_ids[s];
    ForwardStates states = encoder.forward_states(ids);
    std::vector<Eigen::MatrixXd> state_grads(static_cast<std::size_t>(num_states));
    for (int state : states_used) {
      const Eigen::MatrixXd& h = states.states[static_cast<std::size_t>(state)];
      const auto& vectors = data.attribute_vectors.by_state[static_cast<std::size_t>(state)];
      Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(h.rows(), h.cols());
      for (int pos : data.stereotype_positions[s]) {
        for (const auto& [word, v] : vectors) {
          const double inner = v.dot(h.row(pos).transpose());
          loss += config.alpha * inner * inner;
          if (gradient) grad.row(pos) += (2.0 * config.alpha * inner) * v.transpose();
        }
      }
      if (gradient) state_grads[static_cast<std::size_t>(state)] = std::move(grad);
    }
    if (gradient) *gradient += encoder.encoder_backward(ids, states, state_grads);
  }

  for (std::size_t s = 0; s < data.attribute_ids.size(); ++s) {
    const std::vector<int>& ids = data.attribute_ids[s];
    ForwardStates states = encoder.forward_states(ids);
    const ForwardStates& original = data.attribute_original_states[s];
    std::vector<Eigen::MatrixXd> state_grads(static_cast<std::size_t>(num_states));
    for (int state : states_used) {
      const Eigen::MatrixXd& h = states.states[static_cast<std::size_t>(state)];
      const Eigen::MatrixXd& h0 = original.states[static_cast<std::size_t>(state)];
      Eigen::MatrixXd diff = h - h0;
      loss += config.beta * diff.squaredNorm();
      if (gradient) state_grads[static_cast<std::size_t>(state)] = 2.0 * config.beta * diff;
    }
    if (gradient) *gradient += encoder.encoder_backward(ids, states, state_grads);
  }
  return loss;
}

}  // namespace

double context_debias_loss(const DifferentiableEncoder& encoder, const ContextDebiasData& data,
                           const ContextDebiasConfig& config) {
  return accumulate_context_debias(encoder, data, config, nullptr);
}

Eigen::VectorXd context_debias_gradient(const DifferentiableEncoder& encoder,
                                        const ContextDebiasData& data,
                                        const ContextDebiasConfig& config, double* loss_out) {
  Eigen::VectorXd gradient = Eigen::VectorXd::Zero(encoder.encoder_parameters().size());
  double loss = accumulate_context_debias(encoder, data, config, &gradient);
  if (loss_out) *loss_out = loss;
  return gradient;
}

ModelPtr run_context_debias(const Model& base, const Lexicon& lexicon,
                            const std::vector<std::string>& attribute_sentences,
                            const std::vector<std::string>& stereotype_sentences,
                            const ContextDebiasConfig& config,
                            const ContextDebiasSchedule& schedule, TrainingRecord* record) {
  if (schedule.epochs <= 0 || schedule.learning_rate <= 0.0)
    throw ValidationError("context-debias schedule must be positive");
  std::unique_ptr<Model> clone = base.clone_for_training();
  auto* encoder = dynamic_cast<DifferentiableEncoder*>(clone.get());
  if (!encoder)
    throw CapabilityError("model '" + base.info().identifier +
                          "' does not expose encoder gradients");

  // Attribute vectors and the drift reference both come from the pretrained
  // parameters, so they are prepared against the clone before any update.
  ContextDebiasData data =
      prepare_context_debias(*clone, lexicon, attribute_sentences, stereotype_sentences);

  double step = schedule.learning_rate;
  double loss = 0.0;
  Eigen::VectorXd gradient = context_debias_gradient(*encoder, data, config, &loss);
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double grad_norm2 = gradient.squaredNorm();
    if (grad_norm2 == 0.0) {
      if (record) {
        record->epoch_losses.push_back(loss);
        record->notes.push_back("gradient vanished at epoch " + std::to_string(epoch));
      }
      break;
    }
    Eigen::VectorXd params = encoder->encoder_parameters();
    bool accepted = false;
    for (int attempt = 0; attempt < schedule.max_backtracks; ++attempt) {
      encoder->set_encoder_parameters(params - step * gradient);
      double candidate = context_debias_loss(*encoder, data, config);
      if (candidate <= loss - 1e-4 * step * grad_norm2) {
        loss = candidate;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      encoder->set_encoder_parameters(params);
      if (record) {
        record->epoch_losses.push_back(loss);
        record->notes.push_back("line search stalled at epoch " + std::to_string(epoch));
      }
      break;
    }
    if (record) record->epoch_losses.push_back(loss);
    gradient = context_debias_gradient(*encoder, data, config);
    // Allow the step to grow back so one conservative epoch does not pin
    // later epochs to a tiny step.
    step = std::min(step * 2.0, schedule.learning_rate);
  }
  return ModelPtr(std::move(clone));
}

std::vector<std::string> generate_cda_corpus(const std::vector<std::string>& lines,
                                             const Lexicon& lexicon, bool include_names,
                                             int* swapped_lines) {
  std::vector<std::string> out;
  out.reserve(lines.size() * 2);
  int swapped_count = 0;
  for (const std::string& line : lines) out.push_back(line);
  for (const std::string& line : lines) {
    int swaps = 0;
    std::string counter = swap_gender_terms(line, lexicon, include_names, &swaps);
    if (swaps > 0 && counter != line) {
      out.push_back(std::move(counter));
      ++swapped_count;
    }
  }
  if (swapped_lines) *swapped_lines = swapped_count;
  return out;
}

ModelPtr cda_pretrain(const Model& base, const std::vector<std::string>& corpus_lines,
                      const Lexicon& lexicon, bool include_names, const MlmTrainConfig& config,
                      std::uint64_t seed, TrainingRecord* record) {
  if (config.epochs <= 0) throw ValidationError("cda pretraining needs at least one epoch");
  std::unique_ptr<Model> clone = base.clone_for_training();
  auto* trainable = dynamic_cast<TrainableMlm*>(clone.get());
  if (!trainable)
    throw CapabilityError("model '" + base.info().identifier +
                          "' does not support masked-language-model training");
  std::vector<std::string> augmented = generate_cda_corpus(corpus_lines, lexicon, include_names);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss = trainable->mlm_train_epoch(augmented, config,
                                             substream_seed(seed, "cda-epoch", epoch));
    if (record) record->epoch_losses.push_back(loss);
  }
  return ModelPtr(std::move(clone));
}

}  // namespace biasaudit
