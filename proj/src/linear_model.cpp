#include "biasaudit/linear_model.hpp"

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

constexpr const char* kModelFormatName = "biasaudit-linear-model";
constexpr int kModelFormatVersion = 1;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& rows, const std::string& what) {
  if (!rows.is_array() || rows.empty())
    throw FormatError("model field '" + what + "' must be a non-empty array of rows");
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows[0].size());
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c)
      throw FormatError("ragged rows in model field '" + what + "'");
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return m;
}

}  // namespace

LinearContextModel::LinearContextModel(std::string identifier,
                                       std::vector<std::string> lexical_tokens,
                                       Eigen::MatrixXd embeddings,
                                       std::vector<Eigen::MatrixXd> mixing,
                                       Eigen::MatrixXd head_weight, Eigen::VectorXd head_bias,
                                       int max_sequence_length)
    : vocab_(std::make_shared<Vocabulary>(Vocabulary::from_tokens(std::move(lexical_tokens)))),
      embeddings_(std::move(embeddings)),
      mixing_(std::move(mixing)),
      head_weight_(std::move(head_weight)),
      head_bias_(std::move(head_bias)) {
  const int v = vocab_->size();
  if (v == 0) throw ValidationError("linear model vocabulary is empty");
  const Eigen::Index h = embeddings_.cols();
  if (h <= 0 || embeddings_.rows() != v + 2)
    throw ValidationError("embedding matrix must have one row per token plus [MASK] and [UNK]");
  for (const Eigen::MatrixXd& w : mixing_)
    if (w.rows() != h || w.cols() != h)
      throw ValidationError("mixing matrices must be hidden_size x hidden_size");
  if (head_weight_.rows() != v || head_weight_.cols() != h || head_bias_.size() != v)
    throw ValidationError("head must map hidden states to lexical vocabulary logits");
  if (max_sequence_length < 2)
    throw ValidationError("max_sequence_length must be at least 2");
  info_.identifier = std::move(identifier);
  info_.hidden_size = static_cast<int>(h);
  info_.max_sequence_length = max_sequence_length;
}

std::vector<int> LinearContextModel::encode(const std::string& sentence) const {
  std::vector<int> ids;
  for (const std::string& tok : word_tokens(sentence)) {
    if (tok == kMaskToken || tok == kBlankToken) {
      ids.push_back(mask_id());
    } else if (std::optional<int> id = vocab_->id(tok)) {
      ids.push_back(*id);
    } else {
      ids.push_back(unknown_id());
    }
  }
  return ids;
}

ForwardStates LinearContextModel::forward_states(const std::vector<int>& token_ids) const {
  const auto n = static_cast<Eigen::Index>(token_ids.size());
  const int h = info_.hidden_size;
  ForwardStates fs;
  fs.states.reserve(mixing_.size() + 1);
  Eigen::MatrixXd current(n, h);
  for (Eigen::Index i = 0; i < n; ++i) {
    int id = token_ids[static_cast<std::size_t>(i)];
    if (id < 0 || id >= embeddings_.rows())
      throw ValidationError("token id out of range for linear model");
    current.row(i) = embeddings_.row(id);
  }
  fs.states.push_back(current);
  for (const Eigen::MatrixXd& w : mixing_) {
    Eigen::MatrixXd next = current;
    if (n > 1) {
      Eigen::RowVectorXd total = current.colwise().sum();
      for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::RowVectorXd context = (total - current.row(i)) / static_cast<double>(n - 1);
        next.row(i) += context * w.transpose();
      }
    }
    current = std::move(next);
    fs.states.push_back(current);
  }
  return fs;
}

std::vector<Occurrence> LinearContextModel::embed_occurrences(
    const std::string& sentence, const std::string& word,
    std::vector<std::string>* warnings) const {
  std::vector<std::string> tokens = word_tokens(sentence);
  const auto limit = static_cast<std::size_t>(info_.max_sequence_length);
  if (tokens.size() > limit) {
    if (warnings)
      warnings->push_back("truncated sentence of " + std::to_string(tokens.size()) +
                          " tokens to " + std::to_string(limit));
    tokens.resize(limit);
  }
  std::vector<int> positions;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i] == word) positions.push_back(static_cast<int>(i));
  std::vector<Occurrence> out;
  if (positions.empty()) return out;

  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const std::string& tok : tokens) {
    if (tok == kMaskToken || tok == kBlankToken) {
      ids.push_back(mask_id());
    } else if (std::optional<int> id = vocab_->id(tok)) {
      ids.push_back(*id);
    } else {
      ids.push_back(unknown_id());
    }
  }
  ForwardStates fs = forward_states(ids);
  const Eigen::MatrixXd& final_state = fs.states.back();
  out.reserve(positions.size());
  for (int pos : positions) out.push_back({pos, final_state.row(pos).transpose()});
  return out;
}

Eigen::VectorXd LinearContextModel::pooled_representation(const std::string& text) const {
  std::vector<int> ids = encode(text);
  if (ids.size() > static_cast<std::size_t>(info_.max_sequence_length))
    ids.resize(static_cast<std::size_t>(info_.max_sequence_length));
  if (ids.empty()) return Eigen::VectorXd::Zero(info_.hidden_size);
  ForwardStates fs = forward_states(ids);
  return fs.states.back().colwise().mean().transpose();
}

Eigen::VectorXd LinearContextModel::masked_hidden_state(const std::string& template_text) const {
  std::vector<std::string> tokens = word_tokens(template_text);
  if (tokens.size() > static_cast<std::size_t>(info_.max_sequence_length))
    tokens.resize(static_cast<std::size_t>(info_.max_sequence_length));
  std::vector<int> ids;
  int mask_pos = -1;
  int mask_count = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& tok = tokens[i];
    if (tok == kMaskToken) {
      ++mask_count;
      mask_pos = static_cast<int>(i);
      ids.push_back(mask_id());
    } else if (tok == kBlankToken) {
      ids.push_back(mask_id());
    } else if (std::optional<int> id = vocab_->id(tok)) {
      ids.push_back(*id);
    } else {
      ids.push_back(unknown_id());
    }
  }
  if (mask_count != 1)
    throw ValidationError("template must contain exactly one " + std::string(kMaskToken) +
                          " slot, found " + std::to_string(mask_count));
  ForwardStates fs = forward_states(ids);
  return fs.states.back().row(mask_pos).transpose();
}

VocabDistribution LinearContextModel::head_distribution(const Eigen::VectorXd& hidden) const {
  if (hidden.size() != info_.hidden_size)
    throw ValidationError("hidden state size does not match model hidden_size");
  Eigen::VectorXd logits = head_weight_ * hidden + head_bias_;
  Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd ex = shifted.array().exp();
  VocabDistribution dist;
  dist.vocab = vocab_;
  dist.probs = ex / ex.sum();
  return dist;
}

std::unique_ptr<Model> LinearContextModel::clone_for_training() const {
  return std::make_unique<LinearContextModel>(info_.identifier, vocab_->tokens(), embeddings_,
                                              mixing_, head_weight_, head_bias_,
                                              info_.max_sequence_length);
}

Eigen::VectorXd LinearContextModel::encoder_parameters() const {
  const Eigen::Index h = info_.hidden_size;
  const Eigen::Index rows = embeddings_.rows();
  Eigen::VectorXd flat(rows * h + static_cast<Eigen::Index>(mixing_.size()) * h * h);
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < h; ++c) flat[k++] = embeddings_(r, c);
  for (const Eigen::MatrixXd& w : mixing_)
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < h; ++c) flat[k++] = w(r, c);
  return flat;
}

void LinearContextModel::set_encoder_parameters(const Eigen::VectorXd& flat) {
  const Eigen::Index h = info_.hidden_size;
  const Eigen::Index rows = embeddings_.rows();
  const Eigen::Index expected = rows * h + static_cast<Eigen::Index>(mixing_.size()) * h * h;
  if (flat.size() != expected)
    throw ValidationError("encoder parameter vector has wrong length");
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < h; ++c) embeddings_(r, c) = flat[k++];
  for (Eigen::MatrixXd& w : mixing_)
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < h; ++c) w(r, c) = flat[k++];
}

Eigen::VectorXd LinearContextModel::encoder_backward(
    const std::vector<int>& token_ids, const ForwardStates& states,
    const std::vector<Eigen::MatrixXd>& state_grads) const {
  const auto n = static_cast<Eigen::Index>(token_ids.size());
  const Eigen::Index h = info_.hidden_size;
  const auto num_states = mixing_.size() + 1;
  if (states.states.size() != num_states || state_grads.size() != num_states)
    throw ValidationError("state gradient count does not match model depth");

  Eigen::MatrixXd grad_embeddings = Eigen::MatrixXd::Zero(embeddings_.rows(), h);
  std::vector<Eigen::MatrixXd> grad_mixing;
  grad_mixing.reserve(mixing_.size());
  for (const Eigen::MatrixXd& w : mixing_) grad_mixing.push_back(Eigen::MatrixXd::Zero(w.rows(), w.cols()));

  auto grad_at = [&](std::size_t l) -> Eigen::MatrixXd {
    const Eigen::MatrixXd& g = state_grads[l];
    if (g.size() == 0) return Eigen::MatrixXd::Zero(n, h);
    if (g.rows() != n || g.cols() != h)
      throw ValidationError("state gradient has wrong shape");
    return g;
  };

  Eigen::MatrixXd adjoint = grad_at(num_states - 1);
  for (std::size_t l = mixing_.size(); l-- > 0;) {
    const Eigen::MatrixXd& prev = states.states[l];
    const Eigen::MatrixXd& w = mixing_[l];
    Eigen::MatrixXd next_adjoint = adjoint;
    if (n > 1) {
      Eigen::RowVectorXd total = prev.colwise().sum();
      Eigen::MatrixXd contexts(n, h);
      for (Eigen::Index i = 0; i < n; ++i)
        contexts.row(i) = (total - prev.row(i)) / static_cast<double>(n - 1);
      grad_mixing[l].noalias() += adjoint.transpose() * contexts;

      Eigen::MatrixXd back = adjoint * w;
      Eigen::RowVectorXd back_total = back.colwise().sum();
      for (Eigen::Index i = 0; i < n; ++i)
        next_adjoint.row(i) += (back_total - back.row(i)) / static_cast<double>(n - 1);
    }
    adjoint = next_adjoint + grad_at(l);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    grad_embeddings.row(token_ids[static_cast<std::size_t>(i)]) += adjoint.row(i);

  Eigen::VectorXd flat(encoder_parameters().size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < grad_embeddings.rows(); ++r)
    for (Eigen::Index c = 0; c < h; ++c) flat[k++] = grad_embeddings(r, c);
  for (const Eigen::MatrixXd& gw : grad_mixing)
    for (Eigen::Index r = 0; r < h; ++r)
      for (Eigen::Index c = 0; c < h; ++c) flat[k++] = gw(r, c);
  return flat;
}

double LinearContextModel::mlm_train_epoch(const std::vector<std::string>& lines,
                                           const MlmTrainConfig& config, std::uint64_t seed) {
  if (!(config.mask_probability > 0.0 && config.mask_probability < 1.0))
    throw ValidationError("mask_probability must lie strictly between 0 and 1");
  if (config.learning_rate <= 0.0) throw ValidationError("learning_rate must be positive");

  Rng rng = make_rng(seed);
  std::vector<std::size_t> order(lines.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  double total_loss = 0.0;
  std::size_t counted = 0;
  for (std::size_t idx : order) {
    std::vector<int> ids = encode(lines[idx]);
    if (ids.size() > static_cast<std::size_t>(info_.max_sequence_length))
      ids.resize(static_cast<std::size_t>(info_.max_sequence_length));
    std::vector<int> lexical_positions;
    for (std::size_t i = 0; i < ids.size(); ++i)
      if (ids[i] < vocab_->size()) lexical_positions.push_back(static_cast<int>(i));
    if (lexical_positions.empty()) continue;

    std::vector<int> masked;
    for (int pos : lexical_positions)
      if (coin(rng) < config.mask_probability) masked.push_back(pos);
    if (masked.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, lexical_positions.size() - 1);
      masked.push_back(lexical_positions[pick(rng)]);
    }

    std::vector<int> targets;
    std::vector<int> inputs = ids;
    for (int pos : masked) {
      targets.push_back(ids[static_cast<std::size_t>(pos)]);
      inputs[static_cast<std::size_t>(pos)] = mask_id();
    }

    ForwardStates fs = forward_states(inputs);
    const Eigen::MatrixXd& final_state = fs.states.back();
    const double scale = 1.0 / static_cast<double>(masked.size());

    Eigen::MatrixXd grad_head_w = Eigen::MatrixXd::Zero(head_weight_.rows(), head_weight_.cols());
    Eigen::VectorXd grad_head_b = Eigen::VectorXd::Zero(head_bias_.size());
    std::vector<Eigen::MatrixXd> state_grads(fs.states.size());
    Eigen::MatrixXd final_grad =
        Eigen::MatrixXd::Zero(final_state.rows(), final_state.cols());

    double loss = 0.0;
    for (std::size_t k = 0; k < masked.size(); ++k) {
      int pos = masked[k];
      Eigen::VectorXd hstate = final_state.row(pos).transpose();
      Eigen::VectorXd logits = head_weight_ * hstate + head_bias_;
      Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
      Eigen::VectorXd probs = shifted.array().exp();
      probs /= probs.sum();
      loss += -std::log(std::max(probs[targets[k]], 1e-300)) * scale;
      probs[targets[k]] -= 1.0;
      probs *= scale;
      grad_head_w.noalias() += probs * hstate.transpose();
      grad_head_b += probs;
      final_grad.row(pos) += (head_weight_.transpose() * probs).transpose();
    }
    state_grads.back() = final_grad;
    Eigen::VectorXd grad_encoder = encoder_backward(inputs, fs, state_grads);

    Eigen::VectorXd params = encoder_parameters();
    params -= config.learning_rate * grad_encoder;
    set_encoder_parameters(params);
    head_weight_ -= config.learning_rate * grad_head_w;
    head_bias_ -= config.learning_rate * grad_head_b;

    if (!std::isfinite(loss))
      throw TrainingError("masked-language-model training diverged (non-finite loss)");
    total_loss += loss;
    ++counted;
  }
  if (counted == 0) throw ValidationError("training corpus has no maskable tokens");
  return total_loss / static_cast<double>(counted);
}

void LinearContextModel::save(const std::filesystem::path& path) const {
  json doc;
  doc["format"] = kModelFormatName;
  doc["version"] = kModelFormatVersion;
  doc["identifier"] = info_.identifier;
  doc["hidden_size"] = info_.hidden_size;
  doc["max_sequence_length"] = info_.max_sequence_length;
  doc["vocabulary"] = vocab_->tokens();
  doc["embeddings"] = matrix_to_json(embeddings_);
  json layers = json::array();
  for (const Eigen::MatrixXd& w : mixing_) layers.push_back(matrix_to_json(w));
  doc["mixing"] = std::move(layers);
  doc["head_weight"] = matrix_to_json(head_weight_);
  json bias = json::array();
  for (Eigen::Index i = 0; i < head_bias_.size(); ++i) bias.push_back(head_bias_[i]);
  doc["head_bias"] = std::move(bias);
  atomic_write_text(path, doc.dump() + "\n");
}

std::shared_ptr<LinearContextModel> LinearContextModel::load_file(
    const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("model file " + path.string() + " is not valid JSON: " + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kModelFormatName)
    throw FormatError("model file " + path.string() + " lacks format marker '" +
                      kModelFormatName + "'");
  if (doc.value("version", 0) != kModelFormatVersion)
    throw FormatError("unsupported model version in " + path.string());
  try {
    std::vector<Eigen::MatrixXd> mixing;
    for (const json& layer : doc.at("mixing")) mixing.push_back(matrix_from_json(layer, "mixing"));
    const json& bias_json = doc.at("head_bias");
    Eigen::VectorXd bias(bias_json.size());
    for (std::size_t i = 0; i < bias_json.size(); ++i)
      bias[static_cast<Eigen::Index>(i)] = bias_json[i].get<double>();
    return std::make_shared<LinearContextModel>(
        doc.value("identifier", "file:" + path.string()),
        doc.at("vocabulary").get<std::vector<std::string>>(),
        matrix_from_json(doc.at("embeddings"), "embeddings"), std::move(mixing),
        matrix_from_json(doc.at("head_weight"), "head_weight"), std::move(bias),
        doc.value("max_sequence_length", 128));
  } catch (const json::exception& e) {
    throw FormatError("model file " + path.string() + " is malformed: " + e.what());
  }
}

std::shared_ptr<LinearContextModel> make_planted_model(
    const Lexicon& lexicon, const std::vector<std::string>& extra_vocab,
    const PlantedModelConfig& config) {
  if (config.hidden_size < 2) throw ValidationError("planted model needs hidden_size >= 2");
  if (config.num_layers < 0) throw ValidationError("num_layers must be non-negative");

  std::vector<std::string> tokens;
  std::set<std::string> seen;
  auto add = [&](const std::string& w) {
    if (seen.insert(w).second) tokens.push_back(w);
  };
  for (const WordPair& p : lexicon.attribute_pairs()) {
    add(p.female);
    add(p.male);
  }
  for (const std::string& w : lexicon.stereotype_words()) add(w);
  for (const WordPair& p : lexicon.name_pairs()) {
    add(p.female);
    add(p.male);
  }
  for (const std::string& w : extra_vocab) add(to_lower(w));
  for (const char* w : {"the", "a", "an", "is", "was", "are", "were", "will", "be",
                        "being", "been", "person", "people", "they", "them", "their",
                        "and", "or", "to", "of", "in", "at", "on", "with", "for",
                        "as", "that", "this", "very", "new", "good", "great", "young",
                        "old", "works", "worked", "working", "likes", "liked", "loves",
                        "enjoys", "plays", "played", "makes", "made", "goes", "went",
                        "sees", "saw", "says", "said", "job", "day", "life", "time",
                        "team", "who", "always", "often", "never", "really"}) {
    add(w);
  }

  const int h = config.hidden_size;
  const int v = static_cast<int>(tokens.size());
  Rng rng = make_rng(mix64(config.seed ^ fnv1a64("planted-model")));
  std::normal_distribution<double> gauss(0.0, 1.0);

  auto random_unit = [&] {
    Eigen::VectorXd u(h);
    for (int i = 0; i < h; ++i) u[i] = gauss(rng);
    return Eigen::VectorXd(u / u.norm());
  };
  Eigen::VectorXd g = random_unit();
  Eigen::VectorXd g2 = random_unit();
  g2 -= g2.dot(g) * g;
  g2.normalize();

  const double noise_sd = config.noise_scale / std::sqrt(static_cast<double>(h));
  Eigen::MatrixXd embeddings(v + 2, h);
  for (Eigen::Index r = 0; r < embeddings.rows(); ++r)
    for (int c = 0; c < h; ++c) embeddings(r, c) = noise_sd * gauss(rng);

  auto displace = [&](const std::string& word, double sign, double primary, double secondary) {
    std::optional<int> id;
    for (int i = 0; i < v; ++i)
      if (tokens[static_cast<std::size_t>(i)] == word) {
        id = i;
        break;
      }
    embeddings.row(*id) += sign * (primary * g + secondary * g2).transpose();
  };
  for (const WordPair& p : lexicon.attribute_pairs()) {
    displace(p.female, +1.0, config.gender_scale, config.attribute_leak);
    displace(p.male, -1.0, config.gender_scale, config.attribute_leak);
  }
  for (const std::string& w : lexicon.stereotypes_female())
    displace(w, +1.0, config.stereotype_scale, config.stereotype_leak);
  for (const std::string& w : lexicon.stereotypes_male())
    displace(w, -1.0, config.stereotype_scale, config.stereotype_leak);
  for (const WordPair& p : lexicon.name_pairs()) {
    displace(p.female, +1.0, config.name_scale, 0.0);
    displace(p.male, -1.0, config.name_scale, 0.0);
  }

  std::vector<Eigen::MatrixXd> mixing;
  const double mix_sd = config.context_scale / std::sqrt(static_cast<double>(h));
  for (int l = 0; l < config.num_layers; ++l) {
    Eigen::MatrixXd w(h, h);
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < h; ++c) w(r, c) = mix_sd * gauss(rng);
    mixing.push_back(std::move(w));
  }

  Eigen::MatrixXd head_weight = embeddings.topRows(v);
  Eigen::VectorXd head_bias = Eigen::VectorXd::Zero(v);
  return std::make_shared<LinearContextModel>("planted", std::move(tokens),
                                              std::move(embeddings), std::move(mixing),
                                              std::move(head_weight), std::move(head_bias),
                                              config.max_sequence_length);
}

}  // namespace biasaudit
