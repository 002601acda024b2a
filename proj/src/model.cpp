#include "biasaudit/model.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "biasaudit/errors.hpp"
#include "biasaudit/linear_model.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.ids_.reserve(v.tokens_.size());
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.ids_.emplace(v.tokens_[i], static_cast<int>(i));
    if (!inserted) throw ValidationError("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  return v;
}

std::optional<int> Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

double VocabDistribution::prob(const std::string& token) const {
  std::optional<int> id = vocab->id(token);
  return id ? probs[*id] : 0.0;
}

std::map<std::string, double> VocabDistribution::as_map() const {
  std::map<std::string, double> out;
  for (int i = 0; i < vocab->size(); ++i) out[vocab->token(i)] = probs[i];
  return out;
}

VocabDistribution Model::masked_distribution(const std::string& template_text) const {
  return head_distribution(masked_hidden_state(template_text));
}

Eigen::VectorXd Model::masked_hidden_state(const std::string&) const {
  throw CapabilityError("model '" + info_.identifier +
                        "' does not expose mask-slot hidden states");
}

VocabDistribution Model::head_distribution(const Eigen::VectorXd&) const {
  throw CapabilityError("model '" + info_.identifier +
                        "' does not expose the language-model head");
}

std::unique_ptr<Model> Model::clone_for_training() const {
  throw CapabilityError("model '" + info_.identifier + "' has no trainable parameters");
}

SoftmaxHead::SoftmaxHead(int input_dim, int num_classes, std::uint64_t seed) {
  if (input_dim <= 0 || num_classes < 2)
    throw ValidationError("softmax head needs input_dim >= 1 and num_classes >= 2");
  Rng rng = make_rng(seed);
  std::normal_distribution<double> dist(0.0, 0.02);
  weight_ = Eigen::MatrixXd::NullaryExpr(num_classes, input_dim, [&] { return dist(rng); });
  bias_ = Eigen::VectorXd::Zero(num_classes);
}

namespace {

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
  Eigen::VectorXd shifted = logits.array() - logits.maxCoeff();
  Eigen::VectorXd ex = shifted.array().exp();
  return ex / ex.sum();
}

}  // namespace

double SoftmaxHead::train(const Eigen::MatrixXd& features, const std::vector<int>& labels,
                          const HeadTrainConfig& config, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (n == 0) throw ValidationError("softmax head training set is empty");
  if (labels.size() != n)
    throw ValidationError("feature and label counts differ");
  if (features.cols() != weight_.cols())
    throw ValidationError("feature dimension does not match head input size");
  for (int y : labels)
    if (y < 0 || y >= num_classes())
      throw ValidationError("label out of range for softmax head");
  if (config.epochs <= 0 || config.batch_size <= 0 || config.learning_rate <= 0.0)
    throw ValidationError("softmax head training schedule must be positive");

  Eigen::MatrixXd mw = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
  Eigen::MatrixXd vw = mw;
  Eigen::VectorXd mb = Eigen::VectorXd::Zero(bias_.size());
  Eigen::VectorXd vb = mb;
  const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long step = 0;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed);

  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(config.batch_size)) {
      std::size_t stop = std::min(n, start + static_cast<std::size_t>(config.batch_size));
      Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(weight_.rows(), weight_.cols());
      Eigen::VectorXd gb = Eigen::VectorXd::Zero(bias_.size());
      double batch_loss = 0.0;
      for (std::size_t k = start; k < stop; ++k) {
        std::size_t i = order[k];
        Eigen::VectorXd x = features.row(static_cast<Eigen::Index>(i));
        Eigen::VectorXd p = softmax(weight_ * x + bias_);
        int y = labels[i];
        batch_loss += -std::log(std::max(p[y], 1e-300));
        p[y] -= 1.0;
        gw.noalias() += p * x.transpose();
        gb += p;
      }
      const double m = static_cast<double>(stop - start);
      gw /= m;
      gb /= m;
      batch_loss /= m;
      epoch_loss += batch_loss * m;

      ++step;
      const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
      mw = beta1 * mw + (1.0 - beta1) * gw;
      vw = beta2 * vw + (1.0 - beta2) * gw.cwiseProduct(gw);
      mb = beta1 * mb + (1.0 - beta1) * gb;
      vb = beta2 * vb + (1.0 - beta2) * gb.cwiseProduct(gb);
      weight_.array() -=
          config.learning_rate * (mw / c1).array() / ((vw / c2).array().sqrt() + eps);
      bias_.array() -=
          config.learning_rate * (mb / c1).array() / ((vb / c2).array().sqrt() + eps);
    }
    last_epoch_loss = epoch_loss / static_cast<double>(n);
    if (!std::isfinite(last_epoch_loss))
      throw TrainingError("softmax head training diverged (non-finite loss)");
  }
  return last_epoch_loss;
}

Eigen::VectorXd SoftmaxHead::predict_proba(const Eigen::VectorXd& feature) const {
  if (feature.size() != weight_.cols())
    throw ValidationError("feature dimension does not match head input size");
  return softmax(weight_ * feature + bias_);
}

int SoftmaxHead::predict(const Eigen::VectorXd& feature) const {
  Eigen::Index best = 0;
  predict_proba(feature).maxCoeff(&best);
  return static_cast<int>(best);
}

ModelRegistry& ModelRegistry::instance() {
  static ModelRegistry registry;
  return registry;
}

ModelRegistry::ModelRegistry() {
  loaders_["file"] = [](const std::string& locator) -> ModelPtr {
    return LinearContextModel::load_file(locator);
  };
}

void ModelRegistry::register_scheme(const std::string& scheme, Loader loader) {
  if (scheme.empty()) throw ValidationError("model scheme must be non-empty");
  loaders_[scheme] = std::move(loader);
}

std::vector<std::string> ModelRegistry::schemes() const {
  std::vector<std::string> out;
  for (const auto& [scheme, loader] : loaders_) out.push_back(scheme);
  return out;
}

ModelPtr ModelRegistry::resolve(const std::string& identifier) const {
  std::size_t colon = identifier.find(':');
  if (colon != std::string::npos) {
    std::string scheme = identifier.substr(0, colon);
    auto it = loaders_.find(scheme);
    if (it != loaders_.end()) return it->second(identifier.substr(colon + 1));
  }
  if (std::filesystem::exists(identifier)) return loaders_.at("file")(identifier);
  std::ostringstream msg;
  msg << "cannot resolve model identifier '" << identifier << "'; known schemes:";
  for (const std::string& s : schemes()) msg << " " << s << ":";
  throw ValidationError(msg.str());
}

}  // namespace biasaudit
