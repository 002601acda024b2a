#include "biasaudit/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

struct LabeledVectors {
  Eigen::MatrixXd features;  // one occurrence per row
  std::vector<int> labels;
};

LabeledVectors collect_occurrences(const EmbeddingBank& bank,
                                   const std::vector<WordPair>& pairs,
                                   std::vector<std::string>* warnings) {
  std::vector<std::pair<const Eigen::VectorXd*, int>> rows;
  auto take = [&](const std::string& word, int label) {
    if (!bank.has(word)) {
      if (warnings) warnings->push_back("no bank coverage for attribute word '" + word + "'");
      return;
    }
    for (const BankOccurrence& occ : bank.occurrences(word)) rows.push_back({&occ.vector, label});
  };
  for (const WordPair& p : pairs) {
    take(p.female, 1);
    take(p.male, 0);
  }
  if (rows.empty()) throw CoverageError("no attribute occurrences available in the bank");
  LabeledVectors out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), rows.front().first->size());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = rows[i].first->transpose();
    out.labels.push_back(rows[i].second);
  }
  return out;
}

ProbeModel fit_logistic(const LabeledVectors& data, const ProbeConfig& config,
                        ProbeTrainDiagnostics* diagnostics) {
  if (config.epochs <= 0 || config.learning_rate <= 0.0)
    throw ValidationError("probe training schedule must be positive");
  const Eigen::Index n = data.features.rows();
  const Eigen::Index h = data.features.cols();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = data.labels[static_cast<std::size_t>(i)];

  Eigen::VectorXd w = Eigen::VectorXd::Zero(h);
  double b = 0.0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Eigen::VectorXd z = data.features * w;
    z.array() += b;
    Eigen::VectorXd p = z.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd residual = p - y;
    Eigen::VectorXd grad_w = data.features.transpose() * residual / static_cast<double>(n);
    double grad_b = residual.mean();
    w -= config.learning_rate * grad_w;
    b -= config.learning_rate * grad_b;
    if (diagnostics) {
      double loss = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        double pi = std::clamp(p[i], 1e-15, 1.0 - 1e-15);
        loss += y[i] > 0.5 ? -std::log(pi) : -std::log(1.0 - pi);
      }
      diagnostics->epoch_losses.push_back(loss / static_cast<double>(n));
    }
    if (!w.allFinite() || !std::isfinite(b))
      throw TrainingError("probe training diverged (non-finite weights)");
  }
  Eigen::VectorXd weights(h + 1);
  weights.head(h) = w;
  weights[h] = b;
  if (diagnostics) diagnostics->occurrences = static_cast<int>(n);
  return ProbeModel(std::move(weights));
}

}  // namespace

ProbeModel::ProbeModel(Eigen::VectorXd weights) : weights_(std::move(weights)) {
  if (weights_.size() < 2)
    throw ValidationError("probe weights must hold at least one feature plus a bias term");
}

double ProbeModel::score(const Eigen::VectorXd& embedding) const {
  if (embedding.size() + 1 != weights_.size())
    throw ValidationError("embedding size does not match probe weights");
  const Eigen::Index h = embedding.size();
  return sigmoid(weights_.head(h).dot(embedding) + weights_[h]);
}

void ProbeModel::save(const std::filesystem::path& path) const {
  std::vector<float> values(static_cast<std::size_t>(weights_.size()));
  for (Eigen::Index i = 0; i < weights_.size(); ++i)
    values[static_cast<std::size_t>(i)] = static_cast<float>(weights_[i]);
  write_f32_array(path, values);
}

ProbeModel ProbeModel::load(const std::filesystem::path& path) {
  std::vector<float> values = read_f32_array(path);
  if (values.size() < 2)
    throw FormatError("probe file " + path.string() + " holds " +
                      std::to_string(values.size()) + " values; need at least 2");
  Eigen::VectorXd weights(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i)
    weights[static_cast<Eigen::Index>(i)] = static_cast<double>(values[i]);
  return ProbeModel(std::move(weights));
}

ProbeModel train_probe(const EmbeddingBank& attribute_bank,
                       const std::vector<WordPair>& train_pairs, const ProbeConfig& config,
                       ProbeTrainDiagnostics* diagnostics) {
  if (train_pairs.empty()) throw ValidationError("no training pairs given");
  LabeledVectors data = collect_occurrences(attribute_bank, train_pairs, nullptr);
  return fit_logistic(data, config, diagnostics);
}

GenderEvalResult evaluate_gender_prediction(const ProbeModel& probe,
                                            const EmbeddingBank& attribute_bank,
                                            const std::vector<WordPair>& test_pairs) {
  if (test_pairs.empty()) throw ValidationError("no test pairs given");
  GenderEvalResult result;
  int word_correct = 0;
  int occ_correct = 0;
  int occ_total = 0;
  auto eval_word = [&](const std::string& word, bool female) {
    if (!attribute_bank.has(word)) {
      result.warnings.push_back("no bank coverage for attribute word '" + word + "'");
      return;
    }
    int votes_female = 0;
    int votes = 0;
    for (const BankOccurrence& occ : attribute_bank.occurrences(word)) {
      bool predicted_female = probe.predicts_female(occ.vector);
      votes_female += predicted_female ? 1 : 0;
      ++votes;
      if (predicted_female == female) ++occ_correct;
      ++occ_total;
    }
    bool majority_female = 2 * votes_female >= votes;
    if (majority_female == female) ++word_correct;
    ++result.words_scored;
  };
  for (const WordPair& p : test_pairs) {
    eval_word(p.female, true);
    eval_word(p.male, false);
  }
  if (result.words_scored == 0)
    throw CoverageError("no test attribute words have bank coverage");
  result.word_accuracy = static_cast<double>(word_correct) / result.words_scored;
  result.occurrence_accuracy = static_cast<double>(occ_correct) / occ_total;
  return result;
}

BiasEvalResult evaluate_stereotypes(const ProbeModel& probe,
                                    const EmbeddingBank& stereotype_bank,
                                    const Lexicon& lexicon) {
  BiasEvalResult result;
  int correct = 0;
  int scored = 0;
  double confidence_sum = 0.0;
  int occ_total = 0;
  auto eval_word = [&](const std::string& word, bool stereotype_female) {
    if (!stereotype_bank.has(word)) {
      result.warnings.push_back("no bank coverage for stereotype word '" + word + "'");
      return;
    }
    WordBiasScore score;
    int votes_female = 0;
    int votes = 0;
    for (const BankOccurrence& occ : stereotype_bank.occurrences(word)) {
      double s = probe.score(occ.vector);
      score.mean_score += s;
      confidence_sum += std::abs(s - 0.5);
      ++occ_total;
      votes_female += s >= 0.5 ? 1 : 0;
      ++votes;
    }
    score.mean_score /= votes;
    score.female_vote_fraction = static_cast<double>(votes_female) / votes;
    // Ties break toward female, and get logged.
    score.predicted_female = 2 * votes_female >= votes;
    if (2 * votes_female == votes) result.tie_words.push_back(word);
    result.word_scores[word] = score;
    if (score.predicted_female == stereotype_female) ++correct;
    ++scored;
  };
  for (const std::string& w : lexicon.stereotypes_female()) eval_word(w, true);
  for (const std::string& w : lexicon.stereotypes_male()) eval_word(w, false);
  if (scored == 0) throw CoverageError("no stereotype words have bank coverage");
  result.bias_accuracy = static_cast<double>(correct) / scored;
  result.mean_confidence = confidence_sum / occ_total;
  return result;
}

double bias_accuracy(const ProbeModel& probe, const EmbeddingBank& stereotype_bank,
                     const Lexicon& lexicon) {
  return evaluate_stereotypes(probe, stereotype_bank, lexicon).bias_accuracy;
}

double mean_bias_confidence(const ProbeModel& probe,
                            const EmbeddingBank& stereotype_bank, const Lexicon& lexicon) {
  return evaluate_stereotypes(probe, stereotype_bank, lexicon).mean_confidence;
}

double t_test_p_value(const std::vector<double>& sample, double mu0, bool* degenerate) {
  if (sample.size() < 2)
    throw ValidationError("t-test needs at least two observations");
  const auto n = static_cast<double>(sample.size());
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : sample) ss += (v - mean) * (v - mean);
  const double variance = ss / (n - 1.0);
  if (degenerate) *degenerate = false;
  if (variance == 0.0) {
    if (degenerate) *degenerate = true;
    return mean == mu0 ? 1.0 : 0.0;
  }
  const double t = (mean - mu0) / std::sqrt(variance / n);
  boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

namespace {

// p-value for one observation judged against a null sample: the observation
// is standardized by the sample stddev of a single draw (not the stddev of
// the mean), so under the null — where the observation is exchangeable with
// the sample — |t| stays O(1) regardless of how many iterations were run.
double single_draw_p_value(const std::vector<double>& sample, double observed,
                           bool* degenerate) {
  if (sample.size() < 2)
    throw ValidationError("significance test needs at least two observations");
  const auto n = static_cast<double>(sample.size());
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : sample) ss += (v - mean) * (v - mean);
  const double variance = ss / (n - 1.0);
  if (degenerate) *degenerate = false;
  if (variance == 0.0) {
    if (degenerate) *degenerate = true;
    return mean == observed ? 1.0 : 0.0;
  }
  const double t = (observed - mean) / std::sqrt(variance);
  boost::math::students_t dist(n - 1.0);
  return 2.0 * boost::math::cdf(dist, -std::abs(t));
}

}  // namespace

RandomizationResult randomization_test(const ProbeModel& probe,
                                       const EmbeddingBank& stereotype_bank,
                                       const Lexicon& lexicon, int iterations,
                                       std::uint64_t seed) {
  if (iterations < 2) throw ValidationError("randomization test needs at least two iterations");
  BiasEvalResult bias = evaluate_stereotypes(probe, stereotype_bank, lexicon);

  RandomizationResult result;
  result.original_accuracy = bias.bias_accuracy;

  // The probe's per-word majority predictions are fixed; each iteration only
  // resamples which words count as female, preserving the covered set sizes.
  std::vector<int> predictions;
  std::size_t female_count = 0;
  for (const std::string& w : lexicon.stereotypes_female()) {
    auto it = bias.word_scores.find(w);
    if (it == bias.word_scores.end()) continue;
    predictions.push_back(it->second.predicted_female ? 1 : 0);
    ++female_count;
  }
  for (const std::string& w : lexicon.stereotypes_male()) {
    auto it = bias.word_scores.find(w);
    if (it == bias.word_scores.end()) continue;
    predictions.push_back(it->second.predicted_female ? 1 : 0);
  }

  std::vector<std::size_t> order(predictions.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed);
  for (int iter = 0; iter < iterations; ++iter) {
    std::shuffle(order.begin(), order.end(), rng);
    int correct = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const int random_label = i < female_count ? 1 : 0;
      if (predictions[order[i]] == random_label) ++correct;
    }
    result.random_accuracies.push_back(static_cast<double>(correct) / order.size());
  }

  result.p_value = single_draw_p_value(result.random_accuracies,
                                       result.original_accuracy, &result.degenerate);
  if (result.degenerate)
    result.notes.push_back("null accuracies have zero variance; p-value set by equality test");
  return result;
}

ProbeReport run_probe(const EmbeddingBank& attribute_bank,
                      const EmbeddingBank& stereotype_bank, const Lexicon& lexicon,
                      double train_fraction, const ProbeConfig& config,
                      int randomization_iterations, std::uint64_t seed) {
  ProbeReport report;
  AttributeSplit split =
      split_attribute_pairs(lexicon, train_fraction, substream_seed(seed, "probe-split"));
  report.train_pair_count = static_cast<int>(split.train_pairs.size());
  report.test_pair_count = static_cast<int>(split.test_pairs.size());

  ProbeConfig train_config = config;
  train_config.seed = substream_seed(seed, "probe-train");
  ProbeModel probe = train_probe(attribute_bank, split.train_pairs, train_config);

  GenderEvalResult gender = evaluate_gender_prediction(probe, attribute_bank, split.test_pairs);
  report.gender_accuracy = gender.word_accuracy;
  report.gender_accuracy_occurrences = gender.occurrence_accuracy;
  report.warnings.insert(report.warnings.end(), gender.warnings.begin(), gender.warnings.end());

  BiasEvalResult bias = evaluate_stereotypes(probe, stereotype_bank, lexicon);
  report.bias_accuracy = bias.bias_accuracy;
  report.mean_bias_confidence = bias.mean_confidence;
  report.stereotype_word_scores = bias.word_scores;
  report.warnings.insert(report.warnings.end(), bias.warnings.begin(), bias.warnings.end());
  for (const std::string& w : bias.tie_words)
    report.warnings.push_back("stereotype word '" + w + "' had a tied vote; labeled female");

  RandomizationResult rand =
      randomization_test(probe, stereotype_bank, lexicon, randomization_iterations,
                         substream_seed(seed, "probe-randomization"));
  report.p_value = rand.p_value;
  report.warnings.insert(report.warnings.end(), rand.notes.begin(), rand.notes.end());
  return report;
}

}  // namespace biasaudit
