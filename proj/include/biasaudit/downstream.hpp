#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "biasaudit/lexicon.hpp"
#include "biasaudit/model.hpp"

namespace biasaudit {

struct LabeledExample {
  std::string text;
  int label = 0;
  char group = 'f';  // 'f' or 'm'
  std::string id;
};

struct ColumnConfig {
  char delimiter = ',';
  std::string text = "text";
  std::string label = "label";
  std::string gender = "gender";
  std::string profession = "profession";
  std::string toxicity = "toxicity";
  std::string female = "female";
  std::string male = "male";
};

struct IngestReport {
  int rows_read = 0;
  int rows_kept = 0;
  int rows_skipped = 0;
  std::vector<std::string> label_names;
  std::vector<std::string> warnings;
};

// RFC-4180 style CSV: quoted fields may contain delimiters, newlines and
// doubled quotes.
std::vector<std::vector<std::string>> parse_csv(const std::string& content, char delimiter = ',');

// Occupation prediction from biographies.  Keeps the top `professions_per_gender`
// female-dominated and male-dominated professions by gender share; the kept
// profession names, sorted, become the label classes.
std::vector<LabeledExample> ingest_bias_in_bios(const std::filesystem::path& path,
                                                const ColumnConfig& columns,
                                                int professions_per_gender = 7,
                                                IngestReport* report = nullptr);

// Toxicity detection with gender identity annotations.  Label is 1 when
// toxicity > 0.5 and 0 when toxicity == 0 (other rows are excluded); the
// group is the identity whose score exceeds 0.5 while the other is 0.
std::vector<LabeledExample> ingest_jigsaw(const std::filesystem::path& path,
                                          const ColumnConfig& columns,
                                          IngestReport* report = nullptr);

// Pre-labeled data: text, label name, gender.
std::vector<LabeledExample> ingest_generic(const std::filesystem::path& path,
                                           const ColumnConfig& columns,
                                           IngestReport* report = nullptr);

enum class Intervention { original, scrubbing, swapping };

std::string intervention_name(Intervention intervention);
Intervention intervention_from_name(const std::string& name);

// Deletes every attribute term and name from the text (stereotype words are
// kept) and collapses the leftover whitespace.
std::string scrub_text(const std::string& text, const Lexicon& lexicon);

std::vector<LabeledExample> scrub_examples(const std::vector<LabeledExample>& examples,
                                           const Lexicon& lexicon);

// Originals plus, for each example the swap changes, a counterfactual copy
// with the same label and the flipped group.
std::vector<LabeledExample> swap_examples(const std::vector<LabeledExample>& examples,
                                          const Lexicon& lexicon, bool include_names = true);

std::vector<LabeledExample> apply_intervention(const std::vector<LabeledExample>& examples,
                                               Intervention intervention, const Lexicon& lexicon);

// Frozen encoder plus a trained classification head over pooled
// representations of the first `sequence_length` tokens.
class TextClassifier {
 public:
  TextClassifier(ModelPtr model, SoftmaxHead head, int sequence_length);

  int num_classes() const { return head_.num_classes(); }
  Eigen::VectorXd predict_proba(const std::string& text) const;
  int predict(const std::string& text) const;

 private:
  ModelPtr model_;
  SoftmaxHead head_;
  int sequence_length_;
};

struct FinetuneConfig {
  int epochs = 4;
  double learning_rate = 2e-5;
  int batch_size = 32;
  int sequence_length = 100;
};

TextClassifier finetune_classifier(ModelPtr model, const std::vector<LabeledExample>& train,
                                   int num_classes, const FinetuneConfig& config,
                                   std::uint64_t seed);

struct GroupMetrics {
  // Binary tasks report the signed gap TPR_f - TPR_m for the positive
  // class; multiclass tasks report the mean absolute one-vs-rest gap.
  double tprd = 0.0;
  double fprd = 0.0;
  double accuracy_female = 0.0;
  double accuracy_male = 0.0;
  std::vector<double> per_class_tprd;
  std::vector<double> per_class_fprd;
  std::vector<std::string> warnings;
};

GroupMetrics compute_group_metrics(const std::vector<int>& predictions,
                                   const std::vector<int>& gold, const std::vector<char>& groups,
                                   int num_classes);

// Mean absolute change of the gold-class probability under counterfactual
// swapping; examples the swap leaves unchanged contribute zero.
double counterfactual_fairness(
    const std::function<Eigen::VectorXd(const std::string&)>& predict_proba,
    const std::vector<LabeledExample>& examples, const Lexicon& lexicon,
    bool include_names = true);

// Strata are (label, group) cells; each stratum is shuffled and dealt
// round-robin so folds stay balanced.
std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<LabeledExample>& examples, int folds, std::uint64_t seed);

struct MetricStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_fold;
};

MetricStats summarize_folds(const std::vector<double>& per_fold);

struct DownstreamConfig {
  int folds = 10;
  FinetuneConfig finetune;
  Intervention intervention = Intervention::original;
  bool swap_names = true;
  std::uint64_t seed = 0;
};

struct ExtrinsicReport {
  int folds = 0;
  int num_classes = 0;
  std::string intervention;
  MetricStats tprd, fprd, accuracy_female, accuracy_male, cf;
  MetricStats cf_tprd, cf_fprd, cf_accuracy_female, cf_accuracy_male;
  std::vector<std::string> warnings;
};

// Cross-validated downstream audit.  The intervention transforms only each
// fold's training portion; held-out folds are evaluated on original text,
// and the CF-prefixed metrics re-run the group metrics on the
// counterfactually augmented test fold.
ExtrinsicReport run_downstream_eval(ModelPtr model, const std::vector<LabeledExample>& examples,
                                    const Lexicon& lexicon, const DownstreamConfig& config);

}  // namespace biasaudit
