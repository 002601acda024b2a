#include "biasaudit/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"
#include "biasaudit/text.hpp"

namespace biasaudit {

std::vector<std::vector<std::string>> parse_csv(const std::string& content, char delimiter) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool row_started = false;
  for (std::size_t i = 0; i < content.size(); ++i) {
    char c = content[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < content.size() && content[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
      row_started = true;
    } else if (c == delimiter) {
      row.push_back(std::move(field));
      field.clear();
      row_started = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < content.size() && content[i + 1] == '\n') ++i;
      if (row_started || !field.empty()) {
        row.push_back(std::move(field));
        field.clear();
        rows.push_back(std::move(row));
        row.clear();
        row_started = false;
      }
    } else {
      field.push_back(c);
      row_started = true;
    }
  }
  if (quoted) throw FormatError("unterminated quoted field in CSV input");
  if (row_started || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    throw FormatError("CSV is missing required column '" + name + "'");
  }
};

CsvTable read_csv_table(const std::filesystem::path& path, char delimiter) {
  std::vector<std::vector<std::string>> rows = parse_csv(read_text_file(path), delimiter);
  if (rows.empty()) throw FormatError("CSV file " + path.string() + " is empty");
  CsvTable table;
  table.header = rows.front();
  table.rows.assign(rows.begin() + 1, rows.end());
  return table;
}

std::optional<char> parse_gender(std::string value) {
  value = to_lower(collapse_whitespace(value));
  if (value == "f" || value == "female" || value == "w" || value == "woman") return 'f';
  if (value == "m" || value == "male" || value == "man") return 'm';
  return std::nullopt;
}

std::optional<double> parse_number(const std::string& value) {
  try {
    std::size_t pos = 0;
    double v = std::stod(value, &pos);
    if (pos != value.size()) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

const std::string& cell(const std::vector<std::string>& row, int index) {
  static const std::string empty;
  return index < static_cast<int>(row.size()) ? row[static_cast<std::size_t>(index)] : empty;
}

}  // namespace

std::vector<LabeledExample> ingest_bias_in_bios(const std::filesystem::path& path,
                                                const ColumnConfig& columns,
                                                int professions_per_gender,
                                                IngestReport* report) {
  if (professions_per_gender < 1)
    throw ValidationError("professions_per_gender must be positive");
  CsvTable table = read_csv_table(path, columns.delimiter);
  const int text_col = table.column(columns.text);
  const int gender_col = table.column(columns.gender);
  const int prof_col = table.column(columns.profession);

  struct Counts {
    int female = 0;
    int male = 0;
  };
  std::map<std::string, Counts> by_profession;
  struct Parsed {
    std::string text;
    char group;
    std::string profession;
  };
  std::vector<Parsed> parsed;
  int skipped = 0;
  for (const auto& row : table.rows) {
    std::string profession = to_lower(collapse_whitespace(cell(row, prof_col)));
    std::optional<char> group = parse_gender(cell(row, gender_col));
    const std::string& text = cell(row, text_col);
    if (profession.empty() || !group || text.empty()) {
      ++skipped;
      continue;
    }
    (*group == 'f' ? by_profession[profession].female : by_profession[profession].male) += 1;
    parsed.push_back({text, *group, std::move(profession)});
  }

  if (static_cast<int>(by_profession.size()) < 2 * professions_per_gender)
    throw ValidationError("need at least " + std::to_string(2 * professions_per_gender) +
                          " professions, found " + std::to_string(by_profession.size()));

  std::vector<std::pair<std::string, double>> shares;
  for (const auto& [name, counts] : by_profession) {
    const double total = counts.female + counts.male;
    shares.emplace_back(name, counts.female / total);
  }
  auto by_female_share = [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  };
  std::sort(shares.begin(), shares.end(), by_female_share);

  std::set<std::string> selected;
  for (int i = 0; i < professions_per_gender; ++i) selected.insert(shares[i].first);
  for (int i = 0; i < professions_per_gender; ++i)
    selected.insert(shares[shares.size() - 1 - i].first);

  std::vector<std::string> label_names(selected.begin(), selected.end());
  std::map<std::string, int> label_ids;
  for (std::size_t i = 0; i < label_names.size(); ++i)
    label_ids[label_names[i]] = static_cast<int>(i);

  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < parsed.size(); ++i) {
    auto it = label_ids.find(parsed[i].profession);
    if (it == label_ids.end()) {
      ++skipped;
      continue;
    }
    out.push_back({parsed[i].text, it->second, parsed[i].group, "row-" + std::to_string(i)});
  }
  if (out.empty()) throw CoverageError("no usable rows in " + path.string());
  if (report) {
    report->rows_read = static_cast<int>(table.rows.size());
    report->rows_kept = static_cast<int>(out.size());
    report->rows_skipped = skipped;
    report->label_names = label_names;
  }
  return out;
}

std::vector<LabeledExample> ingest_jigsaw(const std::filesystem::path& path,
                                          const ColumnConfig& columns, IngestReport* report) {
  CsvTable table = read_csv_table(path, columns.delimiter);
  const int text_col = table.column(columns.text);
  const int tox_col = table.column(columns.toxicity);
  const int female_col = table.column(columns.female);
  const int male_col = table.column(columns.male);

  std::vector<LabeledExample> out;
  int skipped = 0;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const auto& row = table.rows[i];
    const std::string& text = cell(row, text_col);
    std::optional<double> toxicity = parse_number(cell(row, tox_col));
    std::optional<double> female = parse_number(cell(row, female_col));
    std::optional<double> male = parse_number(cell(row, male_col));
    if (text.empty() || !toxicity || !female || !male) {
      ++skipped;
      continue;
    }
    int label;
    if (*toxicity > 0.5) {
      label = 1;
    } else if (*toxicity == 0.0) {
      label = 0;
    } else {
      ++skipped;
      continue;
    }
    char group;
    if (*female > 0.5 && *male == 0.0) {
      group = 'f';
    } else if (*male > 0.5 && *female == 0.0) {
      group = 'm';
    } else {
      ++skipped;
      continue;
    }
    out.push_back({text, label, group, "row-" + std::to_string(i)});
  }
  if (out.empty()) throw CoverageError("no usable rows in " + path.string());
  if (report) {
    report->rows_read = static_cast<int>(table.rows.size());
    report->rows_kept = static_cast<int>(out.size());
    report->rows_skipped = skipped;
    report->label_names = {"non-toxic", "toxic"};
  }
  return out;
}

std::vector<LabeledExample> ingest_generic(const std::filesystem::path& path,
                                           const ColumnConfig& columns, IngestReport* report) {
  CsvTable table = read_csv_table(path, columns.delimiter);
  const int text_col = table.column(columns.text);
  const int label_col = table.column(columns.label);
  const int gender_col = table.column(columns.gender);

  struct Parsed {
    std::string text;
    std::string label;
    char group;
  };
  std::vector<Parsed> parsed;
  std::set<std::string> labels;
  int skipped = 0;
  for (const auto& row : table.rows) {
    const std::string& text = cell(row, text_col);
    std::string label = collapse_whitespace(cell(row, label_col));
    std::optional<char> group = parse_gender(cell(row, gender_col));
    if (text.empty() || label.empty() || !group) {
      ++skipped;
      continue;
    }
    labels.insert(label);
    parsed.push_back({text, std::move(label), *group});
  }
  if (parsed.empty()) throw CoverageError("no usable rows in " + path.string());
  if (labels.size() < 2) throw ValidationError("need at least two label classes");

  std::vector<std::string> label_names(labels.begin(), labels.end());
  std::map<std::string, int> label_ids;
  for (std::size_t i = 0; i < label_names.size(); ++i)
    label_ids[label_names[i]] = static_cast<int>(i);

  std::vector<LabeledExample> out;
  for (std::size_t i = 0; i < parsed.size(); ++i)
    out.push_back({parsed[i].text, label_ids.at(parsed[i].label), parsed[i].group,
                   "row-" + std::to_string(i)});
  if (report) {
    report->rows_read = static_cast<int>(table.rows.size());
    report->rows_kept = static_cast<int>(out.size());
    report->rows_skipped = skipped;
    report->label_names = label_names;
  }
  return out;
}

std::string intervention_name(Intervention intervention) {
  switch (intervention) {
    case Intervention::original: return "original";
    case Intervention::scrubbing: return "scrubbing";
    case Intervention::swapping: return "swapping";
  }
  throw ValidationError("unknown intervention");
}

Intervention intervention_from_name(const std::string& name) {
  if (name == "original" || name == "default" || name == "none") return Intervention::original;
  if (name == "scrubbing" || name == "scrub") return Intervention::scrubbing;
  if (name == "swapping" || name == "swap") return Intervention::swapping;
  throw ValidationError("unknown intervention '" + name + "'");
}

std::string scrub_text(const std::string& text, const Lexicon& lexicon) {
  std::string kept;
  for (const Segment& seg : segment_text(text)) {
    if (seg.is_word) {
      WordRole role = lexicon.role(to_lower(seg.text));
      if (is_attribute(role) || is_name(role)) continue;
    }
    kept += seg.text;
  }
  return collapse_whitespace(kept);
}

std::vector<LabeledExample> scrub_examples(const std::vector<LabeledExample>& examples,
                                           const Lexicon& lexicon) {
  std::vector<LabeledExample> out;
  out.reserve(examples.size());
  for (const LabeledExample& ex : examples) {
    LabeledExample scrubbed = ex;
    scrubbed.text = scrub_text(ex.text, lexicon);
    out.push_back(std::move(scrubbed));
  }
  return out;
}

std::vector<LabeledExample> swap_examples(const std::vector<LabeledExample>& examples,
                                          const Lexicon& lexicon, bool include_names) {
  std::vector<LabeledExample> out = examples;
  for (const LabeledExample& ex : examples) {
    int swaps = 0;
    std::string swapped = swap_gender_terms(ex.text, lexicon, include_names, &swaps);
    if (swaps == 0 || swapped == ex.text) continue;
    out.push_back({std::move(swapped), ex.label, ex.group == 'f' ? 'm' : 'f', ex.id + "-cf"});
  }
  return out;
}

std::vector<LabeledExample> apply_intervention(const std::vector<LabeledExample>& examples,
                                               Intervention intervention,
                                               const Lexicon& lexicon) {
  switch (intervention) {
    case Intervention::original: return examples;
    case Intervention::scrubbing: return scrub_examples(examples, lexicon);
    case Intervention::swapping: return swap_examples(examples, lexicon);
  }
  throw ValidationError("unknown intervention");
}

namespace {

std::string truncate_words(const std::string& text, int max_words) {
  std::vector<std::string> tokens = word_tokens(text);
  if (static_cast<int>(tokens.size()) <= max_words) return text;
  std::string out;
  for (int i = 0; i < max_words; ++i) {
    if (i) out += ' ';
    out += tokens[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace

TextClassifier::TextClassifier(ModelPtr model, SoftmaxHead head, int sequence_length)
    : model_(std::move(model)), head_(std::move(head)), sequence_length_(sequence_length) {
  if (!model_) throw ValidationError("classifier needs a model");
  if (sequence_length_ < 1) throw ValidationError("sequence_length must be positive");
}

Eigen::VectorXd TextClassifier::predict_proba(const std::string& text) const {
  return head_.predict_proba(
      model_->pooled_representation(truncate_words(text, sequence_length_)));
}

int TextClassifier::predict(const std::string& text) const {
  Eigen::Index best = 0;
  predict_proba(text).maxCoeff(&best);
  return static_cast<int>(best);
}

TextClassifier finetune_classifier(ModelPtr model, const std::vector<LabeledExample>& train,
                                   int num_classes, const FinetuneConfig& config,
                                   std::uint64_t seed) {
  if (!model) throw ValidationError("finetuning needs a model");
  if (train.empty()) throw ValidationError("finetuning training set is empty");
  Eigen::MatrixXd features(static_cast<Eigen::Index>(train.size()), model->info().hidden_size);
  std::vector<int> labels;
  labels.reserve(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) {
    features.row(static_cast<Eigen::Index>(i)) =
        model->pooled_representation(truncate_words(train[i].text, config.sequence_length))
            .transpose();
    labels.push_back(train[i].label);
  }
  SoftmaxHead head(model->info().hidden_size, num_classes, substream_seed(seed, "head-init"));
  HeadTrainConfig head_config;
  head_config.epochs = config.epochs;
  head_config.learning_rate = config.learning_rate;
  head_config.batch_size = config.batch_size;
  head.train(features, labels, head_config, substream_seed(seed, "head-train"));
  return TextClassifier(std::move(model), std::move(head), config.sequence_length);
}

GroupMetrics compute_group_metrics(const std::vector<int>& predictions,
                                   const std::vector<int>& gold, const std::vector<char>& groups,
                                   int num_classes) {
  const std::size_t n = predictions.size();
  if (gold.size() != n || groups.size() != n)
    throw ValidationError("predictions, gold labels and groups must be the same length");
  if (n == 0) throw ValidationError("group metrics need at least one example");
  if (num_classes < 2) throw ValidationError("group metrics need at least two classes");
  for (std::size_t i = 0; i < n; ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || predictions[i] < 0 ||
        predictions[i] >= num_classes)
      throw ValidationError("label out of range in group metrics");
    if (groups[i] != 'f' && groups[i] != 'm')
      throw ValidationError("group must be 'f' or 'm'");
  }

  GroupMetrics result;
  int correct_f = 0, total_f = 0, correct_m = 0, total_m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (groups[i] == 'f') {
      ++total_f;
      correct_f += predictions[i] == gold[i] ? 1 : 0;
    } else {
      ++total_m;
      correct_m += predictions[i] == gold[i] ? 1 : 0;
    }
  }
  if (total_f == 0 || total_m == 0)
    throw ValidationError("group metrics need examples from both groups");
  result.accuracy_female = static_cast<double>(correct_f) / total_f;
  result.accuracy_male = static_cast<double>(correct_m) / total_m;

  auto rates_for_class = [&](int cls) {
    // {tpr_f, tpr_m, fpr_f, fpr_m} one-vs-rest, with counts for validity.
    int tp_f = 0, pos_f = 0, tp_m = 0, pos_m = 0;
    int fp_f = 0, neg_f = 0, fp_m = 0, neg_m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool is_f = groups[i] == 'f';
      if (gold[i] == cls) {
        (is_f ? pos_f : pos_m) += 1;
        if (predictions[i] == cls) (is_f ? tp_f : tp_m) += 1;
      } else {
        (is_f ? neg_f : neg_m) += 1;
        if (predictions[i] == cls) (is_f ? fp_f : fp_m) += 1;
      }
    }
    struct Rates {
      bool tpr_valid;
      double tpr_gap;
      bool fpr_valid;
      double fpr_gap;
    } rates{};
    rates.tpr_valid = pos_f > 0 && pos_m > 0;
    if (rates.tpr_valid)
      rates.tpr_gap = static_cast<double>(tp_f) / pos_f - static_cast<double>(tp_m) / pos_m;
    rates.fpr_valid = neg_f > 0 && neg_m > 0;
    if (rates.fpr_valid)
      rates.fpr_gap = static_cast<double>(fp_f) / neg_f - static_cast<double>(fp_m) / neg_m;
    return rates;
  };

  if (num_classes == 2) {
    auto rates = rates_for_class(1);
    if (!rates.tpr_valid) {
      result.warnings.push_back("class 1 lacks gold positives in one group; TPRD set to 0");
      rates.tpr_gap = 0.0;
    }
    if (!rates.fpr_valid) {
      result.warnings.push_back("class 1 lacks gold negatives in one group; FPRD set to 0");
      rates.fpr_gap = 0.0;
    }
    result.tprd = rates.tpr_gap;
    result.fprd = rates.fpr_gap;
    result.per_class_tprd = {rates.tpr_gap};
    result.per_class_fprd = {rates.fpr_gap};
    return result;
  }

  double tprd_sum = 0.0, fprd_sum = 0.0;
  int tprd_classes = 0, fprd_classes = 0;
  result.per_class_tprd.assign(static_cast<std::size_t>(num_classes), 0.0);
  result.per_class_fprd.assign(static_cast<std::size_t>(num_classes), 0.0);
  for (int cls = 0; cls < num_classes; ++cls) {
    auto rates = rates_for_class(cls);
    if (rates.tpr_valid) {
      result.per_class_tprd[static_cast<std::size_t>(cls)] = rates.tpr_gap;
      tprd_sum += std::abs(rates.tpr_gap);
      ++tprd_classes;
    } else {
      result.warnings.push_back("class " + std::to_string(cls) +
                                " lacks gold examples in one group; skipped in TPRD");
    }
    if (rates.fpr_valid) {
      result.per_class_fprd[static_cast<std::size_t>(cls)] = rates.fpr_gap;
      fprd_sum += std::abs(rates.fpr_gap);
      ++fprd_classes;
    } else {
      result.warnings.push_back("class " + std::to_string(cls) +
                                " lacks gold negatives in one group; skipped in FPRD");
    }
  }
  if (tprd_classes == 0) throw ValidationError("no class has gold examples in both groups");
  result.tprd = tprd_sum / tprd_classes;
  result.fprd = fprd_classes > 0 ? fprd_sum / fprd_classes : 0.0;
  return result;
}

double counterfactual_fairness(
    const std::function<Eigen::VectorXd(const std::string&)>& predict_proba,
    const std::vector<LabeledExample>& examples, const Lexicon& lexicon, bool include_names) {
  if (examples.empty()) throw ValidationError("counterfactual fairness needs examples");
  double total = 0.0;
  for (const LabeledExample& ex : examples) {
    int swaps = 0;
    std::string swapped = swap_gender_terms(ex.text, lexicon, include_names, &swaps);
    if (swaps == 0 || swapped == ex.text) continue;
    Eigen::VectorXd p_orig = predict_proba(ex.text);
    Eigen::VectorXd p_swap = predict_proba(swapped);
    if (ex.label < 0 || ex.label >= p_orig.size())
      throw ValidationError("gold label out of range for counterfactual fairness");
    total += std::abs(p_orig[ex.label] - p_swap[ex.label]);
  }
  return total / static_cast<double>(examples.size());
}

std::vector<std::vector<std::size_t>> stratified_folds(
    const std::vector<LabeledExample>& examples, int folds, std::uint64_t seed) {
  if (folds < 2) throw ValidationError("cross-validation needs at least two folds");
  if (static_cast<std::size_t>(folds) > examples.size())
    throw ValidationError("more folds than examples");

  std::map<std::pair<int, char>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < examples.size(); ++i)
    strata[{examples[i].label, examples[i].group}].push_back(i);

  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  std::size_t next_fold = 0;
  for (auto& [key, indices] : strata) {
    Rng rng = make_rng(substream_seed(seed, "stratum", fnv1a64(std::to_string(key.first) + key.second)));
    std::shuffle(indices.begin(), indices.end(), rng);
    for (std::size_t idx : indices) {
      out[next_fold % static_cast<std::size_t>(folds)].push_back(idx);
      ++next_fold;
    }
  }
  for (const auto& fold : out)
    if (fold.empty()) throw ValidationError("a fold is empty; reduce the fold count");
  return out;
}

MetricStats summarize_folds(const std::vector<double>& per_fold) {
  MetricStats stats;
  stats.per_fold = per_fold;
  if (per_fold.empty()) return stats;
  for (double v : per_fold) stats.mean += v;
  stats.mean /= static_cast<double>(per_fold.size());
  if (per_fold.size() > 1) {
    double ss = 0.0;
    for (double v : per_fold) ss += (v - stats.mean) * (v - stats.mean);
    stats.stddev = std::sqrt(ss / static_cast<double>(per_fold.size() - 1));
  }
  return stats;
}

ExtrinsicReport run_downstream_eval(ModelPtr model, const std::vector<LabeledExample>& examples,
                                    const Lexicon& lexicon, const DownstreamConfig& config) {
  if (!model) throw ValidationError("downstream evaluation needs a model");
  int num_classes = 0;
  for (const LabeledExample& ex : examples) num_classes = std::max(num_classes, ex.label + 1);
  if (num_classes < 2) throw ValidationError("downstream data has fewer than two classes");

  std::vector<std::vector<std::size_t>> folds =
      stratified_folds(examples, config.folds, substream_seed(config.seed, "folds"));

  ExtrinsicReport report;
  report.folds = config.folds;
  report.num_classes = num_classes;
  report.intervention = intervention_name(config.intervention);

  std::vector<double> tprd, fprd, acc_f, acc_m, cf;
  std::vector<double> cf_tprd, cf_fprd, cf_acc_f, cf_acc_m;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    std::set<std::size_t> test_set(folds[k].begin(), folds[k].end());
    std::vector<LabeledExample> train, test;
    for (std::size_t i = 0; i < examples.size(); ++i)
      (test_set.count(i) ? test : train).push_back(examples[i]);

    std::vector<LabeledExample> train_final =
        apply_intervention(train, config.intervention, lexicon);
    TextClassifier classifier =
        finetune_classifier(model, train_final, num_classes, config.finetune,
                            substream_seed(config.seed, "finetune", k));

    auto metrics_on = [&](const std::vector<LabeledExample>& batch) {
      std::vector<int> predictions, gold;
      std::vector<char> groups;
      for (const LabeledExample& ex : batch) {
        predictions.push_back(classifier.predict(ex.text));
        gold.push_back(ex.label);
        groups.push_back(ex.group);
      }
      return compute_group_metrics(predictions, gold, groups, num_classes);
    };

    GroupMetrics base = metrics_on(test);
    tprd.push_back(base.tprd);
    fprd.push_back(base.fprd);
    acc_f.push_back(base.accuracy_female);
    acc_m.push_back(base.accuracy_male);
    report.warnings.insert(report.warnings.end(), base.warnings.begin(), base.warnings.end());

    cf.push_back(counterfactual_fairness(
        [&classifier](const std::string& text) { return classifier.predict_proba(text); }, test,
        lexicon, config.swap_names));

    GroupMetrics augmented = metrics_on(swap_examples(test, lexicon, config.swap_names));
    cf_tprd.push_back(augmented.tprd);
    cf_fprd.push_back(augmented.fprd);
    cf_acc_f.push_back(augmented.accuracy_female);
    cf_acc_m.push_back(augmented.accuracy_male);
  }

  report.tprd = summarize_folds(tprd);
  report.fprd = summarize_folds(fprd);
  report.accuracy_female = summarize_folds(acc_f);
  report.accuracy_male = summarize_folds(acc_m);
  report.cf = summarize_folds(cf);
  report.cf_tprd = summarize_folds(cf_tprd);
  report.cf_fprd = summarize_folds(cf_fprd);
  report.cf_accuracy_female = summarize_folds(cf_acc_f);
  report.cf_accuracy_male = summarize_folds(cf_acc_m);
  return report;
}

}  // namespace biasaudit
