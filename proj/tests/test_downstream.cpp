#include "biasaudit/downstream.hpp"

#include <cmath>
#include <set>

#include "biasaudit/errors.hpp"
#include "biasaudit/linear_model.hpp"
#include "biasaudit/text.hpp"
#include "doctest.h"
#include "support/test_util.hpp"

using namespace biasaudit;
using test::TempDir;

namespace {

std::vector<LabeledExample> toy_examples() {
  std::vector<LabeledExample> out;
  auto add = [&out](const std::string& text, int label, char group) {
    LabeledExample e;
    e.text = text;
    e.label = label;
    e.group = group;
    e.id = std::to_string(out.size());
    out.push_back(std::move(e));
  };
  for (int i = 0; i < 12; ++i) {
    add("she works as a nurse", 0, 'f');
    add("the woman is a nurse", 0, 'f');
    add("he works as a engineer", 1, 'm');
    add("the man is a engineer", 1, 'm');
  }
  return out;
}

}  // namespace

TEST_CASE("csv parsing handles quoting rules") {
  auto rows = parse_csv("a,b,c\n1,\"x,y\",3\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][1] == "x,y");

  rows = parse_csv("\"he said \"\"hi\"\"\",2\n");
  CHECK(rows[0][0] == "he said \"hi\"");

  rows = parse_csv("\"two\nlines\",ok\r\nnext,row\n");
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == "two\nlines");
  CHECK(rows[1][0] == "next");

  rows = parse_csv("a\tb\nc\td\n", '\t');
  CHECK(rows[0][1] == "b");

  CHECK(parse_csv("").empty());
}

TEST_CASE("generic ingestion maps labels and genders") {
  TempDir dir("generic");
  test::write_file(dir.file("data.csv"),
                   "text,label,gender\n"
                   "she is here,yes,F\n"
                   "he is here,no,male\n"
                   "they are here,yes,x\n"
                   "she left,yes,f\n");
  IngestReport report;
  auto examples = ingest_generic(dir.file("data.csv"), {}, &report);
  REQUIRE(examples.size() == 3);
  CHECK(report.rows_read == 4);
  CHECK(report.rows_kept == 3);
  CHECK(report.rows_skipped == 1);
  REQUIRE(!report.warnings.empty());
  CHECK(report.label_names == std::vector<std::string>{"no", "yes"});
  CHECK(examples[0].label == 1);  // "yes" sorts after "no"
  CHECK(examples[0].group == 'f');
  CHECK(examples[1].label == 0);
  CHECK(examples[1].group == 'm');

  CHECK_THROWS_AS(ingest_generic(dir.file("absent.csv"), {}), IoError);
  test::write_file(dir.file("cols.csv"), "text,label\nx,y\n");
  CHECK_THROWS_AS(ingest_generic(dir.file("cols.csv"), {}), FormatError);
}

TEST_CASE("bias-in-bios ingestion keeps the most gendered professions") {
  TempDir dir("bios");
  std::string content = "text,profession,gender\n";
  // nurse skews female 3:1, engineer male 3:1, clerk is balanced.
  for (int i = 0; i < 3; ++i) content += "bio f nurse,nurse,f\n";
  content += "bio m nurse,nurse,m\n";
  for (int i = 0; i < 3; ++i) content += "bio m engineer,engineer,m\n";
  content += "bio f engineer,engineer,f\n";
  content += "bio f clerk,clerk,f\n";
  content += "bio m clerk,clerk,m\n";
  test::write_file(dir.file("bios.csv"), content);

  IngestReport report;
  auto examples = ingest_bias_in_bios(dir.file("bios.csv"), {}, 1, &report);
  CHECK(report.label_names == std::vector<std::string>{"engineer", "nurse"});
  CHECK(examples.size() == 8);
  for (const LabeledExample& e : examples) {
    CHECK((e.label == 0 || e.label == 1));
    CHECK((e.group == 'f' || e.group == 'm'));
  }
}

TEST_CASE("jigsaw ingestion thresholds toxicity and resolves identities") {
  TempDir dir("jigsaw");
  test::write_file(dir.file("tox.csv"),
                   "text,toxicity,female,male\n"
                   "toxic f,0.8,0.9,0.0\n"
                   "clean m,0.0,0.0,0.7\n"
                   "ambiguous,0.9,0.6,0.6\n"
                   "mid,0.3,0.9,0.0\n");
  IngestReport report;
  auto examples = ingest_jigsaw(dir.file("tox.csv"), {}, &report);
  REQUIRE(examples.size() == 2);
  CHECK(examples[0].label == 1);
  CHECK(examples[0].group == 'f');
  CHECK(examples[1].label == 0);
  CHECK(examples[1].group == 'm');
  CHECK(report.rows_skipped == 2);
}

TEST_CASE("scrubbing removes identity terms and collapses whitespace") {
  Lexicon lex = test::tiny_lexicon();
  CHECK(scrub_text("she works as a nurse", lex) == "works as a nurse");
  CHECK(scrub_text("the woman met the man", lex) == "the met the");
  CHECK(scrub_text("Mary called John twice", lex) == "called twice");
  CHECK(scrub_text("nothing gendered", lex) == "nothing gendered");
  CHECK(scrub_text("Their,  maybe?", lex) == "Their, maybe?");  // only listed words go

  auto scrubbed = scrub_examples(toy_examples(), lex);
  for (const LabeledExample& e : scrubbed) {
    for (const std::string& w : lex.attribute_words()) CHECK(!contains_word(e.text, w));
  }
}

TEST_CASE("swap augmentation flips groups and preserves label balance") {
  Lexicon lex = test::tiny_lexicon();
  auto examples = toy_examples();
  auto swapped = swap_examples(examples, lex, true);
  REQUIRE(swapped.size() == 2 * examples.size());

  std::map<int, int> original_counts, swapped_counts;
  for (const LabeledExample& e : examples) original_counts[e.label]++;
  for (const LabeledExample& e : swapped) swapped_counts[e.label]++;
  for (const auto& [label, count] : original_counts) CHECK(swapped_counts[label] == 2 * count);

  for (std::size_t i = 0; i < examples.size(); ++i) {
    const LabeledExample& counter = swapped[examples.size() + i];
    CHECK(counter.label == examples[i].label);
    CHECK(counter.group != examples[i].group);
    CHECK(counter.text == swap_gender_terms(examples[i].text, lex));
  }

  // Unchanged texts are not duplicated.
  std::vector<LabeledExample> neutral = {{"the sky is blue", 0, 'f', "n0"}};
  CHECK(swap_examples(neutral, lex).size() == 1);
}

TEST_CASE("intervention dispatch") {
  Lexicon lex = test::tiny_lexicon();
  auto examples = toy_examples();
  CHECK(apply_intervention(examples, Intervention::original, lex).size() == examples.size());
  CHECK(apply_intervention(examples, Intervention::scrubbing, lex)[0].text ==
        "works as a nurse");
  CHECK(apply_intervention(examples, Intervention::swapping, lex).size() ==
        2 * examples.size());

  CHECK(intervention_name(Intervention::scrubbing) == "scrubbing");
  CHECK(intervention_from_name("swap") == Intervention::swapping);
  CHECK(intervention_from_name("default") == Intervention::original);
  CHECK_THROWS_AS(intervention_from_name("bogus"), ValidationError);
}

TEST_CASE("group metrics count confusion tables exactly") {
  // Binary: gold positives f {1,1}, m {1,0}; predictions chosen so
  // TPR_f = 1/2, TPR_m = 1, FPR_f = 0/1... hand-tallied below.
  std::vector<int> gold = {1, 1, 0, 1, 0, 0};
  std::vector<int> pred = {1, 0, 0, 1, 1, 0};
  std::vector<char> grp = {'f', 'f', 'f', 'm', 'm', 'm'};
  GroupMetrics gm = compute_group_metrics(pred, gold, grp, 2);
  // f: TP 1 of 2 positives, FP 0 of 1 negative, accuracy 2/3.
  // m: TP 1 of 1 positive, FP 1 of 2 negatives, accuracy 2/3.
  CHECK(gm.tprd == doctest::Approx(0.5 - 1.0).epsilon(1e-12));
  CHECK(gm.fprd == doctest::Approx(0.0 - 0.5).epsilon(1e-12));
  CHECK(gm.accuracy_female == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(gm.accuracy_male == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(gm.warnings.empty());
}

TEST_CASE("multiclass group metrics average absolute one-vs-rest gaps") {
  // Three classes; per class TPR gaps: class 0 = 1 - 0 = 1, class 1 = 0 - 1
  // = -1, class 2 = 1 - 1 = 0; mean absolute gap = 2/3.
  std::vector<int> gold = {0, 1, 2, 0, 1, 2};
  std::vector<int> pred = {0, 0, 2, 1, 1, 2};
  std::vector<char> grp = {'f', 'f', 'f', 'm', 'm', 'm'};
  GroupMetrics gm = compute_group_metrics(pred, gold, grp, 3);
  CHECK(gm.per_class_tprd == std::vector<double>{1.0, -1.0, 0.0});
  CHECK(gm.tprd == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("group metrics flag undefined rates and reject bad input") {
  std::vector<int> gold = {0, 0, 1};
  std::vector<int> pred = {0, 1, 1};
  std::vector<char> grp = {'f', 'f', 'm'};
  GroupMetrics gm = compute_group_metrics(pred, gold, grp, 2);
  CHECK(gm.tprd == 0.0);  // no female gold positives
  CHECK(!gm.warnings.empty());

  CHECK_THROWS_AS(compute_group_metrics({0}, {0}, {'x'}, 2), ValidationError);
  CHECK_THROWS_AS(compute_group_metrics({0}, {0, 1}, {'f'}, 2), ValidationError);
  CHECK_THROWS_AS(compute_group_metrics({2}, {0}, {'f'}, 2), ValidationError);
  CHECK_THROWS_AS(compute_group_metrics({0}, {0}, {'f'}, 1), ValidationError);
  CHECK_THROWS_AS(compute_group_metrics({0, 0}, {0, 0}, {'f', 'f'}, 2), ValidationError);
}

TEST_CASE("counterfactual fairness hand cases") {
  Lexicon lex = test::tiny_lexicon();

  // Gender-blind scorer: identical output regardless of text.
  auto blind = [](const std::string&) {
    Eigen::VectorXd p(2);
    p << 0.4, 0.6;
    return p;
  };
  std::vector<LabeledExample> examples = {
      {"she works as a nurse", 1, 'f', "a"},
      {"he works as a engineer", 0, 'm', "b"},
  };
  CHECK(counterfactual_fairness(blind, examples, lex) == 0.0);

  // Constructed 0.9/0.7 case: gold-class probability drops by 0.2 when the
  // text is swapped, for every example.
  auto gendered = [&lex](const std::string& text) {
    Eigen::VectorXd p(2);
    const bool female = contains_word(text, "she") || contains_word(text, "woman");
    p[1] = female ? 0.9 : 0.7;
    p[0] = 1.0 - p[1];
    return p;
  };
  std::vector<LabeledExample> positives = {
      {"she works as a nurse", 1, 'f', "a"},
      {"the woman is here", 1, 'f', "b"},
  };
  CHECK(counterfactual_fairness(gendered, positives, lex) ==
        doctest::Approx(0.2).epsilon(1e-12));

  // Texts the swap cannot change contribute zero but stay in the mean.
  std::vector<LabeledExample> mixed = positives;
  mixed.push_back({"the sky is blue", 1, 'f', "c"});
  mixed.push_back({"clouds again", 1, 'f', "d"});
  CHECK(counterfactual_fairness(gendered, mixed, lex) == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("stratified folds balance label and group cells") {
  auto examples = toy_examples();  // 48 examples over 2 (label, group) cells
  auto folds = stratified_folds(examples, 4, 3);
  REQUIRE(folds.size() == 4);

  std::set<std::size_t> seen;
  for (const auto& fold : folds) {
    CHECK(fold.size() == 12);
    for (std::size_t idx : fold) CHECK(seen.insert(idx).second);
  }
  CHECK(seen.size() == examples.size());

  for (const auto& fold : folds) {
    int f_count = 0;
    for (std::size_t idx : fold) f_count += examples[idx].group == 'f' ? 1 : 0;
    CHECK(f_count == 6);
  }

  auto again = stratified_folds(examples, 4, 3);
  CHECK(folds == again);
  CHECK(stratified_folds(examples, 4, 4) != folds);
  CHECK_THROWS_AS(stratified_folds(examples, 1, 0), ValidationError);
  CHECK_THROWS_AS(stratified_folds(examples, 100, 0), ValidationError);
}

TEST_CASE("fold summaries use the sample standard deviation") {
  MetricStats stats = summarize_folds({1.0, 2.0, 3.0});
  CHECK(stats.mean == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(stats.stddev == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats.per_fold.size() == 3);
  CHECK(summarize_folds({5.0}).stddev == 0.0);
  CHECK(summarize_folds({}).mean == 0.0);
}

TEST_CASE("downstream evaluation produces a coherent report") {
  Lexicon lex = test::tiny_lexicon();
  auto model = make_planted_model(lex, {"works", "as", "a", "the", "is"}, {});
  auto examples = toy_examples();

  DownstreamConfig config;
  config.folds = 3;
  config.finetune.epochs = 6;
  config.finetune.learning_rate = 0.05;
  config.seed = 1;
  ExtrinsicReport report = run_downstream_eval(model, examples, lex, config);

  CHECK(report.folds == 3);
  CHECK(report.num_classes == 2);
  CHECK(report.intervention == "original");
  CHECK(report.tprd.per_fold.size() == 3);
  CHECK(report.cf.per_fold.size() == 3);
  CHECK(report.accuracy_female.mean >= 0.0);
  CHECK(report.accuracy_female.mean <= 1.0);
  CHECK(std::isfinite(report.cf.mean));

  // Same seed, same numbers; the fold partition is shared across runs.
  ExtrinsicReport again = run_downstream_eval(model, examples, lex, config);
  CHECK(report.tprd.per_fold == again.tprd.per_fold);
  CHECK(report.cf.per_fold == again.cf.per_fold);

  CHECK_THROWS_AS(run_downstream_eval(nullptr, examples, lex, config), ValidationError);
  std::vector<LabeledExample> one_class = {{"she is here", 0, 'f', "x"},
                                           {"he is here", 0, 'm', "y"}};
  CHECK_THROWS_AS(run_downstream_eval(model, one_class, lex, config), ValidationError);
}
