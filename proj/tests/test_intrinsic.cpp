#include "biasaudit/intrinsic.hpp"

#include <cmath>

#include "biasaudit/errors.hpp"
#include "doctest.h"
#include "support/scripted_model.hpp"
#include "support/test_util.hpp"

using namespace biasaudit;
using test::ScriptedModel;
using test::TempDir;

namespace {

Eigen::VectorXd vec3(double a, double b, double c) {
  Eigen::VectorXd v(3);
  v << a, b, c;
  return v;
}

// Straight reimplementation of the association-test arithmetic, kept free of
// any library helpers so it can catch shared mistakes.
struct BruteForceSeat {
  double statistic = 0.0;
  double effect = 0.0;
};

double brute_cos(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

BruteForceSeat brute_force_seat(const EmbeddingBank& bank,
                                const std::vector<std::string>& x_female,
                                const std::vector<std::string>& x_male,
                                const std::vector<std::string>& a_words,
                                const std::vector<std::string>& b_words) {
  auto association = [&](const std::string& x) {
    double a_sum = 0.0;
    for (const std::string& a : a_words) a_sum += brute_cos(bank.mean_vector(x), bank.mean_vector(a));
    double b_sum = 0.0;
    for (const std::string& b : b_words) b_sum += brute_cos(bank.mean_vector(x), bank.mean_vector(b));
    return a_sum / static_cast<double>(a_words.size()) - b_sum / static_cast<double>(b_words.size());
  };
  double f_sum = 0.0, m_sum = 0.0;
  std::vector<double> all;
  for (const std::string& x : x_female) {
    double s = association(x);
    f_sum += s;
    all.push_back(s);
  }
  for (const std::string& x : x_male) {
    double s = association(x);
    m_sum += s;
    all.push_back(s);
  }
  double mean = 0.0;
  for (double s : all) mean += s;
  mean /= static_cast<double>(all.size());
  double var = 0.0;
  for (double s : all) var += (s - mean) * (s - mean);
  var /= static_cast<double>(all.size());
  BruteForceSeat out;
  out.statistic = f_sum - m_sum;
  out.effect = (f_sum / static_cast<double>(x_female.size()) -
                m_sum / static_cast<double>(x_male.size())) /
               std::sqrt(var);
  return out;
}

EmbeddingBank seat_bank() {
  return test::direct_bank(
      {
          {"she", {vec3(1.0, 0.2, 0.0)}},
          {"woman", {vec3(0.9, -0.1, 0.3)}},
          {"he", {vec3(-1.0, 0.1, 0.2)}},
          {"man", {vec3(-0.8, 0.2, -0.1)}},
          {"nurse", {vec3(0.7, 0.5, 0.1), vec3(0.8, 0.4, 0.0)}},
          {"dancer", {vec3(0.5, -0.3, 0.6)}},
          {"engineer", {vec3(-0.6, 0.4, 0.5)}},
          {"lawyer", {vec3(-0.4, -0.2, 0.3), vec3(-0.5, -0.1, 0.2)}},
      },
      3);
}

}  // namespace

TEST_CASE("cosine similarity on hand vectors") {
  CHECK(cosine_similarity(vec3(1, 0, 0), vec3(0, 1, 0)) == doctest::Approx(0.0));
  CHECK(cosine_similarity(vec3(1, 1, 0), vec3(1, 1, 0)) == doctest::Approx(1.0));
  CHECK(cosine_similarity(vec3(1, 0, 0), vec3(-2, 0, 0)) == doctest::Approx(-1.0));
  CHECK(cosine_similarity(vec3(3, 4, 0), vec3(4, 3, 0)) == doctest::Approx(24.0 / 25.0));
  CHECK_THROWS_AS(cosine_similarity(vec3(0, 0, 0), vec3(1, 0, 0)), ValidationError);
}

TEST_CASE("seat matches a brute-force recomputation") {
  EmbeddingBank bank = seat_bank();
  Lexicon lex = test::tiny_lexicon();
  std::vector<std::string> a_words = {"she", "woman"};
  std::vector<std::string> b_words = {"he", "man"};

  SeatResult result = seat_test(bank, lex, a_words, b_words);
  BruteForceSeat expected = brute_force_seat(bank, lex.stereotypes_female(),
                                             lex.stereotypes_male(), a_words, b_words);
  CHECK(std::abs(result.test_statistic - expected.statistic) < 1e-12);
  CHECK(std::abs(result.effect_size - expected.effect) < 1e-12);
  CHECK(result.associations.size() == 4);
  CHECK(result.warnings.empty());

  // The mean-vector representative matters: nurse has two occurrences.
  CHECK(result.associations.count("nurse") == 1);
}

TEST_CASE("seat is antisymmetric under attribute and stereotype swaps") {
  EmbeddingBank bank = seat_bank();
  Lexicon lex = test::tiny_lexicon();
  std::vector<std::string> a_words = {"she", "woman"};
  std::vector<std::string> b_words = {"he", "man"};

  SeatResult forward = seat_test(bank, lex, a_words, b_words);
  SeatResult attr_swapped = seat_test(bank, lex, b_words, a_words);
  CHECK(forward.test_statistic == -attr_swapped.test_statistic);
  CHECK(forward.effect_size == -attr_swapped.effect_size);

  Lexicon mirrored = Lexicon::from_parts({{"she", "he"}, {"woman", "man"}},
                                         {"engineer", "lawyer"}, {"nurse", "dancer"});
  SeatResult stereo_swapped = seat_test(bank, mirrored, a_words, b_words);
  CHECK(forward.test_statistic == -stereo_swapped.test_statistic);
  CHECK(forward.effect_size == -stereo_swapped.effect_size);
}

TEST_CASE("seat skips uncovered words and rejects empty sides") {
  Lexicon lex = test::tiny_lexicon();
  EmbeddingBank bank = test::direct_bank(
      {
          {"she", {vec3(1, 0, 0)}},
          {"he", {vec3(-1, 0, 0)}},
          {"nurse", {vec3(0.5, 0.1, 0)}},
          {"engineer", {vec3(-0.5, 0.1, 0)}},
      },
      3);
  SeatResult result = seat_test(bank, lex, {"she"}, {"he"});
  CHECK(result.associations.size() == 2);
  CHECK(result.warnings.size() == 2);  // dancer and lawyer are uncovered

  CHECK_THROWS_AS(seat_test(bank, lex, {"woman"}, {"he"}), CoverageError);
}

TEST_CASE("template plumbing") {
  CHECK(fill_template("{attribute} is a {target}.", "she", "nurse") == "she is a nurse.");
  CHECK(fill_template("{attribute} is a {target}.", "[MASK]", "[BLANK]") ==
        "[MASK] is a [BLANK].");
  CHECK_THROWS_AS(fill_template("no placeholders", "a", "b"), FormatError);
  CHECK_THROWS_AS(fill_template("{attribute} only", "a", "b"), FormatError);
  CHECK_THROWS_AS(fill_template("{attribute} {target} {target}", "a", "b"), FormatError);

  TempDir dir("templates");
  test::write_file(dir.file("t.txt"),
                   "# comment\n\n{attribute} is a {target}.\n{attribute} works as a {target}.\n");
  auto templates = load_templates(dir.file("t.txt"));
  REQUIRE(templates.size() == 2);
  CHECK(templates[0] == "{attribute} is a {target}.");

  test::write_file(dir.file("bad.txt"), "{attribute} only\n");
  CHECK_THROWS_AS(load_templates(dir.file("bad.txt")), FormatError);
  test::write_file(dir.file("empty.txt"), "# nothing\n");
  CHECK_THROWS_AS(load_templates(dir.file("empty.txt")), FormatError);

  for (const std::string& t : default_templates()) CHECK_NOTHROW(fill_template(t, "x", "y"));
}

TEST_CASE("lpbs is zero when conditionals equal priors") {
  // Every distribution is uniform, so log(P/prior) vanishes term by term.
  ScriptedModel model({"she", "he", "woman", "man", "nurse", "engineer"});
  std::vector<std::string> templates = {"{attribute} is a {target}.",
                                        "{attribute} works as a {target}."};
  std::vector<std::string> targets = {"nurse", "engineer"};
  std::vector<WordPair> pairs = {{"she", "he"}, {"woman", "man"}};

  LpbsResult attr = attribute_lpbs(model, templates, targets, pairs);
  CHECK(std::abs(attr.score) < 1e-9);
  for (const LpbsTerm& term : attr.terms) {
    CHECK(std::abs(term.ls_female) < 1e-9);
    CHECK(std::abs(term.ls_male) < 1e-9);
  }

  LpbsResult tgt = target_lpbs(model, templates, targets, pairs);
  CHECK(std::abs(tgt.score) < 1e-9);
}

TEST_CASE("attribute lpbs hand case gives ln 2") {
  ScriptedModel model({"she", "he", "nurse"});
  // P(she) doubles when the target slot holds "nurse"; P(he) stays put.
  model.script("[MASK] is a [BLANK].", {{"she", 0.1}, {"he", 0.1}});
  model.script("[MASK] is a nurse.", {{"she", 0.2}, {"he", 0.1}});

  LpbsResult result =
      attribute_lpbs(model, {"{attribute} is a {target}."}, {"nurse"}, {{"she", "he"}});
  REQUIRE(result.terms.size() == 1);
  CHECK(std::abs(result.terms[0].ls_female - std::log(2.0)) < 1e-9);
  CHECK(std::abs(result.terms[0].ls_male) < 1e-9);
  CHECK(std::abs(result.score - std::log(2.0)) < 1e-9);
  CHECK(result.score == doctest::Approx(0.6931).epsilon(1e-4));
}

TEST_CASE("target lpbs hand case gives ln 2") {
  ScriptedModel model({"she", "he", "nurse"});
  model.script("[BLANK] is a [MASK].", {{"nurse", 0.1}});
  model.script("she is a [MASK].", {{"nurse", 0.2}});
  model.script("he is a [MASK].", {{"nurse", 0.1}});

  LpbsResult result =
      target_lpbs(model, {"{attribute} is a {target}."}, {"nurse"}, {{"she", "he"}});
  REQUIRE(result.terms.size() == 1);
  CHECK(std::abs(result.terms[0].ls_female - std::log(2.0)) < 1e-9);
  CHECK(std::abs(result.terms[0].ls_male) < 1e-9);
  CHECK(std::abs(result.score - std::log(2.0)) < 1e-9);
}

TEST_CASE("lpbs sums template scores over pairs and targets, then averages") {
  ScriptedModel model({"she", "he", "nurse", "engineer"});
  model.script("[MASK] is a [BLANK].", {{"she", 0.1}, {"he", 0.1}});
  model.script("[MASK] is a nurse.", {{"she", 0.2}, {"he", 0.1}});
  model.script("[MASK] is a engineer.", {{"she", 0.1}, {"he", 0.4}});
  model.script("[MASK] works as a [BLANK].", {{"she", 0.1}, {"he", 0.1}});
  model.script("[MASK] works as a nurse.", {{"she", 0.1}, {"he", 0.1}});
  model.script("[MASK] works as a engineer.", {{"she", 0.1}, {"he", 0.1}});

  LpbsResult result = attribute_lpbs(
      model, {"{attribute} is a {target}.", "{attribute} works as a {target}."},
      {"nurse", "engineer"}, {{"she", "he"}});
  REQUIRE(result.per_template.size() == 2);
  // First template: |ln 2 - 0| + |0 - ln 4|; second contributes nothing.
  CHECK(std::abs(result.per_template[0] - 3.0 * std::log(2.0)) < 1e-9);
  CHECK(std::abs(result.per_template[1]) < 1e-9);
  CHECK(std::abs(result.score - 1.5 * std::log(2.0)) < 1e-9);
}

TEST_CASE("lpbs floors vanishing probabilities") {
  ScriptedModel model({"she", "he", "nurse"});
  model.script("[MASK] is a [BLANK].", {{"she", 0.5}, {"he", 0.5}});
  model.script("[MASK] is a nurse.", {{"she", 0.0}, {"he", 1.0}});

  LpbsResult result =
      attribute_lpbs(model, {"{attribute} is a {target}."}, {"nurse"}, {{"she", "he"}});
  REQUIRE(result.terms.size() == 1);
  CHECK(std::isfinite(result.terms[0].ls_female));
  CHECK(result.terms[0].ls_female == doctest::Approx(std::log(kProbabilityFloor / 0.5)));
}

TEST_CASE("lpbs skips out-of-vocabulary words and reports them") {
  ScriptedModel model({"she", "he", "nurse"});
  LpbsResult result = attribute_lpbs(model, {"{attribute} is a {target}."},
                                     {"nurse", "astronaut"}, {{"she", "he"}, {"her", "him"}});
  CHECK(result.warnings.size() == 2);
  CHECK(result.terms.size() == 1);

  CHECK_THROWS_AS(
      attribute_lpbs(model, {"{attribute} is a {target}."}, {"astronaut"}, {{"she", "he"}}),
      CoverageError);
  CHECK_THROWS_AS(attribute_lpbs(model, {}, {"nurse"}, {{"she", "he"}}), ValidationError);
}
