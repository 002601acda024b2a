#include "biasaudit/debias.hpp"

#include <cmath>
#include <random>

#include "biasaudit/errors.hpp"
#include "biasaudit/intrinsic.hpp"
#include "biasaudit/linear_model.hpp"
#include "doctest.h"
#include "support/test_util.hpp"

using namespace biasaudit;
using test::TempDir;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

// One-hidden-unit model over {she, he, nurse}: five embedding rows and one
// mixing weight, six encoder parameters in total.
std::shared_ptr<LinearContextModel> six_param_model() {
  Eigen::MatrixXd emb(5, 1);
  emb << 0.9, -0.8, 0.3, 0.1, 0.0;
  std::vector<Eigen::MatrixXd> mixing = {Eigen::MatrixXd::Constant(1, 1, 0.4)};
  Eigen::MatrixXd head(3, 1);
  head << 1.0, -1.0, 0.2;
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(3);
  return std::make_shared<LinearContextModel>(
      "toy6", std::vector<std::string>{"she", "he", "nurse"}, emb, mixing, head, bias, 16);
}

Lexicon pair_lexicon() {
  return Lexicon::from_parts({{"she", "he"}}, {"nurse"}, {"engineer"});
}

}  // namespace

TEST_CASE("a single definition pair spans its difference direction exactly") {
  Eigen::VectorXd f = vec2(2.0, 1.0);
  Eigen::VectorXd m = vec2(0.0, -1.0);
  BiasSubspace subspace = compute_bias_subspace({{f, m}}, 1);
  REQUIRE(subspace.k() == 1);
  REQUIRE(subspace.hidden_size() == 2);

  Eigen::VectorXd direction = (f - m).normalized();
  const double align = std::abs(subspace.basis.col(0).dot(direction));
  CHECK(align == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(subspace.explained_variance[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("subspace estimation rejects unattainable ranks") {
  Eigen::VectorXd f = vec2(1.0, 0.0);
  Eigen::VectorXd m = vec2(-1.0, 0.0);
  CHECK_THROWS_AS(compute_bias_subspace({{f, m}}, 2), ValidationError);
  CHECK_THROWS_AS(compute_bias_subspace({{f, m}}, 0), ValidationError);
  CHECK_THROWS_AS(compute_bias_subspace({}, 1), ValidationError);
  CHECK_THROWS_AS(compute_bias_subspace({{f, vec2(1.0, 0.0)}}, 1), ValidationError);
}

TEST_CASE("projection removes exactly the subspace component") {
  BiasSubspace subspace;
  subspace.basis = Eigen::MatrixXd::Zero(2, 1);
  subspace.basis(0, 0) = 1.0;
  subspace.explained_variance = Eigen::VectorXd::Ones(1);

  CHECK(sent_debias(vec2(3.0, 4.0), subspace) == vec2(0.0, 4.0));
  CHECK(sent_debias(vec2(-7.0, 0.5), subspace) == vec2(0.0, 0.5));
  CHECK_THROWS_AS(sent_debias(Eigen::VectorXd::Zero(3), subspace), ValidationError);
}

TEST_CASE("projection is orthogonal and idempotent over random vectors") {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int dim = 12;

  Eigen::VectorXd f(dim), m(dim);
  for (int i = 0; i < dim; ++i) {
    f[i] = gauss(rng);
    m[i] = gauss(rng);
  }
  BiasSubspace subspace = compute_bias_subspace({{f, m}, {0.5 * f, m}, {f, 0.25 * m}}, 2);

  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v[i] = gauss(rng);
    Eigen::VectorXd d = sent_debias(v, subspace);
    for (int c = 0; c < subspace.k(); ++c)
      CHECK(std::abs(d.dot(subspace.basis.col(c))) < 1e-6);
    CHECK((sent_debias(d, subspace) - d).lpNorm<Eigen::Infinity>() < 1e-10);
  }
}

TEST_CASE("equalization centers a pair about its neutralized mean") {
  Eigen::VectorXd f = vec2(2.0, 1.0);
  Eigen::VectorXd m = vec2(-2.0, 1.0);
  BiasSubspace subspace;
  subspace.basis = Eigen::MatrixXd::Zero(2, 1);
  subspace.basis(0, 0) = 1.0;
  subspace.explained_variance = Eigen::VectorXd::Ones(1);

  auto [fe, me] = equalize_pair(f, m, subspace);
  Eigen::VectorXd nu = sent_debias(0.5 * (f + m), subspace);
  // Both re-placed vectors debias to the neutral mean and keep their norms.
  CHECK((sent_debias(fe, subspace) - nu).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK((sent_debias(me, subspace) - nu).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(fe.norm() == doctest::Approx(f.norm()).epsilon(1e-12));
  CHECK(me.norm() == doctest::Approx(m.norm()).epsilon(1e-12));
  // The pair stays symmetric inside the subspace.
  Eigen::VectorXd along = subspace.basis.transpose() * (fe - me);
  CHECK(std::abs(along[0]) > 0.0);
  CHECK((0.5 * (fe + me) - nu).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("subspace persistence round-trips") {
  BiasSubspace subspace = compute_bias_subspace({{vec2(1.5, 0.25), vec2(-0.5, 1.0)}}, 1);
  TempDir dir("subspace");
  subspace.save(dir.file("sub.json"));
  BiasSubspace loaded = BiasSubspace::load(dir.file("sub.json"));
  CHECK(loaded.basis == subspace.basis);
  CHECK(loaded.explained_variance == subspace.explained_variance);
  test::write_file(dir.file("bad.json"), "{}");
  CHECK_THROWS_AS(BiasSubspace::load(dir.file("bad.json")), FormatError);
}

TEST_CASE("estimated subspace collapses the planted gender split") {
  Lexicon lex = test::tiny_lexicon();
  auto model = make_planted_model(lex, {"works", "here", "today"}, {});
  std::vector<std::string> corpus;
  for (int i = 0; i < 12; ++i) {
    corpus.push_back("she works here today");
    corpus.push_back("he works here today");
    corpus.push_back("the woman works here");
    corpus.push_back("the man works here");
  }
  std::vector<std::string> warnings;
  BiasSubspace subspace = estimate_gender_subspace(*model, lex, corpus, {}, 0, &warnings);
  CHECK(subspace.k() == 1);
  CHECK(!warnings.empty());

  Eigen::VectorXd she = model->embed_occurrences("she works here", "she")[0].vector;
  Eigen::VectorXd he = model->embed_occurrences("he works here", "he")[0].vector;
  const double before = (she - he).norm();
  const double after = (sent_debias(she, subspace) - sent_debias(he, subspace)).norm();
  CHECK(after < 0.5 * before);

  CHECK_THROWS_AS(estimate_gender_subspace(*model, lex, {"nothing gendered"}, {}, 0),
                  CoverageError);
}

TEST_CASE("sent-debias wrapper projects every representation surface") {
  Lexicon lex = test::tiny_lexicon();
  auto base = make_planted_model(lex, {"works"}, {});
  std::vector<std::string> corpus;
  for (int i = 0; i < 8; ++i) {
    corpus.push_back("she works");
    corpus.push_back("he works");
  }
  BiasSubspace subspace = estimate_gender_subspace(*base, lex, corpus, {}, 0);
  ModelPtr debiased = apply_sent_debias(base, subspace);

  CHECK(debiased->info().identifier == base->info().identifier + "+sent-debias");
  CHECK(debiased->info().hidden_size == base->info().hidden_size);

  auto check_orthogonal = [&](const Eigen::VectorXd& v) {
    for (int c = 0; c < subspace.k(); ++c)
      CHECK(std::abs(v.dot(subspace.basis.col(c))) < 1e-9);
  };
  check_orthogonal(debiased->embed_occurrences("she works", "she")[0].vector);
  check_orthogonal(debiased->pooled_representation("she works"));
  check_orthogonal(debiased->masked_hidden_state("she works [MASK]"));

  // The head still normalizes: the masked distribution remains a distribution.
  VocabDistribution dist = debiased->masked_distribution("she works [MASK]");
  CHECK(dist.probs.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("context-debias gradient matches central finite differences") {
  auto model = six_param_model();
  Lexicon lex = pair_lexicon();
  std::vector<std::string> attribute_sentences = {"she nurse", "he nurse", "she he"};
  std::vector<std::string> stereotype_sentences = {"nurse she", "nurse he"};
  ContextDebiasData data =
      prepare_context_debias(*model, lex, attribute_sentences, stereotype_sentences);
  ContextDebiasConfig config;
  config.alpha = 1.0;
  config.beta = 0.7;

  auto clone = model->clone_for_training();
  auto* encoder = dynamic_cast<DifferentiableEncoder*>(clone.get());
  REQUIRE(encoder != nullptr);
  // Perturb away from the prepared state so the regularizer is active.
  Eigen::VectorXd params = encoder->encoder_parameters();
  REQUIRE(params.size() == 6);
  for (Eigen::Index i = 0; i < params.size(); ++i) params[i] += 0.01 * (i % 3 == 0 ? 1 : -1);
  encoder->set_encoder_parameters(params);

  double loss = 0.0;
  Eigen::VectorXd grad = context_debias_gradient(*encoder, data, config, &loss);
  CHECK(loss > 0.0);
  REQUIRE(grad.size() == params.size());

  const double eps = 1e-5;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    Eigen::VectorXd shifted = params;
    shifted[i] = params[i] + eps;
    encoder->set_encoder_parameters(shifted);
    const double up = context_debias_loss(*encoder, data, config);
    shifted[i] = params[i] - eps;
    encoder->set_encoder_parameters(shifted);
    const double down = context_debias_loss(*encoder, data, config);
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max({std::abs(numeric), std::abs(grad[i]), 1e-8});
    CHECK(std::abs(grad[i] - numeric) / scale < 1e-4);
  }
}

TEST_CASE("context-debias loss vanishes for orthogonal untouched embeddings") {
  // she and he live on the first axis, nurse on the second; single-word
  // sentences see no mixing, so stereotype states stay orthogonal to the
  // attribute vectors and the unchanged parameters zero the regularizer.
  Eigen::MatrixXd emb(5, 2);
  emb << 1, 0, -1, 0, 0, 1, 0.25, 0.25, 0, 0;
  std::vector<Eigen::MatrixXd> mixing = {Eigen::MatrixXd::Zero(2, 2)};
  Eigen::MatrixXd head_w(3, 2);
  head_w << 1, 0, 0, 1, 0.5, 0.5;
  auto model = std::make_shared<LinearContextModel>(
      "orth", std::vector<std::string>{"she", "he", "nurse"}, emb, mixing, head_w,
      Eigen::VectorXd::Zero(3), 16);
  Lexicon lex = pair_lexicon();

  ContextDebiasData data = prepare_context_debias(*model, lex, {"she", "he"}, {"nurse"});
  CHECK(context_debias_loss(*model, data, {}) == 0.0);
}

TEST_CASE("context-debias training drives the objective down") {
  Lexicon lex = test::tiny_lexicon();
  auto base = make_planted_model(lex, {"works"}, {});
  std::vector<std::string> attribute_sentences = {"she works", "he works", "woman works",
                                                  "man works"};
  std::vector<std::string> stereotype_sentences = {"nurse works", "engineer works",
                                                   "dancer works", "lawyer works"};
  ContextDebiasSchedule schedule;
  schedule.epochs = 5;
  TrainingRecord record;
  ModelPtr debiased = run_context_debias(*base, lex, attribute_sentences, stereotype_sentences,
                                         {}, schedule, &record);

  REQUIRE(record.epoch_losses.size() >= 2);
  for (std::size_t i = 1; i < record.epoch_losses.size(); ++i)
    CHECK(record.epoch_losses[i] <= record.epoch_losses[i - 1]);
  CHECK(record.epoch_losses.back() < record.epoch_losses.front());

  // Stereotype occurrences end up closer to orthogonal against the
  // attribute direction.
  auto dot_after = [&](const Model& m) {
    Eigen::VectorXd nurse = m.embed_occurrences("nurse works", "nurse")[0].vector;
    Eigen::VectorXd she = m.embed_occurrences("she works", "she")[0].vector;
    return std::abs(nurse.dot(she));
  };
  CHECK(dot_after(*debiased) < dot_after(*base));
}

TEST_CASE("cda corpus lists originals first, then changed lines") {
  Lexicon lex = test::tiny_lexicon();
  std::vector<std::string> lines = {
      "she is a nurse",
      "the sky is blue",
      "Mary met John",
  };
  int swapped = 0;
  std::vector<std::string> augmented = generate_cda_corpus(lines, lex, true, &swapped);
  REQUIRE(augmented.size() == 5);
  CHECK(swapped == 2);
  CHECK(augmented[0] == lines[0]);
  CHECK(augmented[1] == lines[1]);
  CHECK(augmented[2] == lines[2]);
  CHECK(augmented[3] == "he is a nurse");
  CHECK(augmented[4] == "John met Mary");

  std::vector<std::string> no_names = generate_cda_corpus(lines, lex, false);
  REQUIRE(no_names.size() == 4);
  CHECK(no_names[3] == "he is a nurse");
}

TEST_CASE("cda pretraining narrows the she/he prediction gap") {
  Lexicon lex = test::tiny_lexicon();
  auto base = make_planted_model(lex, {"works", "as", "a"}, {});
  std::vector<std::string> corpus;
  for (int i = 0; i < 10; ++i) {
    corpus.push_back("she works as a nurse");
    corpus.push_back("he works as a engineer");
  }

  MlmTrainConfig config;
  config.epochs = 8;
  config.learning_rate = 0.1;
  TrainingRecord record;
  ModelPtr trained = cda_pretrain(*base, corpus, lex, true, config, 0, &record);
  CHECK(record.epoch_losses.size() == 8);

  auto gap = [](const Model& m) {
    VocabDistribution dist = m.masked_distribution("[MASK] works as a nurse");
    return std::abs(std::log(std::max(dist.prob("she"), 1e-12)) -
                    std::log(std::max(dist.prob("he"), 1e-12)));
  };
  CHECK(gap(*trained) < gap(*base));
}
