#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "biasaudit/corpus.hpp"
#include "biasaudit/lexicon.hpp"
#include "biasaudit/model.hpp"

namespace biasaudit {

double cosine_similarity(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Association of one target vector with female versus male attribute vectors:
// mean cosine with A minus mean cosine with B.
double seat_association(const Eigen::VectorXd& target,
                        const std::vector<Eigen::VectorXd>& female_attributes,
                        const std::vector<Eigen::VectorXd>& male_attributes);

struct SeatResult {
  double test_statistic = 0.0;
  double effect_size = 0.0;
  // Per-word association scores for every stereotype word that was scored.
  std::map<std::string, double> associations;
  std::vector<std::string> warnings;
};

// Word-level association test over bank representatives (mean occurrence
// vectors).  Stereotype words come from the lexicon; `female_attributes` and
// `male_attributes` select which attribute words anchor the two poles.
// Words without bank coverage are skipped with a warning; an empty side
// raises CoverageError.  The effect size normalizes the mean association gap
// by the population standard deviation over all scored stereotype words.
SeatResult seat_test(const EmbeddingBank& bank, const Lexicon& lexicon,
                     const std::vector<std::string>& female_attributes,
                     const std::vector<std::string>& male_attributes);

// Sentence templates containing exactly one "{attribute}" and one "{target}"
// placeholder each.
std::vector<std::string> load_templates(const std::filesystem::path& path);
std::vector<std::string> default_templates();
std::string fill_template(const std::string& template_text, const std::string& attribute_text,
                          const std::string& target_text);

inline constexpr double kProbabilityFloor = 1e-12;

struct LpbsTerm {
  int template_index = 0;
  std::string target;
  std::string female;
  std::string male;
  double ls_female = 0.0;
  double ls_male = 0.0;
};

struct LpbsResult {
  double score = 0.0;
  std::vector<double> per_template;
  std::vector<LpbsTerm> terms;
  std::vector<std::string> warnings;
};

// Log-probability bias score with the mask slot on the attribute position.
// For each template and stereotype target x, the attribute slot is masked
// and ls(w, x) = log(P(w | x context) / P(w | prior context)) is compared
// across each attribute pair; the prior context replaces the target slot
// with a second masked-out token.  Template scores are summed over targets
// and pairs, and the reported score is their mean over templates.
LpbsResult attribute_lpbs(const Model& model, const std::vector<std::string>& templates,
                          const std::vector<std::string>& targets,
                          const std::vector<WordPair>& attribute_pairs);

// Same protocol with the roles swapped: the target slot is masked, the
// attribute slot is filled with each pair form, and ls(x, a) scores the
// stereotype word x.
LpbsResult target_lpbs(const Model& model, const std::vector<std::string>& templates,
                       const std::vector<std::string>& targets,
                       const std::vector<WordPair>& attribute_pairs);

}  // namespace biasaudit
