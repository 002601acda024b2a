#include "biasaudit/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>

#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"

namespace biasaudit {

using nlohmann::json;

namespace {

constexpr const char* kConfigFormatName = "biasaudit-config";
constexpr const char* kReportFormatName = "biasaudit-report";
constexpr int kFormatVersion = 1;

// Shortest representation that parses back to the same double.
std::string fmt_double(double value) {
  std::array<char, 64> buf;
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  return std::string(buf.data(), end);
}

std::string fmt_display(double value) {
  std::array<char, 64> buf;
  std::snprintf(buf.data(), buf.size(), "%.4g", value);
  return std::string(buf.data());
}

const json* find(const json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return nullptr;
  return &*it;
}

void expect_object(const json& value, const std::string& where) {
  if (!value.is_object())
    throw ValidationError("expected a JSON object for " + where);
}

void expect_keys(const json& obj, const std::string& where,
                 std::initializer_list<const char*> keys) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ValidationError("unknown key '" + it.key() + "' in " + where);
  }
}

json stats_to_json(const MetricStats& stats) {
  json doc;
  doc["mean"] = stats.mean;
  doc["stddev"] = stats.stddev;
  doc["per_fold"] = stats.per_fold;
  return doc;
}

MetricStats stats_from_json(const json& doc) {
  MetricStats stats;
  stats.mean = doc.at("mean").get<double>();
  stats.stddev = doc.at("stddev").get<double>();
  stats.per_fold = doc.at("per_fold").get<std::vector<double>>();
  return stats;
}

json seat_to_json(const SeatResult& seat) {
  json doc;
  doc["test_statistic"] = seat.test_statistic;
  doc["effect_size"] = seat.effect_size;
  doc["associations"] = seat.associations;
  doc["warnings"] = seat.warnings;
  return doc;
}

SeatResult seat_from_json(const json& doc) {
  SeatResult seat;
  seat.test_statistic = doc.at("test_statistic").get<double>();
  seat.effect_size = doc.at("effect_size").get<double>();
  seat.associations = doc.at("associations").get<std::map<std::string, double>>();
  seat.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return seat;
}

json lpbs_to_json(const LpbsResult& lpbs) {
  json doc;
  doc["score"] = lpbs.score;
  doc["per_template"] = lpbs.per_template;
  json terms = json::array();
  for (const LpbsTerm& term : lpbs.terms) {
    json t;
    t["template_index"] = term.template_index;
    t["target"] = term.target;
    t["female"] = term.female;
    t["male"] = term.male;
    t["ls_female"] = term.ls_female;
    t["ls_male"] = term.ls_male;
    terms.push_back(std::move(t));
  }
  doc["terms"] = std::move(terms);
  doc["warnings"] = lpbs.warnings;
  return doc;
}

LpbsResult lpbs_from_json(const json& doc) {
  LpbsResult lpbs;
  lpbs.score = doc.at("score").get<double>();
  lpbs.per_template = doc.at("per_template").get<std::vector<double>>();
  for (const json& t : doc.at("terms")) {
    LpbsTerm term;
    term.template_index = t.at("template_index").get<int>();
    term.target = t.at("target").get<std::string>();
    term.female = t.at("female").get<std::string>();
    term.male = t.at("male").get<std::string>();
    term.ls_female = t.at("ls_female").get<double>();
    term.ls_male = t.at("ls_male").get<double>();
    lpbs.terms.push_back(std::move(term));
  }
  lpbs.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return lpbs;
}

json probe_to_json(const ProbeReport& probe) {
  json doc;
  doc["gender_accuracy"] = probe.gender_accuracy;
  doc["gender_accuracy_occurrences"] = probe.gender_accuracy_occurrences;
  doc["bias_accuracy"] = probe.bias_accuracy;
  doc["mean_bias_confidence"] = probe.mean_bias_confidence;
  doc["p_value"] = probe.p_value;
  doc["train_pair_count"] = probe.train_pair_count;
  doc["test_pair_count"] = probe.test_pair_count;
  json scores;
  for (const auto& [word, score] : probe.stereotype_word_scores) {
    json s;
    s["mean_score"] = score.mean_score;
    s["female_vote_fraction"] = score.female_vote_fraction;
    s["predicted_female"] = score.predicted_female;
    scores[word] = std::move(s);
  }
  doc["stereotype_word_scores"] = std::move(scores);
  doc["warnings"] = probe.warnings;
  return doc;
}

ProbeReport probe_from_json(const json& doc) {
  ProbeReport probe;
  probe.gender_accuracy = doc.at("gender_accuracy").get<double>();
  probe.gender_accuracy_occurrences = doc.at("gender_accuracy_occurrences").get<double>();
  probe.bias_accuracy = doc.at("bias_accuracy").get<double>();
  probe.mean_bias_confidence = doc.at("mean_bias_confidence").get<double>();
  probe.p_value = doc.at("p_value").get<double>();
  probe.train_pair_count = doc.at("train_pair_count").get<int>();
  probe.test_pair_count = doc.at("test_pair_count").get<int>();
  const json& scores = doc.at("stereotype_word_scores");
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    WordBiasScore score;
    score.mean_score = it->at("mean_score").get<double>();
    score.female_vote_fraction = it->at("female_vote_fraction").get<double>();
    score.predicted_female = it->at("predicted_female").get<bool>();
    probe.stereotype_word_scores[it.key()] = score;
  }
  probe.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return probe;
}

json extrinsic_to_json(const ExtrinsicReport& ext) {
  json doc;
  doc["folds"] = ext.folds;
  doc["num_classes"] = ext.num_classes;
  doc["intervention"] = ext.intervention;
  doc["tprd"] = stats_to_json(ext.tprd);
  doc["fprd"] = stats_to_json(ext.fprd);
  doc["accuracy_female"] = stats_to_json(ext.accuracy_female);
  doc["accuracy_male"] = stats_to_json(ext.accuracy_male);
  doc["cf"] = stats_to_json(ext.cf);
  doc["cf_tprd"] = stats_to_json(ext.cf_tprd);
  doc["cf_fprd"] = stats_to_json(ext.cf_fprd);
  doc["cf_accuracy_female"] = stats_to_json(ext.cf_accuracy_female);
  doc["cf_accuracy_male"] = stats_to_json(ext.cf_accuracy_male);
  doc["warnings"] = ext.warnings;
  return doc;
}

ExtrinsicReport extrinsic_from_json(const json& doc) {
  ExtrinsicReport ext;
  ext.folds = doc.at("folds").get<int>();
  ext.num_classes = doc.at("num_classes").get<int>();
  ext.intervention = doc.at("intervention").get<std::string>();
  ext.tprd = stats_from_json(doc.at("tprd"));
  ext.fprd = stats_from_json(doc.at("fprd"));
  ext.accuracy_female = stats_from_json(doc.at("accuracy_female"));
  ext.accuracy_male = stats_from_json(doc.at("accuracy_male"));
  ext.cf = stats_from_json(doc.at("cf"));
  ext.cf_tprd = stats_from_json(doc.at("cf_tprd"));
  ext.cf_fprd = stats_from_json(doc.at("cf_fprd"));
  ext.cf_accuracy_female = stats_from_json(doc.at("cf_accuracy_female"));
  ext.cf_accuracy_male = stats_from_json(doc.at("cf_accuracy_male"));
  ext.warnings = doc.at("warnings").get<std::vector<std::string>>();
  return ext;
}

json stage_to_json(const StageRecord& stage) {
  json doc;
  doc["name"] = stage.name;
  doc["status"] = stage.status;
  doc["seconds"] = stage.seconds;
  doc["cached"] = stage.cached;
  doc["error"] = stage.error;
  doc["notes"] = stage.notes;
  return doc;
}

StageRecord stage_from_json(const json& doc) {
  StageRecord stage;
  stage.name = doc.at("name").get<std::string>();
  stage.status = doc.at("status").get<std::string>();
  stage.seconds = doc.at("seconds").get<double>();
  stage.cached = doc.at("cached").get<bool>();
  stage.error = doc.at("error").get<std::string>();
  stage.notes = doc.at("notes").get<std::vector<std::string>>();
  return stage;
}

json provenance_to_json(const Provenance& p) {
  json doc;
  doc["config_hash"] = p.config_hash;
  doc["toolkit_version"] = p.toolkit_version;
  doc["model_identifier"] = p.model_identifier;
  doc["variant_identifier"] = p.variant_identifier;
  doc["lexicon_hash"] = p.lexicon_hash;
  doc["corpus_hash"] = p.corpus_hash;
  doc["dataset_hash"] = p.dataset_hash;
  doc["wall_clock_seconds"] = p.wall_clock_seconds;
  doc["representation_note"] = p.representation_note;
  return doc;
}

Provenance provenance_from_json(const json& doc) {
  Provenance p;
  p.config_hash = doc.at("config_hash").get<std::string>();
  p.toolkit_version = doc.at("toolkit_version").get<std::string>();
  p.model_identifier = doc.at("model_identifier").get<std::string>();
  p.variant_identifier = doc.at("variant_identifier").get<std::string>();
  p.lexicon_hash = doc.at("lexicon_hash").get<std::string>();
  p.corpus_hash = doc.at("corpus_hash").get<std::string>();
  p.dataset_hash = doc.at("dataset_hash").get<std::string>();
  p.wall_clock_seconds = doc.at("wall_clock_seconds").get<double>();
  p.representation_note = doc.at("representation_note").get<std::string>();
  return p;
}

// A minimal deterministic grouped bar chart.
std::string bar_chart_svg(const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars) {
  const int bar_width = 46;
  const int gap = 28;
  const int left = 24;
  const int top = 34;
  const int plot_height = 150;
  const int width = left + static_cast<int>(bars.size()) * (bar_width + gap) + left;
  const int height = top + plot_height + 48;

  double lo = 0.0, hi = 0.0;
  for (const auto& [label, value] : bars) {
    lo = std::min(lo, value);
    hi = std::max(hi, value);
  }
  if (hi == lo) hi = lo + 1.0;
  auto y_of = [&](double v) { return top + (hi - v) * plot_height / (hi - lo); };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) +
         "\" height=\"" + std::to_string(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg += "<text x=\"" + std::to_string(left) +
         "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" + title + "</text>\n";
  const double zero_y = y_of(0.0);
  svg += "<line x1=\"" + std::to_string(left) + "\" y1=\"" + fmt_display(zero_y) + "\" x2=\"" +
         std::to_string(width - left) + "\" y2=\"" + fmt_display(zero_y) +
         "\" stroke=\"#888\" stroke-width=\"1\"/>\n";
  int x = left + gap / 2;
  for (const auto& [label, value] : bars) {
    const double y = y_of(value);
    const double bar_top = std::min(y, zero_y);
    const double bar_height = std::max(std::abs(zero_y - y), 0.5);
    svg += "<rect x=\"" + std::to_string(x) + "\" y=\"" + fmt_display(bar_top) + "\" width=\"" +
           std::to_string(bar_width) + "\" height=\"" + fmt_display(bar_height) +
           "\" fill=\"#4477aa\"/>\n";
    svg += "<text x=\"" + std::to_string(x + bar_width / 2) + "\" y=\"" +
           fmt_display(bar_top - 4.0) +
           "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" +
           fmt_display(value) + "</text>\n";
    svg += "<text x=\"" + std::to_string(x + bar_width / 2) + "\" y=\"" +
           std::to_string(top + plot_height + 16) +
           "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" + label +
           "</text>\n";
    x += bar_width + gap;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace

json to_json(const SeatResult& seat) { return seat_to_json(seat); }
json to_json(const LpbsResult& lpbs) { return lpbs_to_json(lpbs); }
json to_json(const ProbeReport& probe) { return probe_to_json(probe); }
json to_json(const ExtrinsicReport& extrinsic) { return extrinsic_to_json(extrinsic); }

std::string mitigation_name(Mitigation mitigation) {
  switch (mitigation) {
    case Mitigation::none: return "none";
    case Mitigation::sent_debias: return "sent_debias";
    case Mitigation::context_debias: return "context_debias";
    case Mitigation::cda: return "cda";
  }
  throw ValidationError("unknown mitigation value");
}

Mitigation mitigation_from_name(const std::string& name) {
  if (name == "none") return Mitigation::none;
  if (name == "sent_debias" || name == "sent-debias") return Mitigation::sent_debias;
  if (name == "context_debias" || name == "context-debias") return Mitigation::context_debias;
  if (name == "cda") return Mitigation::cda;
  throw ValidationError("unknown mitigation '" + name +
                        "'; expected none, sent_debias, context_debias or cda");
}

AuditConfig AuditConfig::from_json(const json& doc) {
  expect_object(doc, "the config document");
  expect_keys(doc, "config",
              {"format", "version", "model", "lexicon", "corpus", "templates", "output_dir",
               "cache_dir", "seed", "jobs", "harvest_cap", "mitigation", "mitigations",
               "sent_debias", "context_debias", "cda", "metrics", "probe", "downstream"});
  AuditConfig config;
  try {
    if (const json* v = find(doc, "format"); v && v->get<std::string>() != kConfigFormatName)
      throw ValidationError("config format marker is not '" + std::string(kConfigFormatName) +
                            "'");
    if (const json* v = find(doc, "version"); v && v->get<int>() != kFormatVersion)
      throw ValidationError("unsupported config version");
    if (const json* v = find(doc, "model")) config.model = v->get<std::string>();
    if (const json* v = find(doc, "lexicon")) config.lexicon_path = v->get<std::string>();
    if (const json* v = find(doc, "corpus")) config.corpus_path = v->get<std::string>();
    if (const json* v = find(doc, "templates")) config.templates_path = v->get<std::string>();
    if (const json* v = find(doc, "output_dir")) config.output_dir = v->get<std::string>();
    if (const json* v = find(doc, "cache_dir")) config.cache_dir = v->get<std::string>();
    if (const json* v = find(doc, "seed")) config.seed = v->get<std::uint64_t>();
    if (const json* v = find(doc, "jobs")) config.jobs = v->get<int>();
    if (const json* v = find(doc, "harvest_cap")) config.harvest_cap = v->get<int>();

    if (find(doc, "mitigation") && find(doc, "mitigations"))
      throw ValidationError("config sets both 'mitigation' and 'mitigations'");
    if (const json* v = find(doc, "mitigation"))
      config.mitigations = {mitigation_from_name(v->get<std::string>())};
    if (const json* v = find(doc, "mitigations")) {
      config.mitigations.clear();
      for (const json& m : *v) config.mitigations.push_back(mitigation_from_name(m.get<std::string>()));
    }

    if (const json* v = find(doc, "sent_debias")) {
      expect_object(*v, "sent_debias");
      expect_keys(*v, "sent_debias", {"components", "cap", "equalize"});
      if (const json* f = find(*v, "components")) config.sent_debias.components = f->get<int>();
      if (const json* f = find(*v, "cap")) config.sent_debias.cap = f->get<int>();
      if (const json* f = find(*v, "equalize")) config.sent_debias.equalize = f->get<bool>();
    }
    if (const json* v = find(doc, "context_debias")) {
      expect_object(*v, "context_debias");
      expect_keys(*v, "context_debias",
                  {"alpha", "beta", "layers", "epochs", "learning_rate", "max_backtracks",
                   "sentence_cap"});
      auto& cd = config.context_debias;
      if (const json* f = find(*v, "alpha")) cd.objective.alpha = f->get<double>();
      if (const json* f = find(*v, "beta")) cd.objective.beta = f->get<double>();
      if (const json* f = find(*v, "layers")) cd.objective.layers = f->get<std::vector<int>>();
      if (const json* f = find(*v, "epochs")) cd.schedule.epochs = f->get<int>();
      if (const json* f = find(*v, "learning_rate")) cd.schedule.learning_rate = f->get<double>();
      if (const json* f = find(*v, "max_backtracks")) cd.schedule.max_backtracks = f->get<int>();
      if (const json* f = find(*v, "sentence_cap")) cd.sentence_cap = f->get<int>();
    }
    if (const json* v = find(doc, "cda")) {
      expect_object(*v, "cda");
      expect_keys(*v, "cda", {"epochs", "learning_rate", "mask_probability"});
      if (const json* f = find(*v, "epochs")) config.cda.epochs = f->get<int>();
      if (const json* f = find(*v, "learning_rate")) config.cda.learning_rate = f->get<double>();
      if (const json* f = find(*v, "mask_probability"))
        config.cda.mask_probability = f->get<double>();
    }
    if (const json* v = find(doc, "metrics")) {
      expect_object(*v, "metrics");
      expect_keys(*v, "metrics", {"seat", "attribute_lpbs", "target_lpbs", "probe", "extrinsic"});
      if (const json* f = find(*v, "seat")) config.metrics.seat = f->get<bool>();
      if (const json* f = find(*v, "attribute_lpbs")) config.metrics.attribute_lpbs = f->get<bool>();
      if (const json* f = find(*v, "target_lpbs")) config.metrics.target_lpbs = f->get<bool>();
      if (const json* f = find(*v, "probe")) config.metrics.probe = f->get<bool>();
      if (const json* f = find(*v, "extrinsic")) config.metrics.extrinsic = f->get<bool>();
    }
    if (const json* v = find(doc, "probe")) {
      expect_object(*v, "probe");
      expect_keys(*v, "probe",
                  {"epochs", "learning_rate", "train_fraction", "randomization_iterations"});
      if (const json* f = find(*v, "epochs")) config.probe.epochs = f->get<int>();
      if (const json* f = find(*v, "learning_rate")) config.probe.learning_rate = f->get<double>();
      if (const json* f = find(*v, "train_fraction")) config.probe.train_fraction = f->get<double>();
      if (const json* f = find(*v, "randomization_iterations"))
        config.probe.randomization_iterations = f->get<int>();
    }
    if (const json* v = find(doc, "downstream")) {
      expect_object(*v, "downstream");
      expect_keys(*v, "downstream",
                  {"dataset", "type", "columns", "intervention", "interventions", "folds",
                   "finetune", "swap_names", "professions_per_gender"});
      auto& ds = config.downstream;
      if (const json* f = find(*v, "dataset")) ds.dataset_path = f->get<std::string>();
      if (const json* f = find(*v, "type")) ds.dataset_type = f->get<std::string>();
      if (const json* f = find(*v, "columns")) {
        expect_object(*f, "downstream.columns");
        expect_keys(*f, "downstream.columns",
                    {"delimiter", "text", "label", "gender", "profession", "toxicity", "female",
                     "male"});
        if (const json* c = find(*f, "delimiter")) {
          std::string d = c->get<std::string>();
          if (d.size() != 1) throw ValidationError("columns.delimiter must be one character");
          ds.columns.delimiter = d[0];
        }
        if (const json* c = find(*f, "text")) ds.columns.text = c->get<std::string>();
        if (const json* c = find(*f, "label")) ds.columns.label = c->get<std::string>();
        if (const json* c = find(*f, "gender")) ds.columns.gender = c->get<std::string>();
        if (const json* c = find(*f, "profession")) ds.columns.profession = c->get<std::string>();
        if (const json* c = find(*f, "toxicity")) ds.columns.toxicity = c->get<std::string>();
        if (const json* c = find(*f, "female")) ds.columns.female = c->get<std::string>();
        if (const json* c = find(*f, "male")) ds.columns.male = c->get<std::string>();
      }
      if (find(*v, "intervention") && find(*v, "interventions"))
        throw ValidationError("config sets both 'intervention' and 'interventions'");
      if (const json* f = find(*v, "intervention"))
        ds.interventions = {intervention_from_name(f->get<std::string>())};
      if (const json* f = find(*v, "interventions")) {
        ds.interventions.clear();
        for (const json& i : *f)
          ds.interventions.push_back(intervention_from_name(i.get<std::string>()));
      }
      if (const json* f = find(*v, "folds")) ds.folds = f->get<int>();
      if (const json* f = find(*v, "finetune")) {
        expect_object(*f, "downstream.finetune");
        expect_keys(*f, "downstream.finetune",
                    {"epochs", "learning_rate", "batch_size", "sequence_length"});
        if (const json* c = find(*f, "epochs")) ds.finetune.epochs = c->get<int>();
        if (const json* c = find(*f, "learning_rate"))
          ds.finetune.learning_rate = c->get<double>();
        if (const json* c = find(*f, "batch_size")) ds.finetune.batch_size = c->get<int>();
        if (const json* c = find(*f, "sequence_length"))
          ds.finetune.sequence_length = c->get<int>();
      }
      if (const json* f = find(*v, "swap_names")) ds.swap_names = f->get<bool>();
      if (const json* f = find(*v, "professions_per_gender"))
        ds.professions_per_gender = f->get<int>();
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed config value: ") + e.what());
  }
  return config;
}

AuditConfig AuditConfig::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

json AuditConfig::to_json() const {
  json doc;
  doc["format"] = kConfigFormatName;
  doc["version"] = kFormatVersion;
  doc["model"] = model;
  doc["lexicon"] = lexicon_path;
  doc["corpus"] = corpus_path;
  doc["templates"] = templates_path;
  doc["output_dir"] = output_dir;
  doc["cache_dir"] = cache_dir;
  doc["seed"] = seed;
  doc["jobs"] = jobs;
  doc["harvest_cap"] = harvest_cap;
  json mitigations_doc = json::array();
  for (Mitigation m : mitigations) mitigations_doc.push_back(mitigation_name(m));
  doc["mitigations"] = std::move(mitigations_doc);
  doc["sent_debias"] = {{"components", sent_debias.components},
                        {"cap", sent_debias.cap},
                        {"equalize", sent_debias.equalize}};
  doc["context_debias"] = {{"alpha", context_debias.objective.alpha},
                           {"beta", context_debias.objective.beta},
                           {"layers", context_debias.objective.layers},
                           {"epochs", context_debias.schedule.epochs},
                           {"learning_rate", context_debias.schedule.learning_rate},
                           {"max_backtracks", context_debias.schedule.max_backtracks},
                           {"sentence_cap", context_debias.sentence_cap}};
  doc["cda"] = {{"epochs", cda.epochs},
                {"learning_rate", cda.learning_rate},
                {"mask_probability", cda.mask_probability}};
  doc["metrics"] = {{"seat", metrics.seat},
                    {"attribute_lpbs", metrics.attribute_lpbs},
                    {"target_lpbs", metrics.target_lpbs},
                    {"probe", metrics.probe},
                    {"extrinsic", metrics.extrinsic}};
  doc["probe"] = {{"epochs", probe.epochs},
                  {"learning_rate", probe.learning_rate},
                  {"train_fraction", probe.train_fraction},
                  {"randomization_iterations", probe.randomization_iterations}};
  json interventions_doc = json::array();
  for (Intervention i : downstream.interventions)
    interventions_doc.push_back(intervention_name(i));
  doc["downstream"] = {
      {"dataset", downstream.dataset_path},
      {"type", downstream.dataset_type},
      {"columns",
       {{"delimiter", std::string(1, downstream.columns.delimiter)},
        {"text", downstream.columns.text},
        {"label", downstream.columns.label},
        {"gender", downstream.columns.gender},
        {"profession", downstream.columns.profession},
        {"toxicity", downstream.columns.toxicity},
        {"female", downstream.columns.female},
        {"male", downstream.columns.male}}},
      {"interventions", std::move(interventions_doc)},
      {"folds", downstream.folds},
      {"finetune",
       {{"epochs", downstream.finetune.epochs},
        {"learning_rate", downstream.finetune.learning_rate},
        {"batch_size", downstream.finetune.batch_size},
        {"sequence_length", downstream.finetune.sequence_length}}},
      {"swap_names", downstream.swap_names},
      {"professions_per_gender", downstream.professions_per_gender}};
  return doc;
}

bool AuditConfig::corpus_required() const {
  if (metrics.seat || metrics.probe) return true;
  if (!metrics.any()) return false;
  return std::any_of(mitigations.begin(), mitigations.end(),
                     [](Mitigation m) { return m != Mitigation::none; });
}

void AuditConfig::validate() const {
  auto require = [](bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
  };
  namespace fs = std::filesystem;

  require(!model.empty(), "config.model must name a model");
  require(!output_dir.empty(), "config.output_dir must be set");
  require(jobs >= 1, "config.jobs must be at least 1");
  require(harvest_cap >= 1, "config.harvest_cap must be at least 1");
  require(!mitigations.empty(), "config.mitigations must not be empty");
  for (std::size_t i = 0; i < mitigations.size(); ++i)
    for (std::size_t j = i + 1; j < mitigations.size(); ++j)
      require(mitigations[i] != mitigations[j],
              "config.mitigations repeats '" + mitigation_name(mitigations[i]) + "'");

  if (!lexicon_path.empty())
    require(fs::exists(lexicon_path), "lexicon file does not exist: " + lexicon_path);
  if (!templates_path.empty())
    require(fs::exists(templates_path), "template file does not exist: " + templates_path);
  if (corpus_required()) {
    require(!corpus_path.empty(), "the configured stages need a corpus");
    require(fs::exists(corpus_path), "corpus file does not exist: " + corpus_path);
  } else if (!corpus_path.empty()) {
    require(fs::exists(corpus_path), "corpus file does not exist: " + corpus_path);
  }

  bool uses = false;
  for (Mitigation m : mitigations) uses = uses || m == Mitigation::sent_debias;
  if (uses && metrics.any()) {
    require(sent_debias.components >= 1, "sent_debias.components must be at least 1");
    require(sent_debias.cap >= 1, "sent_debias.cap must be at least 1");
  }
  uses = false;
  for (Mitigation m : mitigations) uses = uses || m == Mitigation::context_debias;
  if (uses && metrics.any()) {
    require(context_debias.objective.alpha >= 0.0 && context_debias.objective.beta >= 0.0,
            "context_debias alpha and beta must be nonnegative");
    require(context_debias.objective.alpha + context_debias.objective.beta > 0.0,
            "context_debias needs alpha + beta > 0");
    for (int layer : context_debias.objective.layers)
      require(layer >= 0, "context_debias.layers entries must be nonnegative state indices");
    require(context_debias.schedule.epochs >= 1, "context_debias.epochs must be at least 1");
    require(context_debias.schedule.learning_rate > 0.0,
            "context_debias.learning_rate must be positive");
    require(context_debias.schedule.max_backtracks >= 0,
            "context_debias.max_backtracks must be nonnegative");
    require(context_debias.sentence_cap >= 1, "context_debias.sentence_cap must be at least 1");
  }
  uses = false;
  for (Mitigation m : mitigations) uses = uses || m == Mitigation::cda;
  if (uses && metrics.any()) {
    require(cda.epochs >= 1, "cda.epochs must be at least 1");
    require(cda.learning_rate > 0.0, "cda.learning_rate must be positive");
    require(cda.mask_probability > 0.0 && cda.mask_probability <= 1.0,
            "cda.mask_probability must lie in (0, 1]");
  }

  if (metrics.probe) {
    require(probe.epochs >= 1, "probe.epochs must be at least 1");
    require(probe.learning_rate > 0.0, "probe.learning_rate must be positive");
    require(probe.train_fraction > 0.0 && probe.train_fraction < 1.0,
            "probe.train_fraction must lie in (0, 1)");
    require(probe.randomization_iterations >= 2,
            "probe.randomization_iterations must be at least 2");
  }

  if (metrics.extrinsic) {
    require(!downstream.dataset_path.empty(), "extrinsic evaluation needs downstream.dataset");
    require(fs::exists(downstream.dataset_path),
            "dataset file does not exist: " + downstream.dataset_path);
    require(downstream.dataset_type == "generic" || downstream.dataset_type == "bias_in_bios" ||
                downstream.dataset_type == "jigsaw",
            "downstream.type must be generic, bias_in_bios or jigsaw");
    require(!downstream.interventions.empty(), "downstream.interventions must not be empty");
    for (std::size_t i = 0; i < downstream.interventions.size(); ++i)
      for (std::size_t j = i + 1; j < downstream.interventions.size(); ++j)
        require(downstream.interventions[i] != downstream.interventions[j],
                "downstream.interventions repeats '" +
                    intervention_name(downstream.interventions[i]) + "'");
    require(downstream.folds >= 2, "downstream.folds must be at least 2");
    require(downstream.finetune.epochs >= 1, "finetune.epochs must be at least 1");
    require(downstream.finetune.learning_rate > 0.0, "finetune.learning_rate must be positive");
    require(downstream.finetune.batch_size >= 1, "finetune.batch_size must be at least 1");
    require(downstream.finetune.sequence_length >= 1,
            "finetune.sequence_length must be at least 1");
    require(downstream.professions_per_gender >= 1,
            "downstream.professions_per_gender must be at least 1");
  }
}

std::string AuditConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

json AuditReport::to_json() const {
  json doc;
  doc["format"] = kReportFormatName;
  doc["version"] = kFormatVersion;
  doc["mitigation"] = mitigation;
  doc["intervention"] = intervention.empty() ? json() : json(intervention);
  if (intrinsic.empty()) {
    doc["intrinsic"] = json();
  } else {
    json section;
    section["seat"] = intrinsic.seat ? seat_to_json(*intrinsic.seat) : json();
    section["attribute_lpbs"] =
        intrinsic.attribute_lpbs ? lpbs_to_json(*intrinsic.attribute_lpbs) : json();
    section["target_lpbs"] = intrinsic.target_lpbs ? lpbs_to_json(*intrinsic.target_lpbs) : json();
    doc["intrinsic"] = std::move(section);
  }
  doc["probe"] = probe ? probe_to_json(*probe) : json();
  doc["extrinsic"] = extrinsic ? extrinsic_to_json(*extrinsic) : json();
  json stages_doc = json::array();
  for (const StageRecord& stage : stages) stages_doc.push_back(stage_to_json(stage));
  doc["stages"] = std::move(stages_doc);
  doc["provenance"] = provenance_to_json(provenance);
  doc["partial"] = partial;
  return doc;
}

AuditReport AuditReport::from_json(const json& doc) {
  expect_object(doc, "the report document");
  if (doc.value("format", "") != kReportFormatName)
    throw FormatError("report document lacks format marker '" + std::string(kReportFormatName) +
                      "'");
  if (doc.value("version", 0) != kFormatVersion)
    throw FormatError("unsupported report version");
  AuditReport report;
  try {
    report.mitigation = doc.at("mitigation").get<std::string>();
    if (const json* v = find(doc, "intervention")) report.intervention = v->get<std::string>();
    if (const json* v = find(doc, "intrinsic")) {
      if (const json* s = find(*v, "seat")) report.intrinsic.seat = seat_from_json(*s);
      if (const json* s = find(*v, "attribute_lpbs"))
        report.intrinsic.attribute_lpbs = lpbs_from_json(*s);
      if (const json* s = find(*v, "target_lpbs"))
        report.intrinsic.target_lpbs = lpbs_from_json(*s);
    }
    if (const json* v = find(doc, "probe")) report.probe = probe_from_json(*v);
    if (const json* v = find(doc, "extrinsic")) report.extrinsic = extrinsic_from_json(*v);
    for (const json& stage : doc.at("stages")) report.stages.push_back(stage_from_json(stage));
    report.provenance = provenance_from_json(doc.at("provenance"));
    report.partial = doc.at("partial").get<bool>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report document: ") + e.what());
  }
  return report;
}

void AuditReport::save(const std::filesystem::path& path) const {
  atomic_write_text(path, to_json().dump(2) + "\n");
}

AuditReport AuditReport::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw FormatError("report file " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(doc);
}

std::set<ReportFormat> all_report_formats() {
  return {ReportFormat::structured, ReportFormat::tabular, ReportFormat::plots};
}

ReportFormat report_format_from_name(const std::string& name) {
  if (name == "structured") return ReportFormat::structured;
  if (name == "tabular") return ReportFormat::tabular;
  if (name == "plots") return ReportFormat::plots;
  throw ValidationError("unknown report format '" + name +
                        "'; expected structured, tabular or plots");
}

namespace {

std::vector<std::pair<std::string, double>> intrinsic_bars(const IntrinsicReport& intrinsic) {
  std::vector<std::pair<std::string, double>> bars;
  if (intrinsic.seat) {
    bars.push_back({"SEAT", intrinsic.seat->test_statistic});
    bars.push_back({"SEAT-EFFECT", intrinsic.seat->effect_size});
  }
  if (intrinsic.attribute_lpbs) bars.push_back({"LPBS-ATTR", intrinsic.attribute_lpbs->score});
  if (intrinsic.target_lpbs) bars.push_back({"LPBS-TARGET", intrinsic.target_lpbs->score});
  return bars;
}

std::vector<std::pair<std::string, double>> probe_bars(const ProbeReport& probe) {
  return {{"GENDER-ACC", probe.gender_accuracy},
          {"BIAS-ACC", probe.bias_accuracy},
          {"MEAN-CONF", probe.mean_bias_confidence},
          {"P-VALUE", probe.p_value}};
}

std::vector<std::pair<std::string, double>> extrinsic_bars(const ExtrinsicReport& ext) {
  return {{"TPRD", ext.tprd.mean},
          {"FPRD", ext.fprd.mean},
          {"ACC-F", ext.accuracy_female.mean},
          {"ACC-M", ext.accuracy_male.mean},
          {"CF", ext.cf.mean},
          {"CF-TPRD", ext.cf_tprd.mean},
          {"CF-FPRD", ext.cf_fprd.mean},
          {"CF-ACC-F", ext.cf_accuracy_female.mean},
          {"CF-ACC-M", ext.cf_accuracy_male.mean}};
}

std::string extrinsic_row(const ExtrinsicReport& ext) {
  return fmt_double(ext.tprd.mean) + "," + fmt_double(ext.fprd.mean) + "," +
         fmt_double(ext.accuracy_female.mean) + "," + fmt_double(ext.accuracy_male.mean) + "," +
         fmt_double(ext.cf.mean) + "," + fmt_double(ext.cf_tprd.mean) + "," +
         fmt_double(ext.cf_fprd.mean) + "," + fmt_double(ext.cf_accuracy_female.mean) + "," +
         fmt_double(ext.cf_accuracy_male.mean);
}

}  // namespace

std::vector<std::filesystem::path> emit_report(const AuditReport& report,
                                               const std::set<ReportFormat>& formats,
                                               const std::filesystem::path& directory,
                                               const std::string& stem) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(directory, ec);
  {
    // Fail before any report file is touched if the directory is unusable.
    const fs::path scratch = directory / (stem + ".write-check");
    std::ofstream out(scratch, std::ios::binary | std::ios::trunc);
    out << "ok";
    out.close();
    if (out.fail()) throw IoError("output directory is not writable: " + directory.string());
    fs::remove(scratch, ec);
  }

  std::vector<fs::path> files;
  if (formats.count(ReportFormat::structured)) {
    const fs::path path = directory / (stem + ".json");
    report.save(path);
    files.push_back(path);
  }
  if (formats.count(ReportFormat::tabular)) {
    if (!report.intrinsic.empty()) {
      const fs::path path = directory / (stem + "-intrinsic.csv");
      std::string row;
      row += report.intrinsic.seat ? fmt_double(report.intrinsic.seat->test_statistic) : "";
      row += ",";
      row += report.intrinsic.seat ? fmt_double(report.intrinsic.seat->effect_size) : "";
      row += ",";
      row += report.intrinsic.attribute_lpbs ? fmt_double(report.intrinsic.attribute_lpbs->score)
                                             : "";
      row += ",";
      row += report.intrinsic.target_lpbs ? fmt_double(report.intrinsic.target_lpbs->score) : "";
      atomic_write_text(path, "SEAT,SEAT-EFFECT,LPBS-ATTR,LPBS-TARGET\n" + row + "\n");
      files.push_back(path);
    }
    if (report.probe) {
      const fs::path path = directory / (stem + "-probe.csv");
      const ProbeReport& p = *report.probe;
      atomic_write_text(path,
                        "GENDER-ACC,GENDER-ACC-OCC,BIAS-ACC,MEAN-CONF,P-VALUE\n" +
                            fmt_double(p.gender_accuracy) + "," +
                            fmt_double(p.gender_accuracy_occurrences) + "," +
                            fmt_double(p.bias_accuracy) + "," +
                            fmt_double(p.mean_bias_confidence) + "," + fmt_double(p.p_value) +
                            "\n");
      files.push_back(path);
    }
    if (report.extrinsic) {
      const fs::path path = directory / (stem + "-extrinsic.csv");
      atomic_write_text(path, std::string(kExtrinsicTableHeader) + "\n" +
                                  extrinsic_row(*report.extrinsic) + "\n");
      files.push_back(path);
    }
  }
  if (formats.count(ReportFormat::plots)) {
    auto emit_chart = [&](const std::string& suffix, const std::string& title,
                          const std::vector<std::pair<std::string, double>>& bars) {
      const fs::path path = directory / (stem + "-" + suffix + ".svg");
      atomic_write_text(path, bar_chart_svg(title, bars));
      files.push_back(path);
    };
    if (!report.intrinsic.empty())
      emit_chart("intrinsic", "intrinsic metrics (" + report.mitigation + ")",
                 intrinsic_bars(report.intrinsic));
    if (report.probe)
      emit_chart("probe", "probe metrics (" + report.mitigation + ")", probe_bars(*report.probe));
    if (report.extrinsic)
      emit_chart("extrinsic",
                 "extrinsic metrics (" + report.mitigation + ", " + report.intervention + ")",
                 extrinsic_bars(*report.extrinsic));
  }
  return files;
}

std::filesystem::path write_comparison_table(const std::vector<AuditReport>& reports,
                                             const std::filesystem::path& directory) {
  std::string table =
      "mitigation,intervention,SEAT,SEAT-EFFECT,LPBS-ATTR,LPBS-TARGET,GENDER-ACC,BIAS-ACC,"
      "MEAN-CONF,P-VALUE," +
      std::string(kExtrinsicTableHeader) + "\n";
  for (const AuditReport& report : reports) {
    std::string row = report.mitigation + "," + report.intervention;
    auto cell = [&](bool present, double value) {
      row += ",";
      if (present) row += fmt_double(value);
    };
    const auto& in = report.intrinsic;
    cell(in.seat.has_value(), in.seat ? in.seat->test_statistic : 0.0);
    cell(in.seat.has_value(), in.seat ? in.seat->effect_size : 0.0);
    cell(in.attribute_lpbs.has_value(), in.attribute_lpbs ? in.attribute_lpbs->score : 0.0);
    cell(in.target_lpbs.has_value(), in.target_lpbs ? in.target_lpbs->score : 0.0);
    cell(report.probe.has_value(), report.probe ? report.probe->gender_accuracy : 0.0);
    cell(report.probe.has_value(), report.probe ? report.probe->bias_accuracy : 0.0);
    cell(report.probe.has_value(), report.probe ? report.probe->mean_bias_confidence : 0.0);
    cell(report.probe.has_value(), report.probe ? report.probe->p_value : 0.0);
    const ExtrinsicReport* ext = report.extrinsic ? &*report.extrinsic : nullptr;
    cell(ext != nullptr, ext ? ext->tprd.mean : 0.0);
    cell(ext != nullptr, ext ? ext->fprd.mean : 0.0);
    cell(ext != nullptr, ext ? ext->accuracy_female.mean : 0.0);
    cell(ext != nullptr, ext ? ext->accuracy_male.mean : 0.0);
    cell(ext != nullptr, ext ? ext->cf.mean : 0.0);
    cell(ext != nullptr, ext ? ext->cf_tprd.mean : 0.0);
    cell(ext != nullptr, ext ? ext->cf_fprd.mean : 0.0);
    cell(ext != nullptr, ext ? ext->cf_accuracy_female.mean : 0.0);
    cell(ext != nullptr, ext ? ext->cf_accuracy_male.mean : 0.0);
    table += row + "\n";
  }
  const std::filesystem::path path = directory / "comparison.csv";
  atomic_write_text(path, table);
  return path;
}

}  // namespace biasaudit
