#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "biasaudit/audit.hpp"
#include "biasaudit/corpus.hpp"
#include "biasaudit/debias.hpp"
#include "biasaudit/downstream.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/intrinsic.hpp"
#include "biasaudit/lexicon.hpp"
#include "biasaudit/linear_model.hpp"
#include "biasaudit/model.hpp"
#include "biasaudit/probe.hpp"

namespace py = pybind11;

namespace {

using namespace biasaudit;

// Const model handle shared between the C++ pipeline and Python callers.
struct ModelHandle {
  ModelPtr ptr;

  const Model& get() const {
    if (!ptr) throw ValidationError("model handle is empty");
    return *ptr;
  }
};

std::vector<std::pair<std::string, std::string>> pairs_to_py(const std::vector<WordPair>& pairs) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(pairs.size());
  for (const WordPair& p : pairs) out.push_back({p.female, p.male});
  return out;
}

std::vector<WordPair> pairs_from_py(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::vector<WordPair> out;
  out.reserve(pairs.size());
  for (const auto& [f, m] : pairs) out.push_back({f, m});
  return out;
}

std::set<ReportFormat> formats_from_names(const std::vector<std::string>& names) {
  std::set<ReportFormat> formats;
  for (const std::string& name : names) formats.insert(report_format_from_name(name));
  return formats;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  using namespace biasaudit;

  m.doc() = "gender bias auditing toolkit for contextualized language models";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<CoverageError>(m, "CoverageError", PyExc_ValueError);
  py::register_exception<CapabilityError>(m, "CapabilityError", PyExc_TypeError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::class_<Lexicon>(m, "Lexicon")
      .def_static("load", &Lexicon::load, py::arg("path"))
      .def_static("default", &default_lexicon)
      .def_static(
          "from_parts",
          [](const std::vector<std::pair<std::string, std::string>>& attribute_pairs,
             std::vector<std::string> stereotypes_female,
             std::vector<std::string> stereotypes_male,
             const std::vector<std::pair<std::string, std::string>>& name_pairs) {
            return Lexicon::from_parts(pairs_from_py(attribute_pairs),
                                       std::move(stereotypes_female),
                                       std::move(stereotypes_male), pairs_from_py(name_pairs));
          },
          py::arg("attribute_pairs"), py::arg("stereotypes_female"),
          py::arg("stereotypes_male"), py::arg("name_pairs") = std::vector<std::pair<std::string, std::string>>{})
      .def("save", &Lexicon::save, py::arg("path"))
      .def("attribute_pairs", [](const Lexicon& l) { return pairs_to_py(l.attribute_pairs()); })
      .def("name_pairs", [](const Lexicon& l) { return pairs_to_py(l.name_pairs()); })
      .def("stereotypes_female", &Lexicon::stereotypes_female)
      .def("stereotypes_male", &Lexicon::stereotypes_male)
      .def("attribute_words", &Lexicon::attribute_words)
      .def("stereotype_words", &Lexicon::stereotype_words)
      .def("counterfactual", &Lexicon::counterfactual, py::arg("word"),
           py::arg("include_names") = true);

  m.def(
      "swap_gender_terms",
      [](const std::string& text, const Lexicon& lexicon, bool include_names) {
        int count = 0;
        std::string swapped = swap_gender_terms(text, lexicon, include_names, &count);
        return py::make_tuple(swapped, count);
      },
      py::arg("text"), py::arg("lexicon"), py::arg("include_names") = true);
  m.def("scrub_text", &scrub_text, py::arg("text"), py::arg("lexicon"));

  py::class_<ModelHandle>(m, "Model")
      .def_property_readonly("identifier",
                             [](const ModelHandle& h) { return h.get().info().identifier; })
      .def_property_readonly("hidden_size",
                             [](const ModelHandle& h) { return h.get().info().hidden_size; })
      .def_property_readonly(
          "max_sequence_length",
          [](const ModelHandle& h) { return h.get().info().max_sequence_length; })
      .def("vocabulary",
           [](const ModelHandle& h) { return h.get().vocabulary()->tokens(); })
      .def("is_single_token",
           [](const ModelHandle& h, const std::string& word) {
             return h.get().is_single_token(word);
           },
           py::arg("word"))
      .def(
          "embed_occurrences",
          [](const ModelHandle& h, const std::string& sentence, const std::string& word) {
            std::vector<std::pair<int, Eigen::VectorXd>> out;
            for (const Occurrence& occ : h.get().embed_occurrences(sentence, word))
              out.push_back({occ.position, occ.vector});
            return out;
          },
          py::arg("sentence"), py::arg("word"))
      .def(
          "pooled_representation",
          [](const ModelHandle& h, const std::string& text) {
            return h.get().pooled_representation(text);
          },
          py::arg("text"))
      .def(
          "masked_probabilities",
          [](const ModelHandle& h, const std::string& template_text) {
            return h.get().masked_distribution(template_text).as_map();
          },
          py::arg("template_text"))
      .def(
          "save",
          [](const ModelHandle& h, const std::filesystem::path& path) {
            const auto* linear = dynamic_cast<const LinearContextModel*>(&h.get());
            if (!linear)
              throw CapabilityError("only linear context models can be saved");
            linear->save(path);
          },
          py::arg("path"));

  m.def(
      "resolve_model",
      [](const std::string& identifier) { return ModelHandle{resolve_model(identifier)}; },
      py::arg("identifier"));

  py::class_<PlantedModelConfig>(m, "PlantedModelConfig")
      .def(py::init<>())
      .def_readwrite("hidden_size", &PlantedModelConfig::hidden_size)
      .def_readwrite("num_layers", &PlantedModelConfig::num_layers)
      .def_readwrite("max_sequence_length", &PlantedModelConfig::max_sequence_length)
      .def_readwrite("gender_scale", &PlantedModelConfig::gender_scale)
      .def_readwrite("attribute_leak", &PlantedModelConfig::attribute_leak)
      .def_readwrite("stereotype_scale", &PlantedModelConfig::stereotype_scale)
      .def_readwrite("stereotype_leak", &PlantedModelConfig::stereotype_leak)
      .def_readwrite("name_scale", &PlantedModelConfig::name_scale)
      .def_readwrite("context_scale", &PlantedModelConfig::context_scale)
      .def_readwrite("noise_scale", &PlantedModelConfig::noise_scale)
      .def_readwrite("seed", &PlantedModelConfig::seed);

  m.def(
      "make_planted_model",
      [](const Lexicon& lexicon, const std::vector<std::string>& extra_vocab,
         const PlantedModelConfig& config) {
        return ModelHandle{make_planted_model(lexicon, extra_vocab, config)};
      },
      py::arg("lexicon"), py::arg("extra_vocab") = std::vector<std::string>{},
      py::arg("config") = PlantedModelConfig{});

  py::class_<EmbeddingBank>(m, "EmbeddingBank")
      .def_static("load", &EmbeddingBank::load, py::arg("path"))
      .def("save", &EmbeddingBank::save, py::arg("path"))
      .def("words", &EmbeddingBank::words)
      .def("has", &EmbeddingBank::has, py::arg("word"))
      .def("count", &EmbeddingBank::count, py::arg("word"))
      .def("mean_vector", &EmbeddingBank::mean_vector, py::arg("word"))
      .def_static("merge", &EmbeddingBank::merge, py::arg("a"), py::arg("b"));

  m.def(
      "build_bank",
      [](const ModelHandle& model, const std::vector<std::string>& corpus_lines,
         const std::vector<std::string>& words, const std::vector<std::string>& exclusion,
         int cap, std::uint64_t seed) {
        std::set<std::string> excluded(exclusion.begin(), exclusion.end());
        std::vector<SentenceOccurrence> occurrences =
            harvest_sentences(corpus_lines, words, excluded, cap, seed);
        BankMetadata metadata;
        metadata.corpus_hash = corpus_content_hash(corpus_lines);
        metadata.cap = cap;
        metadata.seed = seed;
        return EmbeddingBank::build(model.get(), occurrences, metadata);
      },
      py::arg("model"), py::arg("corpus_lines"), py::arg("words"),
      py::arg("exclusion") = std::vector<std::string>{}, py::arg("cap") = 1000,
      py::arg("seed") = 0);

  m.def(
      "seat_test_json",
      [](const EmbeddingBank& bank, const Lexicon& lexicon,
         const std::vector<std::string>& female_attributes,
         const std::vector<std::string>& male_attributes) {
        return to_json(seat_test(bank, lexicon, female_attributes, male_attributes)).dump();
      },
      py::arg("bank"), py::arg("lexicon"), py::arg("female_attributes"),
      py::arg("male_attributes"));

  m.def("default_templates", &default_templates);
  m.def(
      "attribute_lpbs_json",
      [](const ModelHandle& model, const std::vector<std::string>& templates,
         const std::vector<std::string>& targets,
         const std::vector<std::pair<std::string, std::string>>& attribute_pairs) {
        return to_json(attribute_lpbs(model.get(), templates, targets,
                                      pairs_from_py(attribute_pairs)))
            .dump();
      },
      py::arg("model"), py::arg("templates"), py::arg("targets"), py::arg("attribute_pairs"));
  m.def(
      "target_lpbs_json",
      [](const ModelHandle& model, const std::vector<std::string>& templates,
         const std::vector<std::string>& targets,
         const std::vector<std::pair<std::string, std::string>>& attribute_pairs) {
        return to_json(target_lpbs(model.get(), templates, targets,
                                   pairs_from_py(attribute_pairs)))
            .dump();
      },
      py::arg("model"), py::arg("templates"), py::arg("targets"), py::arg("attribute_pairs"));

  m.def(
      "run_probe_json",
      [](const EmbeddingBank& attribute_bank, const EmbeddingBank& stereotype_bank,
         const Lexicon& lexicon, double train_fraction, int epochs, double learning_rate,
         int randomization_iterations, std::uint64_t seed) {
        ProbeConfig config;
        config.epochs = epochs;
        config.learning_rate = learning_rate;
        return to_json(run_probe(attribute_bank, stereotype_bank, lexicon, train_fraction,
                                 config, randomization_iterations, seed))
            .dump();
      },
      py::arg("attribute_bank"), py::arg("stereotype_bank"), py::arg("lexicon"),
      py::arg("train_fraction") = 0.8, py::arg("epochs") = 300,
      py::arg("learning_rate") = 0.5, py::arg("randomization_iterations") = 100,
      py::arg("seed") = 0);

  py::class_<BiasSubspace>(m, "BiasSubspace")
      .def_static("load", &BiasSubspace::load, py::arg("path"))
      .def("save", &BiasSubspace::save, py::arg("path"))
      .def_readonly("basis", &BiasSubspace::basis)
      .def_readonly("explained_variance", &BiasSubspace::explained_variance)
      .def("k", &BiasSubspace::k)
      .def("hidden_size", &BiasSubspace::hidden_size);

  m.def(
      "compute_bias_subspace",
      [](const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs, int k) {
        return compute_bias_subspace(pairs, k);
      },
      py::arg("definition_pairs"), py::arg("k") = 1);
  m.def("sent_debias", &sent_debias, py::arg("vector"), py::arg("subspace"));
  m.def("equalize_pair", &equalize_pair, py::arg("female"), py::arg("male"),
        py::arg("subspace"));
  m.def(
      "estimate_gender_subspace",
      [](const ModelHandle& model, const Lexicon& lexicon,
         const std::vector<std::string>& corpus_lines, int components, int cap, bool equalize,
         std::uint64_t seed) {
        SentDebiasConfig config;
        config.components = components;
        config.cap = cap;
        config.equalize = equalize;
        return estimate_gender_subspace(model.get(), lexicon, corpus_lines, config, seed);
      },
      py::arg("model"), py::arg("lexicon"), py::arg("corpus_lines"), py::arg("components") = 1,
      py::arg("cap") = 200, py::arg("equalize") = false, py::arg("seed") = 0);
  m.def(
      "apply_sent_debias",
      [](const ModelHandle& model, const BiasSubspace& subspace) {
        return ModelHandle{apply_sent_debias(model.ptr, subspace)};
      },
      py::arg("model"), py::arg("subspace"));

  m.def(
      "run_context_debias",
      [](const ModelHandle& model, const Lexicon& lexicon,
         const std::vector<std::string>& attribute_sentences,
         const std::vector<std::string>& stereotype_sentences, double alpha, double beta,
         const std::vector<int>& layers, int epochs, double learning_rate) {
        ContextDebiasConfig config;
        config.alpha = alpha;
        config.beta = beta;
        config.layers = layers;
        ContextDebiasSchedule schedule;
        schedule.epochs = epochs;
        schedule.learning_rate = learning_rate;
        TrainingRecord record;
        ModelPtr debiased = run_context_debias(model.get(), lexicon, attribute_sentences,
                                               stereotype_sentences, config, schedule, &record);
        return py::make_tuple(ModelHandle{debiased}, record.epoch_losses, record.notes);
      },
      py::arg("model"), py::arg("lexicon"), py::arg("attribute_sentences"),
      py::arg("stereotype_sentences"), py::arg("alpha") = 1.0, py::arg("beta") = 1.0,
      py::arg("layers") = std::vector<int>{}, py::arg("epochs") = 10,
      py::arg("learning_rate") = 0.5);

  m.def(
      "generate_cda_corpus",
      [](const std::vector<std::string>& lines, const Lexicon& lexicon, bool include_names) {
        return generate_cda_corpus(lines, lexicon, include_names);
      },
      py::arg("lines"), py::arg("lexicon"), py::arg("include_names") = true);
  m.def(
      "cda_pretrain",
      [](const ModelHandle& model, const std::vector<std::string>& corpus_lines,
         const Lexicon& lexicon, bool include_names, int epochs, double learning_rate,
         double mask_probability, std::uint64_t seed) {
        MlmTrainConfig config;
        config.epochs = epochs;
        config.learning_rate = learning_rate;
        config.mask_probability = mask_probability;
        TrainingRecord record;
        ModelPtr trained =
            cda_pretrain(model.get(), corpus_lines, lexicon, include_names, config, seed, &record);
        return py::make_tuple(ModelHandle{trained}, record.epoch_losses);
      },
      py::arg("model"), py::arg("corpus_lines"), py::arg("lexicon"),
      py::arg("include_names") = true, py::arg("epochs") = 5, py::arg("learning_rate") = 0.05,
      py::arg("mask_probability") = 0.15, py::arg("seed") = 0);

  py::class_<LabeledExample>(m, "LabeledExample")
      .def(py::init([](const std::string& text, int label, const std::string& group,
                       const std::string& id) {
             if (group != "f" && group != "m")
               throw ValidationError("group must be 'f' or 'm'");
             LabeledExample example;
             example.text = text;
             example.label = label;
             example.group = group[0];
             example.id = id;
             return example;
           }),
           py::arg("text"), py::arg("label"), py::arg("group"), py::arg("id") = "")
      .def_readwrite("text", &LabeledExample::text)
      .def_readwrite("label", &LabeledExample::label)
      .def_property(
          "group", [](const LabeledExample& e) { return std::string(1, e.group); },
          [](LabeledExample& e, const std::string& g) {
            if (g != "f" && g != "m") throw ValidationError("group must be 'f' or 'm'");
            e.group = g[0];
          })
      .def_readwrite("id", &LabeledExample::id);

  m.def(
      "ingest_generic",
      [](const std::filesystem::path& path) { return ingest_generic(path, ColumnConfig{}); },
      py::arg("path"));
  m.def(
      "run_downstream_eval_json",
      [](const ModelHandle& model, const std::vector<LabeledExample>& examples,
         const Lexicon& lexicon, int folds, const std::string& intervention, bool swap_names,
         int epochs, double learning_rate, int batch_size, int sequence_length,
         std::uint64_t seed) {
        DownstreamConfig config;
        config.folds = folds;
        config.intervention = intervention_from_name(intervention);
        config.swap_names = swap_names;
        config.finetune.epochs = epochs;
        config.finetune.learning_rate = learning_rate;
        config.finetune.batch_size = batch_size;
        config.finetune.sequence_length = sequence_length;
        config.seed = seed;
        return to_json(run_downstream_eval(model.ptr, examples, lexicon, config)).dump();
      },
      py::arg("model"), py::arg("examples"), py::arg("lexicon"), py::arg("folds") = 10,
      py::arg("intervention") = "original", py::arg("swap_names") = true, py::arg("epochs") = 4,
      py::arg("learning_rate") = 2e-5, py::arg("batch_size") = 32,
      py::arg("sequence_length") = 100, py::arg("seed") = 0);

  m.def(
      "run_audit_json",
      [](const std::string& config_json, const std::vector<std::string>& formats) {
        AuditConfig config = AuditConfig::from_json(nlohmann::json::parse(config_json));
        AuditOutcome outcome = run_audit(config, formats_from_names(formats));
        nlohmann::json doc;
        doc["failed"] = outcome.failed;
        nlohmann::json reports = nlohmann::json::array();
        for (const AuditReport& report : outcome.reports) reports.push_back(report.to_json());
        doc["reports"] = std::move(reports);
        nlohmann::json files = nlohmann::json::array();
        for (const auto& file : outcome.files) files.push_back(file.string());
        doc["files"] = std::move(files);
        return doc.dump();
      },
      py::arg("config_json"), py::arg("formats") = std::vector<std::string>{});

  m.attr("__version__") = BIASAUDIT_VERSION;
}
