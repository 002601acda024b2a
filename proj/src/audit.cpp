#include "biasaudit/audit.hpp"

#include <atomic>
#include <chrono>
#include <optional>
#include <thread>

#include "biasaudit/corpus.hpp"
#include "biasaudit/debias.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/io.hpp"
#include "biasaudit/rng.hpp"

#ifndef BIASAUDIT_VERSION
#define BIASAUDIT_VERSION "0.0.0"
#endif

namespace biasaudit {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename Body>
bool run_stage(std::vector<StageRecord>& stages, const std::string& name, Body&& body) {
  StageRecord record;
  record.name = name;
  const auto start = Clock::now();
  try {
    body(record);
    record.seconds = seconds_since(start);
    stages.push_back(std::move(record));
    return true;
  } catch (const std::exception& e) {
    record.seconds = seconds_since(start);
    record.status = "failed";
    record.error = e.what();
    stages.push_back(std::move(record));
    return false;
  }
}

void skip_stage(std::vector<StageRecord>& stages, const std::string& name,
                const std::string& reason) {
  StageRecord record;
  record.name = name;
  record.status = "skipped";
  record.error = reason;
  stages.push_back(std::move(record));
}

struct SharedInputs {
  std::optional<Lexicon> lexicon;
  std::string lexicon_hash;
  std::vector<std::string> corpus;
  std::string corpus_hash;
  bool have_corpus = false;
  std::vector<std::string> templates;
  bool have_templates = false;
  std::vector<LabeledExample> examples;
  std::string dataset_hash;
  bool have_dataset = false;
  ModelPtr base;
  std::vector<StageRecord> stages;
};

std::string lexicon_content_hash(const Lexicon& lexicon) {
  std::string blob;
  for (const WordPair& p : lexicon.attribute_pairs()) blob += p.female + "\t" + p.male + "\n";
  blob += "--\n";
  for (const std::string& w : lexicon.stereotypes_female()) blob += w + "\n";
  blob += "--\n";
  for (const std::string& w : lexicon.stereotypes_male()) blob += w + "\n";
  blob += "--\n";
  for (const WordPair& p : lexicon.name_pairs()) blob += p.female + "\t" + p.male + "\n";
  return hex64(fnv1a64(blob));
}

void note_harvest(StageRecord& record, const HarvestReport& harvest) {
  for (const std::string& w : harvest.missing_words)
    record.notes.push_back("no corpus sentences found for word '" + w + "'");
  for (const std::string& w : harvest.low_coverage_words)
    record.notes.push_back("word '" + w + "' has fewer than " +
                           std::to_string(kLowCoverageThreshold) + " occurrences");
}

SharedInputs load_shared(const AuditConfig& config) {
  SharedInputs shared;

  run_stage(shared.stages, "lexicon", [&](StageRecord& record) {
    if (config.lexicon_path.empty()) {
      shared.lexicon.emplace(default_lexicon());
      record.notes.push_back("using the built-in lexicon");
    } else {
      shared.lexicon.emplace(Lexicon::load(config.lexicon_path));
    }
    shared.lexicon_hash = lexicon_content_hash(*shared.lexicon);
  });

  if (!config.corpus_path.empty()) {
    run_stage(shared.stages, "corpus", [&](StageRecord& record) {
      shared.corpus = load_corpus(config.corpus_path);
      shared.corpus_hash = corpus_content_hash(shared.corpus);
      shared.have_corpus = true;
      record.notes.push_back(std::to_string(shared.corpus.size()) + " lines");
    });
  }

  if (config.metrics.attribute_lpbs || config.metrics.target_lpbs) {
    run_stage(shared.stages, "templates", [&](StageRecord& record) {
      if (config.templates_path.empty()) {
        shared.templates = default_templates();
        record.notes.push_back("using the built-in templates");
      } else {
        shared.templates = load_templates(config.templates_path);
      }
      shared.have_templates = true;
    });
  }

  if (config.metrics.extrinsic) {
    run_stage(shared.stages, "dataset", [&](StageRecord& record) {
      shared.dataset_hash = hex64(fnv1a64(read_text_file(config.downstream.dataset_path)));
      IngestReport ingest;
      if (config.downstream.dataset_type == "bias_in_bios") {
        shared.examples =
            ingest_bias_in_bios(config.downstream.dataset_path, config.downstream.columns,
                                config.downstream.professions_per_gender, &ingest);
      } else if (config.downstream.dataset_type == "jigsaw") {
        shared.examples =
            ingest_jigsaw(config.downstream.dataset_path, config.downstream.columns, &ingest);
      } else {
        shared.examples =
            ingest_generic(config.downstream.dataset_path, config.downstream.columns, &ingest);
      }
      record.notes.push_back(std::to_string(ingest.rows_kept) + " of " +
                             std::to_string(ingest.rows_read) + " rows kept, " +
                             std::to_string(ingest.label_names.size()) + " classes");
      for (const std::string& w : ingest.warnings) record.notes.push_back(w);
      shared.have_dataset = true;
    });
  }

  if (config.metrics.any() || !config.model.empty()) {
    run_stage(shared.stages, "model",
              [&](StageRecord&) { shared.base = resolve_model(config.model); });
  }

  return shared;
}

struct CellOutcome {
  std::string intervention;
  std::optional<ExtrinsicReport> extrinsic;
  StageRecord stage;
};

struct MitigationOutcome {
  Mitigation mitigation = Mitigation::none;
  std::vector<StageRecord> stages;
  std::string variant_identifier;
  IntrinsicReport intrinsic;
  std::optional<ProbeReport> probe;
  std::vector<CellOutcome> cells;
};

std::vector<std::string> unique_sentences(const std::vector<SentenceOccurrence>& occurrences) {
  std::vector<std::string> lines;
  std::set<std::uint64_t> seen;
  for (const SentenceOccurrence& occ : occurrences)
    if (seen.insert(occ.sentence_id).second) lines.push_back(occ.sentence);
  return lines;
}

// Everything that can change a bank's content participates in its cache key.
std::string bank_cache_key(const AuditConfig& config, Mitigation mitigation,
                           const std::string& model_id, const std::string& corpus_hash,
                           const std::vector<std::string>& words,
                           const std::set<std::string>& exclusion) {
  std::string blob = model_id + "\n" + mitigation_name(mitigation) + "\n";
  switch (mitigation) {
    case Mitigation::none: break;
    case Mitigation::sent_debias:
      blob += config.to_json().at("sent_debias").dump();
      break;
    case Mitigation::context_debias:
      blob += config.to_json().at("context_debias").dump();
      break;
    case Mitigation::cda:
      blob += config.to_json().at("cda").dump();
      break;
  }
  blob += "\n" + corpus_hash + "\n";
  for (const std::string& w : words) blob += w + ",";
  blob += "\n";
  for (const std::string& w : exclusion) blob += w + ",";
  blob += "\n" + std::to_string(config.harvest_cap) + "\n" + std::to_string(config.seed);
  return hex64(fnv1a64(blob));
}

MitigationOutcome run_mitigation(const AuditConfig& config, const SharedInputs& shared,
                                 Mitigation mitigation) {
  MitigationOutcome out;
  out.mitigation = mitigation;
  const MetricToggles& metrics = config.metrics;

  auto skip_cells = [&](const std::string& reason) {
    if (!metrics.extrinsic) return;
    for (Intervention intervention : config.downstream.interventions) {
      CellOutcome cell;
      cell.intervention = intervention_name(intervention);
      cell.stage.name = "extrinsic";
      cell.stage.status = "skipped";
      cell.stage.error = reason;
      out.cells.push_back(std::move(cell));
    }
  };

  if (!metrics.any()) return out;
  if (!shared.base) {
    skip_stage(out.stages, "mitigation", "skipped: model unavailable");
    if (metrics.seat || metrics.probe) {
      skip_stage(out.stages, "attribute-bank", "skipped: model unavailable");
      skip_stage(out.stages, "stereotype-bank", "skipped: model unavailable");
    }
    if (metrics.seat) skip_stage(out.stages, "seat", "skipped: model unavailable");
    if (metrics.attribute_lpbs)
      skip_stage(out.stages, "attribute-lpbs", "skipped: model unavailable");
    if (metrics.target_lpbs) skip_stage(out.stages, "target-lpbs", "skipped: model unavailable");
    if (metrics.probe) skip_stage(out.stages, "probe", "skipped: model unavailable");
    skip_cells("skipped: model unavailable");
    return out;
  }

  const std::uint64_t seed = config.seed;
  ModelPtr variant;
  const bool variant_ok = run_stage(out.stages, "mitigation", [&](StageRecord& record) {
    switch (mitigation) {
      case Mitigation::none:
        variant = shared.base;
        break;
      case Mitigation::sent_debias: {
        if (!shared.lexicon.has_value()) throw ValidationError("lexicon unavailable");
        if (!shared.have_corpus) throw ValidationError("corpus unavailable");
        std::vector<std::string> warnings;
        BiasSubspace subspace =
            estimate_gender_subspace(*shared.base, *shared.lexicon, shared.corpus,
                                     config.sent_debias, substream_seed(seed, "sent-debias"),
                                     &warnings);
        for (const std::string& w : warnings) record.notes.push_back(w);
        variant = apply_sent_debias(shared.base, std::move(subspace));
        break;
      }
      case Mitigation::context_debias: {
        if (!shared.lexicon.has_value()) throw ValidationError("lexicon unavailable");
        if (!shared.have_corpus) throw ValidationError("corpus unavailable");
        HarvestReport attr_harvest, stereo_harvest;
        std::vector<SentenceOccurrence> attr_occ = harvest_sentences(
            shared.corpus, shared.lexicon->attribute_words(), {}, config.context_debias.sentence_cap,
            substream_seed(seed, "context-debias-attributes"), &attr_harvest);
        std::vector<SentenceOccurrence> stereo_occ = harvest_sentences(
            shared.corpus, shared.lexicon->stereotype_words(), {},
            config.context_debias.sentence_cap,
            substream_seed(seed, "context-debias-stereotypes"), &stereo_harvest);
        note_harvest(record, attr_harvest);
        note_harvest(record, stereo_harvest);
        TrainingRecord training;
        variant = run_context_debias(*shared.base, *shared.lexicon, unique_sentences(attr_occ),
                                     unique_sentences(stereo_occ),
                                     config.context_debias.objective,
                                     config.context_debias.schedule, &training);
        for (const std::string& note : training.notes) record.notes.push_back(note);
        if (!training.epoch_losses.empty())
          record.notes.push_back("loss " + std::to_string(training.epoch_losses.front()) +
                                 " -> " + std::to_string(training.epoch_losses.back()));
        break;
      }
      case Mitigation::cda: {
        if (!shared.lexicon.has_value()) throw ValidationError("lexicon unavailable");
        if (!shared.have_corpus) throw ValidationError("corpus unavailable");
        TrainingRecord training;
        variant = cda_pretrain(*shared.base, shared.corpus, *shared.lexicon, true, config.cda,
                               substream_seed(seed, "cda"), &training);
        for (const std::string& note : training.notes) record.notes.push_back(note);
        break;
      }
    }
    out.variant_identifier = variant->info().identifier;
    if (mitigation != Mitigation::none &&
        out.variant_identifier == shared.base->info().identifier)
      out.variant_identifier += "+" + mitigation_name(mitigation);
  });

  if (!variant_ok) {
    if (metrics.seat || metrics.probe) {
      skip_stage(out.stages, "attribute-bank", "skipped: mitigation failed");
      skip_stage(out.stages, "stereotype-bank", "skipped: mitigation failed");
    }
    if (metrics.seat) skip_stage(out.stages, "seat", "skipped: mitigation failed");
    if (metrics.attribute_lpbs)
      skip_stage(out.stages, "attribute-lpbs", "skipped: mitigation failed");
    if (metrics.target_lpbs) skip_stage(out.stages, "target-lpbs", "skipped: mitigation failed");
    if (metrics.probe) skip_stage(out.stages, "probe", "skipped: mitigation failed");
    skip_cells("skipped: mitigation failed");
    return out;
  }

  std::optional<EmbeddingBank> attribute_bank;
  std::optional<EmbeddingBank> stereotype_bank;
  if (metrics.seat || metrics.probe) {
    auto build_bank = [&](StageRecord& record, const std::vector<std::string>& words,
                          const std::set<std::string>& exclusion, const std::string& substream)
        -> EmbeddingBank {
      namespace fs = std::filesystem;
      fs::path cache_path;
      if (!config.cache_dir.empty()) {
        const std::string key = bank_cache_key(config, mitigation, out.variant_identifier,
                                               shared.corpus_hash, words, exclusion);
        cache_path = fs::path(config.cache_dir) / ("bank-" + key + ".json");
        if (fs::exists(cache_path)) {
          record.cached = true;
          record.notes.push_back("loaded from cache: " + cache_path.string());
          return EmbeddingBank::load(cache_path);
        }
      }
      if (!shared.have_corpus) throw ValidationError("corpus unavailable");
      HarvestReport harvest;
      std::vector<SentenceOccurrence> occurrences =
          harvest_sentences(shared.corpus, words, exclusion, config.harvest_cap,
                            substream_seed(config.seed, substream), &harvest);
      note_harvest(record, harvest);
      BankMetadata metadata;
      metadata.corpus_hash = shared.corpus_hash;
      metadata.cap = config.harvest_cap;
      metadata.seed = config.seed;
      std::vector<std::string> warnings;
      EmbeddingBank bank = EmbeddingBank::build(*variant, occurrences, metadata, &warnings);
      for (const std::string& w : warnings) record.notes.push_back(w);
      if (!cache_path.empty()) {
        std::error_code ec;
        fs::create_directories(cache_path.parent_path(), ec);
        bank.save(cache_path);
        record.notes.push_back("saved to cache: " + cache_path.string());
      }
      return bank;
    };

    std::set<std::string> stereotype_exclusion;
    if (shared.lexicon.has_value()) {
      for (const std::string& w : shared.lexicon->attribute_words())
        stereotype_exclusion.insert(w);
      for (const WordPair& p : shared.lexicon->name_pairs()) {
        stereotype_exclusion.insert(p.female);
        stereotype_exclusion.insert(p.male);
      }
    }

    run_stage(out.stages, "attribute-bank", [&](StageRecord& record) {
      if (!shared.lexicon.has_value()) throw ValidationError("lexicon unavailable");
      attribute_bank =
          build_bank(record, shared.lexicon->attribute_words(), {}, "harvest-attributes");
    });
    run_stage(out.stages, "stereotype-bank", [&](StageRecord& record) {
      if (!shared.lexicon.has_value()) throw ValidationError("lexicon unavailable");
      stereotype_bank = build_bank(record, shared.lexicon->stereotype_words(),
                                   stereotype_exclusion, "harvest-stereotypes");
    });
  }

  if (metrics.seat) {
    if (attribute_bank && stereotype_bank) {
      run_stage(out.stages, "seat", [&](StageRecord&) {
        EmbeddingBank merged = EmbeddingBank::merge(*attribute_bank, *stereotype_bank);
        out.intrinsic.seat = seat_test(merged, *shared.lexicon,
                                       shared.lexicon->female_attribute_words(),
                                       shared.lexicon->male_attribute_words());
      });
    } else {
      skip_stage(out.stages, "seat", "skipped: embedding banks unavailable");
    }
  }

  if (metrics.attribute_lpbs) {
    if (shared.have_templates && shared.lexicon.has_value()) {
      run_stage(out.stages, "attribute-lpbs", [&](StageRecord&) {
        out.intrinsic.attribute_lpbs =
            attribute_lpbs(*variant, shared.templates, shared.lexicon->stereotype_words(),
                           shared.lexicon->attribute_pairs());
      });
    } else {
      skip_stage(out.stages, "attribute-lpbs", "skipped: templates or lexicon unavailable");
    }
  }
  if (metrics.target_lpbs) {
    if (shared.have_templates && shared.lexicon.has_value()) {
      run_stage(out.stages, "target-lpbs", [&](StageRecord&) {
        out.intrinsic.target_lpbs =
            target_lpbs(*variant, shared.templates, shared.lexicon->stereotype_words(),
                        shared.lexicon->attribute_pairs());
      });
    } else {
      skip_stage(out.stages, "target-lpbs", "skipped: templates or lexicon unavailable");
    }
  }

  if (metrics.probe) {
    if (attribute_bank && stereotype_bank) {
      run_stage(out.stages, "probe", [&](StageRecord&) {
        ProbeConfig probe_config;
        probe_config.epochs = config.probe.epochs;
        probe_config.learning_rate = config.probe.learning_rate;
        out.probe = run_probe(*attribute_bank, *stereotype_bank, *shared.lexicon,
                              config.probe.train_fraction, probe_config,
                              config.probe.randomization_iterations, config.seed);
      });
    } else {
      skip_stage(out.stages, "probe", "skipped: embedding banks unavailable");
    }
  }

  if (metrics.extrinsic) {
    for (Intervention intervention : config.downstream.interventions) {
      CellOutcome cell;
      cell.intervention = intervention_name(intervention);
      if (!shared.have_dataset || !shared.lexicon.has_value()) {
        cell.stage.name = "extrinsic";
        cell.stage.status = "skipped";
        cell.stage.error = "skipped: dataset or lexicon unavailable";
        out.cells.push_back(std::move(cell));
        continue;
      }
      std::vector<StageRecord> holder;
      run_stage(holder, "extrinsic", [&](StageRecord&) {
        DownstreamConfig downstream;
        downstream.folds = config.downstream.folds;
        downstream.finetune = config.downstream.finetune;
        downstream.intervention = intervention;
        downstream.swap_names = config.downstream.swap_names;
        downstream.seed = config.seed;
        cell.extrinsic =
            run_downstream_eval(variant, shared.examples, *shared.lexicon, downstream);
      });
      cell.stage = holder.front();
      out.cells.push_back(std::move(cell));
    }
  }

  return out;
}

}  // namespace

AuditOutcome run_audit(const AuditConfig& config, const std::set<ReportFormat>& formats) {
  config.validate();
  const auto start = Clock::now();
  const std::string config_hash = config.hash();

  SharedInputs shared = load_shared(config);

  std::vector<MitigationOutcome> outcomes(config.mitigations.size());
  {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= config.mitigations.size()) break;
        outcomes[i] = run_mitigation(config, shared, config.mitigations[i]);
      }
    };
    const int threads =
        std::min<int>(config.jobs, static_cast<int>(config.mitigations.size()));
    if (threads <= 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
      for (std::thread& t : pool) t.join();
    }
  }

  AuditOutcome outcome;
  const double wall_clock = seconds_since(start);
  for (MitigationOutcome& mo : outcomes) {
    auto make_report = [&](const CellOutcome* cell) {
      AuditReport report;
      report.mitigation = mitigation_name(mo.mitigation);
      report.intrinsic = mo.intrinsic;
      report.probe = mo.probe;
      report.stages = shared.stages;
      report.stages.insert(report.stages.end(), mo.stages.begin(), mo.stages.end());
      if (cell) {
        report.intervention = cell->intervention;
        report.extrinsic = cell->extrinsic;
        report.stages.push_back(cell->stage);
      }
      for (const StageRecord& stage : report.stages)
        if (stage.status != "ok") report.partial = true;
      report.provenance.config_hash = config_hash;
      report.provenance.toolkit_version = BIASAUDIT_VERSION;
      report.provenance.model_identifier =
          shared.base ? shared.base->info().identifier : config.model;
      report.provenance.variant_identifier = mo.variant_identifier;
      report.provenance.lexicon_hash = shared.lexicon_hash;
      report.provenance.corpus_hash = shared.corpus_hash;
      report.provenance.dataset_hash = shared.dataset_hash;
      report.provenance.wall_clock_seconds = wall_clock;
      if (report.partial) outcome.failed = true;
      outcome.reports.push_back(std::move(report));
    };
    if (mo.cells.empty()) {
      make_report(nullptr);
    } else {
      for (const CellOutcome& cell : mo.cells) make_report(&cell);
    }
  }

  if (!formats.empty()) {
    for (const AuditReport& report : outcome.reports) {
      std::string stem = "report-" + report.mitigation;
      if (!report.intervention.empty()) stem += "-" + report.intervention;
      std::vector<std::filesystem::path> files =
          emit_report(report, formats, config.output_dir, stem);
      outcome.files.insert(outcome.files.end(), files.begin(), files.end());
    }
    if (formats.count(ReportFormat::tabular))
      outcome.files.push_back(write_comparison_table(outcome.reports, config.output_dir));
  }

  return outcome;
}

}  // namespace biasaudit
