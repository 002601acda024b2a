#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "biasaudit/debias.hpp"
#include "biasaudit/downstream.hpp"
#include "biasaudit/intrinsic.hpp"
#include "biasaudit/model.hpp"
#include "biasaudit/probe.hpp"

namespace biasaudit {

enum class Mitigation { none, sent_debias, context_debias, cda };

std::string mitigation_name(Mitigation mitigation);
Mitigation mitigation_from_name(const std::string& name);

struct MetricToggles {
  bool seat = true;
  bool attribute_lpbs = true;
  bool target_lpbs = true;
  bool probe = true;
  bool extrinsic = true;

  bool any_intrinsic() const { return seat || attribute_lpbs || target_lpbs; }
  bool any() const { return any_intrinsic() || probe || extrinsic; }
};

struct ProbeSettings {
  int epochs = 300;
  double learning_rate = 0.5;
  double train_fraction = 0.8;
  int randomization_iterations = 100;
};

struct ContextDebiasSettings {
  ContextDebiasConfig objective;
  ContextDebiasSchedule schedule;
  // Sentences harvested per word for the two objective sentence sets.
  int sentence_cap = 100;
};

struct DownstreamSettings {
  std::string dataset_path;
  std::string dataset_type = "generic";  // generic | bias_in_bios | jigsaw
  ColumnConfig columns;
  std::vector<Intervention> interventions{Intervention::original};
  int folds = 10;
  FinetuneConfig finetune;
  bool swap_names = true;
  int professions_per_gender = 7;
};

// One audit run description.  Lists under `mitigations` and
// `downstream.interventions` expand into a grid of report cells, each cell
// holding exactly one mitigation and one intervention.
struct AuditConfig {
  std::string model;
  std::string lexicon_path;    // empty: built-in lexicon
  std::string corpus_path;
  std::string templates_path;  // empty: built-in templates
  std::string output_dir = "audit-out";
  std::string cache_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  int harvest_cap = 1000;
  std::vector<Mitigation> mitigations{Mitigation::none};
  SentDebiasConfig sent_debias;
  ContextDebiasSettings context_debias;
  MlmTrainConfig cda;
  MetricToggles metrics;
  ProbeSettings probe;
  DownstreamSettings downstream;

  static AuditConfig from_json(const nlohmann::json& doc);
  static AuditConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  // Throws ValidationError on an unusable config; referenced paths must
  // exist at validation time.
  void validate() const;

  // Hash of the canonical JSON form, after defaults are applied.
  std::string hash() const;

  bool corpus_required() const;
};

struct StageRecord {
  std::string name;
  std::string status = "ok";  // ok | failed | skipped
  double seconds = 0.0;
  bool cached = false;
  std::string error;
  // Non-fatal observations: coverage gaps, training notes, cache activity.
  std::vector<std::string> notes;
};

struct Provenance {
  std::string config_hash;
  std::string toolkit_version;
  std::string model_identifier;
  std::string variant_identifier;
  std::string lexicon_hash;
  std::string corpus_hash;
  std::string dataset_hash;
  double wall_clock_seconds = 0.0;
  std::string representation_note =
      "word representations use the standard final hidden state";
};

struct IntrinsicReport {
  std::optional<SeatResult> seat;
  std::optional<LpbsResult> attribute_lpbs;
  std::optional<LpbsResult> target_lpbs;

  bool empty() const { return !seat && !attribute_lpbs && !target_lpbs; }
};

// One grid cell's results.  Sections left unset render as null in the
// structured document and are omitted from tabular output.
struct AuditReport {
  std::string mitigation = "none";
  std::string intervention;  // empty when the extrinsic stage is off
  IntrinsicReport intrinsic;
  std::optional<ProbeReport> probe;
  std::optional<ExtrinsicReport> extrinsic;
  std::vector<StageRecord> stages;
  Provenance provenance;
  bool partial = false;

  nlohmann::json to_json() const;
  static AuditReport from_json(const nlohmann::json& doc);

  void save(const std::filesystem::path& path) const;
  static AuditReport load(const std::filesystem::path& path);
};

// Section serializers, shared by the structured document and the bindings.
nlohmann::json to_json(const SeatResult& seat);
nlohmann::json to_json(const LpbsResult& lpbs);
nlohmann::json to_json(const ProbeReport& probe);
nlohmann::json to_json(const ExtrinsicReport& extrinsic);

enum class ReportFormat { structured, tabular, plots };

std::set<ReportFormat> all_report_formats();
ReportFormat report_format_from_name(const std::string& name);

inline constexpr const char* kExtrinsicTableHeader =
    "TPRD,FPRD,ACC-F,ACC-M,CF,CF-TPRD,CF-FPRD,CF-ACC-F,CF-ACC-M";

// Renders a report into `directory` using `stem` as the file-name base and
// returns the files written.  structured: <stem>.json; tabular: one CSV per
// nonempty section; plots: one SVG bar chart per nonempty section.
std::vector<std::filesystem::path> emit_report(const AuditReport& report,
                                               const std::set<ReportFormat>& formats,
                                               const std::filesystem::path& directory,
                                               const std::string& stem);

// Merged grid comparison: one CSV row per report cell.
std::filesystem::path write_comparison_table(const std::vector<AuditReport>& reports,
                                             const std::filesystem::path& directory);

}  // namespace biasaudit
