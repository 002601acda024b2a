#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "biasaudit/audit.hpp"
#include "biasaudit/errors.hpp"
#include "biasaudit/linear_model.hpp"
#include "doctest.h"
#include "support/audit_fixture.hpp"

using namespace biasaudit;
using biasaudit::test::AuditWorkspace;
namespace fs = std::filesystem;

namespace {

const StageRecord* find_stage(const AuditReport& report, const std::string& name) {
  for (const StageRecord& stage : report.stages)
    if (stage.name == name) return &stage;
  return nullptr;
}

}  // namespace

TEST_CASE("audit runs every stage on a planted model") {
  AuditWorkspace ws;
  AuditOutcome outcome = run_audit(ws.config, {});

  CHECK(!outcome.failed);
  CHECK(outcome.files.empty());
  REQUIRE(outcome.reports.size() == 1);
  const AuditReport& report = outcome.reports[0];

  CHECK(report.mitigation == "none");
  CHECK(report.intervention == "original");
  CHECK(!report.partial);
  for (const StageRecord& stage : report.stages) {
    CAPTURE(stage.name);
    CAPTURE(stage.error);
    CHECK(stage.status == "ok");
  }

  REQUIRE(report.intrinsic.seat.has_value());
  CHECK(std::isfinite(report.intrinsic.seat->test_statistic));
  CHECK(report.intrinsic.seat->associations.size() == 6);
  REQUIRE(report.intrinsic.attribute_lpbs.has_value());
  CHECK(report.intrinsic.attribute_lpbs->score >= 0.0);
  REQUIRE(report.intrinsic.target_lpbs.has_value());
  CHECK(report.intrinsic.target_lpbs->score >= 0.0);

  REQUIRE(report.probe.has_value());
  CHECK(report.probe->train_pair_count == 2);
  CHECK(report.probe->test_pair_count == 1);
  CHECK(report.probe->gender_accuracy >= 0.0);
  CHECK(report.probe->p_value >= 0.0);
  CHECK(report.probe->p_value <= 1.0);
  CHECK(report.probe->stereotype_word_scores.size() == 6);

  REQUIRE(report.extrinsic.has_value());
  CHECK(report.extrinsic->folds == 2);
  CHECK(report.extrinsic->num_classes == 2);
  CHECK(report.extrinsic->intervention == "original");
  CHECK(report.extrinsic->accuracy_female.per_fold.size() == 2);
  CHECK(std::isfinite(report.extrinsic->cf.mean));

  CHECK(report.provenance.config_hash == ws.config.hash());
  CHECK(!report.provenance.toolkit_version.empty());
  CHECK(report.provenance.model_identifier == "planted");
  CHECK(report.provenance.variant_identifier == "planted");
  CHECK(!report.provenance.lexicon_hash.empty());
  CHECK(!report.provenance.corpus_hash.empty());
  CHECK(!report.provenance.dataset_hash.empty());
  CHECK(report.provenance.wall_clock_seconds >= 0.0);
}

TEST_CASE("audit expands the mitigation-intervention grid in order") {
  AuditWorkspace ws;
  ws.config.mitigations = {Mitigation::none, Mitigation::sent_debias};
  ws.config.downstream.interventions = {Intervention::original, Intervention::swapping};
  // Keep the grid cheap: skip the intrinsic metrics, keep probe + extrinsic.
  ws.config.metrics.seat = false;
  ws.config.metrics.attribute_lpbs = false;
  ws.config.metrics.target_lpbs = false;

  AuditOutcome outcome = run_audit(ws.config, {});
  CHECK(!outcome.failed);
  REQUIRE(outcome.reports.size() == 4);

  CHECK(outcome.reports[0].mitigation == "none");
  CHECK(outcome.reports[0].intervention == "original");
  CHECK(outcome.reports[1].mitigation == "none");
  CHECK(outcome.reports[1].intervention == "swapping");
  CHECK(outcome.reports[2].mitigation == "sent_debias");
  CHECK(outcome.reports[2].intervention == "original");
  CHECK(outcome.reports[3].mitigation == "sent_debias");
  CHECK(outcome.reports[3].intervention == "swapping");

  for (const AuditReport& report : outcome.reports) {
    REQUIRE(report.extrinsic.has_value());
    CHECK(report.extrinsic->intervention == report.intervention);
    REQUIRE(report.probe.has_value());
  }
  // Cells of one mitigation share the probe numbers; the variants differ.
  CHECK(outcome.reports[0].probe->bias_accuracy == outcome.reports[1].probe->bias_accuracy);
  CHECK(outcome.reports[2].probe->bias_accuracy == outcome.reports[3].probe->bias_accuracy);
  CHECK(outcome.reports[0].provenance.variant_identifier == "planted");
  CHECK(outcome.reports[2].provenance.variant_identifier == "planted+sent-debias");

  // Two grid workers produce the same reports as one.
  ws.config.jobs = 2;
  AuditOutcome parallel = run_audit(ws.config, {});
  REQUIRE(parallel.reports.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(parallel.reports[i].probe->bias_accuracy == outcome.reports[i].probe->bias_accuracy);
    CHECK(parallel.reports[i].extrinsic->cf.mean == outcome.reports[i].extrinsic->cf.mean);
  }
}

TEST_CASE("audit with all metrics off reports provenance only") {
  AuditWorkspace ws;
  ws.config.metrics = MetricToggles{false, false, false, false, false};
  ws.config.corpus_path.clear();  // nothing needs the corpus now
  ws.config.validate();

  AuditOutcome outcome = run_audit(ws.config, {});
  CHECK(!outcome.failed);
  REQUIRE(outcome.reports.size() == 1);
  const AuditReport& report = outcome.reports[0];
  CHECK(report.intrinsic.empty());
  CHECK(!report.probe.has_value());
  CHECK(!report.extrinsic.has_value());
  CHECK(report.intervention.empty());
  CHECK(!report.partial);
  CHECK(find_stage(report, "lexicon") != nullptr);
  CHECK(find_stage(report, "model") != nullptr);
  CHECK(find_stage(report, "seat") == nullptr);
  CHECK(report.provenance.model_identifier == "planted");
}

TEST_CASE("audit reruns are deterministic for a fixed seed") {
  AuditWorkspace ws;
  ws.config.metrics.attribute_lpbs = false;  // determinism is covered by the other stages
  ws.config.metrics.target_lpbs = false;

  AuditOutcome first = run_audit(ws.config, {});
  AuditOutcome second = run_audit(ws.config, {});
  REQUIRE(!first.failed);
  REQUIRE(!second.failed);
  REQUIRE(first.reports.size() == 1);
  REQUIRE(second.reports.size() == 1);

  const AuditReport& a = first.reports[0];
  const AuditReport& b = second.reports[0];
  CHECK(a.intrinsic.seat->test_statistic == b.intrinsic.seat->test_statistic);
  CHECK(a.intrinsic.seat->effect_size == b.intrinsic.seat->effect_size);
  CHECK(a.probe->gender_accuracy == b.probe->gender_accuracy);
  CHECK(a.probe->bias_accuracy == b.probe->bias_accuracy);
  CHECK(a.probe->mean_bias_confidence == b.probe->mean_bias_confidence);
  CHECK(a.probe->p_value == b.probe->p_value);
  CHECK(a.extrinsic->tprd.per_fold == b.extrinsic->tprd.per_fold);
  CHECK(a.extrinsic->cf.per_fold == b.extrinsic->cf.per_fold);
  CHECK(a.extrinsic->accuracy_female.mean == b.extrinsic->accuracy_female.mean);

  // A different seed changes at least the fold assignment hashes.
  ws.config.seed = 12;
  AuditOutcome third = run_audit(ws.config, {});
  CHECK(third.reports[0].provenance.config_hash != a.provenance.config_hash);
}

TEST_CASE("audit caches embedding banks between runs") {
  AuditWorkspace ws;
  ws.config.cache_dir = ws.dir.file("cache").string();
  ws.config.metrics.attribute_lpbs = false;
  ws.config.metrics.target_lpbs = false;
  ws.config.metrics.extrinsic = false;

  AuditOutcome first = run_audit(ws.config, {});
  REQUIRE(!first.failed);
  const StageRecord* bank = find_stage(first.reports[0], "attribute-bank");
  REQUIRE(bank != nullptr);
  CHECK(!bank->cached);
  // Each bank is an index file plus a .f32 vector sidecar; count the indexes.
  int cache_indexes = 0;
  for (const auto& entry : fs::directory_iterator(ws.dir.file("cache"))) {
    CHECK(entry.path().filename().string().rfind("bank-", 0) == 0);
    if (entry.path().extension() == ".json") ++cache_indexes;
  }
  CHECK(cache_indexes == 2);

  AuditOutcome second = run_audit(ws.config, {});
  REQUIRE(!second.failed);
  for (const char* name : {"attribute-bank", "stereotype-bank"}) {
    const StageRecord* stage = find_stage(second.reports[0], name);
    REQUIRE(stage != nullptr);
    CHECK(stage->cached);
  }
  // Cached banks store float32 vectors, so metrics match to that precision.
  CHECK(second.reports[0].intrinsic.seat->test_statistic ==
        doctest::Approx(first.reports[0].intrinsic.seat->test_statistic).epsilon(1e-5));

  // Two cached runs are bit-identical to each other.
  AuditOutcome third = run_audit(ws.config, {});
  CHECK(third.reports[0].intrinsic.seat->test_statistic ==
        second.reports[0].intrinsic.seat->test_statistic);
  CHECK(third.reports[0].probe->bias_accuracy == second.reports[0].probe->bias_accuracy);
  CHECK(third.reports[0].probe->p_value == second.reports[0].probe->p_value);
}

TEST_CASE("audit records stage failures and keeps going") {
  AuditWorkspace ws;
  test::write_file(ws.dir.file("templates.txt"), "this template has no placeholders\n");
  ws.config.templates_path = ws.dir.file("templates.txt").string();
  ws.config.metrics = MetricToggles{false, true, true, false, false};
  ws.config.corpus_path.clear();
  ws.config.validate();  // the file exists; only loading it fails

  AuditOutcome outcome = run_audit(ws.config, {});
  CHECK(outcome.failed);
  REQUIRE(outcome.reports.size() == 1);
  const AuditReport& report = outcome.reports[0];
  CHECK(report.partial);

  const StageRecord* templates = find_stage(report, "templates");
  REQUIRE(templates != nullptr);
  CHECK(templates->status == "failed");
  CHECK(!templates->error.empty());
  const StageRecord* lpbs = find_stage(report, "attribute-lpbs");
  REQUIRE(lpbs != nullptr);
  CHECK(lpbs->status == "skipped");
  CHECK(!report.intrinsic.attribute_lpbs.has_value());
  // Provenance still describes the run.
  CHECK(report.provenance.config_hash == ws.config.hash());
  CHECK(report.provenance.model_identifier == "planted");
}

TEST_CASE("audit rejects an invalid config before doing any work") {
  AuditWorkspace ws;
  ws.config.downstream.folds = 1;
  CHECK_THROWS_AS(run_audit(ws.config, {}), ValidationError);
  CHECK(!fs::exists(ws.dir.file("out")));
}

TEST_CASE("audit writes report files per cell plus a comparison table") {
  AuditWorkspace ws;
  ws.config.metrics = MetricToggles{true, false, false, false, false};

  AuditOutcome outcome =
      run_audit(ws.config, {ReportFormat::structured, ReportFormat::tabular});
  REQUIRE(!outcome.failed);
  REQUIRE(!outcome.files.empty());
  for (const fs::path& file : outcome.files) CHECK(fs::exists(file));

  fs::path structured = ws.dir.file("out") / "report-none.json";
  REQUIRE(fs::exists(structured));
  AuditReport loaded = AuditReport::load(structured);
  CHECK(loaded.intrinsic.seat->test_statistic ==
        outcome.reports[0].intrinsic.seat->test_statistic);

  fs::path table = ws.dir.file("out") / "comparison.csv";
  REQUIRE(fs::exists(table));
  CHECK(outcome.files.back() == table);
  std::string content = test::read_file(table);
  CHECK(content.find("none,") != std::string::npos);

  CHECK(fs::exists(ws.dir.file("out") / "report-none-intrinsic.csv"));
}
