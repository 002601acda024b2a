#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "biasaudit/audit.hpp"
#include "biasaudit/errors.hpp"

namespace {

using biasaudit::AuditConfig;
using biasaudit::AuditOutcome;
using biasaudit::AuditReport;
using biasaudit::ReportFormat;

enum class StageSelection { all, intrinsic_only, probe_only, extrinsic_only };

struct CommonOptions {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string cache_dir;
  std::vector<std::string> formats{"structured", "tabular", "plots"};

  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* jobs_opt = nullptr;
  CLI::Option* cache_opt = nullptr;

  void attach(CLI::App* cmd, bool with_formats = true) {
    cmd->add_option("--config", config_path, "audit config file (JSON)")->required();
    out_opt = cmd->add_option("--out", out_dir, "output directory (overrides the config)");
    seed_opt = cmd->add_option("--seed", seed, "root random seed (overrides the config)");
    jobs_opt = cmd->add_option("--jobs", jobs, "parallel grid jobs (overrides the config)");
    cache_opt =
        cmd->add_option("--cache-dir", cache_dir, "artifact cache directory (overrides the config)");
    if (with_formats)
      cmd->add_option("--formats", formats, "report formats: structured, tabular, plots")
          ->delimiter(',');
  }

  AuditConfig load() const {
    AuditConfig config = AuditConfig::load(config_path);
    if (out_opt && out_opt->count()) config.output_dir = out_dir;
    if (seed_opt && seed_opt->count()) config.seed = seed;
    if (jobs_opt && jobs_opt->count()) config.jobs = jobs;
    if (cache_opt && cache_opt->count()) config.cache_dir = cache_dir;
    return config;
  }

  std::set<ReportFormat> format_set() const {
    std::set<ReportFormat> set;
    for (const std::string& name : formats) set.insert(biasaudit::report_format_from_name(name));
    return set;
  }
};

void restrict_stages(AuditConfig& config, StageSelection selection) {
  switch (selection) {
    case StageSelection::all:
      break;
    case StageSelection::intrinsic_only:
      config.metrics.probe = false;
      config.metrics.extrinsic = false;
      break;
    case StageSelection::probe_only:
      config.metrics.seat = false;
      config.metrics.attribute_lpbs = false;
      config.metrics.target_lpbs = false;
      config.metrics.probe = true;
      config.metrics.extrinsic = false;
      break;
    case StageSelection::extrinsic_only:
      config.metrics.seat = false;
      config.metrics.attribute_lpbs = false;
      config.metrics.target_lpbs = false;
      config.metrics.probe = false;
      config.metrics.extrinsic = true;
      break;
  }
}

void print_summary(const AuditOutcome& outcome) {
  for (const AuditReport& report : outcome.reports) {
    std::string cell = report.mitigation;
    if (!report.intervention.empty()) cell += "/" + report.intervention;
    std::string line = "[" + cell + "]";
    if (report.partial) line += " PARTIAL";
    if (report.intrinsic.seat)
      line += " seat=" + std::to_string(report.intrinsic.seat->effect_size);
    if (report.intrinsic.attribute_lpbs)
      line += " lpbs-attr=" + std::to_string(report.intrinsic.attribute_lpbs->score);
    if (report.intrinsic.target_lpbs)
      line += " lpbs-target=" + std::to_string(report.intrinsic.target_lpbs->score);
    if (report.probe) {
      line += " bias-acc=" + std::to_string(report.probe->bias_accuracy);
      line += " p=" + std::to_string(report.probe->p_value);
    }
    if (report.extrinsic) {
      line += " tprd=" + std::to_string(report.extrinsic->tprd.mean);
      line += " cf=" + std::to_string(report.extrinsic->cf.mean);
    }
    std::cout << line << "\n";
    for (const biasaudit::StageRecord& stage : report.stages)
      if (stage.status == "failed")
        std::cout << "  stage " << stage.name << " failed: " << stage.error << "\n";
  }
  for (const auto& file : outcome.files) std::cout << "wrote " << file.string() << "\n";
}

int run_pipeline(const CommonOptions& options, StageSelection selection) {
  AuditConfig config = options.load();
  restrict_stages(config, selection);
  AuditOutcome outcome = biasaudit::run_audit(config, options.format_set());
  print_summary(outcome);
  if (outcome.failed) {
    std::cerr << "error: one or more stages failed; reports are partial\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gender bias audit toolkit for contextualized language models"};
  app.require_subcommand(1);

  CLI::App* validate_cmd = app.add_subcommand("validate", "check a config without running");
  CommonOptions validate_opts;
  validate_opts.attach(validate_cmd, false);

  CLI::App* audit_cmd = app.add_subcommand("audit", "run the full audit grid");
  CommonOptions audit_opts;
  audit_opts.attach(audit_cmd);

  CLI::App* intrinsic_cmd = app.add_subcommand("intrinsic", "run only the intrinsic metrics");
  CommonOptions intrinsic_opts;
  intrinsic_opts.attach(intrinsic_cmd);

  CLI::App* probe_cmd = app.add_subcommand("probe", "run only the probing classifier");
  CommonOptions probe_opts;
  probe_opts.attach(probe_cmd);

  CLI::App* extrinsic_cmd = app.add_subcommand("extrinsic", "run only the downstream evaluation");
  CommonOptions extrinsic_opts;
  extrinsic_opts.attach(extrinsic_cmd);

  CLI::App* report_cmd =
      app.add_subcommand("report", "re-render reports from a structured document");
  std::string report_input;
  std::string report_out = ".";
  std::vector<std::string> report_formats{"structured", "tabular", "plots"};
  report_cmd->add_option("document", report_input, "structured report (JSON)")->required();
  report_cmd->add_option("--out", report_out, "output directory");
  report_cmd->add_option("--formats", report_formats, "report formats: structured, tabular, plots")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (validate_cmd->parsed()) {
      AuditConfig config = validate_opts.load();
      config.validate();
      std::cout << "config OK (hash " << config.hash() << ")\n";
      return 0;
    }
    if (audit_cmd->parsed()) return run_pipeline(audit_opts, StageSelection::all);
    if (intrinsic_cmd->parsed())
      return run_pipeline(intrinsic_opts, StageSelection::intrinsic_only);
    if (probe_cmd->parsed()) return run_pipeline(probe_opts, StageSelection::probe_only);
    if (extrinsic_cmd->parsed())
      return run_pipeline(extrinsic_opts, StageSelection::extrinsic_only);
    if (report_cmd->parsed()) {
      AuditReport report = AuditReport::load(report_input);
      std::set<ReportFormat> formats;
      for (const std::string& name : report_formats)
        formats.insert(biasaudit::report_format_from_name(name));
      std::string stem = std::filesystem::path(report_input).stem().string();
      for (const auto& file : biasaudit::emit_report(report, formats, report_out, stem))
        std::cout << "wrote " << file.string() << "\n";
      return 0;
    }
  } catch (const biasaudit::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const biasaudit::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
