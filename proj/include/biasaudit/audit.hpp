#pragma once

#include <filesystem>
#include <set>
#include <vector>

#include "biasaudit/report.hpp"

namespace biasaudit {

struct AuditOutcome {
  std::vector<AuditReport> reports;
  std::vector<std::filesystem::path> files;
  // True when any stage of any cell failed; the reports are then partial.
  bool failed = false;
};

// Runs the full audit grid described by `config`: each mitigation is built
// once, its intrinsic and probe metrics are shared by the mitigation's
// cells, and each (mitigation, intervention) cell carries its own extrinsic
// evaluation.  Stage failures are recorded in the affected cell reports
// rather than aborting the run.  When `formats` is nonempty, one report per
// cell plus a merged comparison table are written to config.output_dir.
AuditOutcome run_audit(const AuditConfig& config, const std::set<ReportFormat>& formats);

}  // namespace biasaudit
