#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "logmilp/bagging.hpp"
#include "logmilp/config.hpp"

namespace logmilp::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kConfigError = 2, kMissingArtifact = 3, kNumericFailure = 4 };

/// Runs one command (`synth`, `ingest`, `bag`, `train`, `eval`, `localize`);
/// args exclude the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Train/val/test bags for a run: from the bag cache when it exists, else from
/// precomputed embeddings, else by ingesting cfg.input.
std::array<bagging::BagDataset, 3> load_splits(const RunConfig& cfg);

}  // namespace logmilp::cli
