#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "ssda/config.hpp"
#include "ssda/data.hpp"
#include "ssda/report.hpp"
#include "ssda/training.hpp"

namespace ssda {

/// The split a config describes: generated or loaded, anchors sampled with
/// kShot per class using the training seed.
SsdaSplit buildSplit(const TrainConfig& config);

/// Manifest of the data a config trains on (spec echo or file paths) and its id.
nlohmann::json benchmarkManifest(const TrainConfig& config);
std::string benchmarkId(const TrainConfig& config);

struct ExperimentOutcome {
  ExperimentReport report;
  TrainState stage1;
  std::optional<TrainState> stage2;
};

/// Split -> stage I -> stage II (when enabled) -> evaluation of the
/// configured model on held-out target samples.
ExperimentOutcome runExperiment(const TrainConfig& config, const std::string& preset = "custom");

}  // namespace ssda
