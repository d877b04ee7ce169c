#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssda/metrics.hpp"
#include "ssda/training.hpp"

namespace ssda {

inline constexpr int kReportSchemaVersion = 1;

/// Mean losses over one evaluation window.
struct LossPoint {
  Stage stage = Stage::kUda;
  std::int64_t iteration = 0;
  double sourceLoss = 0.0;
  double consistencyLoss = 0.0;
  double anchorLoss = 0.0;
  double distillLoss = 0.0;
  double passRate = 0.0;  // NaN when no consistency term ran in the window
};

struct ExperimentReport {
  int schemaVersion = kReportSchemaVersion;
  std::string preset = "custom";
  int kShot = 0;
  std::uint64_t seed = 0;
  /// Identifies the data; reports are only comparable when these match.
  std::string benchmarkId;
  nlohmann::json benchmark;
  nlohmann::json config;

  double stage1Accuracy = 0.0;
  PseudoLabelStats stage1PseudoLabels;
  bool stage2Ran = false;
  double stage2StudentAccuracy = 0.0;
  double stage2TeacherAccuracy = 0.0;
  PseudoLabelStats stage2PseudoLabels;  // student

  std::string evalModel = "student";
  double finalAccuracy = 0.0;
  std::vector<double> perClassAccuracy;

  std::vector<EvalRecord> evaluations;
  std::vector<LossPoint> lossCurves;

  bool failed = false;
  std::string error;
};

nlohmann::json toJson(const ExperimentReport& report);
ExperimentReport experimentReportFromJson(const nlohmann::json& j);

/// Window means of the per-iteration losses, one point per `window` steps
/// (plus a final partial window).
std::vector<LossPoint> lossCurves(std::span<const IterationRecord> records, std::int64_t window);

/// stage,iteration,L_s,L_u,L_t,L_d,passRate,targetAcc. Missing values are empty.
std::string metricsCsv(std::span<const IterationRecord> records);

struct RunAggregate {
  std::size_t runs = 0;
  std::size_t failed = 0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single run
  std::vector<double> accuracies;
};

struct AblationRow {
  std::string preset;
  std::map<int, RunAggregate> byShot;
};

struct AblationTable {
  std::vector<int> shots;
  std::vector<AblationRow> rows;

  const AblationRow* find(const std::string& preset) const;
  std::string toCsv() const;
  /// Aligned text, one decimal place.
  std::string toText() const;
};

/// Groups reports by preset (preset-matrix order, then first appearance)
/// and shot count. Throws InvalidInput when benchmark ids differ.
AblationTable compareRuns(std::span<const ExperimentReport> reports);

}  // namespace ssda
