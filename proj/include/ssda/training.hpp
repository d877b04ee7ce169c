#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ssda/config.hpp"
#include "ssda/data.hpp"
#include "ssda/metrics.hpp"
#include "ssda/model.hpp"

namespace ssda {

enum class Stage { kUda, kSsl };

std::string toString(Stage stage);
Stage stageFromString(const std::string& name);

/// Losses of one optimization step. Terms not computed are 0; passRate is
/// NaN when no consistency term ran.
struct IterationRecord {
  Stage stage = Stage::kUda;
  std::int64_t iteration = 0;  // 1-based count of completed steps in the stage
  double sourceLoss = 0.0;      // L_s
  double consistencyLoss = 0.0; // L_u
  double anchorLoss = 0.0;      // L_t
  double distillLoss = 0.0;     // L_d
  double passRate = 0.0;
  std::optional<double> targetAccuracy;

  bool operator==(const IterationRecord&) const;
};

struct EvalRecord {
  Stage stage = Stage::kUda;
  std::int64_t iteration = 0;
  double targetAccuracy = 0.0;
  PseudoLabelStats pseudoLabels;

  bool operator==(const EvalRecord&) const = default;
};

/// Number of samples drawn from each pool; the stage-separation audit.
struct PoolUsage {
  std::uint64_t source = 0;
  std::uint64_t unlabeled = 0;
  std::uint64_t anchors = 0;

  bool operator==(const PoolUsage&) const = default;
};

struct TrainHistory {
  std::vector<IterationRecord> iterations;
  std::vector<EvalRecord> evaluations;
  PoolUsage usage;

  bool operator==(const TrainHistory&) const = default;
};

struct StreamCursors {
  BatchCursor source;
  BatchCursor unlabeled;
  BatchCursor anchors;

  bool operator==(const StreamCursors&) const = default;
};

/// Everything needed to continue a stage bit-exactly. All randomness is
/// addressed by (seed, stage, iteration, sample id), so the batch cursors
/// are the only stream state.
struct TrainState {
  Stage stage = Stage::kUda;
  std::int64_t iteration = 0;
  ModelParams student;
  std::optional<ModelParams> teacher;  // present iff stage == SSL
  std::optional<Gradients> velocity;   // momentum buffer, once created
  StreamCursors cursors;
  TrainHistory history;

  void validate() const;
  bool operator==(const TrainState&) const = default;
};

Architecture architectureFor(const SsdaSplit& split, const TrainConfig& config);

/// Fresh stage-I state with seeded initialization.
TrainState beginStage1(const SsdaSplit& split, const TrainConfig& config);

/// Runs stage-I steps until state.iteration == untilIteration. Each step:
/// source batch (plus anchors when merging) through the strong policy -> L_s;
/// unlabeled batch through weak and strong views -> L_u; SGD on L_s + alpha L_u.
void continueStage1(TrainState& state, const SsdaSplit& split, const TrainConfig& config,
                    std::int64_t untilIteration, const Evaluator* evaluator = nullptr);

/// Teacher and student both start as copies of the stage-I model.
TrainState beginStage2(const ModelParams& udaModel, const SsdaSplit& split,
                       const TrainConfig& config);

/// Runs stage-II steps until state.iteration == untilIteration. Each step:
/// strong anchors -> L_t; weak views through the teacher and strong views
/// through the student -> L_d; optionally L_u on the student; SGD on the
/// student; then teacher <- EMA(teacher, student, sigma). Never reads the
/// source pool.
void continueStage2(TrainState& state, const SsdaSplit& split, const TrainConfig& config,
                    std::int64_t untilIteration, const Evaluator* evaluator = nullptr);

struct Stage1Result {
  ModelParams model;
  TrainHistory history;
};

struct Stage2Result {
  ModelParams student;
  ModelParams teacher;
  TrainHistory history;
};

Stage1Result trainStage1(const SsdaSplit& split, const TrainConfig& config,
                         const Evaluator* evaluator = nullptr);
Stage2Result trainStage2(const ModelParams& udaModel, const SsdaSplit& split,
                         const TrainConfig& config, const Evaluator* evaluator = nullptr);

/// Sidecar metadata of a checkpoint.
struct CheckpointMeta {
  std::string configHash;
  std::uint64_t seed = 0;

  bool operator==(const CheckpointMeta&) const = default;
};

struct LoadedCheckpoint {
  TrainState state;
  CheckpointMeta meta;
  bool hasSidecar = false;
};

/// Writes `path` (binary: magic, version, stage, iteration, architecture,
/// little-endian float64 parameters, batch cursors, FNV-1a checksum) and
/// `path` + ".json" (stage, iteration, config hash, seed, history).
void saveCheckpoint(const TrainState& state, const std::filesystem::path& path,
                    const CheckpointMeta& meta);

/// Throws CorruptArtifact on bad magic, version mismatch, truncation or checksum failure.
LoadedCheckpoint loadCheckpoint(const std::filesystem::path& path);

std::filesystem::path sidecarPath(const std::filesystem::path& checkpoint);

nlohmann::json toJson(const TrainHistory& history);
TrainHistory trainHistoryFromJson(const nlohmann::json& j);
nlohmann::json toJson(const EvalRecord& record);
EvalRecord evalRecordFromJson(const nlohmann::json& j);

}  // namespace ssda
