#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "ssda/augment.hpp"
#include "ssda/data.hpp"
#include "ssda/losses.hpp"

namespace ssda {

enum class EvalModel { kStudent, kTeacher };

/// External data files. When `sourcePath` is empty the synthetic benchmark
/// is generated instead. Both files carry features then an integer label.
struct DataFiles {
  std::string sourcePath;
  std::string targetPath;

  bool enabled() const noexcept { return !sourcePath.empty(); }
  bool operator==(const DataFiles&) const = default;
};

struct TrainConfig {
  HyperParams hyper;
  double lr = 0.05;
  double momentum = 0.0;
  std::int64_t iterationsStage1 = 2000;
  std::int64_t iterationsStage2 = 1000;
  int batchSource = 64;
  int batchUnlabeled = 64;
  int batchAnchor = 64;
  int kShot = 3;
  std::uint64_t seed = 0;
  std::int64_t evalEvery = 200;
  std::string checkpointDir;
  bool stage2ConsistencyOn = true;
  EvalModel evalModel = EvalModel::kStudent;

  // Ablation switches; the defaults are the full two-stage method.
  bool stage1SourceAugment = true;
  bool stage1MergeAnchors = false;
  bool stage2Enabled = true;

  std::vector<std::size_t> hiddenDims{64, 32};
  AugPolicy augment = AugPolicy::defaults();
  ShiftSpec benchmark;
  DataFiles data;

  /// All problems at once; empty when valid.
  std::vector<std::string> validate() const;

  bool operator==(const TrainConfig&) const = default;
};

nlohmann::json toJson(const TrainConfig& config);

/// Strict: unknown keys and type errors are reported together as a ConfigError.
/// Missing keys keep their defaults.
TrainConfig trainConfigFromJson(const nlohmann::json& j);

/// Applies "dotted.key=value" to a config tree. The key must already exist;
/// the value is parsed as JSON when possible, otherwise taken as a string.
void applyOverride(nlohmann::json& tree, std::string_view assignment);

/// Defaults, overlaid with the file (if any), then the overrides; validated.
TrainConfig loadConfig(const std::optional<std::filesystem::path>& path,
                       const std::vector<std::string>& overrides);

/// Hash of the canonical JSON form.
std::uint64_t configHash(const TrainConfig& config);
std::string hexHash(std::uint64_t hash);

/// Named ablation presets, in table order.
const std::vector<std::string>& presetNames();
bool isPreset(std::string_view name);
TrainConfig applyPreset(TrainConfig config, std::string_view preset);

}  // namespace ssda
