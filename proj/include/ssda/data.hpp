#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssda/matrix.hpp"

namespace ssda {

struct Sample {
  std::vector<double> features;
  std::optional<int> label;
  std::uint64_t id = 0;

  bool operator==(const Sample&) const = default;
};

enum class ShiftKind { kRotation, kTranslation, kScale, kMixed };

std::string toString(ShiftKind kind);
ShiftKind shiftKindFromString(const std::string& name);

/// Parameters of the synthetic covariate-shift benchmark.
///
/// Source: isotropic Gaussian clusters (std `clusterSpread`) around seeded,
/// centred class means with entries ~ N(0, meanScale^2). Target: the same
/// clusters pushed through the shift. Rotation turns the principal plane of
/// the class means by `shiftMagnitude` radians; translation moves every
/// sample `shiftMagnitude` along a seeded unit direction; scale multiplies by
/// (1 + shiftMagnitude); mixed applies rotation, translation and scale in
/// that order.
struct ShiftSpec {
  int numClasses = 4;
  int inputDim = 16;
  int samplesPerClassSource = 500;
  int samplesPerClassTarget = 500;
  ShiftKind shiftKind = ShiftKind::kRotation;
  double shiftMagnitude = 0.9;
  double clusterSpread = 0.6;
  double meanScale = 0.5;
  /// Per-class fraction of target samples held out for evaluation only.
  double heldOutFraction = 0.2;
  std::uint64_t seed = 2024;

  std::vector<std::string> validate() const;
  bool operator==(const ShiftSpec&) const = default;
};

nlohmann::json toJson(const ShiftSpec& spec);
ShiftSpec shiftSpecFromJson(const nlohmann::json& j);

struct SsdaSplit;
class EvaluationAccess;

/// Ground truth that training code must not see: labels of the unlabeled
/// target pool and the labelled held-out evaluation samples. Only anchor
/// sampling and the evaluation module (through EvaluationAccess) can read it.
class SealedLabels {
 public:
  SealedLabels() = default;
  SealedLabels(std::map<std::uint64_t, int> unlabeledTruth, std::vector<Sample> heldOut)
      : unlabeledTruth_(std::move(unlabeledTruth)), heldOut_(std::move(heldOut)) {}

  std::size_t heldOutSize() const noexcept { return heldOut_.size(); }
  std::size_t hiddenLabelCount() const noexcept { return unlabeledTruth_.size(); }

  bool operator==(const SealedLabels&) const = default;

 private:
  friend class EvaluationAccess;
  friend SsdaSplit sampleAnchors(SsdaSplit split, int kShot, std::uint64_t seed);

  std::map<std::uint64_t, int> unlabeledTruth_;
  std::vector<Sample> heldOut_;
};

/// Labelled source S, unlabeled target T_u and labelled target anchors T_l.
struct SsdaSplit {
  std::vector<Sample> source;
  std::vector<Sample> targetUnlabeled;
  std::vector<Sample> targetLabeled;
  int numClasses = 0;
  SealedLabels sealed;

  std::size_t inputDim() const;

  /// Checks disjointness, label ranges, dimensions and that T_u is unlabeled.
  void validate() const;

  bool operator==(const SsdaSplit&) const = default;
};

SsdaSplit generateShiftedDomains(const ShiftSpec& spec);

/// Class means of the generated source domain (after centring), rows = classes.
Matrix generatedClassMeans(const ShiftSpec& spec);

/// Applies the spec's target shift to one vector.
std::vector<double> applyShift(const ShiftSpec& spec, std::span<const double> x);

/// Moves exactly kShot samples per class from T_u to T_l, revealing labels.
SsdaSplit sampleAnchors(SsdaSplit split, int kShot, std::uint64_t seed);

/// Builds a split from externally supplied labelled source and target
/// samples. Target labels are sealed; `heldOutFraction` of each target class
/// is reserved for evaluation.
SsdaSplit splitFromLabeledPools(std::vector<Sample> source, std::vector<Sample> target,
                                int numClasses, double heldOutFraction, std::uint64_t seed);

/// Position in a batch stream: pass number and offset within that pass.
struct BatchCursor {
  std::uint64_t pass = 0;
  std::uint64_t offset = 0;

  bool operator==(const BatchCursor&) const = default;
};

/// Endless stream of index batches over a pool. Each pass is a seeded
/// permutation (or the identity when shuffling is off); the final short batch
/// of a pass is emitted as-is.
class BatchStream {
 public:
  BatchStream(std::size_t poolSize, std::size_t batchSize, std::uint64_t seed, bool shuffle);

  std::vector<std::size_t> next();

  BatchCursor cursor() const noexcept { return cursor_; }
  void restore(BatchCursor cursor);

 private:
  void buildPermutation();

  std::size_t poolSize_;
  std::size_t batchSize_;
  std::uint64_t seed_;
  bool shuffle_;
  BatchCursor cursor_;
  std::vector<std::size_t> order_;
  std::uint64_t orderPass_ = UINT64_MAX;
};

/// Row-stacks the features of `pool[indices]`.
Matrix gatherFeatures(std::span<const Sample> pool, std::span<const std::size_t> indices);
Matrix stackFeatures(std::span<const Sample> samples);

/// Layout of a comma-separated file: `featureColumns` reals, then an integer
/// label column when `hasLabel`. A first line that does not parse as numbers
/// is treated as a header.
struct DelimitedSchema {
  std::size_t featureColumns = 0;
  bool hasLabel = true;
  /// Labels must be < numClasses when set.
  std::optional<int> numClasses;
};

std::vector<Sample> loadDelimitedDataset(const std::filesystem::path& path,
                                         const DelimitedSchema& schema);

/// Writes samples with a header row; values use round-trip precision.
void writeDelimitedDataset(const std::filesystem::path& path, std::span<const Sample> samples,
                           bool withLabels);

}  // namespace ssda
