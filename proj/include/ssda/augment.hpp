#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssda/data.hpp"
#include "ssda/matrix.hpp"

namespace ssda {

/// Feature-space augmentation operators. For each, a sampled magnitude of 0
/// is the identity:
///   gaussianNoise        x + m * z,         z ~ N(0, I)
///   coordinateDropout    zero ceil(m * d) distinct coordinates
///   randomScaling        x * (1 + m)
///   randomRotation2Plane rotate by angle m in a random 2-plane
///   featureJitter        x + m * u,         u ~ U[-1, 1]^d
enum class AugOp {
  kGaussianNoise,
  kCoordinateDropout,
  kRandomScaling,
  kRandomRotation2Plane,
  kFeatureJitter,
};

std::string toString(AugOp op);
AugOp augOpFromString(const std::string& name);

/// One operator with its magnitude range; magnitudes are drawn uniformly in
/// [lo, hi] and multiplied by the policy's global magnitude.
struct OpSpec {
  AugOp op;
  double lo = 0.0;
  double hi = 0.0;

  bool operator==(const OpSpec&) const = default;
};

/// Weak policy: every op applied in order. Strong policy: RandAugment-style,
/// `strongOpsPerApplication` distinct ops drawn from `strongOps` and applied
/// in drawn order.
struct AugPolicy {
  std::vector<OpSpec> weakOps;
  std::vector<OpSpec> strongOps;
  int strongOpsPerApplication = 2;
  double magnitude = 1.0;

  static AugPolicy defaults();
  static AugPolicy identity();

  /// Empty when valid. Includes the weak-within-strong range check for
  /// shared op kinds.
  std::vector<std::string> validate() const;

  bool operator==(const AugPolicy&) const = default;
};

nlohmann::json toJson(const AugPolicy& policy);
AugPolicy augPolicyFromJson(const nlohmann::json& j);

/// phi: the weak view. `rngState` fully determines the draw.
std::vector<double> weak(std::span<const double> x, const AugPolicy& policy,
                         std::uint64_t rngState);

/// psi: the strong view.
std::vector<double> strong(std::span<const double> x, const AugPolicy& policy,
                           std::uint64_t rngState);

/// Applies one op with an explicit magnitude (before the policy multiplier).
std::vector<double> applyOp(std::span<const double> x, AugOp op, double magnitude,
                            std::uint64_t rngState);

enum class ViewKind { kWeak, kStrong, kBoth };

struct AugmentedBatch {
  Matrix weak;    // empty unless requested
  Matrix strong;  // empty unless requested
};

/// Each sample draws from a substream keyed by (rngState, sample id, view),
/// so a sample's views do not depend on which batch it is in.
AugmentedBatch augmentBatch(std::span<const Sample> batch, const AugPolicy& policy, ViewKind which,
                            std::uint64_t rngState);

/// Substream seed used by augmentBatch for one sample and view.
std::uint64_t sampleViewSeed(std::uint64_t rngState, std::uint64_t sampleId, ViewKind view);

}  // namespace ssda
