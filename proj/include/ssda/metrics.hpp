#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssda/data.hpp"
#include "ssda/matrix.hpp"
#include "ssda/model.hpp"

namespace ssda {

/// Pseudo-label quality of a model over the unlabeled pool at threshold mu,
/// split by (max prob >= mu) x (argmax correct).
struct PseudoLabelStats {
  std::size_t confidentCorrect = 0;
  std::size_t confidentWrong = 0;
  std::size_t rescuable = 0;  // below threshold but correct
  std::size_t belowWrong = 0;
  double passRate = 0.0;
  double mu = 0.0;

  std::size_t total() const noexcept {
    return confidentCorrect + confidentWrong + rescuable + belowWrong;
  }
  bool operator==(const PseudoLabelStats&) const = default;
};

nlohmann::json toJson(const PseudoLabelStats& stats);
PseudoLabelStats pseudoLabelStatsFromJson(const nlohmann::json& j);

/// Argmax accuracy in percent. Every sample must carry a label.
double accuracy(const ModelParams& params, std::span<const Sample> samples);

/// Accuracy per class in percent; NaN for classes absent from `samples`.
std::vector<double> perClassAccuracy(const ModelParams& params, std::span<const Sample> samples);

PseudoLabelStats pseudoLabelStatsFromProbs(const Matrix& probs, std::span<const int> truth,
                                           double mu);

/// Un-augmented forward pass over `pool`; `hiddenLabels[i]` is the truth of `pool[i]`.
PseudoLabelStats pseudoLabelReport(const ModelParams& params, std::span<const Sample> pool,
                                   std::span<const int> hiddenLabels, double mu);

/// The single read path into a split's sealed labels.
class EvaluationAccess {
 public:
  static const std::vector<Sample>& heldOut(const SsdaSplit& split);
  /// Sealed labels of split.targetUnlabeled, in pool order.
  static std::vector<int> hiddenLabels(const SsdaSplit& split);
};

/// Accuracy and pseudo-label quality of one parameter snapshot.
struct Evaluation {
  double targetAccuracy = 0.0;
  PseudoLabelStats pseudoLabels;
};

/// Evaluates snapshots against a split's sealed data.
class Evaluator {
 public:
  Evaluator(const SsdaSplit& split, double mu);

  Evaluation evaluate(const ModelParams& params) const;

 private:
  const SsdaSplit* split_;
  std::vector<int> hiddenLabels_;
  double mu_;
};

}  // namespace ssda
