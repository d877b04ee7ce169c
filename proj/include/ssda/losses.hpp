#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssda/matrix.hpp"
#include "ssda/model.hpp"

namespace ssda {

/// A loss scalar with its seed gradient at the logits of the branch it
/// differentiates. For the consistency loss `mask` records which samples
/// passed the confidence threshold; rows that did not are zero in
/// gradAtLogits.
struct LossValue {
  double scalar = 0.0;
  std::optional<std::vector<bool>> mask;
  Matrix gradAtLogits;

  std::size_t passCount() const;
};

/// Loss weights and thresholds.
///   alpha   weight of the consistency loss in stage I
///   gamma   weight of anchor supervision in stage II
///   eta     weight of soft distillation in stage II
///   mu      pseudo-label confidence threshold, compared with >=
///   sigma   EMA decay of the teacher
///   lambdaU weight of the consistency loss re-applied in stage II
struct HyperParams {
  double alpha = 1.0;
  double gamma = 0.2;
  double eta = 0.8;
  double mu = 0.95;
  double sigma = 0.99;
  double lambdaU = 1.0;

  std::vector<std::string> validate() const;
  bool operator==(const HyperParams&) const = default;
};

/// Batch-mean cross-entropy of hard labels against softmax(logits).
LossValue crossEntropy(const Matrix& logits, std::span<const int> labels);

/// Cross-entropy on strongly augmented source samples.
LossValue supervisedSource(const ModelParams& params, const Matrix& strongSource,
                           std::span<const int> labels);

/// Cross-entropy on strongly augmented anchors. Same math as supervisedSource.
LossValue supervisedTarget(const ModelParams& params, const Matrix& strongAnchors,
                           std::span<const int> labels);

/// Threshold-gated pseudo-label loss. Samples whose weak-view confidence
/// max(p^w) >= mu get the hard label argmax(p^w) (ties to the lowest index)
/// as the target for the strong-view logits. The sum over passing samples is
/// divided by the full batch size. The weak branch carries no gradient.
LossValue consistencyFromPredictions(const Matrix& weakProbs, const Matrix& strongLogits, double mu);

LossValue consistencyUnlabeled(const ModelParams& params, const Matrix& weakViews,
                               const Matrix& strongViews, double mu);

/// Soft distillation: batch mean of -sum_c p^w_c log p^s_c with the teacher
/// probabilities treated as constants. No threshold.
LossValue distillation(const Matrix& teacherProbsWeak, const Matrix& studentLogitsStrong);

/// L_s + alpha * L_u.
double udaComposite(const LossValue& source, const LossValue& consistency, double alpha);

/// gamma * L_t + eta * L_d (+ lambdaU * L_u when a stage-II consistency term is given).
double sslComposite(const LossValue& anchors, const LossValue& distill,
                    const LossValue* consistency, double gamma, double eta, double lambdaU);

/// Inputs of one stage-I step, already augmented.
struct UdaBatch {
  Matrix source;  // strong views of source (and merged anchors, if any)
  std::vector<int> sourceLabels;
  Matrix weak;    // weak views of unlabeled target, may be empty
  Matrix strong;  // strong views of the same samples
};

/// Inputs of one stage-II step, already augmented. teacherProbs holds the
/// teacher's predictions on `weak`, computed and detached by the caller.
struct SslBatch {
  Matrix anchors;
  std::vector<int> anchorLabels;
  Matrix weak;
  Matrix strong;
  Matrix teacherProbs;
};

struct ObjectiveResult {
  double total = 0.0;
  LossValue source;       // L_s (stage I) or L_t (stage II)
  LossValue consistency;  // L_u
  LossValue distill;      // L_d, stage II only
  Gradients grads;
  /// Fraction of the unlabeled batch passing the threshold; NaN when unused.
  double passRate = 0.0;
};

/// Value and parameter gradient of L_s + alpha * L_u. The unlabeled branch
/// is skipped when alpha == 0 or the batch is empty.
ObjectiveResult udaObjective(const ModelParams& params, const UdaBatch& batch,
                             const HyperParams& hyper);

/// Value and student gradient of gamma * L_t + eta * L_d + lambdaU * L_u,
/// the last term only when `consistencyOn`. The teacher enters only through
/// batch.teacherProbs.
ObjectiveResult sslObjective(const ModelParams& student, const SslBatch& batch,
                             const HyperParams& hyper, bool consistencyOn);

}  // namespace ssda
