#include "ssda/metrics.hpp"

#include <cmath>
#include <limits>

#include "ssda/errors.hpp"

namespace ssda {

nlohmann::json toJson(const PseudoLabelStats& s) {
  return {{"confidentCorrect", s.confidentCorrect},
          {"confidentWrong", s.confidentWrong},
          {"rescuable", s.rescuable},
          {"belowWrong", s.belowWrong},
          {"passRate", s.passRate},
          {"mu", s.mu}};
}

PseudoLabelStats pseudoLabelStatsFromJson(const nlohmann::json& j) {
  PseudoLabelStats s;
  s.confidentCorrect = j.at("confidentCorrect").get<std::size_t>();
  s.confidentWrong = j.at("confidentWrong").get<std::size_t>();
  s.rescuable = j.at("rescuable").get<std::size_t>();
  s.belowWrong = j.at("belowWrong").get<std::size_t>();
  s.passRate = j.at("passRate").get<double>();
  s.mu = j.at("mu").get<double>();
  return s;
}

namespace {

std::vector<int> labelsOf(std::span<const Sample> samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const Sample& s : samples) {
    if (!s.label) throw InvalidInput("evaluation sample " + std::to_string(s.id) + " has no label");
    labels.push_back(*s.label);
  }
  return labels;
}

}  // namespace

double accuracy(const ModelParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidInput("cannot evaluate accuracy on an empty set");
  const std::vector<int> labels = labelsOf(samples);
  const Matrix probs = forwardBatch(params, stackFeatures(samples)).probs;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (argmax(probs.row(r)) == static_cast<std::size_t>(labels[r])) ++correct;
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<double> perClassAccuracy(const ModelParams& params, std::span<const Sample> samples) {
  if (samples.empty()) throw InvalidInput("cannot evaluate accuracy on an empty set");
  const std::vector<int> labels = labelsOf(samples);
  const std::size_t classes = params.arch().numClasses;
  const Matrix probs = forwardBatch(params, stackFeatures(samples)).probs;
  std::vector<std::size_t> hits(classes, 0), counts(classes, 0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    if (y >= classes) throw InvalidInput("label outside the label space");
    ++counts[y];
    if (argmax(probs.row(r)) == y) ++hits[y];
  }
  std::vector<double> out(classes);
  for (std::size_t c = 0; c < classes; ++c)
    out[c] = counts[c] ? 100.0 * static_cast<double>(hits[c]) / static_cast<double>(counts[c])
                       : std::numeric_limits<double>::quiet_NaN();
  return out;
}

PseudoLabelStats pseudoLabelStatsFromProbs(const Matrix& probs, std::span<const int> truth,
                                           double mu) {
  if (probs.rows() != truth.size())
    throw ShapeMismatch("pool and hidden labels differ in size");
  PseudoLabelStats stats;
  stats.mu = mu;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto p = probs.row(r);
    const std::size_t pred = argmax(p);
    const bool confident = p[pred] >= mu;
    const bool correct = pred == static_cast<std::size_t>(truth[r]);
    if (confident)
      ++(correct ? stats.confidentCorrect : stats.confidentWrong);
    else
      ++(correct ? stats.rescuable : stats.belowWrong);
  }
  const std::size_t n = stats.total();
  stats.passRate =
      n ? static_cast<double>(stats.confidentCorrect + stats.confidentWrong) / static_cast<double>(n)
        : 0.0;
  return stats;
}

PseudoLabelStats pseudoLabelReport(const ModelParams& params, std::span<const Sample> pool,
                                   std::span<const int> hiddenLabels, double mu) {
  if (pool.size() != hiddenLabels.size())
    throw ShapeMismatch("pool and hidden labels differ in size");
  if (pool.empty()) {
    PseudoLabelStats empty;
    empty.mu = mu;
    return empty;
  }
  return pseudoLabelStatsFromProbs(forwardBatch(params, stackFeatures(pool)).probs, hiddenLabels,
                                   mu);
}

const std::vector<Sample>& EvaluationAccess::heldOut(const SsdaSplit& split) {
  return split.sealed.heldOut_;
}

std::vector<int> EvaluationAccess::hiddenLabels(const SsdaSplit& split) {
  std::vector<int> labels;
  labels.reserve(split.targetUnlabeled.size());
  for (const Sample& s : split.targetUnlabeled) {
    const auto it = split.sealed.unlabeledTruth_.find(s.id);
    if (it == split.sealed.unlabeledTruth_.end())
      throw InvalidInput("no sealed label for unlabeled sample " + std::to_string(s.id));
    labels.push_back(it->second);
  }
  return labels;
}

Evaluator::Evaluator(const SsdaSplit& split, double mu)
    : split_(&split), hiddenLabels_(EvaluationAccess::hiddenLabels(split)), mu_(mu) {
  if (EvaluationAccess::heldOut(split).empty())
    throw InvalidInput("split has no held-out evaluation samples");
}

Evaluation Evaluator::evaluate(const ModelParams& params) const {
  return {accuracy(params, EvaluationAccess::heldOut(*split_)),
          pseudoLabelReport(params, split_->targetUnlabeled, hiddenLabels_, mu_)};
}

}  // namespace ssda
