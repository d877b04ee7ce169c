#include "ssda/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "ssda/errors.hpp"

namespace ssda {

std::size_t LossValue::passCount() const {
  if (!mask) return gradAtLogits.rows();
  return static_cast<std::size_t>(std::ranges::count(*mask, true));
}

std::vector<std::string> HyperParams::validate() const {
  std::vector<std::string> problems;
  const auto nonNegative = [&](double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0)
      problems.push_back(std::string("hyper.") + name + " must be finite and >= 0");
  };
  nonNegative(alpha, "alpha");
  nonNegative(gamma, "gamma");
  nonNegative(eta, "eta");
  nonNegative(lambdaU, "lambdaU");
  if (!(mu > 0.0 && mu <= 1.0)) problems.push_back("hyper.mu must lie in (0, 1]");
  if (!(sigma >= 0.0 && sigma <= 1.0)) problems.push_back("hyper.sigma must lie in [0, 1]");
  return problems;
}

LossValue crossEntropy(const Matrix& logits, std::span<const int> labels) {
  const std::size_t batch = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != batch) throw ShapeMismatch("labels do not match the batch size");
  LossValue out;
  out.gradAtLogits = Matrix(batch, classes);
  if (batch == 0) return out;
  std::vector<double> logp(classes);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw InvalidInput("label " + std::to_string(y) + " outside the label space");
    logSoftmaxRow(logits.row(r), logp);
    out.scalar -= logp[static_cast<std::size_t>(y)];
    auto g = out.gradAtLogits.row(r);
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(logp[c]) * inv;
    g[static_cast<std::size_t>(y)] -= inv;
  }
  out.scalar *= inv;
  return out;
}

LossValue supervisedSource(const ModelParams& params, const Matrix& strongSource,
                           std::span<const int> labels) {
  return crossEntropy(forwardBatch(params, strongSource).logits, labels);
}

LossValue supervisedTarget(const ModelParams& params, const Matrix& strongAnchors,
                           std::span<const int> labels) {
  return crossEntropy(forwardBatch(params, strongAnchors).logits, labels);
}

LossValue consistencyFromPredictions(const Matrix& weakProbs, const Matrix& strongLogits,
                                     double mu) {
  const std::size_t batch = strongLogits.rows();
  const std::size_t classes = strongLogits.cols();
  if (weakProbs.rows() != batch || weakProbs.cols() != classes)
    throw ShapeMismatch("weak and strong views are not aligned");
  LossValue out;
  out.gradAtLogits = Matrix(batch, classes);
  out.mask = std::vector<bool>(batch, false);
  if (batch == 0) return out;
  std::vector<double> logp(classes);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto pw = weakProbs.row(r);
    const std::size_t pseudo = argmax(pw);
    if (!(pw[pseudo] >= mu)) continue;
    (*out.mask)[r] = true;
    logSoftmaxRow(strongLogits.row(r), logp);
    out.scalar -= logp[pseudo];
    auto g = out.gradAtLogits.row(r);
    for (std::size_t c = 0; c < classes; ++c) g[c] = std::exp(logp[c]) * inv;
    g[pseudo] -= inv;
  }
  out.scalar *= inv;
  return out;
}

LossValue consistencyUnlabeled(const ModelParams& params, const Matrix& weakViews,
                               const Matrix& strongViews, double mu) {
  if (weakViews.rows() != strongViews.rows())
    throw ShapeMismatch("weak and strong views are not aligned");
  const Matrix weakProbs = forwardBatch(params, weakViews).probs;
  return consistencyFromPredictions(weakProbs, forwardBatch(params, strongViews).logits, mu);
}

LossValue distillation(const Matrix& teacherProbsWeak, const Matrix& studentLogitsStrong) {
  const std::size_t batch = studentLogitsStrong.rows();
  const std::size_t classes = studentLogitsStrong.cols();
  if (teacherProbsWeak.rows() != batch || teacherProbsWeak.cols() != classes)
    throw ShapeMismatch("teacher and student batches are not aligned");
  LossValue out;
  out.gradAtLogits = Matrix(batch, classes);
  if (batch == 0) return out;
  std::vector<double> logp(classes);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t r = 0; r < batch; ++r) {
    const auto t = teacherProbsWeak.row(r);
    double mass = 0.0;
    for (double v : t) {
      if (!(v >= -1e-6 && v <= 1.0 + 1e-6)) throw InvalidInput("teacher row is off the simplex");
      mass += v;
    }
    if (std::abs(mass - 1.0) > 1e-6) throw InvalidInput("teacher row is off the simplex");
    logSoftmaxRow(studentLogitsStrong.row(r), logp);
    auto g = out.gradAtLogits.row(r);
    for (std::size_t c = 0; c < classes; ++c) {
      if (t[c] != 0.0) out.scalar -= t[c] * logp[c];
      // d/dz of -sum t log softmax(z) = mass * p - t
      g[c] = (mass * std::exp(logp[c]) - t[c]) * inv;
    }
  }
  out.scalar *= inv;
  return out;
}

double udaComposite(const LossValue& source, const LossValue& consistency, double alpha) {
  return source.scalar + alpha * consistency.scalar;
}

double sslComposite(const LossValue& anchors, const LossValue& distill,
                    const LossValue* consistency, double gamma, double eta, double lambdaU) {
  double total = gamma * anchors.scalar + eta * distill.scalar;
  if (consistency) total += lambdaU * consistency->scalar;
  return total;
}

namespace {

void addScaled(Gradients& acc, const Gradients& g, double scale) {
  for (std::size_t k = 0; k < acc.layers().size(); ++k) {
    auto dst = acc.layer(k).weights.values();
    const auto src = g.layer(k).weights.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
    auto& db = acc.layer(k).bias;
    const auto& sb = g.layer(k).bias;
    for (std::size_t i = 0; i < db.size(); ++i) db[i] += scale * sb[i];
  }
}

double rate(const LossValue& v) {
  const std::size_t n = v.gradAtLogits.rows();
  return n == 0 ? std::numeric_limits<double>::quiet_NaN()
                : static_cast<double>(v.passCount()) / static_cast<double>(n);
}

}  // namespace

ObjectiveResult udaObjective(const ModelParams& params, const UdaBatch& batch,
                             const HyperParams& hyper) {
  ObjectiveResult out;
  const ForwardPass sourcePass = forwardBatch(params, batch.source);
  out.source = crossEntropy(sourcePass.logits, batch.sourceLabels);
  out.grads = backward(params, sourcePass, out.source.gradAtLogits);
  out.passRate = std::numeric_limits<double>::quiet_NaN();
  if (hyper.alpha != 0.0 && batch.weak.rows() > 0) {
    const Matrix weakProbs = forwardBatch(params, batch.weak).probs;
    const ForwardPass strongPass = forwardBatch(params, batch.strong);
    out.consistency = consistencyFromPredictions(weakProbs, strongPass.logits, hyper.mu);
    out.passRate = rate(out.consistency);
    if (out.consistency.passCount() > 0)
      addScaled(out.grads, backward(params, strongPass, out.consistency.gradAtLogits), hyper.alpha);
  }
  out.total = udaComposite(out.source, out.consistency, hyper.alpha);
  return out;
}

ObjectiveResult sslObjective(const ModelParams& student, const SslBatch& batch,
                             const HyperParams& hyper, bool consistencyOn) {
  ObjectiveResult out;
  out.grads = Gradients::zeros(student.arch());
  out.passRate = std::numeric_limits<double>::quiet_NaN();
  if (hyper.gamma != 0.0 && batch.anchors.rows() > 0) {
    const ForwardPass anchorPass = forwardBatch(student, batch.anchors);
    out.source = crossEntropy(anchorPass.logits, batch.anchorLabels);
    addScaled(out.grads, backward(student, anchorPass, out.source.gradAtLogits), hyper.gamma);
  }
  const bool useDistill = hyper.eta != 0.0;
  const bool useConsistency = consistencyOn && hyper.lambdaU != 0.0;
  if ((useDistill || useConsistency) && batch.strong.rows() > 0) {
    // One student pass over the strong views serves both unlabeled terms.
    const ForwardPass strongPass = forwardBatch(student, batch.strong);
    Matrix seed(strongPass.logits.rows(), strongPass.logits.cols());
    if (useDistill) {
      out.distill = distillation(batch.teacherProbs, strongPass.logits);
      const auto g = out.distill.gradAtLogits.values();
      auto s = seed.values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += hyper.eta * g[i];
    }
    if (useConsistency) {
      const Matrix weakProbs = forwardBatch(student, batch.weak).probs;
      out.consistency = consistencyFromPredictions(weakProbs, strongPass.logits, hyper.mu);
      out.passRate = rate(out.consistency);
      const auto g = out.consistency.gradAtLogits.values();
      auto s = seed.values();
      for (std::size_t i = 0; i < s.size(); ++i) s[i] += hyper.lambdaU * g[i];
    }
    addScaled(out.grads, backward(student, strongPass, seed), 1.0);
  }
  out.total = sslComposite(out.source, out.distill, useConsistency ? &out.consistency : nullptr,
                           hyper.gamma, hyper.eta, hyper.lambdaU);
  return out;
}

}  // namespace ssda
