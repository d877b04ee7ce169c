#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ssda/matrix.hpp"

namespace ssda {

/// Layer widths of the MLP. The last layer (to numClasses) is the linear
/// classifier; every earlier layer is a tanh feature-extractor layer.
struct Architecture {
  std::size_t inputDim = 0;
  std::vector<std::size_t> hiddenDims;
  std::size_t numClasses = 0;

  std::size_t numLayers() const noexcept { return hiddenDims.size() + 1; }
  std::size_t layerInputDim(std::size_t layer) const;
  std::size_t layerOutputDim(std::size_t layer) const;

  bool operator==(const Architecture&) const = default;
};

struct Layer {
  Matrix weights;  // out x in
  std::vector<double> bias;

  bool operator==(const Layer&) const = default;
};

/// A stack of layers matching an Architecture. Instantiated twice, for
/// parameters and for gradients, so the two cannot be mixed up.
template <class Tag>
class LayerStack {
 public:
  LayerStack() = default;

  /// Validates dimensions and finiteness.
  LayerStack(Architecture arch, std::vector<Layer> layers);

  /// All-zero stack of the given shape.
  static LayerStack zeros(const Architecture& arch);

  const Architecture& arch() const noexcept { return arch_; }
  std::span<const Layer> layers() const noexcept { return layers_; }
  Layer& layer(std::size_t k) { return layers_.at(k); }
  const Layer& layer(std::size_t k) const { return layers_.at(k); }

  std::size_t parameterCount() const noexcept;

  /// Parameter `i` in flat order: per layer, weights row-major then bias.
  double& flat(std::size_t i);
  double flat(std::size_t i) const;

  template <class OtherTag>
  bool sameShape(const LayerStack<OtherTag>& other) const noexcept {
    return arch_ == other.arch();
  }

  bool operator==(const LayerStack&) const = default;

 private:
  Architecture arch_;
  std::vector<Layer> layers_;
};

using ModelParams = LayerStack<struct ParamsTag>;
using Gradients = LayerStack<struct GradientsTag>;

extern template class LayerStack<struct ParamsTag>;
extern template class LayerStack<struct GradientsTag>;

/// Glorot-uniform weights, zero biases.
ModelParams initializeParams(const Architecture& arch, std::uint64_t seed);

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probs;
};

/// Activations recorded by forwardBatch; consumed by backward.
struct ForwardPass {
  std::vector<Matrix> layerInputs;  // layerInputs[k] is the input to layer k
  Matrix logits;
  Matrix probs;
};

Prediction forward(const ModelParams& params, std::span<const double> x);
ForwardPass forwardBatch(const ModelParams& params, const Matrix& inputs);

/// Gradients of a scalar batch loss given dLoss/dLogits (B x C).
Gradients backward(const ModelParams& params, const ForwardPass& pass,
                   const Matrix& gradAtLogits);

/// params - lr * grads. Throws TrainingFault naming the first layer with a
/// non-finite gradient.
ModelParams sgdStep(const ModelParams& params, const Gradients& grads, double lr);

/// Heavy-ball SGD: v <- momentum * v + g; params <- params - lr * v.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  ModelParams step(const ModelParams& params, const Gradients& grads);

  const Gradients* velocity() const noexcept { return hasVelocity_ ? &velocity_ : nullptr; }
  void setVelocity(Gradients v) {
    velocity_ = std::move(v);
    hasVelocity_ = true;
  }

 private:
  double lr_;
  double momentum_;
  Gradients velocity_;
  bool hasVelocity_ = false;
};

/// Mean-teacher update: sigma * teacher + (1 - sigma) * student, per parameter.
ModelParams emaUpdate(const ModelParams& teacher, const ModelParams& student, double sigma);

/// Row-wise numerically stable softmax / log-softmax.
void softmaxRow(std::span<const double> logits, std::span<double> out);
void logSoftmaxRow(std::span<const double> logits, std::span<double> out);

/// Lowest index among the maxima.
std::size_t argmax(std::span<const double> values);

/// Binary layer block of the checkpoint format: arch header then, per layer,
/// weights row-major followed by bias, as little-endian IEEE-754 doubles.
void writeArchitecture(std::ostream& out, const Architecture& arch);
Architecture readArchitecture(std::istream& in);
template <class Tag>
void writeLayerValues(std::ostream& out, const LayerStack<Tag>& stack);
template <class Tag>
LayerStack<Tag> readLayerValues(std::istream& in, const Architecture& arch);

}  // namespace ssda
