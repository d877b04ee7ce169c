#include "ssda/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <string>

#include "ssda/binary_io.hpp"
#include "ssda/errors.hpp"
#include "ssda/rng.hpp"

namespace ssda {

std::size_t Architecture::layerInputDim(std::size_t layer) const {
  return layer == 0 ? inputDim : hiddenDims.at(layer - 1);
}

std::size_t Architecture::layerOutputDim(std::size_t layer) const {
  return layer < hiddenDims.size() ? hiddenDims[layer] : numClasses;
}

namespace {

void validateArchitecture(const Architecture& arch) {
  if (arch.inputDim == 0 || arch.numClasses == 0)
    throw InvalidInput("architecture dimensions must be positive");
  for (std::size_t h : arch.hiddenDims)
    if (h == 0) throw InvalidInput("hidden layer width must be positive");
}

}  // namespace

template <class Tag>
LayerStack<Tag>::LayerStack(Architecture arch, std::vector<Layer> layers)
    : arch_(std::move(arch)), layers_(std::move(layers)) {
  validateArchitecture(arch_);
  if (layers_.size() != arch_.numLayers())
    throw ShapeMismatch("expected " + std::to_string(arch_.numLayers()) + " layers, got " +
                        std::to_string(layers_.size()));
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    if (l.weights.rows() != arch_.layerOutputDim(k) ||
        l.weights.cols() != arch_.layerInputDim(k) || l.bias.size() != arch_.layerOutputDim(k))
      throw ShapeMismatch("layer " + std::to_string(k) + " does not match architecture");
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::ranges::all_of(l.weights.values(), finite) || !std::ranges::all_of(l.bias, finite))
      throw InvalidInput("layer " + std::to_string(k) + " has non-finite values");
  }
}

template <class Tag>
LayerStack<Tag> LayerStack<Tag>::zeros(const Architecture& arch) {
  validateArchitecture(arch);
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < arch.numLayers(); ++k) {
    layers.push_back({Matrix(arch.layerOutputDim(k), arch.layerInputDim(k)),
                      std::vector<double>(arch.layerOutputDim(k), 0.0)});
  }
  return LayerStack(arch, std::move(layers));
}

template <class Tag>
std::size_t LayerStack<Tag>::parameterCount() const noexcept {
  std::size_t n = 0;
  for (const Layer& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

template <class Tag>
double& LayerStack<Tag>::flat(std::size_t i) {
  for (Layer& l : layers_) {
    if (i < l.weights.size()) return l.weights.values()[i];
    i -= l.weights.size();
    if (i < l.bias.size()) return l.bias[i];
    i -= l.bias.size();
  }
  throw std::out_of_range("flat parameter index out of range");
}

template <class Tag>
double LayerStack<Tag>::flat(std::size_t i) const {
  return const_cast<LayerStack*>(this)->flat(i);
}

template class LayerStack<ParamsTag>;
template class LayerStack<GradientsTag>;

ModelParams initializeParams(const Architecture& arch, std::uint64_t seed) {
  ModelParams params = ModelParams::zeros(arch);
  Rng rng(deriveSeed(seed, {tag(StreamTag::kInit)}));
  for (std::size_t k = 0; k < arch.numLayers(); ++k) {
    Layer& l = params.layer(k);
    const double a = std::sqrt(6.0 / static_cast<double>(l.weights.rows() + l.weights.cols()));
    for (double& w : l.weights.values()) w = rng.uniform(-a, a);
  }
  return params;
}

void softmaxRow(std::span<const double> logits, std::span<double> out) {
  const double m = *std::ranges::max_element(logits);
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] - m);
    sum += out[c];
  }
  for (double& p : out) p /= sum;
}

void logSoftmaxRow(std::span<const double> logits, std::span<double> out) {
  const double m = *std::ranges::max_element(logits);
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  for (std::size_t c = 0; c < logits.size(); ++c) out[c] = logits[c] - lse;
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

namespace {

// out = in * W^T + b, in: B x n, W: m x n.
Matrix affine(const Matrix& in, const Layer& layer) {
  const std::size_t rows = in.rows();
  const std::size_t outDim = layer.weights.rows();
  const std::size_t inDim = layer.weights.cols();
  Matrix out(rows, outDim);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto x = in.row(r);
    auto y = out.row(r);
    for (std::size_t o = 0; o < outDim; ++o) {
      const auto w = layer.weights.row(o);
      double acc = layer.bias[o];
      for (std::size_t i = 0; i < inDim; ++i) acc += w[i] * x[i];
      y[o] = acc;
    }
  }
  return out;
}

}  // namespace

ForwardPass forwardBatch(const ModelParams& params, const Matrix& inputs) {
  const Architecture& arch = params.arch();
  if (inputs.cols() != arch.inputDim)
    throw InvalidInput("input dimension " + std::to_string(inputs.cols()) + " != " +
                       std::to_string(arch.inputDim));
  if (!std::ranges::all_of(inputs.values(), [](double v) { return std::isfinite(v); }))
    throw InvalidInput("non-finite input features");

  ForwardPass pass;
  pass.layerInputs.reserve(arch.numLayers());
  Matrix current = inputs;
  for (std::size_t k = 0; k + 1 < arch.numLayers(); ++k) {
    Matrix pre = affine(current, params.layer(k));
    for (double& v : pre.values()) v = std::tanh(v);
    pass.layerInputs.push_back(std::move(current));
    current = std::move(pre);
  }
  pass.logits = affine(current, params.layer(arch.numLayers() - 1));
  pass.layerInputs.push_back(std::move(current));

  pass.probs = Matrix(pass.logits.rows(), pass.logits.cols());
  for (std::size_t r = 0; r < pass.logits.rows(); ++r)
    softmaxRow(pass.logits.row(r), pass.probs.row(r));
  return pass;
}

Prediction forward(const ModelParams& params, std::span<const double> x) {
  Matrix in(1, x.size());
  std::ranges::copy(x, in.row(0).begin());
  ForwardPass pass = forwardBatch(params, in);
  const auto z = pass.logits.row(0);
  const auto p = pass.probs.row(0);
  return {{z.begin(), z.end()}, {p.begin(), p.end()}};
}

Gradients backward(const ModelParams& params, const ForwardPass& pass,
                   const Matrix& gradAtLogits) {
  const Architecture& arch = params.arch();
  const std::size_t numLayers = arch.numLayers();
  if (pass.layerInputs.size() != numLayers)
    throw ShapeMismatch("recorded activations do not match the layer count");
  const std::size_t batch = gradAtLogits.rows();
  if (gradAtLogits.cols() != arch.numClasses || pass.logits.rows() != batch)
    throw ShapeMismatch("gradient at logits does not match the recorded forward pass");
  for (std::size_t k = 0; k < numLayers; ++k) {
    if (pass.layerInputs[k].cols() != arch.layerInputDim(k) || pass.layerInputs[k].rows() != batch)
      throw ShapeMismatch("recorded activation " + std::to_string(k) + " has the wrong shape");
  }

  Gradients grads = Gradients::zeros(arch);
  Matrix delta = gradAtLogits;  // dL/d(pre-activation) of the current layer
  for (std::size_t k = numLayers; k-- > 0;) {
    const Matrix& in = pass.layerInputs[k];
    const Layer& layer = params.layer(k);
    Layer& g = grads.layer(k);
    const std::size_t outDim = layer.weights.rows();
    const std::size_t inDim = layer.weights.cols();
    for (std::size_t r = 0; r < batch; ++r) {
      const auto d = delta.row(r);
      const auto x = in.row(r);
      for (std::size_t o = 0; o < outDim; ++o) {
        if (d[o] == 0.0) continue;
        g.bias[o] += d[o];
        auto gw = g.weights.row(o);
        for (std::size_t i = 0; i < inDim; ++i) gw[i] += d[o] * x[i];
      }
    }
    if (k == 0) break;
    // Propagate through W and the tanh that produced `in`.
    Matrix next(batch, inDim);
    for (std::size_t r = 0; r < batch; ++r) {
      const auto d = delta.row(r);
      const auto h = in.row(r);
      auto n = next.row(r);
      for (std::size_t o = 0; o < outDim; ++o) {
        if (d[o] == 0.0) continue;
        const auto w = layer.weights.row(o);
        for (std::size_t i = 0; i < inDim; ++i) n[i] += d[o] * w[i];
      }
      for (std::size_t i = 0; i < inDim; ++i) n[i] *= 1.0 - h[i] * h[i];
    }
    delta = std::move(next);
  }
  return grads;
}

namespace {

void requireFinite(const Gradients& grads) {
  for (std::size_t k = 0; k < grads.layers().size(); ++k) {
    const Layer& l = grads.layer(k);
    const auto finite = [](double v) { return std::isfinite(v); };
    if (!std::ranges::all_of(l.weights.values(), finite) || !std::ranges::all_of(l.bias, finite))
      throw TrainingFault("non-finite gradient in layer " + std::to_string(k),
                          static_cast<int>(k));
  }
}

template <class Out, class In, class Fn>
Out combine(const Out& a, const In& b, Fn fn) {
  std::vector<Layer> layers(a.layers().begin(), a.layers().end());
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto dst = layers[k].weights.values();
    const auto src = b.layer(k).weights.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = fn(dst[i], src[i]);
    for (std::size_t i = 0; i < layers[k].bias.size(); ++i)
      layers[k].bias[i] = fn(layers[k].bias[i], b.layer(k).bias[i]);
  }
  return Out(a.arch(), std::move(layers));
}

}  // namespace

ModelParams sgdStep(const ModelParams& params, const Gradients& grads, double lr) {
  if (!params.sameShape(grads)) throw ShapeMismatch("gradients do not match parameters");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidInput("learning rate must be positive");
  requireFinite(grads);
  try {
    return combine(params, grads, [lr](double p, double g) { return p - lr * g; });
  } catch (const InvalidInput& e) {
    throw TrainingFault(std::string("parameter update overflowed: ") + e.what());
  }
}

ModelParams MomentumSgd::step(const ModelParams& params, const Gradients& grads) {
  if (momentum_ == 0.0) return sgdStep(params, grads, lr_);
  if (!params.sameShape(grads)) throw ShapeMismatch("gradients do not match parameters");
  requireFinite(grads);
  if (!hasVelocity_) {
    velocity_ = Gradients::zeros(params.arch());
    hasVelocity_ = true;
  }
  const double m = momentum_;
  velocity_ = combine(velocity_, grads, [m](double v, double g) { return m * v + g; });
  return sgdStep(params, velocity_, lr_);
}

ModelParams emaUpdate(const ModelParams& teacher, const ModelParams& student, double sigma) {
  if (!teacher.sameShape(student)) throw ShapeMismatch("teacher and student shapes differ");
  if (!(sigma >= 0.0 && sigma <= 1.0)) throw InvalidInput("sigma must lie in [0, 1]");
  return combine(teacher, student,
                 [sigma](double t, double s) { return sigma * t + (1.0 - sigma) * s; });
}

void writeArchitecture(std::ostream& out, const Architecture& arch) {
  io::writeU32(out, static_cast<std::uint32_t>(arch.inputDim));
  io::writeU32(out, static_cast<std::uint32_t>(arch.hiddenDims.size()));
  for (std::size_t h : arch.hiddenDims) io::writeU32(out, static_cast<std::uint32_t>(h));
  io::writeU32(out, static_cast<std::uint32_t>(arch.numClasses));
}

Architecture readArchitecture(std::istream& in) {
  Architecture arch;
  arch.inputDim = io::readU32(in);
  const std::uint32_t hidden = io::readU32(in);
  if (hidden > 1024) throw CorruptArtifact("implausible hidden layer count");
  for (std::uint32_t i = 0; i < hidden; ++i) arch.hiddenDims.push_back(io::readU32(in));
  arch.numClasses = io::readU32(in);
  if (arch.inputDim == 0 || arch.numClasses == 0 ||
      std::ranges::any_of(arch.hiddenDims, [](std::size_t h) { return h == 0; }))
    throw CorruptArtifact("architecture header has zero dimensions");
  return arch;
}

template <class Tag>
void writeLayerValues(std::ostream& out, const LayerStack<Tag>& stack) {
  for (const Layer& l : stack.layers()) {
    for (double w : l.weights.values()) io::writeF64(out, w);
    for (double b : l.bias) io::writeF64(out, b);
  }
}

template <class Tag>
LayerStack<Tag> readLayerValues(std::istream& in, const Architecture& arch) {
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < arch.numLayers(); ++k) {
    Layer l{Matrix(arch.layerOutputDim(k), arch.layerInputDim(k)),
            std::vector<double>(arch.layerOutputDim(k))};
    for (double& w : l.weights.values()) w = io::readF64(in);
    for (double& b : l.bias) b = io::readF64(in);
    layers.push_back(std::move(l));
  }
  try {
    return LayerStack<Tag>(arch, std::move(layers));
  } catch (const InvalidInput& e) {
    throw CorruptArtifact(e.what());
  }
}

template void writeLayerValues(std::ostream&, const ModelParams&);
template void writeLayerValues(std::ostream&, const Gradients&);
template ModelParams readLayerValues(std::istream&, const Architecture&);
template Gradients readLayerValues(std::istream&, const Architecture&);

}  // namespace ssda
