#pragma once

// Independent reference computations used by the tests. Nothing here calls
// into the library's numerical routines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "ssda/matrix.hpp"
#include "ssda/model.hpp"

namespace oracle {

using ssda::Matrix;
using ssda::ModelParams;

/// Plain loops: affine, tanh on hidden layers, then a max-shifted softmax.
inline std::vector<double> naiveProbs(const ModelParams& params, const std::vector<double>& x,
                                      std::vector<double>* logitsOut = nullptr) {
  std::vector<double> a = x;
  const auto layers = params.layers();
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& L = layers[k];
    std::vector<double> z(L.bias.size());
    for (std::size_t o = 0; o < z.size(); ++o) {
      long double acc = L.bias[o];
      for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(L.weights(o, i)) * a[i];
      z[o] = static_cast<double>(acc);
    }
    if (k + 1 < layers.size())
      for (double& v : z) v = std::tanh(v);
    a = std::move(z);
  }
  if (logitsOut) *logitsOut = a;
  const double m = *std::max_element(a.begin(), a.end());
  long double sum = 0;
  for (double v : a) sum += std::exp(static_cast<long double>(v - m));
  std::vector<double> p(a.size());
  for (std::size_t c = 0; c < a.size(); ++c)
    p[c] = static_cast<double>(std::exp(static_cast<long double>(a[c] - m)) / sum);
  return p;
}

inline double naiveCrossEntropy(const std::vector<double>& target, const std::vector<double>& probs) {
  long double s = 0;
  for (std::size_t c = 0; c < probs.size(); ++c)
    if (target[c] != 0.0) s -= target[c] * std::log(static_cast<long double>(probs[c]));
  return static_cast<double>(s);
}

inline std::size_t firstArgmax(const std::vector<double>& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// Central differences of `f` with respect to every flat parameter.
inline std::vector<double> finiteDifferences(ModelParams params,
                                             const std::function<double(const ModelParams&)>& f,
                                             double h = 1e-5) {
  std::vector<double> g(params.parameterCount());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double orig = params.flat(i);
    params.flat(i) = orig + h;
    const double up = f(params);
    params.flat(i) = orig - h;
    const double down = f(params);
    params.flat(i) = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries that are zero up
/// to differencing noise from dominating the ratio.
inline constexpr double kRelativeFloor = 1e-6;

inline double relativeError(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / scale;
}

template <class G>
double maxRelativeError(const G& grads, const std::vector<double>& numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i)
    worst = std::max(worst, relativeError(grads.flat(i), numeric[i]));
  return worst;
}

/// Random instance sizes within the bounds dims <= 8, C <= 5.
struct InstanceShape {
  std::size_t inputDim;
  std::vector<std::size_t> hidden;
  std::size_t classes;
  std::size_t batch;
};

inline InstanceShape randomShape(std::mt19937_64& gen) {
  std::uniform_int_distribution<std::size_t> dim(2, 8), cls(2, 5), layers(1, 2), batch(2, 7);
  InstanceShape s{dim(gen), {}, cls(gen), batch(gen)};
  const std::size_t n = layers(gen);
  for (std::size_t i = 0; i < n; ++i) s.hidden.push_back(dim(gen));
  return s;
}

inline Matrix randomMatrix(std::mt19937_64& gen, std::size_t rows, std::size_t cols, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(gen);
  return m;
}

inline Matrix randomSimplexRows(std::mt19937_64& gen, std::size_t rows, std::size_t cols) {
  std::gamma_distribution<double> g(1.0, 1.0);
  Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += m(r, c) = g(gen) + 1e-3;
    for (std::size_t c = 0; c < cols; ++c) m(r, c) /= s;
  }
  return m;
}

inline std::vector<int> randomLabels(std::mt19937_64& gen, std::size_t n, std::size_t classes) {
  std::uniform_int_distribution<int> d(0, static_cast<int>(classes) - 1);
  std::vector<int> out(n);
  for (int& v : out) v = d(gen);
  return out;
}

/// Threshold strictly inside the widest gap between sorted confidences, so
/// small parameter perturbations never flip the mask.
inline double thresholdInGap(std::vector<double> confidences) {
  std::sort(confidences.begin(), confidences.end());
  double bestGap = -1.0, mu = 0.5;
  for (std::size_t i = 0; i + 1 < confidences.size(); ++i) {
    const double gap = confidences[i + 1] - confidences[i];
    if (gap > bestGap) {
      bestGap = gap;
      mu = 0.5 * (confidences[i] + confidences[i + 1]);
    }
  }
  return mu;
}

}  // namespace oracle
