#include "ssda/augment.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ssda/errors.hpp"
#include "ssda/rng.hpp"

namespace ssda {

namespace {

constexpr std::pair<AugOp, const char*> kOpNames[] = {
    {AugOp::kGaussianNoise, "gaussianNoise"},
    {AugOp::kCoordinateDropout, "coordinateDropout"},
    {AugOp::kRandomScaling, "randomScaling"},
    {AugOp::kRandomRotation2Plane, "randomRotation2Plane"},
    {AugOp::kFeatureJitter, "featureJitter"},
};

void requireFinite(std::span<const double> x) {
  if (!std::ranges::all_of(x, [](double v) { return std::isfinite(v); }))
    throw InvalidInput("augmentation input is not finite");
}

}  // namespace

std::string toString(AugOp op) {
  for (const auto& [value, name] : kOpNames)
    if (value == op) return name;
  return "unknown";
}

AugOp augOpFromString(const std::string& name) {
  for (const auto& [value, n] : kOpNames)
    if (name == n) return value;
  throw InvalidInput("unknown augmentation op '" + name + "'");
}

AugPolicy AugPolicy::defaults() {
  AugPolicy p;
  p.weakOps = {{AugOp::kGaussianNoise, 0.0, 0.05}, {AugOp::kFeatureJitter, 0.0, 0.02}};
  p.strongOps = {{AugOp::kGaussianNoise, 0.0, 0.3},
                 {AugOp::kCoordinateDropout, 0.0, 0.3},
                 {AugOp::kRandomScaling, -0.3, 0.3},
                 {AugOp::kRandomRotation2Plane, 0.0, 0.5},
                 {AugOp::kFeatureJitter, 0.0, 0.15}};
  p.strongOpsPerApplication = 2;
  return p;
}

AugPolicy AugPolicy::identity() {
  AugPolicy p;
  p.strongOpsPerApplication = 0;
  return p;
}

std::vector<std::string> AugPolicy::validate() const {
  std::vector<std::string> problems;
  const auto checkList = [&](const std::vector<OpSpec>& ops, const char* name) {
    std::set<AugOp> seen;
    for (const OpSpec& op : ops) {
      if (!std::isfinite(op.lo) || !std::isfinite(op.hi) || op.lo > op.hi)
        problems.push_back(std::string("augment.") + name + ": invalid range for " + toString(op.op));
      if (!seen.insert(op.op).second)
        problems.push_back(std::string("augment.") + name + ": duplicate op " + toString(op.op));
      if (op.op == AugOp::kCoordinateDropout && (op.lo < 0.0 || op.hi > 1.0))
        problems.push_back(std::string("augment.") + name + ": dropout fraction outside [0, 1]");
    }
  };
  checkList(weakOps, "weak");
  checkList(strongOps, "strong");
  if (strongOpsPerApplication < 0 ||
      static_cast<std::size_t>(strongOpsPerApplication) > strongOps.size())
    problems.push_back("augment.strongOpsPerApplication must lie in [0, number of strong ops]");
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude))
    problems.push_back("augment.magnitude must be non-negative");
  for (const OpSpec& w : weakOps) {
    for (const OpSpec& s : strongOps) {
      if (w.op == s.op && (w.lo < s.lo || w.hi > s.hi))
        problems.push_back("augment: weak range of " + toString(w.op) +
                           " is not contained in the strong range");
    }
  }
  return problems;
}

nlohmann::json toJson(const AugPolicy& policy) {
  const auto list = [](const std::vector<OpSpec>& ops) {
    nlohmann::json arr = nlohmann::json::array();
    for (const OpSpec& op : ops) arr.push_back({{"op", toString(op.op)}, {"min", op.lo}, {"max", op.hi}});
    return arr;
  };
  return {{"weak", list(policy.weakOps)},
          {"strong", list(policy.strongOps)},
          {"strongOpsPerApplication", policy.strongOpsPerApplication},
          {"magnitude", policy.magnitude}};
}

AugPolicy augPolicyFromJson(const nlohmann::json& j) {
  const auto list = [](const nlohmann::json& arr) {
    std::vector<OpSpec> ops;
    for (const auto& e : arr)
      ops.push_back({augOpFromString(e.at("op").get<std::string>()), e.at("min").get<double>(),
                     e.at("max").get<double>()});
    return ops;
  };
  AugPolicy p;
  p.weakOps = list(j.at("weak"));
  p.strongOps = list(j.at("strong"));
  p.strongOpsPerApplication = j.at("strongOpsPerApplication").get<int>();
  p.magnitude = j.at("magnitude").get<double>();
  return p;
}

namespace {

void applyInPlace(std::vector<double>& x, AugOp op, double m, Rng& rng) {
  const std::size_t d = x.size();
  switch (op) {
    case AugOp::kGaussianNoise:
      for (double& v : x) v += m * rng.normal();
      break;
    case AugOp::kCoordinateDropout: {
      // Guard against products like 0.3 * 10 landing a hair above an integer.
      const double raw = std::ceil(m * static_cast<double>(d) - 1e-12);
      const auto count = static_cast<std::size_t>(std::clamp(raw, 0.0, static_cast<double>(d)));
      if (count == 0) break;
      std::vector<std::size_t> idx(d);
      for (std::size_t i = 0; i < d; ++i) idx[i] = i;
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(idx[i], idx[i + rng.index(d - i)]);
        x[idx[i]] = 0.0;
      }
      break;
    }
    case AugOp::kRandomScaling:
      for (double& v : x) v *= 1.0 + m;
      break;
    case AugOp::kRandomRotation2Plane: {
      if (d < 2 || m == 0.0) break;
      // Orthonormal pair from two Gaussian directions.
      std::vector<double> a(d), b(d);
      for (double& v : a) v = rng.normal();
      for (double& v : b) v = rng.normal();
      double na = 0.0;
      for (double v : a) na += v * v;
      na = std::sqrt(na);
      for (double& v : a) v /= na;
      double ab = 0.0;
      for (std::size_t i = 0; i < d; ++i) ab += a[i] * b[i];
      double nb = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        b[i] -= ab * a[i];
        nb += b[i] * b[i];
      }
      nb = std::sqrt(nb);
      if (nb < 1e-12) break;
      for (double& v : b) v /= nb;
      double pa = 0.0, pb = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        pa += a[i] * x[i];
        pb += b[i] * x[i];
      }
      const double c = std::cos(m), s = std::sin(m);
      const double da = pa * c - pb * s - pa;
      const double db = pa * s + pb * c - pb;
      for (std::size_t i = 0; i < d; ++i) x[i] += da * a[i] + db * b[i];
      break;
    }
    case AugOp::kFeatureJitter:
      for (double& v : x) v += m * rng.uniform(-1.0, 1.0);
      break;
  }
}

double drawMagnitude(const OpSpec& op, double global, Rng& rng) {
  const double u = rng.uniform();
  return global * (op.lo + (op.hi - op.lo) * u);
}

}  // namespace

std::vector<double> applyOp(std::span<const double> x, AugOp op, double magnitude,
                            std::uint64_t rngState) {
  requireFinite(x);
  std::vector<double> y(x.begin(), x.end());
  Rng rng(rngState);
  applyInPlace(y, op, magnitude, rng);
  return y;
}

std::vector<double> weak(std::span<const double> x, const AugPolicy& policy,
                         std::uint64_t rngState) {
  requireFinite(x);
  std::vector<double> y(x.begin(), x.end());
  Rng rng(rngState);
  for (const OpSpec& op : policy.weakOps) {
    const double m = drawMagnitude(op, policy.magnitude, rng);
    applyInPlace(y, op.op, m, rng);
  }
  return y;
}

std::vector<double> strong(std::span<const double> x, const AugPolicy& policy,
                           std::uint64_t rngState) {
  requireFinite(x);
  const std::size_t k = policy.strongOps.size();
  if (policy.strongOpsPerApplication < 0 ||
      static_cast<std::size_t>(policy.strongOpsPerApplication) > k)
    throw InvalidInput("strongOpsPerApplication exceeds the number of strong ops");
  const auto n = static_cast<std::size_t>(policy.strongOpsPerApplication);
  std::vector<double> y(x.begin(), x.end());
  Rng rng(rngState);
  // Choose n of K without replacement, in drawn order.
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < k; ++i) order[i] = i;
  for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.index(k - i)]);
  for (std::size_t i = 0; i < n; ++i) {
    const OpSpec& op = policy.strongOps[order[i]];
    const double m = drawMagnitude(op, policy.magnitude, rng);
    applyInPlace(y, op.op, m, rng);
  }
  return y;
}

std::uint64_t sampleViewSeed(std::uint64_t rngState, std::uint64_t sampleId, ViewKind view) {
  const StreamTag t = view == ViewKind::kStrong ? StreamTag::kStrongView : StreamTag::kWeakView;
  return deriveSeed(rngState, {sampleId, tag(t)});
}

AugmentedBatch augmentBatch(std::span<const Sample> batch, const AugPolicy& policy, ViewKind which,
                            std::uint64_t rngState) {
  if (batch.empty()) throw InvalidInput("cannot augment an empty batch");
  const std::size_t d = batch.front().features.size();
  AugmentedBatch out;
  const bool wantWeak = which != ViewKind::kStrong;
  const bool wantStrong = which != ViewKind::kWeak;
  if (wantWeak) out.weak = Matrix(batch.size(), d);
  if (wantStrong) out.strong = Matrix(batch.size(), d);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    const Sample& s = batch[r];
    if (s.features.size() != d) throw InvalidInput("inconsistent feature dimension in batch");
    if (wantWeak)
      std::ranges::copy(weak(s.features, policy, sampleViewSeed(rngState, s.id, ViewKind::kWeak)),
                        out.weak.row(r).begin());
    if (wantStrong)
      std::ranges::copy(
          strong(s.features, policy, sampleViewSeed(rngState, s.id, ViewKind::kStrong)),
          out.strong.row(r).begin());
  }
  return out;
}

}  // namespace ssda
