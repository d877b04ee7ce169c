#include "ssda/data.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "ssda/errors.hpp"
#include "ssda/rng.hpp"

namespace ssda {

std::string toString(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::kRotation: return "rotation";
    case ShiftKind::kTranslation: return "translation";
    case ShiftKind::kScale: return "scale";
    case ShiftKind::kMixed: return "mixed";
  }
  return "unknown";
}

ShiftKind shiftKindFromString(const std::string& name) {
  if (name == "rotation") return ShiftKind::kRotation;
  if (name == "translation") return ShiftKind::kTranslation;
  if (name == "scale") return ShiftKind::kScale;
  if (name == "mixed") return ShiftKind::kMixed;
  throw InvalidInput("unknown shift kind '" + name + "'");
}

std::vector<std::string> ShiftSpec::validate() const {
  std::vector<std::string> problems;
  if (numClasses < 2) problems.push_back("benchmark.numClasses must be >= 2");
  if (inputDim < 1) problems.push_back("benchmark.inputDim must be >= 1");
  if (samplesPerClassSource < 1) problems.push_back("benchmark.samplesPerClassSource must be >= 1");
  if (samplesPerClassTarget < 1) problems.push_back("benchmark.samplesPerClassTarget must be >= 1");
  if ((shiftKind == ShiftKind::kRotation || shiftKind == ShiftKind::kMixed) && inputDim < 2)
    problems.push_back("benchmark.inputDim must be >= 2 for rotation shifts");
  if (!std::isfinite(shiftMagnitude)) problems.push_back("benchmark.shiftMagnitude must be finite");
  if (!(clusterSpread > 0.0) || !std::isfinite(clusterSpread))
    problems.push_back("benchmark.clusterSpread must be positive");
  if (!(meanScale > 0.0) || !std::isfinite(meanScale))
    problems.push_back("benchmark.meanScale must be positive");
  if (!(heldOutFraction >= 0.0 && heldOutFraction < 1.0))
    problems.push_back("benchmark.heldOutFraction must lie in [0, 1)");
  if (shiftKind == ShiftKind::kScale && 1.0 + shiftMagnitude == 0.0)
    problems.push_back("benchmark.shiftMagnitude of -1 collapses the scale shift");
  return problems;
}

nlohmann::json toJson(const ShiftSpec& spec) {
  return {{"numClasses", spec.numClasses},
          {"inputDim", spec.inputDim},
          {"samplesPerClassSource", spec.samplesPerClassSource},
          {"samplesPerClassTarget", spec.samplesPerClassTarget},
          {"shiftKind", toString(spec.shiftKind)},
          {"shiftMagnitude", spec.shiftMagnitude},
          {"clusterSpread", spec.clusterSpread},
          {"meanScale", spec.meanScale},
          {"heldOutFraction", spec.heldOutFraction},
          {"seed", spec.seed}};
}

ShiftSpec shiftSpecFromJson(const nlohmann::json& j) {
  ShiftSpec s;
  s.numClasses = j.at("numClasses").get<int>();
  s.inputDim = j.at("inputDim").get<int>();
  s.samplesPerClassSource = j.at("samplesPerClassSource").get<int>();
  s.samplesPerClassTarget = j.at("samplesPerClassTarget").get<int>();
  s.shiftKind = shiftKindFromString(j.at("shiftKind").get<std::string>());
  s.shiftMagnitude = j.at("shiftMagnitude").get<double>();
  s.clusterSpread = j.at("clusterSpread").get<double>();
  s.meanScale = j.at("meanScale").get<double>();
  s.heldOutFraction = j.at("heldOutFraction").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

std::size_t SsdaSplit::inputDim() const {
  for (const auto* pool : {&source, &targetUnlabeled, &targetLabeled})
    if (!pool->empty()) return pool->front().features.size();
  return 0;
}

void SsdaSplit::validate() const {
  if (numClasses < 1) throw InvalidInput("split has no classes");
  const std::size_t d = inputDim();
  std::set<std::uint64_t> targetIds;
  const auto check = [&](const std::vector<Sample>& pool, const char* name, bool labeled) {
    for (const Sample& s : pool) {
      if (s.features.size() != d)
        throw InvalidInput(std::string(name) + ": inconsistent feature dimension");
      if (!std::ranges::all_of(s.features, [](double v) { return std::isfinite(v); }))
        throw InvalidInput(std::string(name) + ": non-finite feature");
      if (labeled != s.label.has_value())
        throw InvalidInput(std::string(name) + (labeled ? ": missing label" : ": unexpected label"));
      if (s.label && (*s.label < 0 || *s.label >= numClasses))
        throw InvalidInput(std::string(name) + ": label outside the shared label space");
    }
  };
  check(source, "source", true);
  check(targetUnlabeled, "targetUnlabeled", false);
  check(targetLabeled, "targetLabeled", true);
  for (const Sample& s : targetUnlabeled) targetIds.insert(s.id);
  for (const Sample& s : targetLabeled)
    if (!targetIds.insert(s.id).second)
      throw InvalidInput("sample " + std::to_string(s.id) + " is both unlabeled and an anchor");
}

namespace {

// Geometry of the target shift, computed once per spec.
class ShiftTransform {
 public:
  explicit ShiftTransform(const ShiftSpec& spec) : spec_(spec) {
    const auto d = static_cast<std::size_t>(spec.inputDim);
    if (spec.shiftKind == ShiftKind::kRotation || spec.shiftKind == ShiftKind::kMixed) {
      // Principal plane of the centred class means.
      const Matrix means = generatedClassMeans(spec);
      Eigen::MatrixXd m(means.rows(), means.cols());
      for (std::size_t r = 0; r < means.rows(); ++r)
        for (std::size_t c = 0; c < means.cols(); ++c) m(r, c) = means(r, c);
      const Eigen::MatrixXd gram = m.transpose() * m;
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
      planeA_ = canonical(solver.eigenvectors().col(d - 1));
      planeB_ = canonical(solver.eigenvectors().col(d - 2));
    }
    if (spec.shiftKind == ShiftKind::kTranslation || spec.shiftKind == ShiftKind::kMixed) {
      Rng rng(deriveSeed(spec.seed, {tag(StreamTag::kShiftPlane)}));
      direction_.resize(d);
      double norm = 0.0;
      for (double& v : direction_) {
        v = rng.normal();
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : direction_) v /= norm;
    }
  }

  std::vector<double> apply(std::span<const double> x) const {
    std::vector<double> y(x.begin(), x.end());
    const double m = spec_.shiftMagnitude;
    const bool rotate = !planeA_.empty();
    if (rotate) {
      double pa = 0.0, pb = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        pa += planeA_[i] * y[i];
        pb += planeB_[i] * y[i];
      }
      const double c = std::cos(m), s = std::sin(m);
      const double da = pa * c - pb * s - pa;
      const double db = pa * s + pb * c - pb;
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += da * planeA_[i] + db * planeB_[i];
    }
    if (!direction_.empty())
      for (std::size_t i = 0; i < y.size(); ++i) y[i] += m * direction_[i];
    if (spec_.shiftKind == ShiftKind::kScale || spec_.shiftKind == ShiftKind::kMixed)
      for (double& v : y) v *= 1.0 + m;
    return y;
  }

 private:
  // Eigenvectors are defined up to sign; fix it so the largest entry is positive.
  static std::vector<double> canonical(const Eigen::VectorXd& v) {
    Eigen::Index idx = 0;
    v.cwiseAbs().maxCoeff(&idx);
    const double sign = v(idx) < 0 ? -1.0 : 1.0;
    std::vector<double> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = sign * v(i);
    return out;
  }

  ShiftSpec spec_;
  std::vector<double> planeA_, planeB_, direction_;
};

void requireValid(const ShiftSpec& spec) {
  auto problems = spec.validate();
  if (!problems.empty()) throw InvalidInput(problems.front());
}

// Splits `target` per class into (held-out, remaining) using a seeded shuffle.
void holdOut(std::vector<Sample> target, int numClasses, double fraction, std::uint64_t seed,
             std::vector<Sample>& heldOut, std::vector<Sample>& remaining) {
  Rng rng(deriveSeed(seed, {tag(StreamTag::kHoldOut)}));
  std::vector<char> held(target.size(), 0);
  for (int c = 0; c < numClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < target.size(); ++i)
      if (target[i].label == c) members.push_back(i);
    rng.shuffle(members);
    auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    if (count >= members.size() && !members.empty()) count = members.size() - 1;
    for (std::size_t k = 0; k < count; ++k) held[members[k]] = 1;
  }
  for (std::size_t i = 0; i < target.size(); ++i)
    (held[i] ? heldOut : remaining).push_back(std::move(target[i]));
}

SsdaSplit sealTarget(std::vector<Sample> source, std::vector<Sample> target, int numClasses,
                     double fraction, std::uint64_t seed) {
  std::vector<Sample> heldOut, remaining;
  holdOut(std::move(target), numClasses, fraction, seed, heldOut, remaining);
  std::map<std::uint64_t, int> truth;
  for (Sample& s : remaining) {
    truth.emplace(s.id, *s.label);
    s.label.reset();
  }
  SsdaSplit split;
  split.source = std::move(source);
  split.targetUnlabeled = std::move(remaining);
  split.numClasses = numClasses;
  split.sealed = SealedLabels(std::move(truth), std::move(heldOut));
  split.validate();
  return split;
}

}  // namespace

Matrix generatedClassMeans(const ShiftSpec& spec) {
  requireValid(spec);
  const auto classes = static_cast<std::size_t>(spec.numClasses);
  const auto d = static_cast<std::size_t>(spec.inputDim);
  Rng rng(deriveSeed(spec.seed, {tag(StreamTag::kClassMeans)}));
  Matrix means(classes, d);
  for (double& v : means.values()) v = spec.meanScale * rng.normal();
  for (std::size_t j = 0; j < d; ++j) {
    double centre = 0.0;
    for (std::size_t c = 0; c < classes; ++c) centre += means(c, j);
    centre /= static_cast<double>(classes);
    for (std::size_t c = 0; c < classes; ++c) means(c, j) -= centre;
  }
  return means;
}

std::vector<double> applyShift(const ShiftSpec& spec, std::span<const double> x) {
  requireValid(spec);
  return ShiftTransform(spec).apply(x);
}

SsdaSplit generateShiftedDomains(const ShiftSpec& spec) {
  requireValid(spec);
  const Matrix means = generatedClassMeans(spec);
  const ShiftTransform shift(spec);
  const auto d = static_cast<std::size_t>(spec.inputDim);

  std::uint64_t nextId = 0;
  const auto draw = [&](Rng& rng, int cls) {
    Sample s;
    s.features.resize(d);
    const auto mean = means.row(static_cast<std::size_t>(cls));
    for (std::size_t j = 0; j < d; ++j) s.features[j] = mean[j] + spec.clusterSpread * rng.normal();
    s.label = cls;
    s.id = nextId++;
    return s;
  };

  std::vector<Sample> source, target;
  Rng sourceRng(deriveSeed(spec.seed, {tag(StreamTag::kSourceNoise)}));
  for (int c = 0; c < spec.numClasses; ++c)
    for (int i = 0; i < spec.samplesPerClassSource; ++i) source.push_back(draw(sourceRng, c));
  Rng targetRng(deriveSeed(spec.seed, {tag(StreamTag::kTargetNoise)}));
  for (int c = 0; c < spec.numClasses; ++c) {
    for (int i = 0; i < spec.samplesPerClassTarget; ++i) {
      Sample s = draw(targetRng, c);
      s.features = shift.apply(s.features);
      target.push_back(std::move(s));
    }
  }
  return sealTarget(std::move(source), std::move(target), spec.numClasses, spec.heldOutFraction,
                    spec.seed);
}

SsdaSplit sampleAnchors(SsdaSplit split, int kShot, std::uint64_t seed) {
  if (kShot < 1) throw InvalidInput("kShot must be positive");
  auto& truth = split.sealed.unlabeledTruth_;
  std::vector<std::vector<std::size_t>> byClass(static_cast<std::size_t>(split.numClasses));
  for (std::size_t i = 0; i < split.targetUnlabeled.size(); ++i) {
    const auto it = truth.find(split.targetUnlabeled[i].id);
    if (it == truth.end())
      throw InvalidInput("unlabeled sample " + std::to_string(split.targetUnlabeled[i].id) +
                         " has no sealed label");
    byClass[static_cast<std::size_t>(it->second)].push_back(i);
  }
  for (std::size_t c = 0; c < byClass.size(); ++c)
    if (byClass[c].size() < static_cast<std::size_t>(kShot))
      throw InvalidInput("class " + std::to_string(c) + " has only " +
                         std::to_string(byClass[c].size()) + " unlabeled target samples, need " +
                         std::to_string(kShot));

  Rng rng(deriveSeed(seed, {tag(StreamTag::kAnchors)}));
  std::vector<char> chosen(split.targetUnlabeled.size(), 0);
  for (std::size_t c = 0; c < byClass.size(); ++c) {
    rng.shuffle(byClass[c]);
    for (int k = 0; k < kShot; ++k) {
      const std::size_t i = byClass[c][static_cast<std::size_t>(k)];
      chosen[i] = 1;
      Sample anchor = split.targetUnlabeled[i];
      anchor.label = static_cast<int>(c);
      truth.erase(anchor.id);
      split.targetLabeled.push_back(std::move(anchor));
    }
  }
  std::vector<Sample> remaining;
  remaining.reserve(split.targetUnlabeled.size());
  for (std::size_t i = 0; i < split.targetUnlabeled.size(); ++i)
    if (!chosen[i]) remaining.push_back(std::move(split.targetUnlabeled[i]));
  split.targetUnlabeled = std::move(remaining);
  split.validate();
  return split;
}

SsdaSplit splitFromLabeledPools(std::vector<Sample> source, std::vector<Sample> target,
                                int numClasses, double heldOutFraction, std::uint64_t seed) {
  std::uint64_t nextId = 0;
  for (auto* pool : {&source, &target}) {
    for (Sample& s : *pool) {
      if (!s.label) throw InvalidInput("labelled pools are required to build a split");
      s.id = nextId++;
    }
  }
  return sealTarget(std::move(source), std::move(target), numClasses, heldOutFraction, seed);
}

BatchStream::BatchStream(std::size_t poolSize, std::size_t batchSize, std::uint64_t seed,
                         bool shuffle)
    : poolSize_(poolSize), batchSize_(batchSize), seed_(seed), shuffle_(shuffle) {
  if (poolSize == 0) throw InvalidInput("cannot draw batches from an empty pool");
  if (batchSize == 0) throw InvalidInput("batch size must be >= 1");
}

void BatchStream::buildPermutation() {
  order_.resize(poolSize_);
  for (std::size_t i = 0; i < poolSize_; ++i) order_[i] = i;
  if (shuffle_) {
    Rng rng(deriveSeed(seed_, {cursor_.pass}));
    rng.shuffle(order_);
  }
  orderPass_ = cursor_.pass;
}

std::vector<std::size_t> BatchStream::next() {
  if (orderPass_ != cursor_.pass) buildPermutation();
  const std::size_t begin = cursor_.offset;
  const std::size_t end = std::min(poolSize_, begin + batchSize_);
  std::vector<std::size_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                                 order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_.offset = end;
  if (cursor_.offset == poolSize_) {
    ++cursor_.pass;
    cursor_.offset = 0;
  }
  return batch;
}

void BatchStream::restore(BatchCursor cursor) {
  if (cursor.offset >= poolSize_) throw InvalidInput("batch cursor offset beyond pool");
  cursor_ = cursor;
}

Matrix gatherFeatures(std::span<const Sample> pool, std::span<const std::size_t> indices) {
  const std::size_t d = pool.empty() ? 0 : pool.front().features.size();
  Matrix out(indices.size(), d);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::ranges::copy(pool[indices[r]].features, out.row(r).begin());
  return out;
}

Matrix stackFeatures(std::span<const Sample> samples) {
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  Matrix out(samples.size(), d);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].features.size() != d) throw InvalidInput("inconsistent feature dimension");
    std::ranges::copy(samples[r].features, out.row(r).begin());
  }
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> splitFields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <class T>
bool parseNumber(std::string_view text, T& out) {
  if (text.empty()) return false;
  if (text.front() == '+') text.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size();
}

}  // namespace

std::vector<Sample> loadDelimitedDataset(const std::filesystem::path& path,
                                         const DelimitedSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataFormatError("cannot open " + path.string(), 0);
  const std::size_t expected = schema.featureColumns + (schema.hasLabel ? 1 : 0);
  std::vector<Sample> samples;
  std::string line;
  std::size_t lineNo = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineNo;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = splitFields(view);
    if (first) {
      first = false;
      double probe = 0.0;
      if (!std::ranges::all_of(fields, [&](std::string_view f) { return parseNumber(f, probe); }))
        continue;  // header
    }
    if (fields.size() != expected)
      throw DataFormatError("expected " + std::to_string(expected) + " columns, found " +
                                std::to_string(fields.size()),
                            lineNo);
    Sample s;
    s.id = samples.size();
    s.features.resize(schema.featureColumns);
    for (std::size_t j = 0; j < schema.featureColumns; ++j) {
      if (!parseNumber(fields[j], s.features[j]) || !std::isfinite(s.features[j]))
        throw DataFormatError("malformed feature value '" + std::string(fields[j]) + "'", lineNo);
    }
    if (schema.hasLabel) {
      int label = 0;
      if (!parseNumber(fields.back(), label))
        throw DataFormatError("malformed label '" + std::string(fields.back()) + "'", lineNo);
      if (label < 0 || (schema.numClasses && label >= *schema.numClasses))
        throw DataFormatError("label " + std::to_string(label) + " outside the label space",
                              lineNo);
      s.label = label;
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void writeDelimitedDataset(const std::filesystem::path& path, std::span<const Sample> samples,
                           bool withLabels) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t d = samples.empty() ? 0 : samples.front().features.size();
  for (std::size_t j = 0; j < d; ++j) out << (j ? "," : "") << 'f' << j;
  if (withLabels) out << (d ? "," : "") << "label";
  out << '\n';
  char buf[64];
  for (const Sample& s : samples) {
    for (std::size_t j = 0; j < s.features.size(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof buf, s.features[j]);
      if (j) out << ',';
      out.write(buf, res.ptr - buf);
    }
    if (withLabels) {
      if (!s.label) throw InvalidInput("sample " + std::to_string(s.id) + " has no label to write");
      out << ',' << *s.label;
    }
    out << '\n';
  }
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace ssda
