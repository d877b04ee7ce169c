// Acceptance suite: one PASS/FAIL line per criterion, with measured margins.

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradient_suite.hpp"
#include "oracles.hpp"
#include "ssda/experiment.hpp"
#include "ssda/losses.hpp"
#include "ssda/model.hpp"
#include "ssda/training.hpp"

using namespace ssda;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

constexpr int kSeeds = 5;

double secondsSince(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* format, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c, d);
  return buf;
}

struct Verdict {
  bool pass = true;
  std::vector<std::string> details;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    details.push_back(std::string(ok ? "ok   " : "FAIL ") + what);
  }
};

int failures = 0;

void report(int id, const std::string& title, const Verdict& v, double seconds) {
  std::printf("criterion %d: %s  %s  (%.1f s)\n", id, v.pass ? "PASS" : "FAIL", title.c_str(), seconds);
  for (const auto& d : v.details) std::printf("    %s\n", d.c_str());
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

// Runs are shared between criteria; each (preset, shot, seed) trains once.
class RunCache {
 public:
  const ExperimentOutcome& get(const std::string& preset, int shot, std::uint64_t seed) {
    const std::string key = preset + "/" + std::to_string(shot) + "/" + std::to_string(seed);
    auto it = runs_.find(key);
    if (it == runs_.end()) {
      TrainConfig c = applyPreset(TrainConfig{}, preset);
      c.kShot = shot;
      c.seed = seed;
      c.evalEvery = 0;
      const auto start = Clock::now();
      it = runs_.emplace(key, runExperiment(c, preset)).first;
      seconds_ += secondsSince(start);
    }
    return it->second;
  }

  double mean(const std::string& preset, int shot,
              const std::function<double(const ExperimentReport&)>& metric) {
    double sum = 0.0;
    for (std::uint64_t s = 0; s < kSeeds; ++s) sum += metric(get(preset, shot, s).report);
    return sum / kSeeds;
  }

  double meanAccuracy(const std::string& preset, int shot) {
    return mean(preset, shot, [](const ExperimentReport& r) { return r.finalAccuracy; });
  }

  double trainingSeconds() const { return seconds_; }

 private:
  std::map<std::string, ExperimentOutcome> runs_;
  double seconds_ = 0.0;
};

// ------------------------------------------------------------------ 1

void gradientSuite() {
  constexpr int kInstances = 25;
  const auto start = Clock::now();
  Verdict v;
  for (gradcheck::Loss loss : gradcheck::kAll) {
    double worst = 0.0;
    std::size_t passers = 0;
    for (int s = 0; s < kInstances; ++s) {
      const gradcheck::Outcome o = gradcheck::run(loss, static_cast<std::uint64_t>(1000 + s));
      worst = std::max(worst, o.maxRelError);
      passers += o.passers;
    }
    std::ostringstream line;
    line << gradcheck::name(loss) << ": " << kInstances << " instances, max rel err "
         << fmt("%.2e", worst);
    if (loss == gradcheck::Loss::kConsistency || loss == gradcheck::Loss::kUda ||
        loss == gradcheck::Loss::kSsl)
      line << ", " << passers << " passers";
    v.require(worst < 1e-4, line.str() + " (< 1e-4)");
  }
  const double seconds = secondsSince(start);
  v.require(seconds < 30.0, fmt("runtime %.2f s (< 30 s)", seconds));
  report(1, "gradient suite", v, seconds);
}

// ------------------------------------------------------------------ 2

void emaSuite() {
  const auto start = Clock::now();
  Verdict v;
  const Architecture arch{6, {8, 5}, 4};
  for (double sigma : {0.0, 0.5, 0.99, 1.0}) {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
      const ModelParams student = initializeParams(arch, 100 + trial);
      const ModelParams teacher0 = initializeParams(arch, 200 + trial);
      ModelParams teacher = teacher0;
      for (int n = 1; n <= 200; ++n) {
        teacher = emaUpdate(teacher, student, sigma);
        const double decay = std::pow(sigma, n);
        for (std::size_t i = 0; i < student.parameterCount(); ++i) {
          const double expected = decay * std::abs(teacher0.flat(i) - student.flat(i));
          worst = std::max(worst, std::abs(std::abs(teacher.flat(i) - student.flat(i)) - expected));
        }
      }
    }
    v.require(worst <= 1e-9, fmt("sigma %.2f: closed-form recurrence, 200 steps, max error %.2e (<= 1e-9)",
                                 sigma, worst));
  }

  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t outside = 0, fixedViolations = 0, pairs = 0;
  double affineErr = 0.0;
  for (std::uint64_t trial = 0; trial < 200; ++trial) {
    const ModelParams a = gradcheck::detail::sharpened(arch, 300 + trial, 1.0 + 4.0 * unit(gen));
    const ModelParams b = gradcheck::detail::sharpened(arch, 900 + trial, 1.0 + 4.0 * unit(gen));
    const double sigma = trial == 0 ? 0.0 : trial == 1 ? 1.0 : unit(gen);
    const ModelParams m = emaUpdate(a, b, sigma);
    const ModelParams fixedPoint = emaUpdate(a, a, sigma);
    for (std::size_t i = 0; i < a.parameterCount(); ++i) {
      const double lo = std::min(a.flat(i), b.flat(i)), hi = std::max(a.flat(i), b.flat(i));
      if (m.flat(i) < lo || m.flat(i) > hi) ++outside;
      affineErr = std::max(affineErr, std::abs(m.flat(i) - (sigma * a.flat(i) + (1 - sigma) * b.flat(i))));
      // sigma*x + (1-sigma)*x rounds to within one ulp of x.
      if (std::abs(fixedPoint.flat(i) - a.flat(i)) > 2.3e-16 * std::abs(a.flat(i))) ++fixedViolations;
      ++pairs;
    }
  }
  v.require(outside == 0, std::to_string(pairs) + " coordinates: EMA inside the segment (" +
                              std::to_string(outside) + " outside)");
  v.require(affineErr <= 1e-12, fmt("EMA equals sigma*t + (1-sigma)*s, max error %.2e", affineErr));
  v.require(fixedViolations == 0,
            "EMA(x, x) = x within one ulp (" + std::to_string(fixedViolations) + " violations)");
  report(2, "EMA suite", v, secondsSince(start));
}

// ------------------------------------------------------------------ 3

// A linear model with identity weights maps log p to logits log p, so
// softmax returns p: fixtures can specify the weak-view probabilities.
ModelParams identityModel(std::size_t classes) {
  ModelParams p = ModelParams::zeros(Architecture{classes, {}, classes});
  for (std::size_t c = 0; c < classes; ++c) p.layer(0).weights(c, c) = 1.0;
  return p;
}

Matrix logRows(const std::vector<std::vector<double>>& probs) {
  Matrix m(probs.size(), probs[0].size());
  for (std::size_t r = 0; r < probs.size(); ++r)
    for (std::size_t c = 0; c < probs[r].size(); ++c) m(r, c) = std::log(probs[r][c]);
  return m;
}

void thresholdSuite() {
  const auto start = Clock::now();
  Verdict v;

  const double mus[] = {0.0, 0.5, 0.9, 0.95, 1.0 + 1e-12};
  std::size_t violations = 0, sweeps = 0, endpointFailures = 0;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const ModelParams p = gradcheck::detail::sharpened(Architecture{5, {7}, 3}, 40 + trial, 2.0 + 0.1 * trial);
    std::mt19937_64 gen(500 + trial);
    const Matrix weak = oracle::randomMatrix(gen, 64, 5, 2.0);
    const Matrix strong = oracle::randomMatrix(gen, 64, 5, 2.0);
    std::vector<std::size_t> counts;
    for (double mu : mus) counts.push_back(consistencyUnlabeled(p, weak, strong, mu).passCount());
    for (std::size_t k = 1; k < counts.size(); ++k)
      if (counts[k] > counts[k - 1]) ++violations;
    if (counts.front() != 64 || counts.back() != 0) ++endpointFailures;
    ++sweeps;
  }
  v.require(violations == 0, std::to_string(sweeps) +
                                 " sweeps over mu in {0, 0.5, 0.9, 0.95, 1+eps}: passer count non-increasing (" +
                                 std::to_string(violations) + " increases)");
  v.require(endpointFailures == 0, "mu = 0 passes every sample and mu = 1+eps passes none");

  // Ten weak-view rows with the expected outcome at mu = 0.95 written out.
  const std::vector<std::vector<double>> weakProbs = {
      {0.97, 0.02, 0.01},  {0.02, 0.96, 0.02},   {0.94, 0.03, 0.03},    {0.50, 0.25, 0.25},
      {0.01, 0.01, 0.98},  {0.33, 0.33, 0.34},   {0.949, 0.05, 0.001},  {0.951, 0.048, 0.001},
      {0.05, 0.90, 0.05},  {0.999, 0.0005, 0.0005}};
  const std::vector<std::vector<double>> strongProbs = {
      {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4}, {0.1, 0.8, 0.1}, {0.25, 0.25, 0.5},
      {0.4, 0.4, 0.2}, {0.1, 0.1, 0.8}, {0.35, 0.6, 0.05}, {0.5, 0.25, 0.25}, {0.9, 0.05, 0.05}};
  const std::vector<bool> expectedMask = {true, true, false, false, true, false, false, true, false, true};
  const std::vector<std::size_t> expectedLabel = {0, 1, 0, 0, 2, 0, 0, 0, 0, 0};
  double expectedLoss = 0.0;
  for (std::size_t r = 0; r < 10; ++r)
    if (expectedMask[r]) expectedLoss -= std::log(strongProbs[r][expectedLabel[r]]);
  expectedLoss /= 10.0;

  const ModelParams id = identityModel(3);
  const LossValue lv = consistencyUnlabeled(id, logRows(weakProbs), logRows(strongProbs), 0.95);
  bool maskOk = lv.mask && *lv.mask == expectedMask;
  bool gradOk = true;
  for (std::size_t r = 0; r < 10; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double g = lv.gradAtLogits(r, c);
      const double expected =
          expectedMask[r] ? (strongProbs[r][c] - (c == expectedLabel[r] ? 1.0 : 0.0)) / 10.0 : 0.0;
      if (expectedMask[r] ? std::abs(g - expected) > 1e-12 : g != 0.0) gradOk = false;
    }
  }
  v.require(maskOk && lv.passCount() == 5,
            "10-sample fixture at mu = 0.95: mask matches enumeration (" + std::to_string(lv.passCount()) +
                " of 5 expected passers)");
  v.require(std::abs(lv.scalar - expectedLoss) <= 1e-12,
            fmt("fixture loss %.15f vs enumerated %.15f", lv.scalar, expectedLoss));
  v.require(gradOk, "fixture logit gradients: (q - onehot(pseudo))/10 on passers, exactly 0 elsewhere");
  report(3, "threshold suite", v, secondsSince(start));
}

// ------------------------------------------------------------------ 4

bool bitIdentical(const Gradients& a, const Gradients& b) {
  if (a.parameterCount() != b.parameterCount()) return false;
  for (std::size_t i = 0; i < a.parameterCount(); ++i)
    if (std::bit_cast<std::uint64_t>(a.flat(i)) != std::bit_cast<std::uint64_t>(b.flat(i))) return false;
  return true;
}

void perturb(ModelParams& p, std::mt19937_64& gen, double scale) {
  std::normal_distribution<double> noise(0.0, scale);
  for (std::size_t i = 0; i < p.parameterCount(); ++i) p.flat(i) += noise(gen);
}

void stopGradientAudits() {
  const auto start = Clock::now();
  Verdict v;
  const Architecture arch{5, {7, 6}, 3};
  constexpr int kTrials = 20;
  const HyperParams hyper;  // gamma .2, eta .8, lambdaU 1, mu .95

  std::size_t teacherSame = 0, frozenFdOk = 0, liveDiffers = 0;
  std::size_t weakSame = 0, udaWeakSame = 0, weakNontrivial = 0;
  for (int t = 0; t < kTrials; ++t) {
    std::mt19937_64 gen(4000 + t);
    const ModelParams student = gradcheck::detail::sharpened(arch, 60 + t, 3.0);
    ModelParams teacher = gradcheck::detail::sharpened(arch, 160 + t, 3.0);
    const Matrix anchors = oracle::randomMatrix(gen, 6, 5, 2.0);
    const std::vector<int> anchorLabels = oracle::randomLabels(gen, 6, 3);
    const Matrix weak = oracle::randomMatrix(gen, 12, 5, 2.0);
    Matrix strong = weak;
    {
      std::normal_distribution<double> jitter(0.0, 0.3);
      for (double& x : strong.values()) x += jitter(gen);
    }

    // Soft labels are a snapshot; the teacher moving afterwards changes nothing.
    const SslBatch batch{anchors, anchorLabels, weak, strong, forwardBatch(teacher, weak).probs};
    const Gradients before = sslObjective(student, batch, hyper, true).grads;
    perturb(teacher, gen, 0.5);
    const Gradients after = sslObjective(student, batch, hyper, true).grads;
    if (bitIdentical(before, after)) ++teacherSame;

    // The distillation gradient treats the targets as constants: it matches
    // finite differences with the targets frozen, and differs from the
    // derivative obtained when targets are recomputed from the model.
    const Matrix targets = forwardBatch(student, weak).probs;
    const auto frozen = [&](const ModelParams& q) {
      return distillation(targets, forwardBatch(q, strong).logits).scalar;
    };
    const auto live = [&](const ModelParams& q) {
      return distillation(forwardBatch(q, weak).probs, forwardBatch(q, strong).logits).scalar;
    };
    const ForwardPass sp = forwardBatch(student, strong);
    const Gradients analytic = backward(student, sp, distillation(targets, sp.logits).gradAtLogits);
    if (oracle::maxRelativeError(analytic, oracle::finiteDifferences(student, frozen)) < 1e-4) ++frozenFdOk;
    if (oracle::maxRelativeError(analytic, oracle::finiteDifferences(student, live)) > 1e-3) ++liveDiffers;

    // Weak-branch perturbations that keep every pseudo-label and mask bit leave
    // the consistency gradient unchanged to the bit.
    const double mu = gradcheck::detail::safeThreshold(forwardBatch(student, weak).probs);
    const double useMu = mu > 0.0 ? mu : 0.5;
    const LossValue base = consistencyUnlabeled(student, weak, strong, useMu);
    Matrix weak2 = weak;
    std::normal_distribution<double> tiny(0.0, 1e-7);
    for (double& x : weak2.values()) x += tiny(gen);
    const LossValue moved = consistencyUnlabeled(student, weak2, strong, useMu);
    const ForwardPass strongPass = forwardBatch(student, strong);
    if (base.mask == moved.mask) {
      if (bitIdentical(backward(student, strongPass, base.gradAtLogits),
                       backward(student, strongPass, moved.gradAtLogits)))
        ++weakSame;
      if (base.passCount() > 0) ++weakNontrivial;
    }
    HyperParams udaHyper = hyper;
    udaHyper.mu = useMu;
    const UdaBatch ub{anchors, anchorLabels, weak, strong};
    const UdaBatch ub2{anchors, anchorLabels, weak2, strong};
    if (bitIdentical(udaObjective(student, ub, udaHyper).grads, udaObjective(student, ub2, udaHyper).grads))
      ++udaWeakSame;
  }
  const auto count = [](std::size_t n) { return std::to_string(n) + "/" + std::to_string(kTrials); };
  v.require(teacherSame == kTrials, "teacher perturbed after the soft-label snapshot: student gradient bit-identical in " + count(teacherSame));
  v.require(frozenFdOk == kTrials, "distillation gradient matches finite differences with frozen targets in " + count(frozenFdOk));
  v.require(liveDiffers == kTrials, "and differs from the gradient through live targets in " + count(liveDiffers));
  v.require(weakSame == kTrials, "weak views perturbed: consistency gradient bit-identical in " + count(weakSame) +
                                     " (" + std::to_string(weakNontrivial) + " with passers)");
  v.require(udaWeakSame == kTrials, "weak views perturbed: stage I composite gradient bit-identical in " + count(udaWeakSame));

  // In training the teacher only ever moves by the EMA of the post-step student.
  TrainConfig c;
  c.benchmark.samplesPerClassSource = 100;
  c.benchmark.samplesPerClassTarget = 100;
  c.iterationsStage1 = 50;
  const SsdaSplit split = buildSplit(c);
  TrainState state = beginStage2(trainStage1(split, c).model, split, c);
  std::size_t emaExact = 0;
  for (std::int64_t it = 1; it <= 20; ++it) {
    const ModelParams prior = *state.teacher;
    continueStage2(state, split, c, it);
    if (*state.teacher == emaUpdate(prior, state.student, c.hyper.sigma)) ++emaExact;
  }
  v.require(emaExact == 20, "stage II teacher equals EMA(teacher, student) bitwise on " + std::to_string(emaExact) + "/20 steps");
  report(4, "stop-gradient audits", v, secondsSince(start));
}

// ------------------------------------------------------------------ 5 to 9

void decoupling(RunCache& runs) {
  const auto start = Clock::now();
  Verdict v;
  double gain = 0.0;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const ExperimentReport& r = runs.get("clmt", 3, s).report;
    gain += r.finalAccuracy - r.stage1Accuracy;
    v.details.push_back(fmt("seed %.0f: stage I %.2f -> CLMT %.2f", static_cast<double>(s), r.stage1Accuracy,
                            r.finalAccuracy));
  }
  gain /= kSeeds;
  const double seconds = secondsSince(start);
  v.require(gain >= 3.0, fmt("mean gain %.2f points (>= 3), margin %+.2f", gain, gain - 3.0));
  v.require(seconds < 300.0, fmt("%.1f s for 5 runs (< 300 s)", seconds));
  report(5, "decoupling: CLMT over stage I only, 3-shot, 5 seeds", v, seconds);
}

void ablationOrdering(RunCache& runs) {
  const auto start = Clock::now();
  Verdict v;
  const auto chain = [&](const std::vector<std::pair<std::string, bool>>& steps) {
    // steps[i].second: strict comparison between steps[i-1] and steps[i].
    std::vector<double> means;
    for (const auto& [preset, strict] : steps) means.push_back(runs.meanAccuracy(preset, 3));
    for (std::size_t i = 1; i < steps.size(); ++i) {
      const double margin = means[i] - means[i - 1];
      const bool ok = steps[i].second ? margin > 0.0 : margin >= 0.0;
      v.require(ok, steps[i - 1].first + fmt(" %.2f ", means[i - 1]) + (steps[i].second ? "<" : "<=") + " " +
                        steps[i].first + fmt(" %.2f  (margin %+.2f)", means[i], margin));
    }
  };
  chain({{"source", false}, {"source-anchors", true}, {"source-anchors-aug", true},
         {"source-anchors-aug-fixmatch", false}});
  chain({{"uda", false}, {"anchors", true}, {"clmt", false}});
  report(6, "ablation orderings, 3-shot, 5 seeds", v, secondsSince(start));
}

void rescued(RunCache& runs) {
  const auto start = Clock::now();
  Verdict v;
  const double stage1 = runs.mean("clmt", 3, [](const ExperimentReport& r) {
    return static_cast<double>(r.stage1PseudoLabels.rescuable);
  });
  const double stage2 = runs.mean("clmt", 3, [](const ExperimentReport& r) {
    return static_cast<double>(r.stage2PseudoLabels.rescuable);
  });
  const double pool = runs.mean("clmt", 3, [](const ExperimentReport& r) {
    return static_cast<double>(r.stage1PseudoLabels.total());
  });
  v.require(stage2 < stage1, fmt("mean rescuable at mu 0.95: stage I %.1f -> stage II student %.1f of %.0f (margin %+.1f)",
                                 stage1, stage2, pool, stage1 - stage2));
  report(7, "below-threshold correct samples shrink in stage II", v, secondsSince(start));
}

void determinism(RunCache& runs) {
  const auto start = Clock::now();
  Verdict v;
  TrainConfig c = applyPreset(TrainConfig{}, "clmt");
  c.evalEvery = 0;
  const std::string first = toJson(runs.get("clmt", 3, 0).report).dump();
  const std::string second = toJson(runExperiment(c, "clmt").report).dump();
  v.require(first == second, "two default CLMT runs produce byte-identical reports (" +
                                 std::to_string(first.size()) + " bytes)");

  const fs::path dir = fs::temp_directory_path() / "ssda-acceptance";
  fs::create_directories(dir);
  for (double momentum : {0.0, 0.9}) {
    TrainConfig rc;
    rc.momentum = momentum;
    rc.iterationsStage1 = 200;
    rc.iterationsStage2 = 100;
    rc.evalEvery = 25;
    const SsdaSplit split = buildSplit(rc);
    const Evaluator ev(split, rc.hyper.mu);

    TrainState full1 = beginStage1(split, rc);
    continueStage1(full1, split, rc, rc.iterationsStage1, &ev);
    TrainState part1 = beginStage1(split, rc);
    continueStage1(part1, split, rc, 100, &ev);
    saveCheckpoint(part1, dir / "s1.ckpt", {hexHash(configHash(rc)), rc.seed});
    TrainState resumed1 = loadCheckpoint(dir / "s1.ckpt").state;
    continueStage1(resumed1, split, rc, rc.iterationsStage1, &ev);

    TrainState full2 = beginStage2(full1.student, split, rc);
    continueStage2(full2, split, rc, rc.iterationsStage2, &ev);
    TrainState part2 = beginStage2(full1.student, split, rc);
    continueStage2(part2, split, rc, 50, &ev);
    saveCheckpoint(part2, dir / "s2.ckpt", {hexHash(configHash(rc)), rc.seed});
    TrainState resumed2 = loadCheckpoint(dir / "s2.ckpt").state;
    continueStage2(resumed2, split, rc, rc.iterationsStage2, &ev);

    v.require(resumed1 == full1, fmt("stage I, momentum %.1f: 100 + resume + 100 equals 200 exactly", momentum));
    v.require(resumed2 == full2, fmt("stage II, momentum %.1f: 50 + resume + 50 equals 100 exactly", momentum));
  }
  fs::remove_all(dir);
  report(8, "determinism and exact resume", v, secondsSince(start));
}

void shots(RunCache& runs) {
  const auto start = Clock::now();
  Verdict v;
  const double one = runs.meanAccuracy("clmt", 1);
  const double three = runs.meanAccuracy("clmt", 3);
  v.require(three >= one, fmt("CLMT 1-shot %.2f, 3-shot %.2f (margin %+.2f)", one, three, three - one));
  report(9, "3-shot CLMT at least 1-shot CLMT, 5 seeds", v, secondsSince(start));
}

template <typename F>
void guarded(int id, F&& body) {
  try {
    body();
  } catch (const std::exception& e) {
    Verdict v;
    v.require(false, std::string("exception: ") + e.what());
    report(id, "aborted", v, 0.0);
  }
}

}  // namespace

int main() {
  const auto start = Clock::now();
  RunCache runs;
  guarded(1, gradientSuite);
  guarded(2, emaSuite);
  guarded(3, thresholdSuite);
  guarded(4, stopGradientAudits);
  guarded(5, [&] { decoupling(runs); });
  guarded(6, [&] { ablationOrdering(runs); });
  guarded(7, [&] { rescued(runs); });
  guarded(8, [&] { determinism(runs); });
  guarded(9, [&] { shots(runs); });
  std::printf("%d of 9 criteria failed; %.1f s total, %.1f s training\n", failures, secondsSince(start),
              runs.trainingSeconds());
  return failures == 0 ? 0 : 1;
}
