#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ssda/data.hpp"
#include "ssda/errors.hpp"
#include "ssda/metrics.hpp"

using namespace ssda;

namespace {

// Single linear layer whose logits equal the input features.
ModelParams passthrough(std::size_t c) {
  Matrix w(c, c);
  for (std::size_t i = 0; i < c; ++i) w(i, i) = 1.0;
  return ModelParams(Architecture{c, {}, c}, {Layer{w, std::vector<double>(c)}});
}

Sample labelled(std::vector<double> x, int y, std::uint64_t id = 0) { return {std::move(x), y, id}; }

}  // namespace

TEST_CASE("accuracy closed forms") {
  const ModelParams p = passthrough(2);
  const std::vector<Sample> right{labelled({1, 0}, 0), labelled({0, 1}, 1)};
  CHECK(accuracy(p, right) == 100.0);
  const std::vector<Sample> constant{labelled({1, 0}, 0), labelled({1, 0}, 1), labelled({2, 0}, 0),
                                     labelled({3, 0}, 1)};
  CHECK(accuracy(p, constant) == 50.0);
  // Tie goes to class 0.
  CHECK(accuracy(p, std::vector<Sample>{labelled({0, 0}, 0)}) == 100.0);
  CHECK_THROWS_AS(accuracy(p, std::vector<Sample>{}), InvalidInput);
  CHECK_THROWS_AS(accuracy(p, std::vector<Sample>{{{1, 0}, std::nullopt, 0}}), InvalidInput);
}

TEST_CASE("accuracy equals a brute-force comparison and ignores order") {
  const ModelParams p = initializeParams(Architecture{6, {5}, 4}, 17);
  std::mt19937_64 gen(3);
  std::vector<Sample> set;
  for (std::uint64_t i = 0; i < 300; ++i) {
    const Matrix x = oracle::randomMatrix(gen, 1, 6, 2.0);
    set.push_back(labelled({x.values().begin(), x.values().end()}, static_cast<int>(i % 4), i));
  }
  std::size_t hits = 0;
  for (const Sample& s : set)
    hits += oracle::firstArgmax(oracle::naiveProbs(p, s.features)) == static_cast<std::size_t>(*s.label);
  CHECK(accuracy(p, set) == 100.0 * double(hits) / 300.0);
  std::shuffle(set.begin(), set.end(), gen);
  CHECK(accuracy(p, set) == 100.0 * double(hits) / 300.0);
}

TEST_CASE("per-class accuracy") {
  const ModelParams p = passthrough(3);
  const std::vector<Sample> s{labelled({1, 0, 0}, 0), labelled({0, 1, 0}, 0), labelled({0, 1, 0}, 1),
                              labelled({0, 0, 1}, 2), labelled({0, 0, 1}, 2)};
  const auto acc = perClassAccuracy(p, s);
  CHECK(acc[0] == 50.0);
  CHECK(acc[1] == 100.0);
  CHECK(acc[2] == 100.0);
}

TEST_CASE("pseudo-label categories on ten hand-made rows") {
  // (probabilities, truth) -> category at mu = 0.9.
  const std::vector<std::vector<double>> probs{
      {0.95, 0.03, 0.02}, {0.91, 0.05, 0.04}, {0.02, 0.97, 0.01}, {0.9, 0.05, 0.05},
      {0.6, 0.3, 0.1},    {0.2, 0.7, 0.1},    {0.34, 0.33, 0.33}, {0.05, 0.05, 0.9},
      {0.5, 0.45, 0.05},  {0.1, 0.2, 0.7}};
  const std::vector<int> truth{0, 1, 1, 0, 0, 1, 2, 1, 1, 2};
  // a: rows 0,2,3   confident-wrong: rows 1,7   rescuable: 4,5,9   below-wrong: 6,8
  Matrix m(10, 3);
  for (std::size_t r = 0; r < 10; ++r)
    for (std::size_t c = 0; c < 3; ++c) m(r, c) = probs[r][c];
  const PseudoLabelStats s = pseudoLabelStatsFromProbs(m, truth, 0.9);
  CHECK(s.confidentCorrect == 3);
  CHECK(s.confidentWrong == 2);
  CHECK(s.rescuable == 3);
  CHECK(s.belowWrong == 2);
  CHECK(s.passRate == doctest::Approx(0.5));
  CHECK(s.mu == 0.9);

  const PseudoLabelStats none = pseudoLabelStatsFromProbs(m, truth, 1.0 + 1e-9);
  CHECK(none.confidentCorrect + none.confidentWrong == 0);
  CHECK(none.rescuable == 6);
  CHECK(none.belowWrong == 4);
  CHECK(pseudoLabelStatsFromProbs(m, truth, 0.0).passRate == 1.0);
  CHECK_THROWS_AS(pseudoLabelStatsFromProbs(m, std::vector<int>{0}, 0.9), ShapeMismatch);
}

TEST_CASE("pseudo-label counts partition the pool and move monotonically in mu") {
  ShiftSpec spec;
  spec.samplesPerClassSource = 10;
  spec.samplesPerClassTarget = 60;
  const SsdaSplit split = generateShiftedDomains(spec);
  ModelParams p = initializeParams(Architecture{16, {8}, 4}, 2);
  for (std::size_t i = 0; i < p.parameterCount(); ++i) p.flat(i) *= 4.0;
  const auto hidden = EvaluationAccess::hiddenLabels(split);
  std::size_t prevBelow = 0;
  double prevRate = 2.0;
  for (double mu : {0.0, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99, 1.0, 1.0 + 1e-9}) {
    const PseudoLabelStats s = pseudoLabelReport(p, split.targetUnlabeled, hidden, mu);
    CHECK(s.total() == split.targetUnlabeled.size());
    CHECK(s.rescuable + s.belowWrong >= prevBelow);
    CHECK(s.passRate <= prevRate);
    prevBelow = s.rescuable + s.belowWrong;
    prevRate = s.passRate;
  }
  CHECK_THROWS_AS(pseudoLabelReport(p, split.targetUnlabeled, std::vector<int>{1}, 0.5), ShapeMismatch);
}

TEST_CASE("evaluator reads the sealed table") {
  ShiftSpec spec;
  spec.samplesPerClassSource = 10;
  spec.samplesPerClassTarget = 20;
  const SsdaSplit split = sampleAnchors(generateShiftedDomains(spec), 1, 0);
  const ModelParams p = initializeParams(Architecture{16, {4}, 4}, 0);
  const Evaluation e = Evaluator(split, 0.95).evaluate(p);
  CHECK(e.targetAccuracy == accuracy(p, EvaluationAccess::heldOut(split)));
  CHECK(e.pseudoLabels.total() == split.targetUnlabeled.size());
  CHECK(e.targetAccuracy >= 0.0);
  CHECK(e.targetAccuracy <= 100.0);
  CHECK(pseudoLabelStatsFromJson(toJson(e.pseudoLabels)) == e.pseudoLabels);
}
