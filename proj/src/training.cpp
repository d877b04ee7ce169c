#include "ssda/training.hpp"

#include <bit>
#include <cmath>

#include "ssda/augment.hpp"
#include "ssda/errors.hpp"
#include "ssda/losses.hpp"
#include "ssda/rng.hpp"

namespace ssda {

std::string toString(Stage stage) { return stage == Stage::kUda ? "UDA" : "SSL"; }

Stage stageFromString(const std::string& name) {
  if (name == "UDA") return Stage::kUda;
  if (name == "SSL") return Stage::kSsl;
  throw InvalidInput("unknown stage '" + name + "'");
}

namespace {

bool sameDouble(double a, double b) {
  return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b) ||
         (std::isnan(a) && std::isnan(b));
}

}  // namespace

bool IterationRecord::operator==(const IterationRecord& o) const {
  return stage == o.stage && iteration == o.iteration && sameDouble(sourceLoss, o.sourceLoss) &&
         sameDouble(consistencyLoss, o.consistencyLoss) && sameDouble(anchorLoss, o.anchorLoss) &&
         sameDouble(distillLoss, o.distillLoss) && sameDouble(passRate, o.passRate) &&
         targetAccuracy == o.targetAccuracy;
}

void TrainState::validate() const {
  if ((stage == Stage::kSsl) != teacher.has_value())
    throw InvalidInput("a teacher is present exactly in the SSL stage");
  if (teacher && !teacher->sameShape(student))
    throw ShapeMismatch("teacher and student shapes differ");
  if (velocity && !velocity->sameShape(student))
    throw ShapeMismatch("momentum buffer does not match the student");
  if (iteration < 0) throw InvalidInput("negative iteration");
}

Architecture architectureFor(const SsdaSplit& split, const TrainConfig& config) {
  return {split.inputDim(), config.hiddenDims, static_cast<std::size_t>(split.numClasses)};
}

namespace {

std::uint64_t stageKey(Stage stage) { return stage == Stage::kUda ? 1 : 2; }

std::uint64_t streamSeed(const TrainConfig& config, Stage stage, StreamTag t) {
  return deriveSeed(config.seed, {stageKey(stage), tag(t)});
}

std::vector<Sample> pick(const std::vector<Sample>& pool, const std::vector<std::size_t>& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(pool[i]);
  return out;
}

std::vector<int> labelsOf(const std::vector<Sample>& samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const Sample& s : samples) labels.push_back(*s.label);
  return labels;
}

// Anchor batch: every anchor when they fit in one batch, else the stream.
std::vector<Sample> anchorBatch(const SsdaSplit& split, const TrainConfig& config, Stage stage,
                                BatchCursor& cursor) {
  const auto& anchors = split.targetLabeled;
  if (anchors.size() <= static_cast<std::size_t>(config.batchAnchor)) return anchors;
  BatchStream stream(anchors.size(), static_cast<std::size_t>(config.batchAnchor),
                     streamSeed(config, stage, StreamTag::kAnchorBatches), true);
  stream.restore(cursor);
  auto idx = stream.next();
  cursor = stream.cursor();
  return pick(anchors, idx);
}

std::vector<Sample> drawBatch(const std::vector<Sample>& pool, int batchSize, std::uint64_t seed,
                              BatchCursor& cursor) {
  BatchStream stream(pool.size(), static_cast<std::size_t>(batchSize), seed, true);
  stream.restore(cursor);
  auto idx = stream.next();
  cursor = stream.cursor();
  return pick(pool, idx);
}

void maybeEvaluate(TrainState& state, const TrainConfig& config, const Evaluator* evaluator,
                   IterationRecord& record) {
  if (!evaluator || config.evalEvery <= 0 || state.iteration % config.evalEvery != 0) return;
  const Evaluation e = evaluator->evaluate(state.student);
  record.targetAccuracy = e.targetAccuracy;
  state.history.evaluations.push_back(
      {state.stage, state.iteration, e.targetAccuracy, e.pseudoLabels});
}

ModelParams applyStep(TrainState& state, const TrainConfig& config, const Gradients& grads) {
  MomentumSgd optimizer(config.lr, config.momentum);
  if (state.velocity) optimizer.setVelocity(*state.velocity);
  try {
    ModelParams next = optimizer.step(state.student, grads);
    if (const Gradients* v = optimizer.velocity()) state.velocity = *v;
    return next;
  } catch (const TrainingFault& fault) {
    throw TrainingFault(std::string(fault.what()) + " at " + toString(state.stage) +
                            " iteration " + std::to_string(state.iteration + 1),
                        fault.layer(), state.iteration + 1);
  }
}

void requireFiniteLoss(const TrainState& state, double total) {
  if (!std::isfinite(total))
    throw TrainingFault("non-finite loss at " + toString(state.stage) + " iteration " +
                            std::to_string(state.iteration + 1),
                        -1, state.iteration + 1);
}

}  // namespace

TrainState beginStage1(const SsdaSplit& split, const TrainConfig& config) {
  split.validate();
  if (split.source.empty()) throw InvalidInput("stage I needs labelled source samples");
  TrainState state;
  state.stage = Stage::kUda;
  state.student = initializeParams(architectureFor(split, config), config.seed);
  return state;
}

void continueStage1(TrainState& state, const SsdaSplit& split, const TrainConfig& config,
                    std::int64_t untilIteration, const Evaluator* evaluator) {
  if (state.stage != Stage::kUda) throw InvalidInput("state is not in stage I");
  state.validate();
  const bool useUnlabeled = config.hyper.alpha != 0.0 && !split.targetUnlabeled.empty();
  while (state.iteration < untilIteration) {
    const std::uint64_t augSeed =
        deriveSeed(config.seed, {tag(StreamTag::kStage1Augment), static_cast<std::uint64_t>(state.iteration)});

    std::vector<Sample> labeled =
        drawBatch(split.source, config.batchSource,
                  streamSeed(config, Stage::kUda, StreamTag::kSourceBatches), state.cursors.source);
    state.history.usage.source += labeled.size();
    if (config.stage1MergeAnchors && !split.targetLabeled.empty()) {
      auto anchors = anchorBatch(split, config, Stage::kUda, state.cursors.anchors);
      state.history.usage.anchors += anchors.size();
      labeled.insert(labeled.end(), anchors.begin(), anchors.end());
    }

    UdaBatch batch;
    batch.sourceLabels = labelsOf(labeled);
    batch.source = config.stage1SourceAugment
                       ? augmentBatch(labeled, config.augment, ViewKind::kStrong, augSeed).strong
                       : stackFeatures(labeled);
    if (useUnlabeled) {
      auto unlabeled = drawBatch(split.targetUnlabeled, config.batchUnlabeled,
                                 streamSeed(config, Stage::kUda, StreamTag::kUnlabeledBatches),
                                 state.cursors.unlabeled);
      state.history.usage.unlabeled += unlabeled.size();
      auto views = augmentBatch(unlabeled, config.augment, ViewKind::kBoth, augSeed);
      batch.weak = std::move(views.weak);
      batch.strong = std::move(views.strong);
    }

    const ObjectiveResult obj = udaObjective(state.student, batch, config.hyper);
    requireFiniteLoss(state, obj.total);
    state.student = applyStep(state, config, obj.grads);
    ++state.iteration;

    IterationRecord record;
    record.stage = Stage::kUda;
    record.iteration = state.iteration;
    record.sourceLoss = obj.source.scalar;
    record.consistencyLoss = obj.consistency.scalar;
    record.passRate = obj.passRate;
    maybeEvaluate(state, config, evaluator, record);
    state.history.iterations.push_back(record);
  }
}

TrainState beginStage2(const ModelParams& udaModel, const SsdaSplit& split,
                       const TrainConfig& config) {
  split.validate();
  if (split.targetLabeled.empty())
    throw InvalidInput("stage II requires labelled target anchors");
  if (udaModel.arch() != architectureFor(split, config))
    throw ShapeMismatch("stage-I model does not match the configured architecture");
  TrainState state;
  state.stage = Stage::kSsl;
  state.student = udaModel;
  state.teacher = udaModel;
  return state;
}

void continueStage2(TrainState& state, const SsdaSplit& split, const TrainConfig& config,
                    std::int64_t untilIteration, const Evaluator* evaluator) {
  if (state.stage != Stage::kSsl) throw InvalidInput("state is not in stage II");
  state.validate();
  if (split.targetLabeled.empty())
    throw InvalidInput("stage II requires labelled target anchors");
  const HyperParams& hyper = config.hyper;
  const bool useDistill = hyper.eta != 0.0;
  const bool useConsistency = config.stage2ConsistencyOn && hyper.lambdaU != 0.0;
  const bool useUnlabeled = (useDistill || useConsistency) && !split.targetUnlabeled.empty();

  while (state.iteration < untilIteration) {
    const std::uint64_t augSeed =
        deriveSeed(config.seed, {tag(StreamTag::kStage2Augment), static_cast<std::uint64_t>(state.iteration)});

    SslBatch batch;
    if (hyper.gamma != 0.0) {
      auto anchors = anchorBatch(split, config, Stage::kSsl, state.cursors.anchors);
      state.history.usage.anchors += anchors.size();
      batch.anchorLabels = labelsOf(anchors);
      batch.anchors = augmentBatch(anchors, config.augment, ViewKind::kStrong, augSeed).strong;
    }
    if (useUnlabeled) {
      auto unlabeled = drawBatch(split.targetUnlabeled, config.batchUnlabeled,
                                 streamSeed(config, Stage::kSsl, StreamTag::kUnlabeledBatches),
                                 state.cursors.unlabeled);
      state.history.usage.unlabeled += unlabeled.size();
      auto views = augmentBatch(unlabeled, config.augment, ViewKind::kBoth, augSeed);
      batch.weak = std::move(views.weak);
      batch.strong = std::move(views.strong);
      // Soft labels are computed here and passed on as constants.
      if (useDistill) batch.teacherProbs = forwardBatch(*state.teacher, batch.weak).probs;
    }

    const ObjectiveResult obj = sslObjective(state.student, batch, hyper, config.stage2ConsistencyOn);
    requireFiniteLoss(state, obj.total);
    state.student = applyStep(state, config, obj.grads);
    state.teacher = emaUpdate(*state.teacher, state.student, hyper.sigma);
    ++state.iteration;

    IterationRecord record;
    record.stage = Stage::kSsl;
    record.iteration = state.iteration;
    record.anchorLoss = obj.source.scalar;
    record.distillLoss = obj.distill.scalar;
    record.consistencyLoss = obj.consistency.scalar;
    record.passRate = obj.passRate;
    maybeEvaluate(state, config, evaluator, record);
    state.history.iterations.push_back(record);
  }
}

Stage1Result trainStage1(const SsdaSplit& split, const TrainConfig& config,
                         const Evaluator* evaluator) {
  TrainState state = beginStage1(split, config);
  continueStage1(state, split, config, config.iterationsStage1, evaluator);
  return {std::move(state.student), std::move(state.history)};
}

Stage2Result trainStage2(const ModelParams& udaModel, const SsdaSplit& split,
                         const TrainConfig& config, const Evaluator* evaluator) {
  TrainState state = beginStage2(udaModel, split, config);
  continueStage2(state, split, config, config.iterationsStage2, evaluator);
  return {std::move(state.student), std::move(*state.teacher), std::move(state.history)};
}

}  // namespace ssda
