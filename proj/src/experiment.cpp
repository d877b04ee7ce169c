#include "ssda/experiment.hpp"

#include <filesystem>

#include "ssda/binary_io.hpp"
#include "ssda/errors.hpp"
#include "ssda/rng.hpp"

namespace ssda {

using nlohmann::json;

json benchmarkManifest(const TrainConfig& config) {
  if (config.data.enabled())
    return {{"kind", "files"},
            {"sourcePath", config.data.sourcePath},
            {"targetPath", config.data.targetPath},
            {"numClasses", config.benchmark.numClasses},
            {"inputDim", config.benchmark.inputDim},
            {"heldOutFraction", config.benchmark.heldOutFraction},
            {"seed", config.benchmark.seed}};
  return {{"kind", "synthetic"}, {"spec", toJson(config.benchmark)}};
}

std::string benchmarkId(const TrainConfig& config) {
  const std::string text = benchmarkManifest(config).dump();
  return hexHash(io::fnv1a(text.data(), text.size()));
}

SsdaSplit buildSplit(const TrainConfig& config) {
  SsdaSplit split;
  if (config.data.enabled()) {
    const DelimitedSchema schema{static_cast<std::size_t>(config.benchmark.inputDim), true,
                                 config.benchmark.numClasses};
    split = splitFromLabeledPools(loadDelimitedDataset(config.data.sourcePath, schema),
                                  loadDelimitedDataset(config.data.targetPath, schema),
                                  config.benchmark.numClasses, config.benchmark.heldOutFraction,
                                  config.benchmark.seed);
  } else {
    split = generateShiftedDomains(config.benchmark);
  }
  return sampleAnchors(std::move(split), config.kShot, config.seed);
}

ExperimentOutcome runExperiment(const TrainConfig& config, const std::string& preset) {
  if (auto problems = config.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  const SsdaSplit split = buildSplit(config);
  const Evaluator evaluator(split, config.hyper.mu);

  ExperimentReport report;
  report.preset = preset;
  report.kShot = config.kShot;
  report.seed = config.seed;
  report.benchmark = benchmarkManifest(config);
  report.benchmarkId = benchmarkId(config);
  report.config = toJson(config);
  report.evalModel = config.evalModel == EvalModel::kStudent ? "student" : "teacher";

  ExperimentOutcome outcome;
  outcome.stage1 = beginStage1(split, config);
  continueStage1(outcome.stage1, split, config, config.iterationsStage1, &evaluator);
  const CheckpointMeta meta{hexHash(configHash(config)), config.seed};
  const auto checkpoint = [&](const TrainState& state, const char* name) {
    if (config.checkpointDir.empty()) return;
    std::filesystem::create_directories(config.checkpointDir);
    saveCheckpoint(state, std::filesystem::path(config.checkpointDir) / name, meta);
  };
  checkpoint(outcome.stage1, "stage1.ckpt");
  const Evaluation afterStage1 = evaluator.evaluate(outcome.stage1.student);
  report.stage1Accuracy = afterStage1.targetAccuracy;
  report.stage1PseudoLabels = afterStage1.pseudoLabels;

  const ModelParams* finalModel = &outcome.stage1.student;
  std::vector<IterationRecord> records = outcome.stage1.history.iterations;
  report.evaluations = outcome.stage1.history.evaluations;

  if (config.stage2Enabled) {
    outcome.stage2 = beginStage2(outcome.stage1.student, split, config);
    TrainState& s2 = *outcome.stage2;
    continueStage2(s2, split, config, config.iterationsStage2, &evaluator);
    checkpoint(s2, "stage2.ckpt");
    const Evaluation student = evaluator.evaluate(s2.student);
    const Evaluation teacher = evaluator.evaluate(*s2.teacher);
    report.stage2Ran = true;
    report.stage2StudentAccuracy = student.targetAccuracy;
    report.stage2TeacherAccuracy = teacher.targetAccuracy;
    report.stage2PseudoLabels = student.pseudoLabels;
    finalModel = config.evalModel == EvalModel::kStudent ? &s2.student : &*s2.teacher;
    records.insert(records.end(), s2.history.iterations.begin(), s2.history.iterations.end());
    report.evaluations.insert(report.evaluations.end(), s2.history.evaluations.begin(),
                              s2.history.evaluations.end());
  }

  report.finalAccuracy = accuracy(*finalModel, EvaluationAccess::heldOut(split));
  report.perClassAccuracy = perClassAccuracy(*finalModel, EvaluationAccess::heldOut(split));
  report.lossCurves = lossCurves(records, config.evalEvery > 0 ? config.evalEvery : 100);
  outcome.report = std::move(report);
  return outcome;
}

}  // namespace ssda
