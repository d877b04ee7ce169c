#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "ssda/config.hpp"
#include "ssda/errors.hpp"
#include "ssda/experiment.hpp"
#include "ssda/report.hpp"
#include "ssda/training.hpp"

namespace ssda::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::string> kDefaultAblation = {"source-only", "uda",       "mt",
                                                   "fixmatch",    "anchors",   "anchors-fixmatch",
                                                   "anchors-mt",  "clmt"};

struct Common {
  std::string configPath;
  std::vector<std::string> overrides;
  std::string outDir;
};

void addCommon(CLI::App& cmd, Common& c, const std::string& defaultOut) {
  cmd.add_option("--config", c.configPath, "JSON run configuration");
  cmd.add_option("--set", c.overrides, "Override a config key, KEY=VALUE (repeatable)")
      ->allow_extra_args(false);
  c.outDir = defaultOut;
  cmd.add_option("--out", c.outDir, "Output directory")->capture_default_str();
}

std::optional<fs::path> configPath(const Common& c) {
  if (c.configPath.empty()) return std::nullopt;
  return fs::path(c.configPath);
}

std::vector<std::string> splitList(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) items.push_back(item);
  return items;
}

void writeText(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

void writeJson(const fs::path& path, const json& j) { writeText(path, j.dump(2) + "\n"); }

void ensureDir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create directory " + dir.string() + ": " + ec.message());
}

std::vector<IterationRecord> allIterations(const ExperimentOutcome& o) {
  std::vector<IterationRecord> records = o.stage1.history.iterations;
  if (o.stage2)
    records.insert(records.end(), o.stage2->history.iterations.begin(),
                   o.stage2->history.iterations.end());
  return records;
}

std::string fixed1(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// ---------------------------------------------------------------- generate

int cmdGenerate(const Common& c, std::ostream& out) {
  const TrainConfig config = loadConfig(configPath(c), c.overrides);
  if (auto problems = config.benchmark.validate(); !problems.empty())
    throw ConfigError(std::move(problems));

  const SsdaSplit split = generateShiftedDomains(config.benchmark);
  std::vector<Sample> target = EvaluationAccess::heldOut(split);
  const std::vector<int> hidden = EvaluationAccess::hiddenLabels(split);
  std::vector<Sample> pool = split.targetUnlabeled;
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i].label = hidden[i];
  pool.insert(pool.end(), target.begin(), target.end());
  std::ranges::sort(pool, {}, &Sample::id);

  const fs::path dir = c.outDir;
  ensureDir(dir);
  writeDelimitedDataset(dir / "source.csv", split.source, true);
  writeDelimitedDataset(dir / "target.csv", pool, true);
  json manifest = {{"spec", toJson(config.benchmark)},
                   {"seed", config.benchmark.seed},
                   {"files", {{"source", "source.csv"}, {"target", "target.csv"}}},
                   {"rows", {{"source", split.source.size()}, {"target", pool.size()}}}};
  writeJson(dir / "manifest.json", manifest);
  out << "wrote " << split.source.size() << " source and " << pool.size() << " target rows to "
      << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainOptions {
  std::string preset;
  bool dryRun = false;
};

TrainConfig resolveConfig(const Common& c, const std::string& preset) {
  if (preset.empty()) return loadConfig(configPath(c), c.overrides);
  // Preset first, then explicit overrides on top of it.
  TrainConfig base = applyPreset(loadConfig(configPath(c), {}), preset);
  json tree = toJson(base);
  std::vector<std::string> problems;
  for (const auto& o : c.overrides) {
    try {
      applyOverride(tree, o);
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) problems.push_back(p);
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return trainConfigFromJson(tree);
}

int cmdTrain(const Common& c, const TrainOptions& opts, std::ostream& out) {
  if (!opts.preset.empty() && !isPreset(opts.preset))
    throw ConfigError({"unknown preset '" + opts.preset + "'"});
  const TrainConfig config = resolveConfig(c, opts.preset);
  if (auto problems = config.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  if (opts.dryRun) {
    out << toJson(config).dump(2) << "\n";
    return kOk;
  }

  const auto start = std::chrono::steady_clock::now();
  const ExperimentOutcome outcome =
      runExperiment(config, opts.preset.empty() ? "custom" : opts.preset);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  const fs::path dir = c.outDir;
  ensureDir(dir);
  writeJson(dir / "report.json", toJson(outcome.report));
  const auto records = allIterations(outcome);
  writeText(dir / "metrics.csv", metricsCsv(records));
  const TrainState& last = outcome.stage2 ? *outcome.stage2 : outcome.stage1;
  saveCheckpoint(last, dir / "final.ckpt", {hexHash(configHash(config)), config.seed});
  writeJson(dir / "timing.json", {{"wallClockSeconds", seconds}});

  const ExperimentReport& r = outcome.report;
  out << "stage I target accuracy: " << fixed1(r.stage1Accuracy) << "\n";
  if (r.stage2Ran)
    out << "stage II target accuracy: student " << fixed1(r.stage2StudentAccuracy) << ", teacher "
        << fixed1(r.stage2TeacherAccuracy) << "\n";
  out << "final (" << r.evalModel << "): " << fixed1(r.finalAccuracy) << "\n";
  out << "outputs in " << dir.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- ablate

struct AblateOptions {
  std::string presets;
  std::string seeds = "0,1,2,3,4";
  std::string shots = "both";
  int jobs = 1;
};

std::vector<int> parseShots(const std::string& text) {
  if (text == "both") return {1, 3};
  std::vector<int> shots;
  for (const auto& item : splitList(text)) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(item, &used);
      if (used != item.size() || k < 1) throw std::invalid_argument(item);
      shots.push_back(k);
    } catch (const std::exception&) {
      throw ConfigError({"--shots expects 1, 3, both or a list of positive integers, got '" + text +
                         "'"});
    }
  }
  if (shots.empty()) throw ConfigError({"--shots is empty"});
  return shots;
}

std::vector<std::uint64_t> parseSeeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  for (const auto& item : splitList(text)) {
    try {
      std::size_t used = 0;
      const auto s = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      seeds.push_back(s);
    } catch (const std::exception&) {
      throw ConfigError({"--seeds expects a comma-separated list of integers, got '" + text + "'"});
    }
  }
  if (seeds.empty()) throw ConfigError({"--seeds is empty"});
  return seeds;
}

struct RunSpec {
  std::string preset;
  int shot = 0;
  std::uint64_t seed = 0;
  TrainConfig config;
  fs::path dir;
};

ExperimentReport runOne(const RunSpec& spec) {
  try {
    ExperimentOutcome outcome = runExperiment(spec.config, spec.preset);
    ensureDir(spec.dir);
    writeJson(spec.dir / "report.json", toJson(outcome.report));
    writeText(spec.dir / "metrics.csv", metricsCsv(allIterations(outcome)));
    return std::move(outcome.report);
  } catch (const std::exception& e) {
    ExperimentReport failed;
    failed.preset = spec.preset;
    failed.kShot = spec.shot;
    failed.seed = spec.seed;
    failed.benchmark = benchmarkManifest(spec.config);
    failed.benchmarkId = benchmarkId(spec.config);
    failed.config = toJson(spec.config);
    failed.failed = true;
    failed.error = e.what();
    std::error_code ec;
    fs::create_directories(spec.dir, ec);
    if (!ec) writeJson(spec.dir / "report.json", toJson(failed));
    return failed;
  }
}

int cmdAblate(const Common& c, const AblateOptions& opts, std::ostream& out, std::ostream& err) {
  const std::vector<std::string> presets =
      opts.presets.empty() ? kDefaultAblation : splitList(opts.presets);
  std::vector<std::string> problems;
  for (const auto& p : presets)
    if (!isPreset(p)) problems.push_back("unknown preset '" + p + "'");
  if (presets.empty()) problems.emplace_back("--presets is empty");
  if (opts.jobs < 1) problems.emplace_back("--jobs must be at least 1");
  if (!problems.empty()) throw ConfigError(std::move(problems));
  const std::vector<std::uint64_t> seeds = parseSeeds(opts.seeds);
  const std::vector<int> shots = parseShots(opts.shots);

  const TrainConfig base = loadConfig(configPath(c), c.overrides);
  const fs::path dir = c.outDir;

  std::vector<RunSpec> specs;
  for (const auto& preset : presets)
    for (int shot : shots)
      for (std::uint64_t seed : seeds) {
        RunSpec s;
        s.preset = preset;
        s.shot = shot;
        s.seed = seed;
        s.config = applyPreset(base, preset);
        s.config.kShot = shot;
        s.config.seed = seed;
        if (!s.config.checkpointDir.empty()) {
          // Runs own their checkpoints.
          s.config.checkpointDir = (fs::path(s.config.checkpointDir) / preset /
                                    ("k" + std::to_string(shot)) / ("seed" + std::to_string(seed)))
                                       .string();
        }
        s.dir = dir / "runs" / preset / ("k" + std::to_string(shot)) / ("seed" + std::to_string(seed));
        if (auto p = s.config.validate(); !p.empty())
          for (auto& msg : p) problems.push_back(preset + ": " + msg);
        specs.push_back(std::move(s));
      }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  ensureDir(dir);

  std::vector<ExperimentReport> reports(specs.size());
  const auto announce = [&](std::size_t i) {
    const ExperimentReport& r = reports[i];
    out << "[" << (i + 1) << "/" << specs.size() << "] " << specs[i].preset << " k="
        << specs[i].shot << " seed=" << specs[i].seed << ": "
        << (r.failed ? "FAILED (" + r.error + ")" : fixed1(r.finalAccuracy)) << "\n";
    out.flush();
  };
  if (opts.jobs == 1) {
    for (std::size_t i = 0; i < specs.size(); ++i) {
      reports[i] = runOne(specs[i]);
      announce(i);
    }
  } else {
    std::size_t next = 0;
    while (next < specs.size()) {
      std::vector<std::future<ExperimentReport>> wave;
      const std::size_t end = std::min(specs.size(), next + static_cast<std::size_t>(opts.jobs));
      for (std::size_t i = next; i < end; ++i)
        wave.push_back(std::async(std::launch::async, runOne, std::cref(specs[i])));
      for (std::size_t i = next; i < end; ++i) {
        reports[i] = wave[i - next].get();
        announce(i);
      }
      next = end;
    }
  }

  const AblationTable table = compareRuns(reports);
  writeText(dir / "ablation.csv", table.toCsv());
  const std::string text = table.toText();
  writeText(dir / "ablation.txt", text);
  out << "\n" << text;
  std::size_t failed = 0;
  for (const auto& r : reports) failed += r.failed ? 1 : 0;
  if (failed) err << failed << " of " << reports.size() << " runs failed\n";
  return kOk;
}

// ---------------------------------------------------------------- eval

struct EvalOptions {
  std::string checkpoint;
  std::string model = "both";
};

json evaluationJson(const ModelParams& params, const SsdaSplit& split, double mu) {
  const Evaluator evaluator(split, mu);
  const Evaluation e = evaluator.evaluate(params);
  json perClass = json::array();
  for (double a : perClassAccuracy(params, EvaluationAccess::heldOut(split)))
    perClass.push_back(std::isfinite(a) ? json(a) : json(nullptr));
  return {{"targetAccuracy", e.targetAccuracy},
          {"perClassAccuracy", perClass},
          {"pseudoLabels", toJson(e.pseudoLabels)}};
}

int cmdEval(const Common& c, const EvalOptions& opts, bool outGiven, std::ostream& out,
            std::ostream& err) {
  if (opts.model != "student" && opts.model != "teacher" && opts.model != "both")
    throw ConfigError({"--model must be student, teacher or both"});
  const TrainConfig config = loadConfig(configPath(c), c.overrides);
  if (auto problems = config.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  const LoadedCheckpoint ckpt = loadCheckpoint(opts.checkpoint);
  if (ckpt.hasSidecar && ckpt.meta.configHash != hexHash(configHash(config)))
    err << "note: checkpoint was trained under config " << ckpt.meta.configHash
        << ", evaluating with " << hexHash(configHash(config)) << "\n";
  if (!ckpt.state.student.arch().inputDim ||
      ckpt.state.student.arch().inputDim != static_cast<std::size_t>(config.benchmark.inputDim) ||
      ckpt.state.student.arch().numClasses != static_cast<std::size_t>(config.benchmark.numClasses))
    throw ConfigError({"checkpoint architecture does not match the configured benchmark"});

  const SsdaSplit split = buildSplit(config);
  json result = {{"checkpoint", opts.checkpoint},
                 {"stage", toString(ckpt.state.stage)},
                 {"iteration", ckpt.state.iteration},
                 {"benchmarkId", benchmarkId(config)}};
  if (opts.model != "teacher") result["student"] = evaluationJson(ckpt.state.student, split, config.hyper.mu);
  if (opts.model != "student") {
    if (ckpt.state.teacher)
      result["teacher"] = evaluationJson(*ckpt.state.teacher, split, config.hyper.mu);
    else if (opts.model == "teacher")
      throw ConfigError({"checkpoint has no teacher (stage " + toString(ckpt.state.stage) + ")"});
  }

  for (const char* who : {"student", "teacher"}) {
    if (!result.contains(who)) continue;
    const json& e = result[who];
    const json& p = e["pseudoLabels"];
    out << who << ": accuracy " << fixed1(e["targetAccuracy"].get<double>()) << "  pseudo-labels mu="
        << p["mu"].get<double>() << " confident-correct " << p["confidentCorrect"]
        << " confident-wrong " << p["confidentWrong"] << " rescuable " << p["rescuable"]
        << " below-wrong " << p["belowWrong"] << "\n";
  }
  if (outGiven) {
    ensureDir(c.outDir);
    writeJson(fs::path(c.outDir) / "eval.json", result);
  }
  return kOk;
}

// ---------------------------------------------------------------- inspect

struct LayerNorms {
  double weights = 0.0;
  double bias = 0.0;
};

std::vector<LayerNorms> layerNorms(const ModelParams& params) {
  std::vector<LayerNorms> norms;
  for (const Layer& layer : params.layers()) {
    LayerNorms n;
    for (double w : layer.weights.values()) n.weights += w * w;
    for (double b : layer.bias) n.bias += b * b;
    n.weights = std::sqrt(n.weights);
    n.bias = std::sqrt(n.bias);
    norms.push_back(n);
  }
  return norms;
}

int cmdInspect(const std::string& path, bool asJson, std::ostream& out) {
  const LoadedCheckpoint ckpt = loadCheckpoint(path);
  const TrainState& s = ckpt.state;
  const Architecture& arch = s.student.arch();

  json layers = json::array();
  const auto describe = [&](const ModelParams& params, const char* role) {
    const auto norms = layerNorms(params);
    for (std::size_t k = 0; k < norms.size(); ++k)
      layers.push_back({{"model", role},
                        {"layer", k},
                        {"shape", {arch.layerOutputDim(k), arch.layerInputDim(k)}},
                        {"weightNorm", norms[k].weights},
                        {"biasNorm", norms[k].bias}});
  };
  describe(s.student, "student");
  if (s.teacher) describe(*s.teacher, "teacher");

  json dims = json::array({arch.inputDim});
  for (auto h : arch.hiddenDims) dims.push_back(h);
  dims.push_back(arch.numClasses);
  json summary = {{"path", path},
                  {"stage", toString(s.stage)},
                  {"iteration", s.iteration},
                  {"architecture", dims},
                  {"parameters", s.student.parameterCount()},
                  {"teacher", s.teacher.has_value()},
                  {"momentum", s.velocity.has_value()},
                  {"configHash", ckpt.hasSidecar ? json(ckpt.meta.configHash) : json(nullptr)},
                  {"seed", ckpt.hasSidecar ? json(ckpt.meta.seed) : json(nullptr)},
                  {"layers", layers}};
  if (asJson) {
    out << summary.dump(2) << "\n";
    return kOk;
  }
  out << "checkpoint:   " << path << "\n";
  out << "stage:        " << toString(s.stage) << "\n";
  out << "iteration:    " << s.iteration << "\n";
  out << "architecture: ";
  for (std::size_t i = 0; i < dims.size(); ++i) out << (i ? " -> " : "") << dims[i].get<std::size_t>();
  out << "\n";
  out << "parameters:   " << s.student.parameterCount() << (s.teacher ? " (x2, teacher present)" : "")
      << "\n";
  out << "config hash:  " << (ckpt.hasSidecar ? ckpt.meta.configHash : "unknown (no sidecar)") << "\n";
  if (ckpt.hasSidecar) out << "seed:         " << ckpt.meta.seed << "\n";
  char buf[160];
  for (const json& l : layers) {
    std::snprintf(buf, sizeof buf, "%-8s layer %zu  %zux%zu  |W|=%.6f  |b|=%.6f\n",
                  l["model"].get<std::string>().c_str(), l["layer"].get<std::size_t>(),
                  l["shape"][0].get<std::size_t>(), l["shape"][1].get<std::size_t>(),
                  l["weightNorm"].get<double>(), l["biasNorm"].get<double>());
    out << buf;
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage semi-supervised domain adaptation on synthetic shift benchmarks", "ssda"};
  app.require_subcommand(1);

  Common generateArgs, trainArgs, ablateArgs, evalArgs;
  TrainOptions trainOpts;
  AblateOptions ablateOpts;
  EvalOptions evalOpts;
  std::string inspectPath;
  bool inspectJson = false;

  auto* generate = app.add_subcommand("generate", "Write a synthetic benchmark as delimited files");
  addCommon(*generate, generateArgs, "data");

  auto* train = app.add_subcommand("train", "Run stage I and stage II on one configuration");
  addCommon(*train, trainArgs, "run");
  train->add_option("--preset", trainOpts.preset, "Apply a named ablation preset first");
  train->add_flag("--dry-run", trainOpts.dryRun, "Validate and print the resolved config");

  auto* ablate = app.add_subcommand("ablate", "Run presets x seeds x shots and tabulate");
  addCommon(*ablate, ablateArgs, "ablation");
  ablate->add_option("--presets", ablateOpts.presets, "Comma-separated preset names");
  ablate->add_option("--seeds", ablateOpts.seeds, "Comma-separated seeds")->capture_default_str();
  ablate->add_option("--shots", ablateOpts.shots, "1, 3, both, or a list")->capture_default_str();
  ablate->add_option("--jobs", ablateOpts.jobs, "Concurrent runs")->capture_default_str();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the held-out target set");
  addCommon(*eval, evalArgs, "");
  eval->add_option("checkpoint", evalOpts.checkpoint, "Checkpoint file")->required();
  eval->add_option("--model", evalOpts.model, "student, teacher or both")->capture_default_str();

  auto* inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
  inspect->add_option("checkpoint", inspectPath, "Checkpoint file")->required();
  inspect->add_flag("--json", inspectJson, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (*generate) return cmdGenerate(generateArgs, out);
    if (*train) return cmdTrain(trainArgs, trainOpts, out);
    if (*ablate) return cmdAblate(ablateArgs, ablateOpts, out, err);
    if (*eval) return cmdEval(evalArgs, evalOpts, !evalArgs.outDir.empty(), out, err);
    if (*inspect) return cmdInspect(inspectPath, inspectJson, out);
  } catch (const ConfigError& e) {
    err << "configuration error:\n";
    for (const auto& p : e.problems()) err << "  - " << p << "\n";
    return kConfigError;
  } catch (const DataFormatError& e) {
    err << "data error: " << e.what() << "\n";
    return kConfigError;
  } catch (const TrainingFault& e) {
    err << "training fault: " << e.what() << "\n";
    return kTrainingFault;
  } catch (const CorruptArtifact& e) {
    err << "corrupt artifact: " << e.what() << "\n";
    return kCorruptArtifact;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

}  // namespace ssda::cli
