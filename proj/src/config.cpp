#include "ssda/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "ssda/binary_io.hpp"
#include "ssda/errors.hpp"

namespace ssda {

using nlohmann::json;

std::vector<std::string> TrainConfig::validate() const {
  std::vector<std::string> problems = hyper.validate();
  if (!(lr > 0.0) || !std::isfinite(lr)) problems.push_back("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) problems.push_back("momentum must lie in [0, 1)");
  if (iterationsStage1 < 0) problems.push_back("iterationsStage1 must be >= 0");
  if (iterationsStage2 < 0) problems.push_back("iterationsStage2 must be >= 0");
  if (batchSource < 1) problems.push_back("batchSource must be >= 1");
  if (batchUnlabeled < 1) problems.push_back("batchUnlabeled must be >= 1");
  if (batchAnchor < 1) problems.push_back("batchAnchor must be >= 1");
  if (kShot < 1) problems.push_back("kShot must be >= 1");
  if (evalEvery < 0) problems.push_back("evalEvery must be >= 0");
  for (std::size_t h : hiddenDims)
    if (h == 0) problems.push_back("model.hiddenDims entries must be positive");
  for (auto& p : augment.validate()) problems.push_back(std::move(p));
  if (data.enabled()) {
    if (data.targetPath.empty()) problems.push_back("data.targetPath is required with data.sourcePath");
  } else {
    for (auto& p : benchmark.validate()) problems.push_back(std::move(p));
    if (benchmark.samplesPerClassTarget > 0 &&
        std::llround(benchmark.samplesPerClassTarget * (1.0 - benchmark.heldOutFraction)) <= kShot)
      problems.push_back("benchmark.samplesPerClassTarget leaves too few unlabeled samples for kShot");
  }
  return problems;
}

json toJson(const TrainConfig& c) {
  return {
      {"seed", c.seed},
      {"kShot", c.kShot},
      {"lr", c.lr},
      {"momentum", c.momentum},
      {"iterationsStage1", c.iterationsStage1},
      {"iterationsStage2", c.iterationsStage2},
      {"batchSource", c.batchSource},
      {"batchUnlabeled", c.batchUnlabeled},
      {"batchAnchor", c.batchAnchor},
      {"evalEvery", c.evalEvery},
      {"checkpointDir", c.checkpointDir},
      {"stage2ConsistencyOn", c.stage2ConsistencyOn},
      {"evalModel", c.evalModel == EvalModel::kStudent ? "student" : "teacher"},
      {"stage1", {{"sourceAugment", c.stage1SourceAugment}, {"mergeAnchors", c.stage1MergeAnchors}}},
      {"stage2", {{"enabled", c.stage2Enabled}}},
      {"hyper",
       {{"alpha", c.hyper.alpha},
        {"gamma", c.hyper.gamma},
        {"eta", c.hyper.eta},
        {"mu", c.hyper.mu},
        {"sigma", c.hyper.sigma},
        {"lambdaU", c.hyper.lambdaU}}},
      {"model", {{"hiddenDims", c.hiddenDims}}},
      {"augment", toJson(c.augment)},
      {"benchmark", toJson(c.benchmark)},
      {"data", {{"sourcePath", c.data.sourcePath}, {"targetPath", c.data.targetPath}}},
  };
}

namespace {

// Reports keys in `actual` that the default tree does not have.
void unknownKeys(const json& actual, const json& reference, const std::string& prefix,
                 std::vector<std::string>& problems) {
  if (!actual.is_object() || !reference.is_object()) return;
  for (auto it = actual.begin(); it != actual.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) {
      problems.push_back("unknown config key '" + key + "'");
      continue;
    }
    unknownKeys(it.value(), reference.at(it.key()), key, problems);
  }
}

// Deep-merges `overlay` into `base` (objects merge, everything else replaces).
void merge(json& base, const json& overlay) {
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object())
      merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& path,
          std::vector<std::string>& problems) {
  if (!j.contains(key)) return;
  try {
    const json& v = j.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw std::invalid_argument("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw std::invalid_argument("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw std::invalid_argument("expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw std::invalid_argument("expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw std::invalid_argument("expected a string");
    }
    out = v.get<T>();
  } catch (const std::exception& e) {
    problems.push_back("config key '" + path + key + "': " + e.what());
  }
}

}  // namespace

TrainConfig trainConfigFromJson(const json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) throw ConfigError({"config root must be an object"});
  const TrainConfig defaults;
  unknownKeys(j, toJson(defaults), "", problems);

  TrainConfig c;
  read(j, "seed", c.seed, "", problems);
  read(j, "kShot", c.kShot, "", problems);
  read(j, "lr", c.lr, "", problems);
  read(j, "momentum", c.momentum, "", problems);
  read(j, "iterationsStage1", c.iterationsStage1, "", problems);
  read(j, "iterationsStage2", c.iterationsStage2, "", problems);
  read(j, "batchSource", c.batchSource, "", problems);
  read(j, "batchUnlabeled", c.batchUnlabeled, "", problems);
  read(j, "batchAnchor", c.batchAnchor, "", problems);
  read(j, "evalEvery", c.evalEvery, "", problems);
  read(j, "checkpointDir", c.checkpointDir, "", problems);
  read(j, "stage2ConsistencyOn", c.stage2ConsistencyOn, "", problems);
  std::string evalModel = "student";
  read(j, "evalModel", evalModel, "", problems);
  if (evalModel == "student")
    c.evalModel = EvalModel::kStudent;
  else if (evalModel == "teacher")
    c.evalModel = EvalModel::kTeacher;
  else
    problems.push_back("evalModel must be 'student' or 'teacher'");

  const auto section = [&](const char* name) -> const json* {
    if (!j.contains(name)) return nullptr;
    if (!j.at(name).is_object()) {
      problems.push_back(std::string("config key '") + name + "' must be an object");
      return nullptr;
    }
    return &j.at(name);
  };
  if (const json* s = section("stage1")) {
    read(*s, "sourceAugment", c.stage1SourceAugment, "stage1.", problems);
    read(*s, "mergeAnchors", c.stage1MergeAnchors, "stage1.", problems);
  }
  if (const json* s = section("stage2")) read(*s, "enabled", c.stage2Enabled, "stage2.", problems);
  if (const json* s = section("hyper")) {
    read(*s, "alpha", c.hyper.alpha, "hyper.", problems);
    read(*s, "gamma", c.hyper.gamma, "hyper.", problems);
    read(*s, "eta", c.hyper.eta, "hyper.", problems);
    read(*s, "mu", c.hyper.mu, "hyper.", problems);
    read(*s, "sigma", c.hyper.sigma, "hyper.", problems);
    read(*s, "lambdaU", c.hyper.lambdaU, "hyper.", problems);
  }
  if (const json* s = section("model")) read(*s, "hiddenDims", c.hiddenDims, "model.", problems);
  if (const json* s = section("augment")) {
    try {
      json merged = toJson(defaults.augment);
      merge(merged, *s);
      c.augment = augPolicyFromJson(merged);
    } catch (const std::exception& e) {
      problems.push_back(std::string("config section 'augment': ") + e.what());
    }
  }
  if (const json* s = section("benchmark")) {
    try {
      json merged = toJson(defaults.benchmark);
      merge(merged, *s);
      c.benchmark = shiftSpecFromJson(merged);
    } catch (const std::exception& e) {
      problems.push_back(std::string("config section 'benchmark': ") + e.what());
    }
  }
  if (const json* s = section("data")) {
    read(*s, "sourcePath", c.data.sourcePath, "data.", problems);
    read(*s, "targetPath", c.data.targetPath, "data.", problems);
  }
  if (problems.empty())
    for (auto& p : c.validate()) problems.push_back(std::move(p));
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

void applyOverride(json& tree, std::string_view assignment) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0)
    throw ConfigError({"override '" + std::string(assignment) + "' is not KEY=VALUE"});
  const std::string key(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  json* node = &tree;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = key.find('.', start);
    const std::string part = key.substr(start, dot - start);
    if (!node->is_object() || !node->contains(part))
      throw ConfigError({"override key '" + key + "' does not exist"});
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *node = std::move(value);
}

TrainConfig loadConfig(const std::optional<std::filesystem::path>& path,
                       const std::vector<std::string>& overrides) {
  json tree = toJson(TrainConfig{});
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError({"cannot read config file " + path->string()});
    json file = json::parse(in, nullptr, false);
    if (file.is_discarded()) throw ConfigError({"config file " + path->string() + " is not valid JSON"});
    if (!file.is_object()) throw ConfigError({"config root must be an object"});
    std::vector<std::string> problems;
    unknownKeys(file, tree, "", problems);
    if (!problems.empty()) throw ConfigError(std::move(problems));
    merge(tree, file);
  }
  std::vector<std::string> problems;
  for (const auto& o : overrides) {
    try {
      applyOverride(tree, o);
    } catch (const ConfigError& e) {
      for (const auto& p : e.problems()) problems.push_back(p);
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return trainConfigFromJson(tree);
}

std::uint64_t configHash(const TrainConfig& config) {
  const std::string canonical = toJson(config).dump();
  return io::fnv1a(canonical.data(), canonical.size());
}

std::string hexHash(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

const std::vector<std::string>& presetNames() {
  static const std::vector<std::string> names = {
      "source", "source-anchors", "source-anchors-aug", "source-anchors-aug-fixmatch",
      "source-only", "uda",         "mt",             "fixmatch",           "anchors",
      "anchors-fixmatch", "anchors-mt", "clmt"};
  return names;
}

bool isPreset(std::string_view name) {
  for (const auto& n : presetNames())
    if (n == name) return true;
  return false;
}

TrainConfig applyPreset(TrainConfig c, std::string_view preset) {
  // Presets switch terms off; the weights of the terms left on come from the config.
  const HyperParams weights = c.hyper;
  const auto stage1Only = [&](bool augment, bool merge, bool consistency) {
    c.stage1SourceAugment = augment;
    c.stage1MergeAnchors = merge;
    c.hyper.alpha = consistency ? weights.alpha : 0.0;
    c.stage2Enabled = false;
  };
  const auto stage2 = [&](bool anchors, bool distill, bool consistency) {
    stage1Only(true, false, true);
    c.stage2Enabled = true;
    c.hyper.gamma = anchors ? weights.gamma : 0.0;
    c.hyper.eta = distill ? weights.eta : 0.0;
    c.stage2ConsistencyOn = consistency;
    c.hyper.lambdaU = consistency ? weights.lambdaU : 0.0;
  };
  if (preset == "source") stage1Only(false, false, false);
  else if (preset == "source-only") stage1Only(c.stage1SourceAugment, c.stage1MergeAnchors, false);
  else if (preset == "source-anchors") stage1Only(false, true, false);
  else if (preset == "source-anchors-aug") stage1Only(true, true, false);
  else if (preset == "source-anchors-aug-fixmatch") stage1Only(true, true, true);
  else if (preset == "uda") stage1Only(true, false, true);
  else if (preset == "mt") stage2(false, true, false);
  else if (preset == "fixmatch") stage2(false, false, true);
  else if (preset == "anchors") stage2(true, false, false);
  else if (preset == "anchors-fixmatch") stage2(true, false, true);
  else if (preset == "anchors-mt") stage2(true, true, false);
  else if (preset == "clmt") stage2(true, true, true);
  else throw ConfigError({"unknown preset '" + std::string(preset) + "'"});
  return c;
}

}  // namespace ssda
