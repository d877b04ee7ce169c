#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "ssda/config.hpp"
#include "ssda/errors.hpp"

using namespace ssda;
namespace fs = std::filesystem;

namespace {

fs::path writeConfig(const std::string& name, const std::string& text) {
  const fs::path dir = fs::temp_directory_path() / "ssda-unit";
  fs::create_directories(dir);
  std::ofstream(dir / name) << text;
  return dir / name;
}

std::vector<std::string> problemsOf(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.problems();
  }
  return {};
}

}  // namespace

TEST_CASE("defaults validate and round-trip") {
  const TrainConfig c;
  CHECK(c.validate().empty());
  CHECK(c.hyper.mu == 0.95);
  CHECK(c.hyper.alpha == 1.0);
  CHECK(c.hyper.gamma == 0.2);
  CHECK(c.hyper.eta == 0.8);
  CHECK(c.hyper.sigma == 0.99);
  CHECK(c.iterationsStage1 == 2000);
  CHECK(c.iterationsStage2 == 1000);
  CHECK(trainConfigFromJson(toJson(c)) == c);
  CHECK(loadConfig(std::nullopt, {}) == c);
}

TEST_CASE("overrides address existing dotted keys") {
  const TrainConfig c = loadConfig(std::nullopt, {"hyper.mu=0.9", "kShot=1", "evalModel=teacher",
                                                  "model.hiddenDims=[8,4]", "benchmark.shiftKind=mixed"});
  CHECK(c.hyper.mu == 0.9);
  CHECK(c.kShot == 1);
  CHECK(c.evalModel == EvalModel::kTeacher);
  CHECK(c.hiddenDims == std::vector<std::size_t>{8, 4});
  CHECK((c.benchmark.shiftKind == ShiftKind::kMixed));
  const auto problems = problemsOf([] { loadConfig(std::nullopt, {"hyper.nu=1", "nokey", "kShot=two"}); });
  CHECK(problems.size() == 2);  // missing keys are reported before parsing values
}

TEST_CASE("all validation problems are reported at once") {
  const auto problems = problemsOf([] {
    loadConfig(std::nullopt, {"lr=-1", "batchSource=0", "hyper.mu=2", "hyper.sigma=-0.5", "kShot=0"});
  });
  CHECK(problems.size() >= 5);
}

TEST_CASE("config files merge onto defaults and reject unknown keys") {
  const fs::path ok = writeConfig("ok.json", R"({"seed": 7, "hyper": {"gamma": 0.5}, "stage2": {"enabled": false}})");
  const TrainConfig c = loadConfig(ok, {"seed=9"});
  CHECK(c.seed == 9);
  CHECK(c.hyper.gamma == 0.5);
  CHECK(c.hyper.eta == 0.8);
  CHECK_FALSE(c.stage2Enabled);

  const fs::path bad = writeConfig("bad.json", R"({"sed": 7, "hyper": {"gama": 0.5}})");
  CHECK(problemsOf([&] { loadConfig(bad, {}); }).size() == 2);
  const fs::path typed = writeConfig("typed.json", R"({"seed": "seven", "lr": true})");
  CHECK(problemsOf([&] { loadConfig(typed, {}); }).size() == 2);
  const fs::path broken = writeConfig("broken.json", "{ not json");
  CHECK_THROWS_AS(loadConfig(broken, {}), ConfigError);
  CHECK_THROWS_AS(loadConfig(fs::path("/nonexistent/config.json"), {}), ConfigError);
}

TEST_CASE("config hash tracks content") {
  TrainConfig a;
  TrainConfig b;
  CHECK(configHash(a) == configHash(b));
  b.hyper.mu = 0.9;
  CHECK(configHash(a) != configHash(b));
  CHECK(hexHash(0x1234).size() == 16);
}

TEST_CASE("presets switch terms off and keep the configured weights") {
  TrainConfig base;
  base.hyper.gamma = 0.3;

  const TrainConfig src = applyPreset(base, "source-only");
  CHECK(src.hyper.alpha == 0.0);
  CHECK_FALSE(src.stage2Enabled);
  TrainConfig manual = base;
  manual.hyper.alpha = 0.0;
  manual.stage2Enabled = false;
  CHECK(src == manual);

  const TrainConfig table3 = applyPreset(base, "source");
  CHECK_FALSE(table3.stage1SourceAugment);
  CHECK_FALSE(table3.stage1MergeAnchors);
  CHECK(applyPreset(base, "source-anchors").stage1MergeAnchors);
  CHECK(applyPreset(base, "source-anchors-aug").stage1SourceAugment);
  CHECK(applyPreset(base, "source-anchors-aug-fixmatch").hyper.alpha == 1.0);

  const TrainConfig uda = applyPreset(base, "uda");
  CHECK_FALSE(uda.stage2Enabled);
  CHECK(uda.hyper.alpha == 1.0);

  const TrainConfig anchors = applyPreset(base, "anchors");
  CHECK(anchors.stage2Enabled);
  CHECK(anchors.hyper.gamma == 0.3);
  CHECK(anchors.hyper.eta == 0.0);
  CHECK(anchors.hyper.lambdaU == 0.0);
  CHECK_FALSE(anchors.stage2ConsistencyOn);

  const TrainConfig mt = applyPreset(base, "mt");
  CHECK(mt.hyper.gamma == 0.0);
  CHECK(mt.hyper.eta == 0.8);
  const TrainConfig fm = applyPreset(base, "fixmatch");
  CHECK(fm.hyper.eta == 0.0);
  CHECK(fm.stage2ConsistencyOn);
  const TrainConfig amt = applyPreset(base, "anchors-mt");
  CHECK(amt.hyper.gamma == 0.3);
  CHECK(amt.hyper.eta == 0.8);
  CHECK_FALSE(amt.stage2ConsistencyOn);
  const TrainConfig clmt = applyPreset(base, "clmt");
  CHECK(clmt.hyper == base.hyper);
  CHECK(clmt.stage2ConsistencyOn);

  for (const auto& name : presetNames()) {
    CHECK(isPreset(name));
    CHECK(applyPreset(base, name).validate().empty());
  }
  CHECK_FALSE(isPreset("dann"));
  CHECK_THROWS_AS(applyPreset(base, "dann"), ConfigError);
}

TEST_CASE("preset order starts with the stage I rows and ends with clmt") {
  const auto& names = presetNames();
  CHECK(names.front() == "source");
  CHECK(names.back() == "clmt");
  const std::vector<std::string> table4{"uda", "mt", "fixmatch", "anchors", "anchors-fixmatch", "anchors-mt", "clmt"};
  std::vector<std::string> tail(names.end() - 7, names.end());
  CHECK(tail == table4);
}
