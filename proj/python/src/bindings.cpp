#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ssda/errors.hpp"
#include "ssda/experiment.hpp"
#include "ssda/losses.hpp"
#include "ssda/metrics.hpp"
#include "ssda/model.hpp"
#include "ssda/training.hpp"

namespace py = pybind11;
using namespace ssda;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix toMatrix(const Array& a) {
  if (a.ndim() != 2) throw InvalidInput("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + a.size(), m.values().begin());
  return m;
}

Array toArray(const Matrix& m) {
  Array a({m.rows(), m.cols()});
  std::copy(m.values().begin(), m.values().end(), a.mutable_data());
  return a;
}

Array toArray(std::span<const double> v) {
  Array a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

std::vector<int> toLabels(const py::array_t<int, py::array::c_style | py::array::forcecast>& a) {
  return {a.data(), a.data() + a.size()};
}

// Features and labels of a sample list as (X, y); unlabeled rows get -1.
py::tuple samplesToArrays(std::span<const Sample> samples) {
  Matrix x = stackFeatures(samples);
  py::array_t<int> y(static_cast<py::ssize_t>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) y.mutable_at(i) = samples[i].label.value_or(-1);
  return py::make_tuple(toArray(x), y);
}

template <typename Tag>
Array flatParams(const LayerStack<Tag>& p) {
  Array a(static_cast<py::ssize_t>(p.parameterCount()));
  for (std::size_t i = 0; i < p.parameterCount(); ++i) a.mutable_at(i) = p.flat(i);
  return a;
}

py::dict lossDict(const LossValue& v) {
  py::dict d;
  d["value"] = v.scalar;
  d["grad_logits"] = toArray(v.gradAtLogits);
  if (v.mask) d["mask"] = *v.mask;
  return d;
}

TrainConfig configFrom(const std::string& configJson, const std::vector<std::string>& overrides) {
  nlohmann::json tree = toJson(TrainConfig{});
  if (!configJson.empty()) tree.merge_patch(nlohmann::json::parse(configJson));
  TrainConfig c = trainConfigFromJson(tree);
  nlohmann::json resolved = toJson(c);
  for (const auto& o : overrides) applyOverride(resolved, o);
  c = trainConfigFromJson(resolved);
  if (auto problems = c.validate(); !problems.empty()) throw ConfigError(std::move(problems));
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Two-stage semi-supervised domain adaptation core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<InvalidInput>(m, "InvalidInput", base);
  py::register_exception<ShapeMismatch>(m, "ShapeMismatch", base);
  py::register_exception<TrainingFault>(m, "TrainingFault", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<DataFormatError>(m, "DataFormatError", base);
  py::register_exception<CorruptArtifact>(m, "CorruptArtifact", base);

  py::class_<ModelParams>(m, "Model")
      .def(py::init([](std::size_t inputDim, std::vector<std::size_t> hidden, std::size_t classes,
                       std::uint64_t seed) {
             return initializeParams(Architecture{inputDim, std::move(hidden), classes}, seed);
           }),
           py::arg("input_dim"), py::arg("hidden"), py::arg("num_classes"), py::arg("seed") = 0)
      .def_property_readonly("input_dim", [](const ModelParams& p) { return p.arch().inputDim; })
      .def_property_readonly("hidden", [](const ModelParams& p) { return p.arch().hiddenDims; })
      .def_property_readonly("num_classes", [](const ModelParams& p) { return p.arch().numClasses; })
      .def_property_readonly("parameter_count", &ModelParams::parameterCount)
      .def("parameters", &flatParams<ParamsTag>, "All parameters, per layer weights row-major then bias")
      .def("set_parameters",
           [](ModelParams& p, const Array& flat) {
             if (static_cast<std::size_t>(flat.size()) != p.parameterCount())
               throw ShapeMismatch("parameter vector has the wrong length");
             for (std::size_t i = 0; i < p.parameterCount(); ++i) p.flat(i) = flat.at(i);
           })
      .def("logits", [](const ModelParams& p, const Array& x) { return toArray(forwardBatch(p, toMatrix(x)).logits); })
      .def("predict_proba", [](const ModelParams& p, const Array& x) { return toArray(forwardBatch(p, toMatrix(x)).probs); })
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("ema_update", &emaUpdate, py::arg("teacher"), py::arg("student"), py::arg("sigma"),
        "sigma * teacher + (1 - sigma) * student, parameter-wise");
  m.def("accuracy",
        [](const ModelParams& p, const Array& x,
           const py::array_t<int, py::array::c_style | py::array::forcecast>& y) {
          const Matrix features = toMatrix(x);
          const std::vector<int> labels = toLabels(y);
          if (labels.size() != features.rows()) throw ShapeMismatch("labels do not match the rows");
          std::vector<Sample> samples(labels.size());
          for (std::size_t i = 0; i < labels.size(); ++i) {
            const auto row = features.row(i);
            samples[i] = {{row.begin(), row.end()}, labels[i], i};
          }
          return accuracy(p, samples);
        });

  m.def("cross_entropy",
        [](const Array& logits, const py::array_t<int, py::array::c_style | py::array::forcecast>& labels) {
          return lossDict(crossEntropy(toMatrix(logits), toLabels(labels)));
        });
  m.def("consistency",
        [](const Array& weakProbs, const Array& strongLogits, double mu) {
          return lossDict(consistencyFromPredictions(toMatrix(weakProbs), toMatrix(strongLogits), mu));
        },
        py::arg("weak_probs"), py::arg("strong_logits"), py::arg("mu") = 0.95);
  m.def("consistency_unlabeled",
        [](const ModelParams& p, const Array& weak, const Array& strong, double mu) {
          return lossDict(consistencyUnlabeled(p, toMatrix(weak), toMatrix(strong), mu));
        },
        py::arg("model"), py::arg("weak"), py::arg("strong"), py::arg("mu") = 0.95);
  m.def("distillation", [](const Array& teacherProbs, const Array& studentLogits) {
    return lossDict(distillation(toMatrix(teacherProbs), toMatrix(studentLogits)));
  });
  m.def("loss_gradients",
        [](const ModelParams& p, const Array& x, const Array& gradLogits) {
          return flatParams(backward(p, forwardBatch(p, toMatrix(x)), toMatrix(gradLogits)));
        },
        "Parameter gradients for a given dLoss/dLogits, flattened like Model.parameters()");

  m.def("default_config", [] { return toJson(TrainConfig{}).dump(); });
  m.def("preset_config",
        [](const std::string& preset, const std::string& configJson) {
          return toJson(applyPreset(configFrom(configJson, {}), preset)).dump();
        },
        py::arg("preset"), py::arg("config_json") = "");
  m.def("preset_names", &presetNames);

  m.def("generate",
        [](const std::string& configJson, const std::vector<std::string>& overrides) {
          const TrainConfig c = configFrom(configJson, overrides);
          const SsdaSplit split = buildSplit(c);
          py::dict d;
          d["source"] = samplesToArrays(split.source);
          d["target_labeled"] = samplesToArrays(split.targetLabeled);
          d["target_unlabeled"] = samplesToArrays(split.targetUnlabeled);
          d["held_out"] = samplesToArrays(EvaluationAccess::heldOut(split));
          d["benchmark_id"] = benchmarkId(c);
          return d;
        },
        py::arg("config_json") = "", py::arg("overrides") = std::vector<std::string>{});

  m.def("run_experiment",
        [](const std::string& configJson, const std::string& preset,
           const std::vector<std::string>& overrides) {
          TrainConfig c = configFrom(configJson, {});
          if (preset != "custom") c = applyPreset(c, preset);
          if (!overrides.empty()) {
            nlohmann::json tree = toJson(c);
            for (const auto& o : overrides) applyOverride(tree, o);
            c = trainConfigFromJson(tree);
          }
          if (auto problems = c.validate(); !problems.empty()) throw ConfigError(std::move(problems));
          ExperimentOutcome outcome;
          {
            py::gil_scoped_release release;
            outcome = runExperiment(c, preset);
          }
          py::dict d;
          d["report"] = toJson(outcome.report).dump();
          d["stage1"] = outcome.stage1.student;
          if (outcome.stage2) {
            d["student"] = outcome.stage2->student;
            d["teacher"] = *outcome.stage2->teacher;
          }
          return d;
        },
        py::arg("config_json") = "", py::arg("preset") = "custom",
        py::arg("overrides") = std::vector<std::string>{});

  m.def("load_checkpoint", [](const std::filesystem::path& path) {
    const LoadedCheckpoint ck = loadCheckpoint(path);
    py::dict d;
    d["stage"] = toString(ck.state.stage);
    d["iteration"] = ck.state.iteration;
    d["student"] = ck.state.student;
    d["teacher"] = ck.state.teacher ? py::cast(*ck.state.teacher) : py::none();
    d["config_hash"] = ck.hasSidecar ? py::cast(ck.meta.configHash) : py::none();
    d["seed"] = ck.hasSidecar ? py::cast(ck.meta.seed) : py::none();
    return d;
  });
}
