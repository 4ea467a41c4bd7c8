#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <sstream>

#include "lightpeft/artifact_io.hpp"
#include "lightpeft/errors.hpp"
#include "lightpeft/fm_prune.hpp"
#include "lightpeft/pipeline.hpp"

namespace py = pybind11;
using namespace lightpeft;
using pybind11::operator""_a;

namespace {

struct PyRun {
  RunArtifacts artifacts;
  bool baseline = false;

  py::dict report() const {
    std::ostringstream os;
    write_report(artifacts.report, os, ReportFormat::tsv);
    std::istringstream in(os.str());
    py::dict out;
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      out[py::str(line.substr(0, tab))] = line.substr(tab + 1);
    }
    return out;
  }

  py::array_t<double> logits() const {
    const std::vector<double> flat = predict_logits(artifacts.model, &artifacts.peft, artifacts.data.eval);
    const auto classes = static_cast<py::ssize_t>(artifacts.model.config.num_classes);
    py::array_t<double> arr({static_cast<py::ssize_t>(flat.size()) / classes, classes});
    std::copy(flat.begin(), flat.end(), arr.mutable_data());
    return arr;
  }

  void save(const std::string& dir) const {
    const std::filesystem::path p(dir);
    std::filesystem::create_directories(p);
    save_foundation(p / "pruned.lpft", artifacts.model);
    save_checkpoint(p / "task.lpft", make_checkpoint(artifacts.model, artifacts.peft, artifacts.report.plan,
                                                     baseline ? nullptr : &artifacts.masks));
  }
};

MaskSet masks_from(const std::vector<std::vector<double>>& values) {
  MaskSet m;
  for (const auto& v : values) {
    m.head.push_back(Tensor::from({v.size()}, v));
    m.ffn.push_back(Tensor::from({v.size()}, v));
  }
  return m;
}

}  // namespace

PYBIND11_MODULE(_lightpeft, m) {
  m.doc() = "Structured pruning of a toy transformer and its PEFT modules";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<CompatibilityError>(m, "CompatibilityError", base.ptr());
  auto load = py::register_exception<LoadError>(m, "LoadError", base.ptr());
  py::register_exception<BadMagicError>(m, "BadMagicError", load.ptr());
  py::register_exception<BadVersionError>(m, "BadVersionError", load.ptr());
  py::register_exception<ChecksumError>(m, "ChecksumError", load.ptr());

  py::class_<PyRun>(m, "Run")
      .def_property_readonly("accuracy", [](const PyRun& r) { return r.artifacts.report.accuracy; })
      .def_property_readonly("foundation_retention",
                             [](const PyRun& r) { return r.artifacts.report.foundation_retention; })
      .def_property_readonly("trainable_retention", [](const PyRun& r) { return r.artifacts.report.trainable_retention; })
      .def_property_readonly("heads", [](const PyRun& r) { return r.artifacts.report.plan.heads; })
      .def_property_readonly("ffn_dims", [](const PyRun& r) { return r.artifacts.report.plan.ffn; })
      .def_property_readonly("kept_modules", [](const PyRun& r) { return r.artifacts.report.plan.kept_modules; })
      .def_property_readonly("warnings", [](const PyRun& r) { return r.artifacts.report.warnings; })
      .def("report", &PyRun::report, "Report rows as strings, keyed like the CLI's tsv output")
      .def("logits", &PyRun::logits, "Eval-split logits, shape (samples, classes)")
      .def("save", &PyRun::save, "dir"_a, "Write pruned.lpft and task.lpft into dir");

  m.def(
      "run",
      [](const std::string& config, bool baseline) {
        const RunConfig cfg = parse_config(config);
        py::gil_scoped_release release;
        return PyRun{baseline ? run_lora_baseline(cfg) : run_light_peft(cfg), baseline};
      },
      "config"_a = "", "baseline"_a = false, "Run the pipeline on a key = value configuration");

  m.def(
      "normalize_config",
      [](const std::string& config) {
        std::ostringstream os;
        write_config(parse_config(config), os);
        return os.str();
      },
      "config"_a, "Parse a configuration and write it back with every key");

  m.def(
      "swap_eval",
      [](const std::string& base_path, const std::string& adapter_path, const std::string& config) {
        const RunConfig cfg = parse_config(config).resolved();
        const TaskModel task = swap_adapter(load_foundation(base_path), load_checkpoint(adapter_path));
        return evaluate(task.model, &task.peft, generate(cfg.task).eval);
      },
      "base"_a, "adapter"_a, "config"_a = "", "Assemble a saved base and adapter and return eval accuracy");

  m.def("drop_count", &drop_count, "rate"_a, "n"_a);
  m.def(
      "select_heads",
      [](const std::vector<std::vector<double>>& masks, double rate) { return select_heads(masks_from(masks), rate).keep; },
      "masks"_a, "rate"_a, "Kept head indices per layer");
  m.def(
      "select_ffn_dims",
      [](const std::vector<std::vector<double>>& masks, double rate) {
        Selection s = select_ffn_dims(masks_from(masks), rate);
        return py::make_tuple(s.keep, s.warnings);
      },
      "masks"_a, "rate"_a, "Kept FFN indices per layer and any forced-keep warnings");
}
