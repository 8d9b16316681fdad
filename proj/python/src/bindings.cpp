#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dpmamba/checkpoint.hpp"
#include "dpmamba/corpus.hpp"
#include "dpmamba/gradcheck.hpp"
#include "dpmamba/model.hpp"
#include "dpmamba/training.hpp"
#include "dpmamba/wav.hpp"

namespace py = pybind11;
using namespace dpm;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return {a.data(), a.data() + a.size()};
}

Array to_array(std::span<const double> v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "DPMamba speech separation core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<train::MetricError>(m, "MetricError", PyExc_ValueError);

  py::enum_<NormKind>(m, "NormKind").value("rms", NormKind::rms).value("layer", NormKind::layer);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("model_dim", &ModelConfig::model_dim)
      .def_readwrite("num_blocks", &ModelConfig::num_blocks)
      .def_readwrite("state_dim", &ModelConfig::state_dim)
      .def_readwrite("chunk_size", &ModelConfig::chunk_size)
      .def_readwrite("enc_kernel", &ModelConfig::enc_kernel)
      .def_readwrite("enc_stride", &ModelConfig::enc_stride)
      .def_readwrite("num_speakers", &ModelConfig::num_speakers)
      .def_readwrite("norm", &ModelConfig::norm)
      .def_readwrite("bidirectional", &ModelConfig::bidirectional)
      .def("validate", &ModelConfig::validate)
      .def("__eq__", [](const ModelConfig& a, const ModelConfig& b) { return a == b; })
      .def("__repr__", [](const ModelConfig& c) { return "ModelConfig(\n" + to_text(c) + ")"; });

  m.def("preset", &preset, py::arg("name"));
  m.def("parse_config", [](const std::string& text) { return parse_config(text); }, py::arg("text"));
  m.def("to_text", &to_text, py::arg("config"));
  m.def("count_parameters", &count_parameters, py::arg("config"));

  py::class_<SeparationModel>(m, "SeparationModel")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed") = 0)
      .def_property_readonly("config", &SeparationModel::config)
      .def_property_readonly("parameter_count", &SeparationModel::parameter_count)
      .def("frame_count", &SeparationModel::frame_count, py::arg("samples"))
      .def(
          "separate",
          [](const SeparationModel& model, const Array& wave) {
            const auto v = to_vector(wave);
            std::vector<Array> out;
            py::gil_scoped_release release;
            NoGradGuard guard;
            const auto est = model.separate(Tensor::from({1, v.size()}, v));
            py::gil_scoped_acquire acquire;
            for (const auto& s : est) out.push_back(to_array(s.data()));
            return out;
          },
          py::arg("wave"), "Estimated sources for a 1-D waveform; each has the input length.")
      .def("save", [](const SeparationModel& model, const std::filesystem::path& p) { save_checkpoint(p, model); });

  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "si_snr",
      [](const Array& est, const Array& ref) { return train::si_snr(to_vector(est), to_vector(ref)); },
      py::arg("estimate"), py::arg("reference"));
  m.def(
      "sdr", [](const Array& est, const Array& ref) { return train::sdr(to_vector(est), to_vector(ref)); },
      py::arg("estimate"), py::arg("reference"));

  m.def(
      "read_wav",
      [](const std::filesystem::path& p) {
        const WavBuffer w = read_wav(p);
        return py::make_tuple(to_array(w.samples), w.sample_rate);
      },
      py::arg("path"), "Returns (samples, sample_rate).");
  m.def(
      "write_wav",
      [](const std::filesystem::path& p, const Array& samples, std::uint32_t rate) {
        write_wav(p, WavBuffer{rate, to_vector(samples)});
      },
      py::arg("path"), py::arg("samples"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def(
      "synth_source",
      [](std::size_t speaker, std::size_t utterance, std::uint64_t seed, std::size_t length) {
        return to_array(synth_source(speaker, utterance, seed, length));
      },
      py::arg("speaker"), py::arg("utterance"), py::arg("seed"), py::arg("length"));

  m.def(
      "gradcheck",
      [](const std::string& module, std::uint64_t seed) {
        py::list out;
        for (const auto& r : check::run_suite(module, seed)) {
          py::dict d;
          d["name"] = r.name;
          d["max_rel_error"] = r.max_rel_error;
          d["tolerance"] = r.tolerance;
          d["passed"] = r.passed;
          out.append(d);
        }
        return out;
      },
      py::arg("module") = "all", py::arg("seed") = 0);
}
