#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "coe/checkpoint.hpp"
#include "coe/evaluator.hpp"
#include "coe/image.hpp"
#include "coe/models.hpp"
#include "coe/noise.hpp"
#include "coe/trainer.hpp"
#include "coe/verify.hpp"

namespace py = pybind11;
using namespace coe;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

GrayImage to_image(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D (height, width) array");
  GrayImage img(static_cast<std::size_t>(a.shape(1)), static_cast<std::size_t>(a.shape(0)));
  std::memcpy(img.pixels.data(), a.data(), img.size() * sizeof(float));
  return img;
}

Array to_array(const GrayImage& img) {
  Array a({img.height, img.width});
  std::memcpy(a.mutable_data(), img.pixels.data(), img.size() * sizeof(float));
  return a;
}

NoiseSource parse_source(const std::string& s) {
  if (s == "awgn") return NoiseSource::AWGN;
  if (s == "jpeg") return NoiseSource::JPEG;
  throw std::invalid_argument("noise source must be 'awgn' or 'jpeg', got '" + s + "'");
}

py::dict complexity_dict(const Complexity& c) {
  py::dict d;
  d["params_total"] = c.params_total;
  d["params_expert"] = c.params_expert;
  d["params_gate"] = c.params_gate;
  d["area_ratio"] = c.area_ratio;
  d["params_effective"] = c.params_effective;
  return d;
}

struct PyModel {
  ModelBundle bundle;

  static PyModel load(const std::filesystem::path& path) { return {ModelBundle::from_checkpoint(load_checkpoint(path))}; }

  void save(const std::filesystem::path& path) const {
    Checkpoint c;
    c.expert_config = bundle.expert_config;
    c.experts = bundle.experts;
    c.gate = bundle.gate;
    save_checkpoint(path, c);
  }
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Competition-of-experts blind denoising.";

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("stream"));

  m.def(
      "synth_image",
      [](const std::string& kind, std::size_t size, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(synth_image(parse_synth_kind(kind), size, rng));
      },
      py::arg("kind") = "mixed", py::arg("size") = 96, py::arg("seed") = 0);
  m.def("load_pgm", [](const std::filesystem::path& p) { return to_array(load_pgm(p)); });
  m.def("save_pgm", [](const std::filesystem::path& p, const Array& a) { save_pgm(p, to_image(a)); });

  m.def(
      "add_awgn",
      [](const Array& a, double sigma, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(add_awgn(to_image(a), sigma, rng));
      },
      py::arg("image"), py::arg("sigma"), py::arg("seed") = 0);
  m.def("jpeg_degrade", [](const Array& a, int q) { return to_array(jpeg_degrade(to_image(a), q)); },
        py::arg("image"), py::arg("quality"));
  m.def("quant_table", [](int q) {
    const QuantTable t = quant_table(q);
    return std::vector<int>(t.begin(), t.end());
  });
  m.def(
      "make_eval_grid",
      [](const std::string& source, std::size_t n) {
        std::vector<std::pair<std::size_t, double>> out;
        for (const auto& e : make_eval_grid(parse_source(source), n)) out.emplace_back(e.image_index, e.spec.level);
        return out;
      },
      py::arg("source"), py::arg("n"));

  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });

  m.def("expert_param_count", [](const std::string& arch) { return expert_param_count(ExpertConfig::parse(arch)); });
  m.def("gate_param_count", &gate_param_count, py::arg("n_experts"));
  m.def(
      "effective_complexity",
      [](const std::string& arch, int n, std::size_t w, std::size_t h) {
        return complexity_dict(effective_complexity(ExpertConfig::parse(arch), n, w, h));
      },
      py::arg("expert"), py::arg("n_experts"), py::arg("width"), py::arg("height"));
  m.def("expert_forward_passes", &expert_forward_passes);

  py::class_<PyModel>(m, "Model")
      .def_static("load", &PyModel::load, py::arg("path"))
      .def("save", &PyModel::save, py::arg("path"))
      .def_property_readonly("n_experts", [](const PyModel& p) { return p.bundle.n_experts(); })
      .def_property_readonly("expert", [](const PyModel& p) { return p.bundle.expert_config.name(); })
      .def("select_expert", [](const PyModel& p, const Array& a) { return select_expert(p.bundle.gate, to_image(a)); })
      .def("denoise",
           [](const PyModel& p, const Array& a) {
             const GrayImage img = to_image(a);
             BlindResult r;
             {
               py::gil_scoped_release release;
               r = denoise_blind(p.bundle, img);
             }
             return py::make_tuple(to_array(r.image), r.expert);
           })
      .def("denoise_with", [](const PyModel& p, std::size_t j, const Array& a) {
        if (j >= p.bundle.n_experts()) throw py::index_error("expert index out of range");
        return to_array(denoise_with(p.bundle.experts[j], to_image(a)));
      });

  m.def(
      "train",
      [](const std::vector<Array>& images, const std::map<std::string, std::string>& config) {
        TrainConfig c = TrainConfig::desk_profile();
        c.apply_kv(config);
        std::vector<GrayImage> data;
        for (const auto& a : images) data.push_back(to_image(a));
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train(c, data);
        }
        PyModel model{ModelBundle{c.expert, r.experts, r.gate}};
        std::vector<std::vector<std::size_t>> wins;
        for (const auto& e : r.log.epochs) wins.push_back(e.wins);
        return py::make_tuple(model, wins);
      },
      py::arg("images"), py::arg("config") = std::map<std::string, std::string>{},
      "Train on clean images; config keys mirror the CLI flags. Returns (model, wins per epoch).");

  m.def("verify", [](std::uint64_t seed) {
    VerifyOptions o;
    o.seed = seed;
    py::list out;
    for (const auto& r : run_verification(o)) {
      py::dict d;
      d["name"] = r.name;
      d["passed"] = r.passed;
      d["max_rel_error"] = r.max_rel_error;
      d["detail"] = r.detail;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 0);
}
