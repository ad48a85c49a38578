// Copyright 2026 The refseg3d Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "refseg/data.hpp"
#include "refseg/error.hpp"
#include "refseg/geometry.hpp"
#include "refseg/losses.hpp"
#include "refseg/run.hpp"
#include "refseg/train.hpp"

namespace py = pybind11;
using namespace refseg;

namespace {

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> a({m.rows(), m.cols()});
  std::copy(m.data(), m.data() + m.size(), a.mutable_data());
  return a;
}

Matrix from_numpy(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw py::value_error("expected a 2-d array");
  Matrix m(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
  std::copy(a.data(), a.data() + m.size(), m.data());
  return m;
}

py::array_t<std::uint8_t> mask_to_numpy(const geometry::Mask& m) {
  py::array_t<std::uint8_t> a(static_cast<py::ssize_t>(m.size()));
  std::copy(m.begin(), m.end(), a.mutable_data());
  return a;
}

py::dict report_dict(const train::EvalReport& r) {
  const auto split = [](const train::SplitMetrics& s) {
    py::dict d;
    d["count"] = s.count;
    d["miou"] = s.miou;
    d["acc25"] = s.acc25;
    d["acc50"] = s.acc50;
    return d;
  };
  py::dict d;
  d["overall"] = split(r.overall);
  d["unique"] = split(r.unique);
  d["multiple"] = split(r.multiple);
  d["ious"] = r.ious;
  return d;
}

// A model bundled with the configuration it was built from.
struct PyModel {
  model::Model model;
  run::RunConfig config;
};

std::vector<train::Prepared> prepare_for(const PyModel& m, const std::vector<data::Sample>& s) {
  return train::prepare(s, m.model.config.encoder);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Language-conditioned point cloud segmentation (C++ core)";

  py::register_exception<Error>(m, "RefsegError", PyExc_RuntimeError);

  m.def("vocabulary", [] {
    const auto& v = data::standard_vocabulary();
    std::vector<std::string> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(v.token(i));
    return out;
  }, "Tokens of the standard vocabulary in id order.");
  m.def("encode", [](const std::string& s) { return data::standard_vocabulary().encode(s); });
  m.def("decode", [](const std::vector<std::size_t>& ids) {
    return data::standard_vocabulary().decode(ids);
  });

  py::class_<data::Sample>(m, "Sample")
      .def_property_readonly("positions", [](const data::Sample& s) { return to_numpy(s.cloud.positions); })
      .def_property_readonly("features", [](const data::Sample& s) { return to_numpy(s.cloud.features); })
      .def_property_readonly("gt_mask", [](const data::Sample& s) { return mask_to_numpy(s.gt_mask); })
      .def_readonly("tokens", &data::Sample::tokens)
      .def_readonly("target", &data::Sample::target)
      .def_readonly("is_unique", &data::Sample::is_unique)
      .def_property_readonly("sentence", [](const data::Sample& s) {
        return data::standard_vocabulary().decode(s.tokens);
      })
      .def_property_readonly("num_points", [](const data::Sample& s) { return s.cloud.size(); })
      .def("__eq__", [](const data::Sample& a, const data::Sample& b) { return a == b; });

  m.def("generate", [](std::uint64_t seed, const std::string& config) {
    return data::generate(seed, run::parse_config(config).grammar);
  }, py::arg("seed"), py::arg("config") = "", "One scene with a unique referring expression.");
  m.def("generate_dataset", [](std::uint64_t seed, std::size_t count, const std::string& config) {
    return data::generate_dataset(seed, count, run::parse_config(config).grammar);
  }, py::arg("seed"), py::arg("count"), py::arg("config") = "");
  m.def("save_dataset", &data::save_dataset, py::arg("path"), py::arg("samples"));
  m.def("load_dataset", &data::load_dataset, py::arg("path"));

  m.def("fps", [](const py::array_t<double>& points, std::size_t count, std::size_t start) {
    return geometry::fps(from_numpy(points), count, start);
  }, py::arg("points"), py::arg("count"), py::arg("start") = 0);
  m.def("knn", [](const py::array_t<double>& queries, const py::array_t<double>& reference,
                  std::size_t k) {
    const auto t = geometry::knn(from_numpy(queries), from_numpy(reference), k);
    py::array_t<std::int64_t> a({t.rows, t.k});
    std::copy(t.idx.begin(), t.idx.end(), a.mutable_data());
    return a;
  }, py::arg("queries"), py::arg("reference"), py::arg("k"));
  m.def("hungarian", [](const py::array_t<double>& cost) {
    const auto a = losses::hungarian(from_numpy(cost));
    return py::make_tuple(a.pairs, a.total);
  }, py::arg("cost"), "Minimum-cost assignment: (pairs, total).");
  m.def("iou", [](const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt) {
    return train::iou(pred, gt);
  });

  m.def("default_config", [] { return run::dump_config(run::RunConfig{}); });
  m.def("small_config", [] { return run::dump_config(run::small_config()); });
  m.def("normalize_config", [](const std::string& text, const std::vector<std::string>& overrides) {
    run::RunConfig c = run::parse_config(text);
    run::apply_overrides(c, overrides);
    c.validate();
    return run::dump_config(c);
  }, py::arg("text"), py::arg("overrides") = std::vector<std::string>{});

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const std::string& config) {
             run::RunConfig c = run::parse_config(config);
             c.validate();
             return PyModel{run::build_model(c), c};
           }),
           py::arg("config") = "")
      .def_static("load", [](const std::string& path) {
        auto [model, cfg] = run::load_model(path);
        return PyModel{std::move(model), std::move(cfg)};
      })
      .def("save", [](const PyModel& self, const std::string& path) {
        run::save_model(path, self.model, self.config);
      })
      .def_property_readonly("config", [](const PyModel& self) { return run::dump_config(self.config); })
      .def_property_readonly("num_parameters", [](const PyModel& self) {
        return self.model.store.trainable_scalars();
      })
      .def("train", [](PyModel& self, const std::vector<data::Sample>& samples) {
        const auto prepared = prepare_for(self, samples);
        std::vector<double> losses;
        {
          py::gil_scoped_release release;
          const auto r = train::train(self.model, prepared, self.config.train, self.config.loss);
          for (const auto& p : r.curve) losses.push_back(p.loss);
        }
        return losses;
      }, py::arg("samples"), "Trains in place; returns the logged loss values.")
      .def("infer", [](const PyModel& self, const data::Sample& s) {
        const std::vector<data::Sample> one{s};
        const auto prepared = prepare_for(self, one);
        const auto inf = train::infer(self.model, prepared[0]);
        py::dict d;
        d["mask"] = mask_to_numpy(inf.mask);
        d["selected"] = inf.selected;
        d["scores"] = inf.scores;
        d["mask_logits"] = to_numpy(inf.mask_logits);
        d["primitive_response"] = to_numpy(inf.primitive_response);
        return d;
      })
      .def("evaluate", [](const PyModel& self, const std::vector<data::Sample>& samples) {
        const auto prepared = prepare_for(self, samples);
        return report_dict(train::evaluate(self.model, prepared));
      });

  m.def("grad_check", [](const std::string& config, double tol) {
    const run::RunConfig c = config.empty() ? run::small_config() : run::parse_config(config);
    py::list out;
    for (const auto& mc : run::grad_check_suite(c, tol)) {
      py::dict d;
      d["module"] = mc.module;
      d["passed"] = mc.report.passed;
      d["checked"] = mc.report.checked;
      d["max_rel_error"] = mc.report.max_rel_error;
      out.append(d);
    }
    return out;
  }, py::arg("config") = "", py::arg("tol") = 1e-4);
}
