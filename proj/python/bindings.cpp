#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <vector>

#include "sfbnet/app.hpp"
#include "sfbnet/errors.hpp"

namespace py = pybind11;
using namespace sfbnet;

namespace {

using LabelArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;
using ImageArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// (H, W) or (N, H, W) int array -> LabelMap.
LabelMap to_labels(const LabelArray& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("labels must be 2-D or 3-D");
  const bool batched = a.ndim() == 3;
  LabelMap m(batched ? a.shape(0) : 1, a.shape(batched ? 1 : 0), a.shape(batched ? 2 : 1));
  std::copy(a.data(), a.data() + a.size(), m.values.begin());
  return m;
}

LabelArray from_labels(const LabelMap& m, bool batched) {
  std::vector<py::ssize_t> shape{m.height, m.width};
  if (batched) shape.insert(shape.begin(), m.batch);
  LabelArray out(shape);
  std::copy(m.values.begin(), m.values.end(), out.mutable_data());
  return out;
}

py::dict sample_dict(const Sample& s) {
  ImageArray image({s.height, s.width});
  std::copy(s.image.begin(), s.image.end(), image.mutable_data());
  LabelArray labels({s.height, s.width});
  std::copy(s.labels.begin(), s.labels.end(), labels.mutable_data());
  py::dict d;
  d["image"] = image;
  d["labels"] = labels;
  d["spacing"] = py::make_tuple(s.spacing_x, s.spacing_y);
  return d;
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

RunConfig config_of(const std::string& path, const std::vector<std::string>& overrides) {
  return load_run_config(path, overrides);
}

// Trained network plus its run config, for inference from Python.
class Predictor {
 public:
  Predictor(const std::string& config_path, const std::string& checkpoint,
            const std::vector<std::string>& overrides)
      : config_(config_of(config_path, overrides)), model_(build_model<float>(config_.model)) {
    load_checkpoint(*model_, checkpoint);
  }

  // (N, H, W) float images -> (N, C, H, W) softmax probabilities.
  py::array_t<float> probabilities(const ImageArray& images, bool tta) const {
    if (images.ndim() != 3) throw py::value_error("images must be (N, H, W)");
    std::vector<float> v(images.data(), images.data() + images.size());
    Tensor<float> x({images.shape(0), 1, images.shape(1), images.shape(2)}, std::move(v));
    Tensor<float> p;
    {
      py::gil_scoped_release release;
      p = tta ? tta_mirror_predict(*model_, x) : predict_probabilities(*model_, x);
    }
    py::array_t<float> out(std::vector<py::ssize_t>(p.shape().begin(), p.shape().end()));
    std::copy(p.data().begin(), p.data().end(), out.mutable_data());
    return out;
  }

  LabelArray predict(const ImageArray& images, bool tta, bool postprocess) const {
    if (images.ndim() != 3) throw py::value_error("images must be (N, H, W)");
    std::vector<Sample> samples;
    for (py::ssize_t i = 0; i < images.shape(0); ++i) {
      Sample s(static_cast<int>(images.shape(1)), static_cast<int>(images.shape(2)));
      std::copy(images.data(i, 0, 0), images.data(i, 0, 0) + s.image.size(), s.image.begin());
      samples.push_back(std::move(s));
    }
    std::vector<LabelMap> maps;
    {
      py::gil_scoped_release release;
      maps = predict_labels(*model_, samples, EvalOptions{tta, postprocess});
    }
    LabelMap all(static_cast<std::int64_t>(maps.size()), images.shape(1), images.shape(2));
    for (std::size_t i = 0; i < maps.size(); ++i)
      std::copy(maps[i].values.begin(), maps[i].values.end(), all.values.begin() + i * all.pixels());
    return from_labels(all, true);
  }

  std::string config_json() const { return config_.to_json(); }

 private:
  RunConfig config_;
  std::unique_ptr<SFBNet<float>> model_;
};

}  // namespace

PYBIND11_MODULE(_sfbnet, m) {
  m.doc() = "U-Net with Swin Filtering Blocks: training, evaluation and analysis tools";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_IOError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  m.def("load_config", [](const std::string& path, const std::vector<std::string>& overrides) {
          return parse_json(config_of(path, overrides).to_json());
        },
        py::arg("path") = "", py::arg("overrides") = std::vector<std::string>{},
        "Run config as a dict: preset, then the JSON file, then key=value overrides.");
  m.def("preset", [](const std::string& profile) { return parse_json(RunConfig::preset(profile).to_json()); },
        py::arg("profile") = "tiny");

  m.def("count_parameters", [](const std::string& variant, const std::string& profile) {
          return count_parameters(*build_model<float>(with_variant(RunConfig::preset(profile).model, variant)));
        },
        py::arg("variant") = "full", py::arg("profile") = "paper");
  m.def("count_flops", [](const std::string& variant, const std::string& profile) {
          return count_flops(*build_model<float>(with_variant(RunConfig::preset(profile).model, variant)));
        },
        py::arg("variant") = "full", py::arg("profile") = "paper", "Forward FLOPs at batch 1.");

  m.def("phantom", [](std::uint64_t seed, int height, int width) {
          return sample_dict(generate_phantom(PhantomSpec::random(seed, height, width)));
        },
        py::arg("seed"), py::arg("height") = 64, py::arg("width") = 64);
  m.def("write_phantoms", [](const std::string& dir, int count, int height, int width, std::uint64_t seed) {
          generate_phantom_split(dir, count, height, width, seed);
        },
        py::arg("dir"), py::arg("count") = 8, py::arg("height") = 32, py::arg("width") = 32, py::arg("seed") = 0);
  m.def("load_split", [](const std::string& dir) {
          py::list out;
          for (const auto& s : load_split(dir)) out.append(sample_dict(s));
          return out;
        },
        py::arg("dir"));

  m.def("largest_component_filter", [](const LabelArray& labels) {
          return from_labels(largest_component_filter(to_labels(labels)), labels.ndim() == 3);
        },
        py::arg("labels"));
  m.def("dice_score", [](const LabelArray& pred, const LabelArray& truth, int cls) {
          return dice_score(to_labels(pred), to_labels(truth), cls);
        },
        py::arg("pred"), py::arg("truth"), py::arg("cls"));

  m.def("train", [](const std::string& config, const std::vector<std::string>& overrides) {
          const auto c = config_of(config, overrides);
          TrainSummary s;
          {
            py::gil_scoped_release release;
            s = run_train(c);
          }
          py::dict d;
          d["checkpoint"] = s.checkpoint.string();
          d["losses"] = s.losses;
          py::list epochs;
          for (const auto& e : s.epochs) {
            py::dict row;
            row["epoch"] = e.epoch;
            row["step"] = e.step;
            row["loss"] = e.loss;
            row["mean_dice"] = e.mean_dice;
            epochs.append(row);
          }
          d["epochs"] = epochs;
          d["seconds"] = s.seconds;
          return d;
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("evaluate", [](const std::string& config, const std::string& ckpt, bool tta, bool postprocess,
                       const std::vector<std::string>& overrides) {
          const auto c = config_of(config, overrides);
          DiceReport r;
          {
            py::gil_scoped_release release;
            r = run_eval(c, ckpt, EvalOptions{tta, postprocess});
          }
          return parse_json(r.to_json());
        },
        py::arg("config"), py::arg("ckpt"), py::arg("tta") = false, py::arg("postprocess") = false,
        py::arg("overrides") = std::vector<std::string>{});
  m.def("gradcheck", [](const std::string& config, const std::vector<std::string>& overrides) {
          const auto c = config_of(config, overrides);
          GradcheckReport r;
          {
            py::gil_scoped_release release;
            r = run_gradcheck(c);
          }
          py::dict errors;
          for (const auto& e : r.entries) errors[py::str(e.component)] = e.worst_relative_error;
          py::dict d;
          d["errors"] = errors;
          d["passed"] = r.passed();
          d["failures"] = r.failures();
          d["seconds"] = r.seconds;
          return d;
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});
  m.def("bench", [](const std::string& config, const std::vector<std::string>& overrides) {
          const auto c = config_of(config, overrides);
          std::vector<CostReport> rows;
          {
            py::gil_scoped_release release;
            rows = run_bench(c);
          }
          return parse_json(cost_json(rows));
        },
        py::arg("config") = "", py::arg("overrides") = std::vector<std::string>{});

  py::class_<Predictor>(m, "Predictor")
      .def(py::init<const std::string&, const std::string&, const std::vector<std::string>&>(),
           py::arg("config"), py::arg("ckpt"), py::arg("overrides") = std::vector<std::string>{})
      .def("probabilities", &Predictor::probabilities, py::arg("images"), py::arg("tta") = false)
      .def("predict", &Predictor::predict, py::arg("images"), py::arg("tta") = false,
           py::arg("postprocess") = false)
      .def_property_readonly("config", [](const Predictor& p) { return parse_json(p.config_json()); });
}
