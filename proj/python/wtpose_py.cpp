#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <variant>

#include "wtpose/attention.hpp"
#include "wtpose/checkpoint.hpp"
#include "wtpose/eval.hpp"
#include "wtpose/io.hpp"
#include "wtpose/suites.hpp"
#include "wtpose/synth.hpp"

namespace py = pybind11;
using namespace wtpose;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Image to_image(const U8Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw DimensionError("expected an HxWx3 uint8 array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.rgb.begin());
  return img;
}

U8Array from_image(const Image& img) {
  U8Array a({img.height, img.width, 3});
  std::copy(img.rgb.begin(), img.rgb.end(), a.mutable_data());
  return a;
}

template <typename T>
py::array_t<double> to_numpy(const Tensor<T>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.values().begin(), t.values().end(), a.mutable_data());
  return a;
}

// Model loaded from a checkpoint, in whichever precision it was stored.
class Model {
 public:
  explicit Model(const std::filesystem::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    if (c.precision() == Precision::f32) {
      model_ = model_from_checkpoint<float>(c);
    } else {
      model_ = model_from_checkpoint<double>(c);
    }
  }

  std::pair<int, int> input_size() const {
    return std::visit([](const auto& m) { return std::pair<int, int>(m.input_h, m.input_w); }, model_);
  }

  // (heatmaps [K, H/4, W/4], keypoints [K, 3] as x, y, score)
  py::tuple predict(const U8Array& rgb) const {
    const Image img = to_image(rgb);
    return std::visit(
        [&](const auto& m) {
          using T = typename std::decay_t<decltype(m.backbone.stem.conv1.weight)>::value_type;
          if (img.height != m.input_h || img.width != m.input_w) {
            throw DimensionError("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                 ", model expects " + std::to_string(m.input_w) + "x" + std::to_string(m.input_h));
          }
          const HeatmapSet<T> hm = m.predict(images_to_tensor<T>({img}));
          const auto kps = decode_keypoints(hm);
          py::array_t<double> k({static_cast<py::ssize_t>(kps.size()), py::ssize_t{3}});
          auto r = k.mutable_unchecked<2>();
          for (std::size_t j = 0; j < kps.size(); ++j) {
            r(j, 0) = kps[j].x;
            r(j, 1) = kps[j].y;
            r(j, 2) = kps[j].score;
          }
          auto maps = to_numpy(hm.maps);
          return py::make_tuple(maps.attr("reshape")(hm.maps.dim(1), hm.maps.dim(2), hm.maps.dim(3)), k);
        },
        model_);
  }

 private:
  std::variant<PoseModel<float>, PoseModel<double>> model_;
};

template <typename T>
void add_tensors(const Checkpoint& c, py::dict& out) {
  auto m = model_from_checkpoint<T>(c);
  for (auto& [name, t] : m.named_parameters()) out[py::str(name)] = to_numpy(*t);
}

py::dict checkpoint_tensors(const std::filesystem::path& dir) {
  const Checkpoint c = load_checkpoint(dir);
  py::dict out;
  if (c.precision() == Precision::f32) {
    add_tensors<float>(c, out);
  } else {
    add_tensors<double>(c, out);
  }
  return out;
}

py::dict evaluate_files(const std::filesystem::path& predictions, const std::filesystem::path& annotations) {
  const auto dets = load_predictions(predictions);
  const auto gts = load_annotations(annotations).annotations;
  const APResult r = average_precision(dets, gts, OKSParams::coco());
  py::dict d;
  d["ap"] = r.ap;
  d["ap50"] = r.ap50;
  d["ap75"] = r.ap75;
  d["ar"] = r.ar;
  d["ap_per_threshold"] = r.ap_per_threshold;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "wtpose native core";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<AnnotationError>(m, "AnnotationError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<CorruptionError>(m, "CorruptionError", base);
  py::register_exception<VersionError>(m, "VersionError", base);
  py::register_exception<LoadError>(m, "LoadError", base);

  m.def("receptive_field", &receptive_field, py::arg("window"), py::arg("dilation"));
  m.def(
      "neighborhood",
      [](std::int64_t h, std::int64_t w, int k, int d, std::int64_t i, std::int64_t j) {
        std::vector<std::pair<std::int64_t, std::int64_t>> out;
        for (const auto& p : neighborhood_indices(h, w, k, d, {i, j})) out.emplace_back(p[0], p[1]);
        return out;
      },
      py::arg("height"), py::arg("width"), py::arg("window"), py::arg("dilation"), py::arg("row"), py::arg("col"),
      "pixels attended by (row, col), row-major over the window");

  m.def(
      "synth",
      [](const std::filesystem::path& out, int num_images, int width, int height, double occlusion,
         std::uint64_t seed) {
        SynthSpec s;
        s.num_images = num_images;
        s.width = width;
        s.height = height;
        s.occlusion = occlusion;
        s.seed = seed;
        const SynthSummary r = synth_generate(s, out);
        py::dict d;
        d["images"] = r.images;
        d["visible_joints"] = r.visible_joints;
        d["trainable"] = r.trainable;
        return d;
      },
      py::arg("out"), py::arg("num_images") = 50, py::arg("width") = 96, py::arg("height") = 96,
      py::arg("occlusion") = 0.0, py::arg("seed") = 42);

  m.def("read_ppm", [](const std::filesystem::path& p) { return from_image(read_ppm(p)); });
  m.def("write_ppm", [](const std::filesystem::path& p, const U8Array& a) { write_ppm(p, to_image(a)); });

  m.def("evaluate_files", &evaluate_files, py::arg("predictions"), py::arg("annotations"));
  m.def("checkpoint_tensors", &checkpoint_tensors, py::arg("path"), "verify a checkpoint and return its tensors");

  m.def(
      "gradcheck",
      [](const std::string& scope) {
        const auto s = parse_grad_scope(scope);
        if (!s) throw ConfigError("unknown gradcheck scope '" + scope + "'");
        py::list out;
        for (const auto& r : run_gradcheck_suite(*s)) {
          py::dict d;
          d["component"] = r.component;
          d["max_error"] = r.max_error;
          d["threshold"] = r.threshold;
          d["passed"] = r.pass();
          out.append(d);
        }
        return out;
      },
      py::arg("scope") = "primitive");

  py::class_<Model>(m, "Model")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def_property_readonly("input_size", &Model::input_size)
      .def("predict", &Model::predict, py::arg("rgb"));
}
