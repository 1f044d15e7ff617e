#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mono3d/anab.hpp"
#include "mono3d/anchor_codec.hpp"
#include "mono3d/eval.hpp"
#include "mono3d/feature_align.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/gradient_suite.hpp"
#include "mono3d/kitti_io.hpp"
#include "mono3d/postproc.hpp"
#include "mono3d/toy.hpp"
#include "mono3d/train.hpp"

namespace py = pybind11;
using namespace mono3d;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Accepts 1- to 4-d arrays; missing leading axes become 1.
Tensor to_tensor(const Array& a) {
  if (a.ndim() < 1 || a.ndim() > 4) throw py::value_error("expected a 1-4 dimensional array");
  std::size_t dims[4] = {1, 1, 1, 1};
  for (py::ssize_t i = 0; i < a.ndim(); ++i)
    dims[4 - a.ndim() + i] = static_cast<std::size_t>(a.shape(i));
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor(Shape{dims[0], dims[1], dims[2], dims[3]}, std::move(values));
}

Array to_array(const Tensor& t) {
  const Shape& s = t.shape();
  Array out({s.batch, s.channels, s.height, s.width});
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_mono3d, m) {
  m.doc() = "Monocular 3D detection building blocks";

  py::register_exception<BehindCameraError>(m, "BehindCameraError", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);

  // geometry
  py::class_<Point3>(m, "Point3")
      .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"), py::arg("z"))
      .def_readwrite("x", &Point3::x)
      .def_readwrite("y", &Point3::y)
      .def_readwrite("z", &Point3::z);
  py::class_<Projection>(m, "Projection")
      .def(py::init<double, double, double>(), py::arg("x"), py::arg("y"), py::arg("z"))
      .def_readwrite("x", &Projection::x)
      .def_readwrite("y", &Projection::y)
      .def_readwrite("z", &Projection::z);
  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<>())
      .def_static("pinhole", &CameraIntrinsics::pinhole, py::arg("focal"), py::arg("cx"),
                  py::arg("cy"))
      .def_readwrite("k", &CameraIntrinsics::k);
  py::class_<Box2D>(m, "Box2D")
      .def(py::init<double, double, double, double>(), py::arg("x1"), py::arg("y1"),
           py::arg("x2"), py::arg("y2"))
      .def_static("from_center", &Box2D::from_center)
      .def_readwrite("x1", &Box2D::x1)
      .def_readwrite("y1", &Box2D::y1)
      .def_readwrite("x2", &Box2D::x2)
      .def_readwrite("y2", &Box2D::y2)
      .def_property_readonly("width", &Box2D::width)
      .def_property_readonly("height", &Box2D::height)
      .def_property_readonly("area", &Box2D::area)
      .def("__repr__", [](const Box2D& b) {
        return "Box2D(" + std::to_string(b.x1) + ", " + std::to_string(b.y1) + ", " +
               std::to_string(b.x2) + ", " + std::to_string(b.y2) + ")";
      });
  py::class_<Box3D>(m, "Box3D")
      .def(py::init([](double x, double y, double z, double w, double h, double l, double yaw,
                       double alpha) { return Box3D{x, y, z, w, h, l, yaw, alpha}; }),
           py::arg("x"), py::arg("y"), py::arg("z"), py::arg("w"), py::arg("h"), py::arg("l"),
           py::arg("yaw") = 0.0, py::arg("alpha") = 0.0)
      .def_readwrite("x", &Box3D::x)
      .def_readwrite("y", &Box3D::y)
      .def_readwrite("z", &Box3D::z)
      .def_readwrite("w", &Box3D::w)
      .def_readwrite("h", &Box3D::h)
      .def_readwrite("l", &Box3D::l)
      .def_readwrite("yaw", &Box3D::yaw)
      .def_readwrite("alpha", &Box3D::alpha);
  m.def("project", &project, py::arg("camera"), py::arg("point"));
  m.def("backproject", &backproject, py::arg("camera"), py::arg("projection"));
  m.def("project_box", &project_box, py::arg("box"), py::arg("camera"));
  m.def("wrap_angle", &wrap_angle);
  m.def("alpha_to_yaw", &alpha_to_yaw, py::arg("alpha"), py::arg("x"), py::arg("z"));
  m.def("yaw_to_alpha", &yaw_to_alpha, py::arg("yaw"), py::arg("x"), py::arg("z"));
  m.def("iou_2d", &iou_2d);
  m.def("iou_bev", &iou_bev);
  m.def("iou_3d", &iou_3d);

  // anchors and codec
  py::class_<AnchorStats3D>(m, "AnchorStats3D")
      .def(py::init<>())
      .def_readwrite("z", &AnchorStats3D::z)
      .def_readwrite("w", &AnchorStats3D::w)
      .def_readwrite("h", &AnchorStats3D::h)
      .def_readwrite("l", &AnchorStats3D::l)
      .def_readwrite("alpha", &AnchorStats3D::alpha);
  py::class_<AnchorTemplate>(m, "AnchorTemplate")
      .def_readonly("w", &AnchorTemplate::w)
      .def_readonly("h", &AnchorTemplate::h)
      .def_readonly("stats", &AnchorTemplate::stats)
      .def_readonly("matched", &AnchorTemplate::matched);
  py::class_<Anchor>(m, "Anchor")
      .def(py::init<>())
      .def_readwrite("x", &Anchor::x)
      .def_readwrite("y", &Anchor::y)
      .def_readwrite("w", &Anchor::w)
      .def_readwrite("h", &Anchor::h)
      .def_readwrite("stats", &Anchor::stats)
      .def_readonly("template_index", &Anchor::template_index);
  py::class_<ProjectedBox3D>(m, "ProjectedBox3D")
      .def(py::init<>())
      .def_readwrite("xp", &ProjectedBox3D::xp)
      .def_readwrite("yp", &ProjectedBox3D::yp)
      .def_readwrite("zp", &ProjectedBox3D::zp)
      .def_readwrite("w", &ProjectedBox3D::w)
      .def_readwrite("h", &ProjectedBox3D::h)
      .def_readwrite("l", &ProjectedBox3D::l)
      .def_readwrite("alpha", &ProjectedBox3D::alpha);
  py::class_<BoxPair>(m, "BoxPair")
      .def(py::init<>())
      .def_readwrite("box2d", &BoxPair::box2d)
      .def_readwrite("box3d", &BoxPair::box3d);
  py::class_<BoxDeltas>(m, "BoxDeltas")
      .def(py::init<>())
      .def_readwrite("t2d", &BoxDeltas::t2d)
      .def_readwrite("t3d", &BoxDeltas::t3d);
  m.def("default_anchor_sizes", &default_anchor_sizes);
  m.def("default_anchor_templates", &default_anchor_templates);
  m.def(
      "generate_anchor_grid",
      [](std::size_t h, std::size_t w, double stride, const std::vector<AnchorTemplate>& t) {
        return generate_anchor_grid(h, w, stride, t);
      }, py::arg("height"), py::arg("width"),
        py::arg("stride"), py::arg("templates"));
  m.def(
      "fit_anchor_3d_stats",
      [](const std::vector<AnchorTemplate>& t, const std::vector<BoxPair>& objects,
         double thr) { return fit_anchor_3d_stats(t, objects, thr); },
      py::arg("templates"), py::arg("objects"), py::arg("iou_threshold") = 0.5);
  m.def("encode", &encode, py::arg("anchor"), py::arg("target"));
  m.def("decode", &decode, py::arg("anchor"), py::arg("deltas"));

  // alignment offsets as (H, W, taps, 2) arrays of (dy, dx)
  m.def(
      "shape_align_offsets",
      [](const std::vector<std::pair<double, double>>& best_hw, std::size_t height,
         std::size_t width, double stride, std::size_t k_h, std::size_t k_w) {
        std::vector<AnchorHW> hw;
        for (const auto& [h, w] : best_hw) hw.push_back({h, w});
        return to_array(shape_align_offsets(hw, height, width, stride, k_h, k_w).tensor());
      },
      py::arg("best_hw"), py::arg("height"), py::arg("width"), py::arg("stride"),
      py::arg("k_h") = 3, py::arg("k_w") = 3);
  m.def(
      "center_align_offsets",
      [](const std::vector<std::pair<double, double>>& residuals_xy, std::size_t height,
         std::size_t width, double stride, std::size_t taps) {
        CenterResidualField f{height, width, {}};
        for (const auto& [x, y] : residuals_xy) f.residuals.push_back({x, y});
        return to_array(center_align_offsets(f, stride, taps).tensor());
      },
      py::arg("residuals_xy"), py::arg("height"), py::arg("width"), py::arg("stride"),
      py::arg("taps") = 1);

  // attention
  m.def(
      "anab_forward",
      [](const Array& features, std::uint64_t seed, std::vector<std::size_t> levels) {
        const Tensor x = to_tensor(features);
        AnabParams p = AnabParams::random(x.shape().channels, seed);
        p.pyramid.levels.clear();
        for (std::size_t s : levels) p.pyramid.levels.push_back({s, s});
        return to_array(anab_forward(x, p));
      },
      py::arg("features"), py::arg("seed") = 1,
      py::arg("levels") = std::vector<std::size_t>{1, 4, 8, 16},
      "ANAB block with random 1x1 projections on a (1, C, H, W) array");
  m.def(
      "pyramid_rows",
      [](std::vector<std::size_t> levels) {
        PyramidSpec spec;
        spec.levels.clear();
        for (std::size_t s : levels) spec.levels.push_back({s, s});
        return spec.descriptor_count();
      },
      py::arg("levels"));

  // post-processing
  py::class_<Detection>(m, "Detection")
      .def(py::init<>())
      .def_readwrite("class_id", &Detection::class_id)
      .def_readwrite("score", &Detection::score)
      .def_readwrite("box2d", &Detection::box2d)
      .def_readwrite("box3d", &Detection::box3d);
  m.def(
      "nms",
      [](const std::vector<Detection>& d, double thr) { return nms(d, thr); }, py::arg("detections"), py::arg("iou_threshold") = 0.4);
  m.def(
      "confidence_filter",
      [](const std::vector<Detection>& d, double thr) { return confidence_filter(d, thr); }, py::arg("detections"),
        py::arg("threshold") = 0.75);
  py::class_<RotationResult>(m, "RotationResult")
      .def_readonly("detection", &RotationResult::detection)
      .def_readonly("behind_camera", &RotationResult::behind_camera)
      .def_readonly("iterations", &RotationResult::iterations)
      .def_readonly("objective", &RotationResult::objective);
  m.def(
      "optimize_rotation",
      [](const Detection& d, const CameraIntrinsics& cam) { return optimize_rotation(d, cam); },
      py::arg("detection"), py::arg("camera"));

  // KITTI files and evaluation
  py::class_<LabelRecord>(m, "LabelRecord")
      .def_readonly("type", &LabelRecord::type)
      .def_readonly("truncation", &LabelRecord::truncation)
      .def_readonly("occlusion", &LabelRecord::occlusion)
      .def_readonly("alpha", &LabelRecord::alpha)
      .def_readonly("box2d", &LabelRecord::box2d)
      .def_readonly("height", &LabelRecord::height)
      .def_readonly("width", &LabelRecord::width)
      .def_readonly("length", &LabelRecord::length)
      .def_readonly("x", &LabelRecord::x)
      .def_readonly("y", &LabelRecord::y)
      .def_readonly("z", &LabelRecord::z)
      .def_readonly("rotation_y", &LabelRecord::rotation_y)
      .def_readonly("score", &LabelRecord::score);
  m.def(
      "parse_label_line", [](const std::string& s) { return parse_label_line(s); },
      py::arg("line"));
  m.def("read_label_file", &read_label_file, py::arg("path"));
  m.def(
      "average_precision",
      [](const std::vector<std::pair<double, bool>>& dets, std::size_t n_gt,
         const std::string& mode) {
        std::vector<ScoredMatch> v;
        for (const auto& [s, tp] : dets) v.push_back({s, tp});
        return average_precision(v, n_gt, parse_mode(mode));
      },
      py::arg("detections"), py::arg("n_gt"), py::arg("mode") = "r40",
      "detections: (score, is_true_positive) pairs");
  m.def(
      "evaluate_dirs",
      [](const std::filesystem::path& gt, const std::filesystem::path& det,
         const std::string& task, const std::string& mode) {
        EvalConfig cfg;
        cfg.task = parse_task(task);
        cfg.mode = parse_mode(mode);
        py::dict out;
        for (const ClassResult& r : evaluate(load_frames(gt, det), cfg)) {
          py::list aps;
          for (const auto& ap : r.ap) aps.append(ap ? py::cast(*ap) : py::none());
          out[py::str(r.name)] = aps;
        }
        return out;
      },
      py::arg("gt_dir"), py::arg("det_dir"), py::arg("task") = "3d", py::arg("mode") = "r40",
      "{class: [easy, moderate, hard]} with None where a level has no ground truth");

  // training and checks
  m.def("lr_at", [](std::size_t step, std::size_t warmup, std::size_t total) {
    TrainConfig c;
    c.warmup_steps = warmup;
    c.total_steps = total;
    c.validate();
    return lr_at(step, c);
  }, py::arg("step"), py::arg("warmup_steps"), py::arg("total_steps"));
  m.def(
      "train_toy",
      [](std::size_t scenes, std::size_t steps, std::uint64_t seed) {
        const auto s = make_synthetic_scenes(scenes, seed);
        const ToyRun run = [&] {
          py::gil_scoped_release release;
          return train_toy(s, steps);
        }();
        py::list totals;
        for (const auto& r : run.trace) totals.append(r.total);
        return py::make_tuple(totals, run.final_eval.total);
      },
      py::arg("scenes") = 16, py::arg("steps") = 200, py::arg("seed") = 2024,
      "Returns (per-step total loss, final loss on the first batch)");
  m.def(
      "gradient_suite",
      [](bool include_toy) {
        py::list out;
        for (const GradientCase& c : gradient_suite()) {
          if (!include_toy && c.name == "toy_total_loss") continue;
          const GradCheckReport r = c.run();
          out.append(py::make_tuple(r.name, r.passed, r.max_rel_error));
        }
        return out;
      },
      py::arg("include_toy") = false, "[(name, passed, max_rel_error)]");
}
