#include "mono3d/gradient_suite.hpp"

#include <cmath>
#include <random>

#include "mono3d/anab.hpp"
#include "mono3d/feature_align.hpp"
#include "mono3d/losses.hpp"
#include "mono3d/ops.hpp"
#include "mono3d/toy.hpp"

namespace mono3d {

namespace {

Tensor uniform(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = i;
  return r;
}

GradCheckReport check_anab(AttentionSharing sharing, const GradCheckOptions& o) {
  AnabParams p = AnabParams::random(8, 19);
  p.sharing = sharing;
  const Tensor x = uniform(Shape{1, 8, 6, 10}, 20);
  std::vector<Tensor> in = {x,
                            p.query.weight, p.query.bias, p.key.weight, p.key.bias,
                            p.value.weight, p.value.bias, p.attention.weight,
                            p.attention.bias, p.output.weight, p.output.bias};
  const std::string name =
      sharing == AttentionSharing::kKeyValue ? "anab_forward" : "anab_forward/query-key";
  return grad_check(
      name,
      [p](Tape&, std::span<const Var> v) {
        AnabVars vars{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10]};
        return anab_forward(v[0], vars, p);
      },
      std::move(in), o);
}

GradCheckReport check_iou_loss(const GradCheckOptions& o) {
  // Overlapping pairs kept away from the min/max switch points.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const std::size_t n = 12;
  std::vector<Box2D> gt(n);
  Tensor pred = Tensor::matrix(n, 4);
  for (std::size_t r = 0; r < n; ++r) {
    gt[r] = Box2D::from_center(50 + 5 * u(rng), 40 + 5 * u(rng), 30 + u(rng), 20 + u(rng));
    Box2D p;
    do {
      p = Box2D::from_center(gt[r].center_x() + 2 * u(rng), gt[r].center_y() + 2 * u(rng),
                             30 + 3 * u(rng), 20 + 3 * u(rng));
    } while (iou_2d(p, gt[r]) < 0.1 || std::abs(p.x1 - gt[r].x1) < 1e-3 ||
             std::abs(p.x2 - gt[r].x2) < 1e-3 || std::abs(p.y1 - gt[r].y1) < 1e-3 ||
             std::abs(p.y2 - gt[r].y2) < 1e-3);
    pred(r, 0) = p.x1;
    pred(r, 1) = p.y1;
    pred(r, 2) = p.x2;
    pred(r, 3) = p.y2;
  }
  return grad_check(
      "iou_loss",
      [gt, n](Tape&, std::span<const Var> v) { return iou_loss(v[0], gt, iota_rows(n)); },
      {pred}, o);
}

GradCheckReport check_toy(const GradCheckOptions& o) {
  const auto scenes = make_synthetic_scenes(2, 5);
  ToyConfig cfg;
  cfg.channels = 4;
  const ToyModel model(cfg, fit_toy_templates(scenes, cfg));
  std::vector<SceneTargets> targets;
  for (const Scene& s : scenes) targets.push_back(assign_targets(s, model));
  // Discrete choices are fixed at the unperturbed point.
  std::vector<SceneDecisions> frozen;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& p : model.parameters()) vars.push_back(tape.leaf(p));
    frozen = toy_loss(tape, vars, model, scenes, targets).decisions;
  }
  return grad_check(
      "toy_total_loss",
      [&](Tape& tape, std::span<const Var> v) {
        return toy_loss(tape, v, model, scenes, targets, &frozen).total;
      },
      model.parameters(), o);
}

}  // namespace

std::vector<GradientCase> gradient_suite(GradCheckOptions o) {
  std::vector<GradientCase> cases;
  cases.push_back({"conv2d", [o] {
                     const ConvGeometry g{1, 1};
                     return grad_check(
                         "conv2d",
                         [g](Tape&, std::span<const Var> v) {
                           return conv2d(v[0], v[1], v[2], g);
                         },
                         {uniform(Shape{2, 4, 8, 8}, 21), uniform(Shape{3, 4, 3, 3}, 22),
                          uniform(Shape{1, 3, 1, 1}, 23)},
                         o);
                   }});
  cases.push_back({"bilinear_gather", [o] {
                     Tensor points = Tensor::matrix(
                         5, 2, {0.3, 0.7, 1.25, 2.6, 3.9, 0.1, -0.4, 1.5, 2.2, 4.6});
                     return grad_check(
                         "bilinear_gather",
                         [](Tape&, std::span<const Var> v) {
                           return bilinear_gather(v[0], v[1]);
                         },
                         {uniform(Shape{1, 3, 5, 5}, 31), points}, o);
                   }});
  cases.push_back({"align_conv", [o] {
                     return grad_check(
                         "align_conv",
                         [](Tape&, std::span<const Var> v) {
                           return align_conv(v[0], v[1], v[2], v[3], ConvGeometry{1, 0});
                         },
                         {uniform(Shape{1, 2, 6, 7}, 34), uniform(Shape{3, 2, 3, 3}, 35),
                          uniform(Shape{1, 3, 1, 1}, 36),
                          uniform(Shape{4, 5, 9, 2}, 37, -1.6, 1.6)},
                         o);
                   }});
  cases.push_back({"attention_map", [o] {
                     return grad_check(
                         "attention_map",
                         [](Tape&, std::span<const Var> v) {
                           return attention_map(v[0], v[1], v[2]);
                         },
                         {uniform(Shape{1, 4, 3, 5}, 2), uniform(Shape{1, 4, 1, 1}, 3),
                          uniform(Shape{1, 1, 1, 1}, 4)},
                         o);
                   }});
  cases.push_back({"pa2_pool", [o] {
                     return grad_check(
                         "pa2_pool",
                         [](Tape&, std::span<const Var> v) {
                           return pa2_pool(v[0], v[1], PyramidSpec::squares({1, 2, 4}));
                         },
                         {uniform(Shape{1, 3, 6, 10}, 11),
                          uniform(Shape{1, 1, 6, 10}, 12, 0.1, 0.9)},
                         o);
                   }});
  cases.push_back({"anab_forward", [o] { return check_anab(AttentionSharing::kKeyValue, o); }});
  cases.push_back({"anab_forward/query-key",
                   [o] { return check_anab(AttentionSharing::kQueryKey, o); }});
  cases.push_back({"cross_entropy", [o] {
                     const std::vector<std::size_t> labels = {0, 1, 2, 1, 0, 2};
                     const std::vector<std::size_t> rows = {0, 2, 3, 5};
                     return grad_check(
                         "cross_entropy",
                         [labels, rows](Tape&, std::span<const Var> v) {
                           return cross_entropy(v[0], labels, rows);
                         },
                         {uniform(Shape{1, 1, 6, 3}, 8, -2.0, 2.0)}, o);
                   }});
  cases.push_back({"iou_loss", [o] { return check_iou_loss(o); }});
  cases.push_back({"smooth_l1_loss", [o] {
                     const Tensor target = uniform(Shape{1, 1, 5, 7}, 40, -3.0, 3.0);
                     Tensor pred = target;
                     // residuals of 0.4 and 1.7 stay clear of the kink at 1
                     for (std::size_t i = 0; i < pred.size(); ++i)
                       pred[i] += (i % 3 == 0 ? 0.4 : -1.7);
                     return grad_check(
                         "smooth_l1_loss",
                         [target](Tape&, std::span<const Var> v) {
                           return smooth_l1_loss(v[0], target, iota_rows(5));
                         },
                         {pred}, o);
                   }});
  cases.push_back({"decode_boxes_2d", [o] {
                     std::vector<Anchor> anchors(3);
                     for (std::size_t i = 0; i < 3; ++i) {
                       anchors[i].x = 10.0 * static_cast<double>(i);
                       anchors[i].y = 5.0;
                       anchors[i].w = 12.0 + static_cast<double>(i);
                       anchors[i].h = 9.0;
                     }
                     return grad_check(
                         "decode_boxes_2d",
                         [anchors](Tape&, std::span<const Var> v) {
                           return decode_boxes_2d(v[0], anchors);
                         },
                         {uniform(Shape{1, 1, 3, 4}, 41, -0.5, 0.5)}, o);
                   }});
  cases.push_back({"toy_total_loss", [o] { return check_toy(o); }});
  return cases;
}

std::vector<GradCheckReport> run_gradient_suite(GradCheckOptions options) {
  std::vector<GradCheckReport> reports;
  for (const GradientCase& c : gradient_suite(options)) reports.push_back(c.run());
  return reports;
}

}  // namespace mono3d
