#include "mono3d/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mono3d/ops.hpp"

namespace mono3d {

namespace {

enum Param : std::size_t {
  kConv1W, kConv1B, kConv2W, kConv2B, kConv3W, kConv3B,
  kClsW, kClsB,
  kShapeW, kShapeB,
  kBox2dW, kBox2dB,
  kCenterW, kCenterB,
  kAlignW, kAlignB,
  kBox3dW, kBox3dB,
  kQueryW, kQueryB, kKeyW, kKeyB, kValueW, kValueB, kAttnW, kAttnB, kOutW, kOutB,
  kDepthW, kDepthB,
  kParamCount
};

constexpr ConvGeometry kDown{2, 1};
constexpr ConvGeometry kSame3{1, 1};
constexpr ConvGeometry kPoint{1, 0};

Tensor uniform_weight(std::size_t out, std::size_t in, std::size_t k, double bound,
                      std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w(Shape{out, in, k, k});
  for (double& v : w.values()) v = u(rng);
  return w;
}

Tensor zero_bias(std::size_t out) { return Tensor(Shape{1, out, 1, 1}); }

// Lowest index wins ties.
std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

void paint(Tensor& img, const Box2D& b, std::size_t c, double value) {
  const auto& s = img.shape();
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2) img.at(0, c, y, x) = value;
    }
}

}  // namespace

std::vector<Scene> make_synthetic_scenes(std::size_t count, std::uint64_t seed,
                                         const SceneConfig& cfg) {
  if (cfg.min_objects == 0 || cfg.max_objects < cfg.min_objects)
    throw std::invalid_argument("scene object counts are inconsistent");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-3.0, 3.0), uz(5.0, 14.0), udim(1.2, 2.0),
      ulen(1.2, 2.4), uang(-std::numbers::pi, std::numbers::pi);
  std::uniform_int_distribution<std::size_t> ucount(cfg.min_objects, cfg.max_objects);
  std::normal_distribution<double> noise(0.0, cfg.noise);
  const double w = static_cast<double>(cfg.width), h = static_cast<double>(cfg.height);

  std::vector<Scene> scenes;
  scenes.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Scene scene;
    scene.camera = CameraIntrinsics::pinhole(cfg.focal, cfg.cx, cfg.cy);
    const std::size_t want = ucount(rng);
    for (int attempt = 0; scene.objects.size() < want && attempt < 200; ++attempt) {
      Box3D b;
      b.x = ux(rng);
      b.y = 1.2;
      b.z = uz(rng);
      b.w = udim(rng);
      b.h = udim(rng);
      b.l = ulen(rng);
      b.yaw = uang(rng);
      b.alpha = yaw_to_alpha(b.yaw, b.x, b.z);
      const Box2D env = project_box(b, scene.camera);
      if (env.x1 < 0.0 || env.y1 < 0.0 || env.x2 > w || env.y2 > h) continue;
      // Keep objects mostly unoccluded.
      bool crowded = false;
      for (const auto& o : scene.objects) crowded |= iou_2d(o.box2d, env) > 0.3;
      if (crowded) continue;
      scene.objects.push_back({b, env});
    }
    // Far to near so nearer objects paint over.
    std::vector<SceneObject> order = scene.objects;
    std::stable_sort(order.begin(), order.end(),
                     [](const auto& a, const auto& b) { return a.box.z > b.box.z; });
    scene.image = Tensor(Shape{1, 3, cfg.height, cfg.width});
    for (const auto& o : order) {
      paint(scene.image, o.box2d, 0, 1.0);
      paint(scene.image, o.box2d, 1, (o.box.z - 5.0) / 10.0);
      paint(scene.image, o.box2d, 2, 0.5 * std::cos(o.box.alpha));
      const Projection c = project(scene.camera, o.box.geometric_center());
      paint(scene.image, Box2D::from_center(c.x, c.y, 3.0, 3.0), 0, 2.0);
    }
    for (double& v : scene.image.values()) v += noise(rng);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

ToyModel::ToyModel(ToyConfig config, std::vector<AnchorTemplate> templates)
    : config_(std::move(config)), templates_(std::move(templates)) {
  config_.loss.validate();
  config_.pyramid.validate();
  if (config_.channels < 2 || templates_.empty())
    throw std::invalid_argument("toy model needs >= 2 channels and some anchors");
  const std::size_t c = config_.channels, half = c / 2, a = templates_.size();
  std::mt19937_64 rng(config_.seed);
  auto he = [](std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); };
  auto head = [](std::size_t fan_in) { return 0.03 / std::sqrt(static_cast<double>(fan_in)); };
  params_.resize(kParamCount);
  params_[kConv1W] = uniform_weight(half, 3, 3, he(27), rng);
  params_[kConv1B] = zero_bias(half);
  params_[kConv2W] = uniform_weight(c, half, 3, he(9 * half), rng);
  params_[kConv2B] = zero_bias(c);
  params_[kConv3W] = uniform_weight(c, c, 3, he(9 * c), rng);
  params_[kConv3B] = zero_bias(c);
  params_[kClsW] = uniform_weight(2 * a, c, 1, head(c), rng);
  params_[kClsB] = zero_bias(2 * a);
  params_[kShapeW] = uniform_weight(c, c, 3, he(9 * c), rng);
  params_[kShapeB] = zero_bias(c);
  params_[kBox2dW] = uniform_weight(4 * a, c, 1, head(c), rng);
  params_[kBox2dB] = zero_bias(4 * a);
  params_[kCenterW] = uniform_weight(2 * a, c, 1, head(c), rng);
  params_[kCenterB] = zero_bias(2 * a);
  params_[kAlignW] = uniform_weight(c, c, 1, he(c), rng);
  params_[kAlignB] = zero_bias(c);
  params_[kBox3dW] = uniform_weight(4 * a, c, 1, head(c), rng);
  params_[kBox3dB] = zero_bias(4 * a);
  const double proj = std::sqrt(3.0 / static_cast<double>(c));
  params_[kQueryW] = uniform_weight(c, c, 1, proj, rng);
  params_[kQueryB] = zero_bias(c);
  params_[kKeyW] = uniform_weight(c, c, 1, proj, rng);
  params_[kKeyB] = zero_bias(c);
  params_[kValueW] = uniform_weight(c, c, 1, proj, rng);
  params_[kValueB] = zero_bias(c);
  params_[kAttnW] = uniform_weight(1, c, 1, proj, rng);
  params_[kAttnB] = zero_bias(1);
  params_[kOutW] = uniform_weight(c, c, 1, 0.1 * proj, rng);
  params_[kOutB] = zero_bias(c);
  params_[kDepthW] = uniform_weight(a, c, 1, head(c), rng);
  params_[kDepthB] = zero_bias(a);

  anab_.query = {params_[kQueryW], params_[kQueryB], kPoint};
  anab_.key = {params_[kKeyW], params_[kKeyB], kPoint};
  anab_.value = {params_[kValueW], params_[kValueB], kPoint};
  anab_.attention = {params_[kAttnW], params_[kAttnB], kPoint};
  anab_.output = {params_[kOutW], params_[kOutB], kPoint};
  anab_.pyramid = config_.pyramid;
  anab_.sharing = config_.sharing;
  anab_.validate();
}

const std::vector<std::string>& ToyModel::parameter_names() {
  static const std::vector<std::string> names = {
      "conv1.w", "conv1.b", "conv2.w", "conv2.b", "conv3.w", "conv3.b",
      "cls.w", "cls.b", "shape_align.w", "shape_align.b", "box2d.w", "box2d.b",
      "center3d.w", "center3d.b", "center_align.w", "center_align.b",
      "box3d.w", "box3d.b", "anab.query.w", "anab.query.b", "anab.key.w",
      "anab.key.b", "anab.value.w", "anab.value.b", "anab.attention.w",
      "anab.attention.b", "anab.output.w", "anab.output.b", "depth.w", "depth.b"};
  return names;
}

std::vector<AnchorTemplate> fit_toy_templates(std::span<const Scene> scenes,
                                              const ToyConfig& config) {
  std::vector<BoxPair> objects;
  for (const Scene& s : scenes)
    for (const SceneObject& o : s.objects)
      objects.push_back(make_target(o.box2d, o.box, s.camera));
  const auto templates = make_anchor_templates(config.anchor_sizes, config.aspect_ratios);
  return fit_anchor_3d_stats(templates, objects);
}

std::pair<std::size_t, std::size_t> toy_grid(const Shape& image) {
  const auto [h1, w1] = conv_output_hw(image, 3, 3, kDown);
  const auto [h2, w2] = conv_output_hw(Shape{1, 1, h1, w1}, 3, 3, kDown);
  return conv_output_hw(Shape{1, 1, h2, w2}, 3, 3, kDown);
}

SceneTargets assign_targets(const Scene& scene, const ToyModel& model) {
  const LossConfig& lc = model.config().loss;
  const auto [h3, w3] = toy_grid(scene.image.shape());
  SceneTargets t;
  t.grid_h = h3;
  t.grid_w = w3;
  t.anchors = generate_anchor_grid(h3, w3, kToyStride, model.templates());
  const std::size_t rows = t.anchors.size();
  t.labels.assign(rows, 0);
  t.positive.assign(rows, false);
  t.ignored.assign(rows, false);
  t.box2d.assign(rows, Box2D{});
  t.deltas3d = Tensor::matrix(rows, 7);
  std::vector<BoxPair> gts;
  for (const SceneObject& o : scene.objects)
    gts.push_back(make_target(o.box2d, o.box, scene.camera));
  for (std::size_t r = 0; r < rows; ++r) {
    const Anchor& a = t.anchors[r];
    const Box2D ab = Box2D::from_center(a.x, a.y, a.w, a.h);
    double best = 0.0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double iou = iou_2d(ab, gts[g].box2d);
      if (iou > best) {
        best = iou;
        best_gt = g;
      }
    }
    if (best >= lc.positive_iou) {
      t.labels[r] = 1;
      t.positive[r] = true;
      t.positives.push_back(r);
      t.box2d[r] = gts[best_gt].box2d;
      const BoxDeltas d = encode(a, gts[best_gt]);
      for (std::size_t k = 0; k < 7; ++k) t.deltas3d(r, k) = d.t3d[k];
    } else if (best >= lc.negative_iou) {
      t.ignored[r] = true;
    }
  }
  return t;
}

SceneHeads toy_heads(Tape& tape, std::span<const Var> p, const ToyModel& model,
                     const Scene& scene, const SceneDecisions* frozen) {
  if (p.size() != kParamCount) throw std::invalid_argument("toy_heads: wrong parameter count");
  const std::size_t a = model.anchors_per_position();
  const auto& templates = model.templates();

  Var x = tape.constant(scene.image);
  Var f = relu(conv2d(x, p[kConv1W], p[kConv1B], kDown));
  f = relu(conv2d(f, p[kConv2W], p[kConv2B], kDown));
  f = relu(conv2d(f, p[kConv3W], p[kConv3B], kDown));
  const std::size_t gh = f.shape().height, gw = f.shape().width, positions = gh * gw;

  SceneHeads out;
  out.logits = channels_to_rows(conv2d(f, p[kClsW], p[kClsB], kPoint), 2);

  SceneDecisions& dec = out.decisions;
  if (frozen) {
    dec.best_anchor = frozen->best_anchor;
  } else {
    // Highest object probability per position.
    const Tensor& logits = out.logits.value();
    dec.best_anchor.resize(positions);
    std::vector<double> fg(a);
    for (std::size_t pos = 0; pos < positions; ++pos) {
      for (std::size_t k = 0; k < a; ++k) {
        const std::size_t r = pos * a + k;
        fg[k] = 1.0 / (1.0 + std::exp(logits(r, 0) - logits(r, 1)));
      }
      dec.best_anchor[pos] = argmax(fg);
    }
  }
  std::vector<AnchorHW> best_hw(positions);
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const AnchorTemplate& t = templates[dec.best_anchor[pos]];
    best_hw[pos] = {t.h, t.w};
  }
  const OffsetField shape_off = shape_align_offsets(best_hw, gh, gw, kToyStride, 3, 3);
  Var f2 = relu(align_conv(f, p[kShapeW], p[kShapeB], tape.constant(shape_off.tensor()),
                           kSame3));

  out.box2d = channels_to_rows(conv2d(f2, p[kBox2dW], p[kBox2dB], kPoint), 4);
  Var center = channels_to_rows(conv2d(f2, p[kCenterW], p[kCenterB], kPoint), 2);

  if (frozen) {
    dec.center_offsets = frozen->center_offsets;
  } else {
    // Projected-center residual of the best anchor, detached.
    CenterResidualField field{gh, gw, std::vector<PixelResidual>(positions)};
    const Tensor& c = center.value();
    for (std::size_t pos = 0; pos < positions; ++pos) {
      const std::size_t r = pos * a + dec.best_anchor[pos];
      const AnchorTemplate& t = templates[dec.best_anchor[pos]];
      field.residuals[pos] = {c(r, 0) * t.w, c(r, 1) * t.h};
    }
    dec.center_offsets = center_align_offsets(field, kToyStride, 1);
  }
  Var f3 = relu(align_conv(f2, p[kAlignW], p[kAlignB],
                           tape.constant(dec.center_offsets.tensor()), kPoint));

  Var dims = channels_to_rows(conv2d(f3, p[kBox3dW], p[kBox3dB], kPoint), 4);
  const AnabVars anab{p[kQueryW], p[kQueryB], p[kKeyW],  p[kKeyB], p[kValueW],
                      p[kValueB], p[kAttnW],  p[kAttnB], p[kOutW], p[kOutB]};
  AttentionTensors trace;
  Var g = anab_forward(f3, anab, model.anab_template(), &trace);
  out.attention = trace.attention_map.value();
  Var depth = channels_to_rows(conv2d(g, p[kDepthW], p[kDepthB], kPoint), 1);
  const Var parts[] = {center, depth, dims};
  out.box3d = concat_cols(parts);
  return out;
}

ToyLoss toy_loss(Tape& tape, std::span<const Var> params, const ToyModel& model,
                 std::span<const Scene> scenes, std::span<const SceneTargets> targets,
                 const std::vector<SceneDecisions>* frozen) {
  if (scenes.empty() || targets.size() != scenes.size())
    throw std::invalid_argument("toy_loss: need one target set per scene");
  if (frozen && frozen->size() != scenes.size())
    throw std::invalid_argument("toy_loss: frozen decisions do not match scenes");
  const LossConfig& lc = model.config().loss;
  const double inv = 1.0 / static_cast<double>(scenes.size());
  ToyLoss out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const SceneTargets& t = targets[s];
    SceneHeads heads =
        toy_heads(tape, params, model, scenes[s], frozen ? &(*frozen)[s] : nullptr);
    if (heads.logits.value().rows() != t.anchors.size())
      throw ShapeError("toy_loss: targets were built for a different grid");

    if (frozen) {
      heads.decisions.mined = (*frozen)[s].mined;
    } else {
      // Mine among non-ignored rows, then map back.
      const std::vector<double> ce = cross_entropy_rows(heads.logits.value(), t.labels);
      std::vector<std::size_t> rows;
      std::vector<double> losses;
      std::vector<bool> pos;
      for (std::size_t r = 0; r < ce.size(); ++r) {
        if (t.ignored[r]) continue;
        rows.push_back(r);
        losses.push_back(ce[r]);
        pos.push_back(t.positive[r]);
      }
      for (std::size_t i : mine_hard(losses, lc.hard_negative_fraction, pos))
        heads.decisions.mined.push_back(rows[i]);
    }

    Var cls = cross_entropy(heads.logits, t.labels, heads.decisions.mined);
    Var l2d = iou_loss(decode_boxes_2d(heads.box2d, t.anchors), t.box2d, t.positives,
                       lc.iou_epsilon);
    Var l3d = smooth_l1_loss(heads.box3d, t.deltas3d, t.positives);
    Var scene_total = scale(total_loss(cls, l2d, l3d, lc), inv);
    out.total = out.total.valid() ? add(out.total, scene_total) : scene_total;
    out.cls += inv * cls.value()[0];
    out.loss_2d += inv * l2d.value()[0];
    out.loss_3d += inv * l3d.value()[0];
    out.decisions.push_back(std::move(heads.decisions));
  }
  return out;
}

ToyRun train_toy(std::span<const Scene> scenes, std::size_t steps,
                 const ToyConfig& config) {
  if (scenes.empty()) throw std::invalid_argument("train_toy: no scenes");
  ToyModel model(config, fit_toy_templates(scenes, config));
  std::vector<SceneTargets> targets;
  for (const Scene& s : scenes) targets.push_back(assign_targets(s, model));

  TrainConfig tc;
  tc.batch = config.batch;
  tc.lr_target = config.lr_target;
  tc.warmup_steps = (scenes.size() + tc.batch - 1) / tc.batch;
  tc.total_steps = steps;
  tc.validate();

  std::vector<Tensor>& params = model.parameters();
  std::vector<Tensor> velocity;
  for (const Tensor& p : params) velocity.emplace_back(p.shape());

  auto run_batch = [&](std::size_t step, Tape& tape, std::vector<Var>& vars) {
    std::vector<Scene> batch_scenes;
    std::vector<SceneTargets> batch_targets;
    for (std::size_t i = 0; i < tc.batch; ++i) {
      const std::size_t k = (step * tc.batch + i) % scenes.size();
      batch_scenes.push_back(scenes[k]);
      batch_targets.push_back(targets[k]);
    }
    for (const Tensor& p : params) vars.push_back(tape.leaf(p));
    return toy_loss(tape, vars, model, batch_scenes, batch_targets);
  };

  std::vector<TrainRecord> trace;
  for (std::size_t step = 0; step < steps; ++step) {
    Tape tape;
    std::vector<Var> vars;
    const ToyLoss loss = run_batch(step, tape, vars);
    tape.backward(loss.total);
    std::vector<Tensor> grads;
    for (const Var& v : vars) grads.push_back(tape.grad_tensor(v));
    const double lr = lr_at(step, tc);
    trace.push_back({step, lr, loss.cls, loss.loss_2d, loss.loss_3d, loss.total.value()[0]});
    sgd_step(params, grads, velocity, lr, tc);
  }
  Tape tape;
  std::vector<Var> vars;
  const ToyLoss last = run_batch(0, tape, vars);
  TrainRecord final_eval{steps, 0.0, last.cls, last.loss_2d, last.loss_3d,
                         last.total.value()[0]};
  return {std::move(model), std::move(trace), final_eval};
}

ToyPrediction toy_predict(const ToyModel& model, const Scene& scene) {
  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& p : model.parameters()) vars.push_back(tape.constant(p));
  const SceneHeads heads = toy_heads(tape, vars, model, scene);
  const auto [gh, gw] = toy_grid(scene.image.shape());
  const auto anchors = generate_anchor_grid(gh, gw, kToyStride, model.templates());
  const Tensor& logits = heads.logits.value();
  const Tensor& d2 = heads.box2d.value();
  const Tensor& d3 = heads.box3d.value();
  ToyPrediction out;
  out.attention = heads.attention;
  for (std::size_t r = 0; r < anchors.size(); ++r) {
    out.scores.push_back(1.0 / (1.0 + std::exp(logits(r, 0) - logits(r, 1))));
    BoxDeltas d;
    for (std::size_t k = 0; k < 4; ++k) d.t2d[k] = d2(r, k);
    for (std::size_t k = 0; k < 7; ++k) d.t3d[k] = d3(r, k);
    out.boxes.push_back(decode(anchors[r], d));
  }
  return out;
}

}  // namespace mono3d
