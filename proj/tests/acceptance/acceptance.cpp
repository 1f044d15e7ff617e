// One line per acceptance criterion: PASS or FAIL, a short name, the
// measured numbers. Exit status is nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "eval_oracle.hpp"
#include "geometry_oracle.hpp"
#include "mono3d/anab.hpp"
#include "mono3d/anchor_codec.hpp"
#include "mono3d/eval.hpp"
#include "mono3d/feature_align.hpp"
#include "mono3d/geometry.hpp"
#include "mono3d/gradient_suite.hpp"
#include "mono3d/postproc.hpp"
#include "mono3d/toy.hpp"
#include "mono3d/train.hpp"
#include "nonlocal_oracle.hpp"

using namespace mono3d;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes, fixed before any run.
constexpr double kGradTolerance = 1e-4;
constexpr double kGradStep = 1e-5;
constexpr double kGradSeconds = 60.0;
constexpr int kAlignCases = 200;
constexpr double kAlignTolerance = 1e-12;
constexpr int kAnabInputs = 20;
constexpr double kAnabTolerance = 1e-6;
constexpr double kAnabRatioLo = 3.0, kAnabRatioHi = 6.0;
constexpr double kNonlocalRatioLo = 10.0, kNonlocalRatioHi = 24.0;
constexpr std::size_t kClaimedRows = 377;
constexpr int kCodecCases = 10'000;
constexpr double kCodecTolerance = 1e-9;
constexpr int kBevPairs = 100;
constexpr int kMonteCarloGrid = 1000;  // 10^6 samples per pair
constexpr double kBevTolerance = 2e-3;
constexpr double kSquareTolerance = 1e-3;
constexpr double kProjectionTolerance = 1e-9;
constexpr int kRotationScenes = 50;
constexpr double kRotationTolerance = std::numbers::pi / 180.0;
constexpr double kRotationStart = 0.2;
constexpr std::size_t kToySteps = 200;
constexpr double kToyRatio = 0.5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const char* name, const Outcome& o) {
  std::printf("%s  %-22s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

std::string format(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

// ---------------------------------------------------------------------------

Outcome gradient_suite_check() {
  const auto start = std::chrono::steady_clock::now();
  const auto reports = run_gradient_suite({.step = kGradStep, .tolerance = kGradTolerance});
  const double secs = seconds_since(start);
  bool ok = secs < kGradSeconds;
  double worst = 0.0;
  std::string failed;
  for (const auto& r : reports) {
    ok &= r.passed;
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.name;
  }
  return {ok, format("%zu ops, max rel err %.2e (< %.0e), %.1f s (< %.0f s)%s%s", reports.size(),
                     worst, kGradTolerance, secs, kGradSeconds, failed.empty() ? "" : "; failed:",
                     failed.c_str())};
}

Outcome alignment_check() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> kernel(1, 5), extent(1, 4);
  std::uniform_real_distribution<double> size(4.0, 400.0), residual(-64.0, 64.0);
  const double strides[] = {4.0, 8.0, 16.0, 32.0};
  // Independent one-line evaluators of the offset formulas.
  auto shape_offset = [](double a, double s, double k, double i) {
    return (a / (s * k) - 1.0) * (i - k / 2.0 + 0.5);
  };
  double worst = 0.0;
  std::size_t values = 0;
  for (int c = 0; c < kAlignCases; ++c) {
    const std::size_t kh = kernel(rng), kw = kernel(rng), h = extent(rng), w = extent(rng);
    const double stride = strides[rng() % 4];
    std::vector<AnchorHW> best(h * w);
    for (auto& a : best) a = {size(rng), size(rng)};
    const OffsetField sf = shape_align_offsets(best, h, w, stride, kh, kw);
    CenterResidualField field{h, w, std::vector<PixelResidual>(h * w)};
    for (auto& r : field.residuals) r = {residual(rng), residual(rng)};
    const std::size_t taps = kh * kw;
    const OffsetField cf = center_align_offsets(field, stride, taps);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const AnchorHW& a = best[y * w + x];
        const PixelResidual& r = field.residuals[y * w + x];
        for (std::size_t i = 0; i < kh; ++i)
          for (std::size_t j = 0; j < kw; ++j) {
            const std::size_t t = i * kw + j;
            worst = std::max(worst, std::abs(sf.dy(y, x, t) -
                                             shape_offset(a.h, stride, double(kh), double(i))));
            worst = std::max(worst, std::abs(sf.dx(y, x, t) -
                                             shape_offset(a.w, stride, double(kw), double(j))));
            worst = std::max(worst, std::abs(cf.dy(y, x, t) - r.y / stride));
            worst = std::max(worst, std::abs(cf.dx(y, x, t) - r.x / stride));
            values += 4;
          }
      }
  }
  // Zero offsets: AlignConv against conv2d, bit for bit.
  bool identical = true;
  std::size_t compared = 0;
  for (ConvGeometry g : {ConvGeometry{1, 0}, ConvGeometry{1, 1}, ConvGeometry{2, 1}})
    for (std::size_t k : {1u, 3u, 5u}) {
      const Tensor x = uniform(Shape{2, 4, 11, 13}, rng);
      ConvSpec spec = ConvSpec::zeros(4, 3, k, k, g);
      spec.weight = uniform(spec.weight.shape(), rng);
      spec.bias = uniform(spec.bias.shape(), rng);
      const Tensor ref = conv2d(x, spec);
      const Tensor out = align_conv(
          x, spec, OffsetField(ref.shape().height, ref.shape().width, k * k));
      identical &= out.shape() == ref.shape();
      for (std::size_t i = 0; identical && i < ref.size(); ++i) identical &= out[i] == ref[i];
      compared += ref.size();
    }
  return {worst <= kAlignTolerance && identical,
          format("%d cases / %zu offsets, max abs err %.1e (<= %.0e); zero-offset AlignConv "
                 "%s conv2d on %zu outputs",
                 kAlignCases, values, worst, kAlignTolerance,
                 identical ? "bit-identical to" : "DIFFERS from", compared)};
}

Outcome anab_oracle_check() {
  double worst = 0.0;
  for (int i = 0; i < kAnabInputs; ++i) {
    std::mt19937_64 rng(500 + i);
    const Tensor x = uniform(Shape{1, 8, 6, 10}, rng);
    AnabParams p = AnabParams::random(8, 900 + i);
    p.attention = ConvSpec::zeros(8, 1, 1, 1);  // sigmoid(0): constant 0.5
    p.pyramid.levels = {{6, 10}};               // one bin per pixel
    p.pyramid.epsilon = 0.0;
    const Tensor out = anab_forward(x, p);
    const Tensor ref = mono3d::testing::naive_nonlocal(x, p.query, p.key, p.value, p.output);
    for (std::size_t k = 0; k < out.size(); ++k) worst = std::max(worst, std::abs(out[k] - ref[k]));
  }
  return {worst <= kAnabTolerance,
          format("%d random 1x8x6x10 inputs, max abs diff %.2e (<= %.0e)", kAnabInputs, worst,
                 kAnabTolerance)};
}

Outcome complexity_check() {
  const PyramidSpec spec = PyramidSpec::squares({1, 4, 8, 16});
  const ComplexityResult small = complexity_bench(24, 80, 16, spec, 5);
  const ComplexityResult large = complexity_bench(48, 160, 16, spec, 5);
  const double anab = large.anab_seconds / small.anab_seconds;
  const double nonlocal = large.nonlocal_seconds / small.nonlocal_seconds;
  const bool anab_ok = anab >= kAnabRatioLo && anab <= kAnabRatioHi;
  const bool nl_ok = nonlocal >= kNonlocalRatioLo && nonlocal <= kNonlocalRatioHi;
  const std::size_t rows = spec.descriptor_count();
  const bool rows_ok = rows == kClaimedRows;
  return {anab_ok && nl_ok && rows_ok,
          format("N %zu->%zu at L=%zu: ANAB x%.2f [%s in %.0f..%.0f], non-local x%.2f [%s in "
                 "%.0f..%.0f]; rows for levels {1,4,8,16} = %zu [%s claimed %zu]",
                 small.n, large.n, small.l, anab, anab_ok ? "ok" : "out", kAnabRatioLo,
                 kAnabRatioHi, nonlocal, nl_ok ? "ok" : "out", kNonlocalRatioLo,
                 kNonlocalRatioHi, rows, rows_ok ? "matches" : "differs from", kClaimedRows)};
}

Outcome codec_check() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> pos(-200.0, 1400.0), size(8.0, 400.0), depth(2.0, 80.0),
      dim(0.3, 6.0), ang(-std::numbers::pi, std::numbers::pi);
  double worst = 0.0;
  for (int i = 0; i < kCodecCases; ++i) {
    Anchor a;
    a.x = pos(rng);
    a.y = pos(rng);
    a.w = size(rng);
    a.h = size(rng);
    a.stats = {depth(rng), dim(rng), dim(rng), dim(rng), ang(rng)};
    BoxPair t;
    t.box2d = Box2D::from_center(pos(rng), pos(rng), size(rng), size(rng));
    t.box3d = {pos(rng), pos(rng), depth(rng), dim(rng), dim(rng), dim(rng), ang(rng)};
    const BoxPair back = decode(a, encode(a, t));
    const double diffs[] = {back.box2d.x1 - t.box2d.x1, back.box2d.y1 - t.box2d.y1,
                            back.box2d.x2 - t.box2d.x2, back.box2d.y2 - t.box2d.y2,
                            back.box3d.xp - t.box3d.xp, back.box3d.yp - t.box3d.yp,
                            back.box3d.zp - t.box3d.zp, back.box3d.w - t.box3d.w,
                            back.box3d.h - t.box3d.h,   back.box3d.l - t.box3d.l,
                            wrap_angle(back.box3d.alpha - t.box3d.alpha)};
    for (double d : diffs) worst = std::max(worst, std::abs(d));
  }
  const auto templates = default_anchor_templates();
  const auto grid = generate_anchor_grid(3, 5, 16.0, templates);
  bool layout = templates.size() == 36 && grid.size() == 3 * 5 * 36;
  for (std::size_t k = 0; layout && k < grid.size(); ++k)
    layout &= grid[k].template_index == k % 36;
  const auto sizes = default_anchor_sizes();
  const bool ends = sizes.front() == 24.0 && sizes.back() == 288.0;
  return {worst <= kCodecTolerance && layout && ends,
          format("%d random anchor/box pairs, max round-trip err %.1e (<= %.0e); %zu anchors "
                 "per position; sizes %.17g .. %.17g",
                 kCodecCases, worst, kCodecTolerance, templates.size(), sizes.front(),
                 sizes.back())};
}

Outcome geometry_check() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  for (int i = 0; i < kBevPairs; ++i) {
    const Box3D a = mono3d::testing::random_box(rng);
    const Box3D b = mono3d::testing::random_box(rng);
    worst = std::max(worst, std::abs(iou_bev(a, b) - mono3d::testing::monte_carlo_bev_iou(
                                                         a, b, 7000 + i, kMonteCarloGrid)));
  }
  Box3D sq{0.0, 1.0, 10.0, 1.0, 1.0, 1.0, 0.0, 0.0};
  Box3D turned = sq;
  turned.yaw = std::numbers::pi / 4;
  const double square = iou_bev(sq, turned);
  const double square_mc = mono3d::testing::monte_carlo_bev_iou(sq, turned, 1, kMonteCarloGrid);
  const double expected = std::sqrt(0.5);
  CameraIntrinsics cam;
  cam.k = {{{721.5377, 0.0, 609.5593, 44.85728},
            {0.0, 721.5377, 172.854, 0.2163791},
            {0.0, 0.0, 1.0, 0.002745884}}};
  std::uniform_real_distribution<double> x(-30.0, 30.0), y(-3.0, 3.0), z(1.0, 80.0);
  double round_trip = 0.0;
  for (int i = 0; i < 10'000; ++i) {
    const Point3 p{x(rng), y(rng), z(rng)};
    const Point3 q = backproject(cam, project(cam, p));
    round_trip = std::max({round_trip, std::abs(q.x - p.x), std::abs(q.y - p.y),
                           std::abs(q.z - p.z)});
  }
  const bool ok = worst <= kBevTolerance && std::abs(square - expected) <= kSquareTolerance &&
                  std::abs(square_mc - expected) <= kSquareTolerance &&
                  round_trip <= kProjectionTolerance;
  return {ok, format("BEV IoU vs 10^6-sample Monte-Carlo on %d pairs: max diff %.1e (<= %.0e); "
                     "45-degree square %.6f (MC %.6f, expect %.6f); projection round trip "
                     "%.1e (<= %.0e)",
                     kBevPairs, worst, kBevTolerance, square, square_mc, expected, round_trip,
                     kProjectionTolerance)};
}

Outcome evaluation_check(const fs::path& fixtures) {
  using mono3d::testing::brute_force_ap;
  std::size_t compared = 0, mismatched = 0, largest = 0;
  auto compare = [&](const std::vector<ScoredMatch>& dets, std::size_t n_gt) {
    for (RecallMode mode : {RecallMode::kR11, RecallMode::kR40}) {
      ++compared;
      mismatched += average_precision(dets, n_gt, mode) != brute_force_ap(dets, n_gt, mode);
    }
    largest = std::max(largest, dets.size());
  };
  // Fixture corpus, every class, level and task.
  const auto frames = load_frames(fixtures / "gt", fixtures / "det");
  for (EvalTask task : {EvalTask::k2D, EvalTask::kBEV, EvalTask::k3D}) {
    EvalConfig cfg;
    cfg.task = task;
    for (int cls = 0; cls < 3; ++cls)
      for (Difficulty d : {Difficulty::kEasy, Difficulty::kModerate, Difficulty::kHard}) {
        const LevelMatches lm = gather_matches(frames, cls, d, cfg);
        if (lm.n_gt > 0) compare(lm.dets, lm.n_gt);
      }
  }
  // Hand-built curve and a random battery with tied scores.
  compare({{0.95, true}, {0.9, false}, {0.8, true}, {0.7, false}, {0.6, true}}, 4);
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> count(0, 10), extra(0, 4);
  std::uniform_int_distribution<int> score(0, 5);
  std::bernoulli_distribution tp(0.5);
  for (int trial = 0; trial < 5000; ++trial) {
    std::vector<ScoredMatch> dets(count(rng));
    std::size_t tps = 0;
    for (auto& m : dets) {
      m = {score(rng) / 5.0, tp(rng)};
      tps += m.true_positive;
    }
    compare(dets, std::max<std::size_t>(1, tps + extra(rng)));
  }
  // Perfect and empty detectors over the fixture ground truth.
  bool perfect = true, empty = true;
  const fs::path none = fs::temp_directory_path() / "mono3d_acceptance_empty";
  fs::create_directories(none);
  const auto same = load_frames(fixtures / "gt", fixtures / "gt");
  const auto blank = load_frames(fixtures / "gt", none);
  for (EvalTask task : {EvalTask::k2D, EvalTask::kBEV, EvalTask::k3D})
    for (RecallMode mode : {RecallMode::kR11, RecallMode::kR40}) {
      EvalConfig cfg;
      cfg.task = task;
      cfg.mode = mode;
      for (const auto& r : evaluate(same, cfg))
        for (const auto& ap : r.ap) perfect &= !ap || *ap == 1.0;
      for (const auto& r : evaluate(blank, cfg))
        for (const auto& ap : r.ap) empty &= !ap || *ap == 0.0;
    }
  fs::remove_all(none);
  return {mismatched == 0 && largest <= 10 && perfect && empty,
          format("%zu AP values vs brute-force PR oracle (<= %zu detections each), %zu "
                 "mismatches; perfect detector %s; empty detector %s",
                 compared, largest, mismatched, perfect ? "AP 1.0" : "NOT 1.0",
                 empty ? "AP 0.0" : "NOT 0.0")};
}

Outcome rotation_check() {
  // Construction fixed in advance: KITTI-like camera and poses, car-sized
  // boxes, yaw uniform, start perturbed by +-0.2 rad.
  const auto cam = CameraIntrinsics::pinhole(721.5, 609.6, 172.9);
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> x(-8.0, 8.0), z(5.0, 40.0),
      ang(-std::numbers::pi, std::numbers::pi), unit(0.0, 1.0);
  std::bernoulli_distribution sign(0.5);
  int recovered = 0, monotone = 0;
  double worst = 0.0;
  std::string misses;
  for (int s = 0; s < kRotationScenes; ++s) {
    Box3D gt;
    gt.x = x(rng);
    gt.y = 1.65;
    gt.z = z(rng);
    gt.w = 1.5 + 0.3 * unit(rng);
    gt.h = 1.4 + 0.3 * unit(rng);
    gt.l = 3.5 + 0.8 * unit(rng);
    gt.yaw = ang(rng);
    gt.alpha = yaw_to_alpha(gt.yaw, gt.x, gt.z);
    Detection d;
    d.score = 1.0;
    d.box2d = project_box(gt, cam);
    d.box3d = gt;
    d.box3d.yaw = wrap_angle(gt.yaw + (sign(rng) ? kRotationStart : -kRotationStart));
    const RotationResult r = optimize_rotation(d, cam);
    bool mono = !r.behind_camera;
    for (std::size_t i = 1; i < r.objective.size(); ++i) mono &= r.objective[i] <= r.objective[i - 1];
    monotone += mono;
    const double err = std::abs(wrap_angle(r.detection.box3d.yaw - gt.yaw));
    worst = std::max(worst, err);
    if (err <= kRotationTolerance) {
      ++recovered;
    } else {
      misses += format(" #%d(z=%.1f, err %.1f deg, final L1 %.2f px)", s, gt.z,
                       err * 180.0 / std::numbers::pi, r.objective.back());
    }
  }
  return {recovered == kRotationScenes && monotone == kRotationScenes,
          format("%d/%d scenes within 1 deg, %d/%d monotone objective; misses:%s",
                 recovered, kRotationScenes, monotone, kRotationScenes,
                 misses.empty() ? " none" : misses.c_str())};
}

Outcome toy_training_check() {
  const auto scenes = make_synthetic_scenes(16, 2024);
  const auto start = std::chrono::steady_clock::now();
  const ToyRun a = train_toy(scenes, kToySteps);
  const ToyRun b = train_toy(scenes, kToySteps);
  const double secs = seconds_since(start) / 2.0;
  const double initial = a.trace.front().total;
  const double ratio = a.final_eval.total / initial;
  bool same = a.final_eval.total == b.final_eval.total && a.trace.size() == b.trace.size();
  for (std::size_t i = 0; same && i < a.trace.size(); ++i)
    same &= a.trace[i].total == b.trace[i].total && a.trace[i].lr == b.trace[i].lr;
  for (std::size_t k = 0; same && k < a.model.parameters().size(); ++k) {
    const Tensor& pa = a.model.parameters()[k];
    const Tensor& pb = b.model.parameters()[k];
    for (std::size_t i = 0; same && i < pa.size(); ++i) same &= pa[i] == pb[i];
  }
  // Warmup lasts one epoch: ceil(16 / 4) steps.
  const double peak = a.trace[4].lr;
  const double floor = a.trace.back().lr;
  const bool lr_ok = peak == 0.004 && floor == 4e-8;
  return {ratio <= kToyRatio && same && lr_ok,
          format("16 scenes, %zu steps: total loss %.4f -> %.4f (ratio %.3f, <= %.1f); "
                 "%s; lr peak %.17g, final %.17g; %.1f s per run",
                 kToySteps, initial, a.final_eval.total, ratio, kToyRatio,
                 same ? "two runs bit-identical" : "runs DIFFER", peak, floor, secs)};
}

}  // namespace

int main() {
  const fs::path fixtures = fs::path(MONO3D_FIXTURE_DIR) / "eval";
  report("gradient-suite", gradient_suite_check());
  report("alignment-formulas", alignment_check());
  report("anab-oracle", anab_oracle_check());
  report("complexity", complexity_check());
  report("codec-round-trip", codec_check());
  report("geometry-oracles", geometry_check());
  report("evaluation-oracle", evaluation_check(fixtures));
  report("rotation-search", rotation_check());
  report("toy-training", toy_training_check());
  std::printf("INFO  %-22s absolute AP tables are not reproduced at desk scale (needs full "
              "KITTI training); the property checks above stand in for them\n",
              "benchmark-tables");
  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
