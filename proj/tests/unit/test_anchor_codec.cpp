#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mono3d/anchor_codec.hpp"

using namespace mono3d;

namespace {

Anchor fitted_anchor() {
  Anchor a;
  a.x = 100.0;
  a.y = 60.0;
  a.w = 24.0;
  a.h = 36.0;
  a.stats = {25.0, 1.6, 1.5, 3.9, -0.4};
  return a;
}

BoxDeltas random_deltas(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  BoxDeltas d;
  for (double& v : d.t2d) v = u(rng);
  for (double& v : d.t3d) v = u(rng);
  d.t3d[6] = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
  return d;
}

BoxPair random_object(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(0.0, 600.0), size(10.0, 300.0),
      dim(0.5, 5.0), depth(3.0, 70.0), ang(-3.0, 3.0);
  BoxPair o;
  o.box2d = Box2D::from_center(pos(rng), pos(rng), size(rng), size(rng));
  o.box3d = {pos(rng), pos(rng), depth(rng), dim(rng), dim(rng), dim(rng), ang(rng)};
  return o;
}

// Centered boxes overlap in min(w) x min(h).
double centered_iou(double w0, double h0, double w1, double h1) {
  const double inter = std::min(w0, w1) * std::min(h0, h1);
  return inter / (w0 * h0 + w1 * h1 - inter);
}

}  // namespace

TEST_CASE("anchor sizes run from 24 to 288") {
  const auto sizes = default_anchor_sizes();
  REQUIRE(sizes.size() == 12);
  CHECK(sizes[0] == 24.0);
  CHECK(std::abs(sizes[11] - 288.0) < 1e-9);
  CHECK(std::abs(sizes[1] - 24.0 * std::exp(std::log(12.0) / 11.0)) < 1e-12);
  CHECK(std::abs(sizes[1] - 30.0828) < 1e-4);
  for (std::size_t i = 1; i < sizes.size(); ++i) CHECK(sizes[i] > sizes[i - 1]);
}

TEST_CASE("templates are area preserving and ordered size-major") {
  const auto templates = default_anchor_templates();
  REQUIRE(templates.size() == 36);
  const auto sizes = default_anchor_sizes();
  const auto ratios = default_aspect_ratios();
  for (std::size_t s = 0; s < sizes.size(); ++s)
    for (std::size_t r = 0; r < ratios.size(); ++r) {
      const AnchorTemplate& t = templates[s * 3 + r];
      CHECK(std::abs(t.w * t.h - sizes[s] * sizes[s]) < 1e-9);
      CHECK(std::abs(t.h / t.w - ratios[r]) < 1e-12);
    }
}

TEST_CASE("anchor grid layout") {
  const auto templates = default_anchor_templates();
  const auto grid = generate_anchor_grid(48, 160, 8.0, templates);
  CHECK(grid.size() == 276480);
  CHECK(grid.size() / 36 == 7680);
  // Cell (i, j) = (2, 5), template 7.
  const Anchor& a = grid[(2 * 160 + 5) * 36 + 7];
  CHECK(a.x == 5 * 8.0 + 4.0);
  CHECK(a.y == 2 * 8.0 + 4.0);
  CHECK(a.template_index == 7);
  CHECK(a.w == templates[7].w);
  CHECK_THROWS_AS(generate_anchor_grid(2, 2, 0.5, templates), std::invalid_argument);
}

TEST_CASE("zero deltas decode to the anchor") {
  const Anchor a = fitted_anchor();
  const BoxPair p = decode(a, BoxDeltas{});
  CHECK(p.box2d.center_x() == a.x);
  CHECK(p.box2d.center_y() == a.y);
  CHECK(p.box2d.width() == doctest::Approx(a.w).epsilon(1e-15));
  CHECK(p.box2d.height() == doctest::Approx(a.h).epsilon(1e-15));
  CHECK(p.box3d.xp == a.x);
  CHECK(p.box3d.yp == a.y);
  CHECK(p.box3d.zp == a.stats.z);
  CHECK(p.box3d.w == a.stats.w);
  CHECK(p.box3d.h == a.stats.h);
  CHECK(p.box3d.l == a.stats.l);
  CHECK(p.box3d.alpha == a.stats.alpha);
}

TEST_CASE("log-space size deltas") {
  const Anchor a = fitted_anchor();
  BoxDeltas d;
  d.t2d[2] = std::log(2.0);
  CHECK(std::abs(decode(a, d).box2d.width() - 48.0) < 1e-12);
  BoxPair gt = decode(a, BoxDeltas{});
  gt.box2d = Box2D::from_center(a.x, a.y, 2 * a.w, a.h);
  const BoxDeltas e = encode(a, gt);
  CHECK(std::abs(e.t2d[2] - std::log(2.0)) < 1e-15);
  CHECK(std::abs(e.t2d[3]) < 1e-15);
  // gt equal to anchor
  const BoxDeltas z = encode(a, decode(a, BoxDeltas{}));
  for (double v : z.t2d) CHECK(std::abs(v) < 1e-15);
  for (double v : z.t3d) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("encode and decode are inverse") {
  std::mt19937_64 rng(9);
  const Anchor a = fitted_anchor();
  for (int i = 0; i < 500; ++i) {
    const BoxDeltas d = random_deltas(rng);
    const BoxDeltas back = encode(a, decode(a, d));
    for (int k = 0; k < 4; ++k) CHECK(std::abs(back.t2d[k] - d.t2d[k]) < 1e-9);
    for (int k = 0; k < 7; ++k) CHECK(std::abs(back.t3d[k] - d.t3d[k]) < 1e-9);

    const BoxPair gt = random_object(rng);
    const BoxPair re = decode(a, encode(a, gt));
    CHECK(std::abs(re.box2d.x1 - gt.box2d.x1) < 1e-9);
    CHECK(std::abs(re.box2d.y1 - gt.box2d.y1) < 1e-9);
    CHECK(std::abs(re.box2d.x2 - gt.box2d.x2) < 1e-9);
    CHECK(std::abs(re.box2d.y2 - gt.box2d.y2) < 1e-9);
    CHECK(std::abs(re.box3d.xp - gt.box3d.xp) < 1e-9);
    CHECK(std::abs(re.box3d.yp - gt.box3d.yp) < 1e-9);
    CHECK(std::abs(re.box3d.zp - gt.box3d.zp) < 1e-9);
    CHECK(std::abs(re.box3d.w - gt.box3d.w) < 1e-9);
    CHECK(std::abs(re.box3d.h - gt.box3d.h) < 1e-9);
    CHECK(std::abs(re.box3d.l - gt.box3d.l) < 1e-9);
    CHECK(std::abs(wrap_angle(re.box3d.alpha - gt.box3d.alpha)) < 1e-9);
  }
}

TEST_CASE("decoded angle stays wrapped") {
  Anchor a = fitted_anchor();
  a.stats.alpha = 3.0;
  BoxDeltas d;
  d.t3d[6] = 0.5;
  const double got = decode(a, d).box3d.alpha;
  CHECK(got > -std::numbers::pi);
  CHECK(got <= std::numbers::pi);
  CHECK(std::abs(got - (3.5 - 2 * std::numbers::pi)) < 1e-12);
}

TEST_CASE("encode rejects non-positive sizes") {
  const Anchor a = fitted_anchor();
  BoxPair gt = decode(a, BoxDeltas{});
  gt.box2d.x2 = gt.box2d.x1;
  CHECK_THROWS_AS(encode(a, gt), std::invalid_argument);
  gt = decode(a, BoxDeltas{});
  gt.box3d.l = -1.0;
  CHECK_THROWS_AS(encode(a, gt), std::invalid_argument);
}

TEST_CASE("anchor statistics: singleton and mean") {
  std::vector<AnchorTemplate> templates(2);
  templates[0].w = 40;
  templates[0].h = 40;
  templates[1].w = 200;
  templates[1].h = 100;
  BoxPair o;
  o.box2d = Box2D::from_center(300, 150, 42, 38);
  o.box3d = {300, 150, 10.0, 1.6, 1.5, 3.9, 0.3};
  auto fit = fit_anchor_3d_stats(templates, std::span<const BoxPair>(&o, 1));
  CHECK(fit[0].matched == 1);
  CHECK(fit[0].stats.z == 10.0);
  CHECK(fit[0].stats.l == 3.9);
  CHECK(fit[0].stats.alpha == 0.3);
  CHECK(fit[1].matched == 0);  // falls back to the global mean
  CHECK(fit[1].stats.z == 10.0);

  BoxPair o2 = o;
  o2.box3d.zp = 30.0;
  o2.box2d = Box2D::from_center(10, 10, 40, 40);
  const std::vector<BoxPair> two = {o, o2};
  fit = fit_anchor_3d_stats(templates, two);
  CHECK(fit[0].matched == 2);
  CHECK(fit[0].stats.z == 20.0);
  CHECK_THROWS_AS(fit_anchor_3d_stats(templates, std::span<const BoxPair>{}),
                  std::invalid_argument);
}

TEST_CASE("anchor statistics match brute-force matching") {
  std::mt19937_64 rng(42);
  const auto templates = default_anchor_templates();
  std::vector<BoxPair> objects;
  for (int i = 0; i < 400; ++i) objects.push_back(random_object(rng));
  const auto fit = fit_anchor_3d_stats(templates, objects);

  double gz = 0.0;
  for (const auto& o : objects) gz += o.box3d.zp;
  gz /= objects.size();
  for (std::size_t t = 0; t < templates.size(); ++t) {
    double z = 0.0, w = 0.0, h = 0.0, l = 0.0, al = 0.0;
    std::size_t n = 0;
    for (const auto& o : objects) {
      if (centered_iou(templates[t].w, templates[t].h, o.box2d.width(),
                       o.box2d.height()) > 0.5) {
        z += o.box3d.zp;
        w += o.box3d.w;
        h += o.box3d.h;
        l += o.box3d.l;
        al += o.box3d.alpha;
        ++n;
      }
    }
    CHECK(fit[t].matched == n);
    if (n) {
      CHECK(std::abs(fit[t].stats.z - z / n) < 1e-9);
      CHECK(std::abs(fit[t].stats.w - w / n) < 1e-9);
      CHECK(std::abs(fit[t].stats.h - h / n) < 1e-9);
      CHECK(std::abs(fit[t].stats.l - l / n) < 1e-9);
      CHECK(std::abs(fit[t].stats.alpha - al / n) < 1e-9);
    } else {
      CHECK(std::abs(fit[t].stats.z - gz) < 1e-9);
    }
  }

  // Permutation invariance.
  std::vector<BoxPair> shuffled = objects;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  const auto refit = fit_anchor_3d_stats(templates, shuffled);
  for (std::size_t t = 0; t < templates.size(); ++t) {
    CHECK(refit[t].matched == fit[t].matched);
    CHECK(std::abs(refit[t].stats.z - fit[t].stats.z) < 1e-9);
    CHECK(std::abs(refit[t].stats.alpha - fit[t].stats.alpha) < 1e-9);
  }
}

TEST_CASE("anchor table round trip") {
  std::mt19937_64 rng(1);
  std::vector<BoxPair> objects;
  for (int i = 0; i < 50; ++i) objects.push_back(random_object(rng));
  const auto fit = fit_anchor_3d_stats(default_anchor_templates(), objects);
  std::stringstream ss;
  write_anchor_templates(ss, fit);
  const auto back = read_anchor_templates(ss);
  REQUIRE(back.size() == fit.size());
  for (std::size_t t = 0; t < fit.size(); ++t) {
    CHECK(back[t].w == fit[t].w);
    CHECK(back[t].h == fit[t].h);
    CHECK(back[t].stats.z == fit[t].stats.z);
    CHECK(back[t].stats.alpha == fit[t].stats.alpha);
    CHECK(back[t].matched == fit[t].matched);
  }
  std::istringstream bad("1 2 3\n");
  CHECK_THROWS_AS(read_anchor_templates(bad), std::runtime_error);
}

TEST_CASE("camera targets lift back to the same box") {
  const auto cam = CameraIntrinsics::pinhole(721.5, 609.6, 172.9);
  Box3D b{2.5, 1.7, 22.0, 1.6, 1.5, 3.9, 0.0, 0.4};
  b.yaw = alpha_to_yaw(b.alpha, b.x, b.z);
  const BoxPair t = make_target(project_box(b, cam), b, cam);
  const Box3D back = lift_to_camera(t.box3d, cam);
  CHECK(std::abs(back.x - b.x) < 1e-9);
  CHECK(std::abs(back.y - b.y) < 1e-9);
  CHECK(std::abs(back.z - b.z) < 1e-9);
  CHECK(std::abs(back.yaw - b.yaw) < 1e-12);
}
