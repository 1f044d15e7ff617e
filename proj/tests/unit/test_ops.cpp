#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "mono3d/grad_check.hpp"
#include "mono3d/ops.hpp"
#include "test_util.hpp"

using namespace mono3d;
using mono3d::testing::random_tensor;

namespace {

// Seven nested loops, bias first, taps in (ic, ky, kx) order.
Tensor naive_conv(const Tensor& x, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const Shape ws = spec.weight.shape();
  const long pad = static_cast<long>(spec.geometry.padding);
  const long stride = static_cast<long>(spec.geometry.stride);
  const std::size_t oh = (xs.height + 2 * pad - ws.height) / stride + 1;
  const std::size_t ow = (xs.width + 2 * pad - ws.width) / stride + 1;
  Tensor out(Shape{xs.batch, ws.batch, oh, ow});
  for (std::size_t b = 0; b < xs.batch; ++b)
    for (std::size_t o = 0; o < ws.batch; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = spec.bias[o];
          for (std::size_t c = 0; c < ws.channels; ++c)
            for (std::size_t u = 0; u < ws.height; ++u)
              for (std::size_t v = 0; v < ws.width; ++v) {
                const long y = static_cast<long>(i) * stride - pad + static_cast<long>(u);
                const long xx = static_cast<long>(j) * stride - pad + static_cast<long>(v);
                if (y < 0 || xx < 0 || y >= static_cast<long>(xs.height) ||
                    xx >= static_cast<long>(xs.width))
                  continue;
                acc += spec.weight.at(o, c, u, v) * x.at(b, c, y, xx);
              }
          out.at(b, o, i, j) = acc;
        }
  return out;
}

ConvSpec random_conv(std::size_t in, std::size_t out, std::size_t k,
                     ConvGeometry g, std::uint64_t seed) {
  ConvSpec spec = ConvSpec::zeros(in, out, k, k, g);
  spec.weight = random_tensor(spec.weight.shape(), seed);
  spec.bias = random_tensor(spec.bias.shape(), seed + 1);
  return spec;
}

}  // namespace

TEST_CASE("conv2d of ones with a ones kernel sums to 9") {
  ConvSpec spec = ConvSpec::zeros(1, 1, 3, 3);
  for (double& v : spec.weight.values()) v = 1.0;
  Tensor out = conv2d(Tensor(Shape{1, 1, 3, 3}, 1.0), spec);
  REQUIRE(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == 9.0);
}

TEST_CASE("identity 1x1 conv reproduces its input") {
  ConvSpec spec = ConvSpec::zeros(1, 1, 1, 1);
  spec.weight[0] = 1.0;
  Tensor x = random_tensor(Shape{2, 1, 5, 7}, 3);
  Tensor out = conv2d(x, spec);
  REQUIRE(out.shape() == x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("conv2d equals the naive reference bit-for-bit") {
  for (ConvGeometry g : {ConvGeometry{1, 0}, ConvGeometry{1, 1}, ConvGeometry{2, 1}}) {
    Tensor x = random_tensor(Shape{2, 8, 16, 16}, 11);
    ConvSpec spec = random_conv(8, 5, 3, g, 12);
    Tensor a = conv2d(x, spec);
    Tensor b = naive_conv(x, spec);
    REQUIRE(a.shape() == b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
  }
}

TEST_CASE("conv2d rejects mismatched shapes") {
  ConvSpec spec = ConvSpec::zeros(3, 2, 3, 3);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 4, 5, 5}), spec), ShapeError);
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 3, 2, 2}), spec), ShapeError);
  spec.bias = Tensor(Shape{1, 3, 1, 1});
  CHECK_THROWS_AS(conv2d(Tensor(Shape{1, 3, 5, 5}), spec), ShapeError);
}

TEST_CASE("conv2d gradients match central differences") {
  const ConvGeometry g{1, 1};
  GradCheckReport r = grad_check(
      "conv2d",
      [g](Tape&, std::span<const Var> v) { return conv2d(v[0], v[1], v[2], g); },
      {random_tensor(Shape{2, 4, 8, 8}, 21), random_tensor(Shape{3, 4, 3, 3}, 22),
       random_tensor(Shape{1, 3, 1, 1}, 23)},
      {.step = 1e-5, .tolerance = 1e-6});
  INFO(r.failure);
  CHECK(r.passed);
  CHECK(r.checked == 512 + 108 + 3);
}

TEST_CASE("bilinear sampling at integer, fractional and outside positions") {
  Tensor t(Shape{1, 1, 2, 2}, std::vector<double>{2.0, 7.0, 4.0, 9.0});
  CHECK(bilinear_sample(t, 0, 1, 0, 0) == 7.0);
  CHECK(bilinear_sample(t, 1, 0, 0, 0) == 4.0);
  CHECK(bilinear_sample(t, 0.5, 0.0, 0, 0) == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(bilinear_sample(t, -2.0, -2.0, 0, 0) == 0.0);
  // Half a pixel beyond the border blends with zero padding.
  CHECK(bilinear_sample(t, 1.5, 0.0, 0, 0) == doctest::Approx(2.0));
}

TEST_CASE("bilinear sampling is Lipschitz in y with the adjacent-value bound") {
  Tensor t = random_tensor(Shape{1, 1, 6, 6}, 5, -3.0, 3.0);
  double bound = 0.0;
  for (std::size_t y = 0; y < 6; ++y)
    for (std::size_t x = 0; x < 6; ++x) {
      const double v = t.at(0, 0, y, x);
      bound = std::max(bound, std::abs(v));  // neighbour of the zero border
      if (y + 1 < 6) bound = std::max(bound, std::abs(t.at(0, 0, y + 1, x) - v));
      if (x + 1 < 6) bound = std::max(bound, std::abs(t.at(0, 0, y, x + 1) - v));
    }
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(-1.0, 6.0);
  std::uniform_real_distribution<double> step(0.0, 0.999);
  for (int k = 0; k < 2000; ++k) {
    const double y = pos(rng), x = pos(rng), eps = step(rng);
    const double d = std::abs(bilinear_sample(t, y + eps, x, 0, 0) -
                              bilinear_sample(t, y, x, 0, 0));
    REQUIRE(d <= eps * bound + 1e-12);
  }
}

TEST_CASE("bilinear gather gradients in values and coordinates") {
  Tensor points = Tensor::matrix(5, 2, {0.3, 0.7, 1.25, 2.6, 3.9, 0.1, -0.4, 1.5, 2.2, 4.6});
  GradCheckReport r = grad_check(
      "bilinear_gather",
      [](Tape&, std::span<const Var> v) { return bilinear_gather(v[0], v[1]); },
      {random_tensor(Shape{1, 3, 5, 5}, 31), points});
  INFO(r.failure);
  CHECK(r.passed);
}

TEST_CASE("softmax rows") {
  Tensor m = Tensor::matrix(2, 4, {1, 1, 1, 1, 0, std::log(3.0), -1e3, -1e3});
  Tensor s = softmax_lastdim(m);
  for (std::size_t c = 0; c < 4; ++c) CHECK(s(0, c) == doctest::Approx(0.25));
  CHECK(s(1, 0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(s(1, 1) == doctest::Approx(0.75).epsilon(1e-14));
  CHECK(s(1, 2) == 0.0);
}

TEST_CASE("softmax rows sum to one and ignore per-row shifts") {
  Tensor m = random_tensor(Shape{1, 1, 20, 17}, 41, -30.0, 30.0);
  Tensor shifted = m;
  for (std::size_t r = 0; r < 20; ++r)
    for (std::size_t c = 0; c < 17; ++c) shifted(r, c) += 3.0 * static_cast<double>(r) - 25.0;
  Tensor a = softmax_lastdim(m);
  Tensor b = softmax_lastdim(shifted);
  for (std::size_t r = 0; r < 20; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < 17; ++c) {
      total += a(r, c);
      CHECK(a(r, c) >= 0.0);
      CHECK(std::abs(a(r, c) - b(r, c)) < 1e-12);
    }
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax gradient") {
  GradCheckReport r = grad_check(
      "softmax_lastdim",
      [](Tape&, std::span<const Var> v) { return softmax_lastdim(v[0]); },
      {random_tensor(Shape{1, 1, 4, 6}, 51, -2.0, 2.0)},
      {.step = 1e-5, .tolerance = 1e-6});
  INFO(r.failure);
  CHECK(r.passed);
}

TEST_CASE("matmul with identity and inner mismatch") {
  Tensor a = random_tensor(Shape{1, 1, 3, 4}, 61);
  Tensor eye = Tensor::matrix(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0;
  Tensor p = matmul(a, eye);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(p[i] == a[i]);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul and transpose gradients") {
  GradCheckReport r = grad_check(
      "matmul",
      [](Tape&, std::span<const Var> v) { return matmul(v[0], transpose(v[1])); },
      {random_tensor(Shape{1, 1, 3, 5}, 62), random_tensor(Shape{1, 1, 4, 5}, 63)});
  INFO(r.failure);
  CHECK(r.passed);
}

TEST_CASE("adaptive average pooling") {
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i + 1;
  Tensor pooled = avg_pool_adaptive(Tensor(Shape{1, 1, 4, 4}, ramp), 2, 2);
  CHECK(pooled(0, 0) == 3.5);
  CHECK(pooled(0, 1) == 5.5);
  CHECK(pooled(1, 0) == 11.5);
  CHECK(pooled(1, 1) == 13.5);

  Tensor constant = avg_pool_adaptive(Tensor(Shape{2, 3, 7, 9}, 1.25), 3, 4);
  for (double v : constant.values()) CHECK(v == doctest::Approx(1.25).epsilon(1e-15));

  CHECK_THROWS_AS(avg_pool_adaptive(Tensor(Shape{1, 1, 3, 3}), 4, 1), ShapeError);
  CHECK(pool_bin(1, 3, 7) == std::pair<std::size_t, std::size_t>{2, 4});

  GradCheckReport r = grad_check(
      "avg_pool_adaptive",
      [](Tape&, std::span<const Var> v) { return avg_pool_adaptive(v[0], 3, 2); },
      {random_tensor(Shape{1, 2, 7, 5}, 71)});
  CHECK(r.passed);
}

TEST_CASE("elementwise and layout gradients") {
  Tensor a = random_tensor(Shape{1, 3, 4, 5}, 81);
  Tensor b = random_tensor(Shape{1, 3, 4, 5}, 82);
  Tensor m = random_tensor(Shape{1, 1, 4, 5}, 83);
  auto check = [](const std::string& name, const GraphFn& f, std::vector<Tensor> in) {
    GradCheckReport r = grad_check(name, f, std::move(in));
    INFO(name << ": " << r.failure);
    CHECK(r.passed);
  };
  check("sigmoid", [](Tape&, std::span<const Var> v) { return sigmoid(v[0]); }, {a});
  check("relu", [](Tape&, std::span<const Var> v) { return relu(v[0]); }, {a});
  check("add", [](Tape&, std::span<const Var> v) { return add(v[0], v[1]); }, {a, b});
  check("mul", [](Tape&, std::span<const Var> v) { return mul(v[0], v[1]); }, {a, b});
  check("scale", [](Tape&, std::span<const Var> v) { return scale(v[0], -2.5); }, {a});
  check("mul_spatial", [](Tape&, std::span<const Var> v) { return mul_spatial(v[0], v[1]); },
        {a, m});
  check("to_rows", [](Tape&, std::span<const Var> v) { return to_rows(v[0]); }, {a});
  check("from_rows",
        [](Tape&, std::span<const Var> v) { return from_rows(to_rows(v[0]), 4, 5); }, {a});
  check("channels_to_rows",
        [](Tape&, std::span<const Var> v) { return channels_to_rows(v[0], 1); }, {a});
  check("concat_cols",
        [](Tape&, std::span<const Var> v) {
          const Var parts[] = {to_rows(v[0]), to_rows(v[1])};
          return concat_cols(parts);
        },
        {a, b});
}

TEST_CASE("layout ops place elements as documented") {
  Tape tape;
  Tensor t(Shape{1, 4, 1, 2});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i);
  // Channels (a0g0, a0g1, a1g0, a1g1) over two pixels.
  Tensor rows = channels_to_rows(tape.constant(t), 2).value();
  REQUIRE(rows.rows() == 4);
  CHECK(rows(0, 0) == 0.0);  // pixel 0, anchor 0
  CHECK(rows(0, 1) == 2.0);
  CHECK(rows(1, 0) == 4.0);  // pixel 0, anchor 1
  CHECK(rows(2, 0) == 1.0);  // pixel 1, anchor 0
  CHECK_THROWS_AS(channels_to_rows(tape.constant(t), 3), ShapeError);
  CHECK_THROWS_AS(add(tape.constant(t), tape.constant(Tensor(Shape{1, 4, 2, 1}))),
                  ShapeError);
}

TEST_CASE("grad_check is exact for affine functions") {
  Tensor w = random_tensor(Shape{1, 2, 3, 3}, 91);
  GradCheckReport r = grad_check(
      "affine",
      [w](Tape&, std::span<const Var> v) { return weighted_sum(scale(v[0], 3.0), w); },
      {random_tensor(Shape{1, 2, 3, 3}, 92)});
  CHECK(r.passed);
  CHECK(r.max_rel_error < 1e-9);
}

TEST_CASE("grad_check names the op that produced a non-finite value") {
  GradCheckReport r = grad_check(
      "overflow",
      [](Tape&, std::span<const Var> v) { return sum(scale(v[0], 1e308)); },
      {Tensor(Shape{1, 1, 1, 2}, 10.0)});
  CHECK_FALSE(r.passed);
  CHECK(r.failure.find("'scale'") != std::string::npos);
}

TEST_CASE("backward requires a scalar output") {
  Tape tape;
  Var x = tape.leaf(Tensor(Shape{1, 1, 2, 2}, 1.0));
  CHECK_THROWS_AS(tape.backward(sigmoid(x)), ShapeError);
}
