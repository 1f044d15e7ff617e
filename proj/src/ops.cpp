#include "mono3d/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace mono3d {

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.is_matrix(), std::string(op) + ": expected a matrix, got " +
                             to_string(t.shape()));
}

void require_same_tape(Var a, Var b, const char* op) {
  if (a.tape() != b.tape()) {
    throw std::invalid_argument(std::string(op) + ": operands on different tapes");
  }
}

// Reads plane (b, c) at integer (y, x); zero outside.
double read_or_zero(const Tensor& t, long y, long x, std::size_t b,
                    std::size_t c) {
  const Shape& s = t.shape();
  if (y < 0 || x < 0 || y >= static_cast<long>(s.height) ||
      x >= static_cast<long>(s.width)) {
    return 0.0;
  }
  return t.at(b, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvSpec

ConvSpec ConvSpec::zeros(std::size_t in_ch, std::size_t out_ch, std::size_t k_h,
                         std::size_t k_w, ConvGeometry geometry) {
  ConvSpec spec;
  spec.weight = Tensor(Shape{out_ch, in_ch, k_h, k_w});
  spec.bias = Tensor(Shape{1, out_ch, 1, 1});
  spec.geometry = geometry;
  spec.validate();
  return spec;
}

void ConvSpec::validate() const {
  const Shape& w = weight.shape();
  require(w.height >= 1 && w.width >= 1,
          "conv spec: kernel must be at least 1x1, got " + to_string(w));
  require(geometry.stride >= 1, "conv spec: stride must be >= 1");
  require(bias.shape() == Shape{1, w.batch, 1, 1},
          "conv spec: bias " + to_string(bias.shape()) +
              " does not match out channels " + std::to_string(w.batch));
}

std::pair<std::size_t, std::size_t> conv_output_hw(const Shape& input,
                                                   std::size_t k_h,
                                                   std::size_t k_w,
                                                   ConvGeometry g) {
  const std::size_t ph = input.height + 2 * g.padding;
  const std::size_t pw = input.width + 2 * g.padding;
  require(g.stride >= 1, "conv2d: stride must be >= 1");
  require(ph >= k_h && pw >= k_w,
          "conv2d: kernel " + std::to_string(k_h) + "x" + std::to_string(k_w) +
              " larger than padded input " + to_string(input));
  return {(ph - k_h) / g.stride + 1, (pw - k_w) / g.stride + 1};
}

// ---------------------------------------------------------------------------
// conv2d

Var conv2d(Var input, Var weight, Var bias, ConvGeometry g) {
  require_same_tape(input, weight, "conv2d");
  require_same_tape(input, bias, "conv2d");
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Tensor& bv = bias.value();
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  require(ws.channels == xs.channels,
          "conv2d: input channels " + std::to_string(xs.channels) +
              " != weight in-channels " + std::to_string(ws.channels));
  require(bv.shape() == Shape{1, ws.batch, 1, 1},
          "conv2d: bias shape " + to_string(bv.shape()) + " for " +
              std::to_string(ws.batch) + " out-channels");
  const auto [oh, ow] = conv_output_hw(xs, ws.height, ws.width, g);
  const long pad = static_cast<long>(g.padding);
  const long stride = static_cast<long>(g.stride);
  const long ih = static_cast<long>(xs.height);
  const long iw = static_cast<long>(xs.width);

  Tensor out(Shape{xs.batch, ws.batch, oh, ow});
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t oc = 0; oc < ws.batch; ++oc) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bv[oc];
          for (std::size_t ic = 0; ic < ws.channels; ++ic) {
            for (std::size_t ky = 0; ky < ws.height; ++ky) {
              const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
              if (iy < 0 || iy >= ih) continue;
              for (std::size_t kx = 0; kx < ws.width; ++kx) {
                const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                if (ix < 0 || ix >= iw) continue;
                acc += w.at(oc, ic, ky, kx) *
                       x.at(b, ic, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          }
          out.at(b, oc, oy, ox) = acc;
        }
      }
    }
  }

  Tape& tape = *input.tape();
  const Var inputs[] = {input, weight, bias};
  return tape.record(
      "conv2d", std::move(out), inputs,
      [=, &tape](const Tensor&, std::span<const double> gout) {
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        const bool need_x = input.requires_grad();
        const bool need_w = weight.requires_grad();
        const bool need_b = bias.requires_grad();
        std::span<double> gx = need_x ? tape.grad(input) : std::span<double>{};
        std::span<double> gw = need_w ? tape.grad(weight) : std::span<double>{};
        std::span<double> gb = need_b ? tape.grad(bias) : std::span<double>{};
        std::size_t o = 0;
        for (std::size_t b = 0; b < xs.batch; ++b) {
          for (std::size_t oc = 0; oc < ws.batch; ++oc) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                const double g = gout[o];
                if (g == 0.0) continue;
                if (need_b) gb[oc] += g;
                for (std::size_t ic = 0; ic < ws.channels; ++ic) {
                  for (std::size_t ky = 0; ky < ws.height; ++ky) {
                    const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
                    if (iy < 0 || iy >= ih) continue;
                    for (std::size_t kx = 0; kx < ws.width; ++kx) {
                      const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                      if (ix < 0 || ix >= iw) continue;
                      const std::size_t xi = x.offset(b, ic, static_cast<std::size_t>(iy),
                                                      static_cast<std::size_t>(ix));
                      const std::size_t wi = w.offset(oc, ic, ky, kx);
                      if (need_x) gx[xi] += g * w[wi];
                      if (need_w) gw[wi] += g * x[xi];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const ConvSpec& spec) {
  spec.validate();
  Tape tape;
  Var out = conv2d(tape.constant(input), tape.constant(spec.weight),
                   tape.constant(spec.bias), spec.geometry);
  return out.value();
}

// ---------------------------------------------------------------------------
// Bilinear sampling

double bilinear_sample(const Tensor& input, double y, double x, std::size_t b,
                       std::size_t c) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const double wy = y - fy;
  const double wx = x - fx;
  if (wy == 0.0 && wx == 0.0) return read_or_zero(input, y0, x0, b, c);
  return (1.0 - wy) * (1.0 - wx) * read_or_zero(input, y0, x0, b, c) +
         (1.0 - wy) * wx * read_or_zero(input, y0, x0 + 1, b, c) +
         wy * (1.0 - wx) * read_or_zero(input, y0 + 1, x0, b, c) +
         wy * wx * read_or_zero(input, y0 + 1, x0 + 1, b, c);
}

BilinearResult bilinear_sample_grad(const Tensor& input, double y, double x,
                                    std::size_t b, std::size_t c) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const double wy = y - fy;
  const double wx = x - fx;
  const double v00 = read_or_zero(input, y0, x0, b, c);
  const double v01 = read_or_zero(input, y0, x0 + 1, b, c);
  const double v10 = read_or_zero(input, y0 + 1, x0, b, c);
  const double v11 = read_or_zero(input, y0 + 1, x0 + 1, b, c);
  BilinearResult r;
  r.value = bilinear_sample(input, y, x, b, c);
  r.d_dy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01);
  r.d_dx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10);
  return r;
}

void bilinear_scatter(std::span<double> grad_plane, const Shape& s, double y,
                      double x, std::size_t b, std::size_t c, double g) {
  const double fy = std::floor(y);
  const double fx = std::floor(x);
  const long y0 = static_cast<long>(fy);
  const long x0 = static_cast<long>(fx);
  const double wy = y - fy;
  const double wx = x - fx;
  auto put = [&](long yy, long xx, double weight) {
    if (weight == 0.0 || yy < 0 || xx < 0 || yy >= static_cast<long>(s.height) ||
        xx >= static_cast<long>(s.width)) {
      return;
    }
    grad_plane[((b * s.channels + c) * s.height + static_cast<std::size_t>(yy)) * s.width +
               static_cast<std::size_t>(xx)] += g * weight;
  };
  put(y0, x0, (1.0 - wy) * (1.0 - wx));
  put(y0, x0 + 1, (1.0 - wy) * wx);
  put(y0 + 1, x0, wy * (1.0 - wx));
  put(y0 + 1, x0 + 1, wy * wx);
}

Var bilinear_gather(Var input, Var points) {
  require_same_tape(input, points, "bilinear_gather");
  const Tensor& x = input.value();
  const Tensor& p = points.value();
  require(x.shape().batch >= 1, "bilinear_gather: empty input");
  require(p.is_matrix() && p.cols() == 2,
          "bilinear_gather: points must be P x 2, got " + to_string(p.shape()));
  const std::size_t n = p.rows();
  const std::size_t channels = x.shape().channels;
  Tensor out = Tensor::matrix(n, channels);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      out(i, c) = bilinear_sample(x, p(i, 0), p(i, 1), 0, c);
    }
  }
  Tape& tape = *input.tape();
  const Var inputs[] = {input, points};
  return tape.record(
      "bilinear_gather", std::move(out), inputs,
      [=, &tape](const Tensor&, std::span<const double> gout) {
        const Tensor& x = input.value();
        const Tensor& p = points.value();
        std::span<double> gx =
            input.requires_grad() ? tape.grad(input) : std::span<double>{};
        std::span<double> gp =
            points.requires_grad() ? tape.grad(points) : std::span<double>{};
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t c = 0; c < channels; ++c) {
            const double g = gout[i * channels + c];
            if (!gx.empty()) bilinear_scatter(gx, x.shape(), p(i, 0), p(i, 1), 0, c, g);
            if (!gp.empty()) {
              const BilinearResult r = bilinear_sample_grad(x, p(i, 0), p(i, 1), 0, c);
              gp[i * 2] += g * r.d_dy;
              gp[i * 2 + 1] += g * r.d_dx;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Matrix ops

namespace {

// out[r][c] = sum_k a[r][k] * b[k][c], with optional transposes.
void gemm_accumulate(const Tensor& a, bool ta, const Tensor& b, bool tb,
                     std::span<double> out) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t k = ta ? a.rows() : a.cols();
  const std::size_t n = tb ? b.rows() : b.cols();
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t i = 0; i < k; ++i) {
      const double av = ta ? a(i, r) : a(r, i);
      if (av == 0.0) continue;
      double* row = out.data() + r * n;
      if (!tb) {
        const double* brow = b.values().data() + i * n;
        for (std::size_t c = 0; c < n; ++c) row[c] += av * brow[c];
      } else {
        for (std::size_t c = 0; c < n; ++c) row[c] += av * b(c, i);
      }
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  require(a.cols() == b.rows(), "matmul: inner dimensions " +
                                    std::to_string(a.cols()) + " and " +
                                    std::to_string(b.rows()) + " differ");
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  gemm_accumulate(a, false, b, false, out.values());
  return out;
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  Tensor out = matmul(a.value(), b.value());
  Tape& tape = *a.tape();
  const Var inputs[] = {a, b};
  return tape.record("matmul", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       const Tensor& av = a.value();
                       const Tensor& bv = b.value();
                       Tensor g = Tensor::matrix(av.rows(), bv.cols(),
                                                 std::vector<double>(gout.begin(), gout.end()));
                       if (a.requires_grad()) gemm_accumulate(g, false, bv, true, tape.grad(a));
                       if (b.requires_grad()) gemm_accumulate(av, true, g, false, tape.grad(b));
                     });
}

Var transpose(Var m) {
  const Tensor& v = m.value();
  require_matrix(v, "transpose");
  const std::size_t r = v.rows();
  const std::size_t c = v.cols();
  Tensor out = Tensor::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = v(i, j);
  Tape& tape = *m.tape();
  const Var inputs[] = {m};
  return tape.record("transpose", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(m);
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) g[i * c + j] += gout[j * r + i];
                     });
}

Tensor softmax_lastdim(const Tensor& m) {
  require_matrix(m, "softmax_lastdim");
  Tensor out = Tensor::matrix(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double peak = -INFINITY;
    for (std::size_t c = 0; c < m.cols(); ++c) peak = std::max(peak, m(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < m.cols(); ++c) {
      out(r, c) = std::exp(m(r, c) - peak);
      total += out(r, c);
    }
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) /= total;
  }
  return out;
}

Var softmax_lastdim(Var m) {
  Tensor out = softmax_lastdim(m.value());
  const std::size_t rows = out.rows();
  const std::size_t cols = out.cols();
  Tape& tape = *m.tape();
  const Var inputs[] = {m};
  return tape.record("softmax_lastdim", std::move(out), inputs,
                     [=, &tape](const Tensor& y, std::span<const double> gout) {
                       std::span<double> g = tape.grad(m);
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += gout[r * cols + c] * y(r, c);
                         for (std::size_t c = 0; c < cols; ++c)
                           g[r * cols + c] += y(r, c) * (gout[r * cols + c] - dot);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Pooling

std::pair<std::size_t, std::size_t> pool_bin(std::size_t p, std::size_t n,
                                             std::size_t extent) {
  return {p * extent / n, (p + 1) * extent / n};
}

Var avg_pool_adaptive(Var input, std::size_t bins_h, std::size_t bins_w) {
  const Tensor& x = input.value();
  const Shape s = x.shape();
  require(bins_h >= 1 && bins_w >= 1, "avg_pool_adaptive: bins must be >= 1");
  require(bins_h <= s.height && bins_w <= s.width,
          "avg_pool_adaptive: " + std::to_string(bins_h) + "x" +
              std::to_string(bins_w) + " bins leave empty bins on " +
              to_string(s));
  Tensor out(Shape{s.batch, s.channels, bins_h, bins_w});
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      for (std::size_t py = 0; py < bins_h; ++py) {
        const auto [y0, y1] = pool_bin(py, bins_h, s.height);
        for (std::size_t px = 0; px < bins_w; ++px) {
          const auto [x0, x1] = pool_bin(px, bins_w, s.width);
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t xx = x0; xx < x1; ++xx) acc += x.at(b, c, y, xx);
          out.at(b, c, py, px) = acc / static_cast<double>((y1 - y0) * (x1 - x0));
        }
      }
    }
  }
  Tape& tape = *input.tape();
  const Var inputs[] = {input};
  return tape.record(
      "avg_pool_adaptive", std::move(out), inputs,
      [=, &tape](const Tensor&, std::span<const double> gout) {
        std::span<double> g = tape.grad(input);
        std::size_t o = 0;
        for (std::size_t b = 0; b < s.batch; ++b) {
          for (std::size_t c = 0; c < s.channels; ++c) {
            for (std::size_t py = 0; py < bins_h; ++py) {
              const auto [y0, y1] = pool_bin(py, bins_h, s.height);
              for (std::size_t px = 0; px < bins_w; ++px, ++o) {
                const auto [x0, x1] = pool_bin(px, bins_w, s.width);
                const double share = gout[o] / static_cast<double>((y1 - y0) * (x1 - x0));
                for (std::size_t y = y0; y < y1; ++y)
                  for (std::size_t xx = x0; xx < x1; ++xx)
                    g[((b * s.channels + c) * s.height + y) * s.width + xx] += share;
              }
            }
          }
        }
      });
}

Tensor avg_pool_adaptive(const Tensor& input, std::size_t bins_h,
                         std::size_t bins_w) {
  Tape tape;
  return avg_pool_adaptive(tape.constant(input), bins_h, bins_w).value();
}

// ---------------------------------------------------------------------------
// Elementwise

Var sigmoid(Var x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = v[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-v[i]))
                         : std::exp(v[i]) / (1.0 + std::exp(v[i]));
  }
  Tape& tape = *x.tape();
  const Var inputs[] = {x};
  return tape.record("sigmoid", std::move(out), inputs,
                     [=, &tape](const Tensor& y, std::span<const double> gout) {
                       std::span<double> g = tape.grad(x);
                       for (std::size_t i = 0; i < y.size(); ++i)
                         g[i] += gout[i] * y[i] * (1.0 - y[i]);
                     });
}

Var relu(Var x) {
  const Tensor& v = x.value();
  Tensor out(v.shape());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  Tape& tape = *x.tape();
  const Var inputs[] = {x};
  return tape.record("relu", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       const Tensor& v = x.value();
                       std::span<double> g = tape.grad(x);
                       for (std::size_t i = 0; i < v.size(); ++i)
                         if (v[i] > 0.0) g[i] += gout[i];
                     });
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  require(a.shape() == b.shape(), "add: shapes " + to_string(a.shape()) +
                                      " and " + to_string(b.shape()) + " differ");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  Tape& tape = *a.tape();
  const Var inputs[] = {a, b};
  return tape.record("add", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       for (Var v : {a, b}) {
                         if (!v.requires_grad()) continue;
                         std::span<double> g = tape.grad(v);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
                       }
                     });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  require(a.shape() == b.shape(), "mul: shapes " + to_string(a.shape()) +
                                      " and " + to_string(b.shape()) + " differ");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Tape& tape = *a.tape();
  const Var inputs[] = {a, b};
  return tape.record("mul", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       const Tensor& av = a.value();
                       const Tensor& bv = b.value();
                       if (a.requires_grad()) {
                         std::span<double> g = tape.grad(a);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * bv[i];
                       }
                       if (b.requires_grad()) {
                         std::span<double> g = tape.grad(b);
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * av[i];
                       }
                     });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.values()) v *= factor;
  Tape& tape = *x.tape();
  const Var inputs[] = {x};
  return tape.record("scale", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i] * factor;
                     });
}

Var mul_spatial(Var features, Var map) {
  require_same_tape(features, map, "mul_spatial");
  const Shape fs = features.shape();
  const Shape ms = map.shape();
  require(ms == Shape{fs.batch, 1, fs.height, fs.width},
          "mul_spatial: map " + to_string(ms) + " does not cover features " +
              to_string(fs));
  const std::size_t plane = fs.height * fs.width;
  Tensor out = features.value();
  for (std::size_t b = 0; b < fs.batch; ++b)
    for (std::size_t c = 0; c < fs.channels; ++c)
      for (std::size_t i = 0; i < plane; ++i)
        out[(b * fs.channels + c) * plane + i] *= map.value()[b * plane + i];
  Tape& tape = *features.tape();
  const Var inputs[] = {features, map};
  return tape.record(
      "mul_spatial", std::move(out), inputs,
      [=, &tape](const Tensor&, std::span<const double> gout) {
        const Tensor& f = features.value();
        const Tensor& m = map.value();
        std::span<double> gf = features.requires_grad() ? tape.grad(features) : std::span<double>{};
        std::span<double> gm = map.requires_grad() ? tape.grad(map) : std::span<double>{};
        for (std::size_t b = 0; b < fs.batch; ++b)
          for (std::size_t c = 0; c < fs.channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t fi = (b * fs.channels + c) * plane + i;
              if (!gf.empty()) gf[fi] += gout[fi] * m[b * plane + i];
              if (!gm.empty()) gm[b * plane + i] += gout[fi] * f[fi];
            }
      });
}

Var sum(Var x) {
  double total = 0.0;
  for (double v : x.value().values()) total += v;
  Tape& tape = *x.tape();
  const Var inputs[] = {x};
  return tape.record("sum", Tensor::scalar(total), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(x);
                       for (double& v : g) v += gout[0];
                     });
}

Var weighted_sum(Var x, const Tensor& weights) {
  require(weights.shape() == x.shape(),
          "weighted_sum: weights " + to_string(weights.shape()) + " vs " +
              to_string(x.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += x.value()[i] * weights[i];
  Tape& tape = *x.tape();
  const Var inputs[] = {x};
  return tape.record("weighted_sum", Tensor::scalar(total), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(x);
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[0] * weights[i];
                     });
}

// ---------------------------------------------------------------------------
// Layout

Var to_rows(Var t) {
  const Shape s = t.shape();
  require(s.batch == 1, "to_rows: batch must be 1, got " + to_string(s));
  const std::size_t n = s.height * s.width;
  Tensor out = Tensor::matrix(n, s.channels);
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t i = 0; i < n; ++i) out(i, c) = t.value()[c * n + i];
  Tape& tape = *t.tape();
  const Var inputs[] = {t};
  return tape.record("to_rows", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(t);
                       for (std::size_t c = 0; c < s.channels; ++c)
                         for (std::size_t i = 0; i < n; ++i) g[c * n + i] += gout[i * s.channels + c];
                     });
}

Var from_rows(Var m, std::size_t height, std::size_t width) {
  const Tensor& v = m.value();
  require_matrix(v, "from_rows");
  require(v.rows() == height * width,
          "from_rows: " + std::to_string(v.rows()) + " rows for a " +
              std::to_string(height) + "x" + std::to_string(width) + " map");
  const std::size_t n = v.rows();
  const std::size_t channels = v.cols();
  Tensor out(Shape{1, channels, height, width});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < n; ++i) out[c * n + i] = v(i, c);
  Tape& tape = *m.tape();
  const Var inputs[] = {m};
  return tape.record("from_rows", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(m);
                       for (std::size_t c = 0; c < channels; ++c)
                         for (std::size_t i = 0; i < n; ++i) g[i * channels + c] += gout[c * n + i];
                     });
}

Var channels_to_rows(Var t, std::size_t group) {
  const Shape s = t.shape();
  require(group >= 1 && s.channels % group == 0,
          "channels_to_rows: " + std::to_string(s.channels) +
              " channels not divisible into groups of " + std::to_string(group));
  const std::size_t anchors = s.channels / group;
  const std::size_t plane = s.height * s.width;
  const std::size_t rows = s.batch * plane * anchors;
  // Flat index map from output element to input element.
  std::vector<std::size_t> source(rows * group);
  for (std::size_t b = 0; b < s.batch; ++b)
    for (std::size_t p = 0; p < plane; ++p)
      for (std::size_t a = 0; a < anchors; ++a)
        for (std::size_t g = 0; g < group; ++g) {
          const std::size_t row = (b * plane + p) * anchors + a;
          source[row * group + g] = (b * s.channels + a * group + g) * plane + p;
        }
  Tensor out = Tensor::matrix(rows, group);
  for (std::size_t i = 0; i < source.size(); ++i) out[i] = t.value()[source[i]];
  Tape& tape = *t.tape();
  const Var inputs[] = {t};
  return tape.record("channels_to_rows", std::move(out), inputs,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::span<double> g = tape.grad(t);
                       for (std::size_t i = 0; i < source.size(); ++i) g[source[i]] += gout[i];
                     });
}

Var concat_cols(std::span<const Var> parts) {
  require(!parts.empty(), "concat_cols: nothing to concatenate");
  const std::size_t rows = parts.front().value().rows();
  std::size_t cols = 0;
  for (Var p : parts) {
    require_same_tape(parts.front(), p, "concat_cols");
    require_matrix(p.value(), "concat_cols");
    require(p.value().rows() == rows, "concat_cols: row counts differ");
    cols += p.value().cols();
  }
  Tensor out = Tensor::matrix(rows, cols);
  std::size_t first = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, first + c) = v(r, c);
    first += v.cols();
  }
  std::vector<Var> owned(parts.begin(), parts.end());
  Tape& tape = *parts.front().tape();
  return tape.record("concat_cols", std::move(out), owned,
                     [=, &tape](const Tensor&, std::span<const double> gout) {
                       std::size_t first = 0;
                       for (Var p : owned) {
                         const std::size_t pc = p.value().cols();
                         if (p.requires_grad()) {
                           std::span<double> g = tape.grad(p);
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t c = 0; c < pc; ++c)
                               g[r * pc + c] += gout[r * cols + first + c];
                         }
                         first += pc;
                       }
                     });
}

}  // namespace mono3d
