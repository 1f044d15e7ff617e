#include "mono3d/feature_align.hpp"

#include <cmath>
#include <ostream>
#include <string>

namespace mono3d {

OffsetField::OffsetField(std::size_t height, std::size_t width, std::size_t taps)
    : data_(Shape{height, width, taps, 2}) {}

OffsetField::OffsetField(Tensor data) : data_(std::move(data)) {
  if (data_.shape().width != 2) {
    throw ShapeError("offset field: last dimension must be 2, got " +
                     to_string(data_.shape()));
  }
}

OffsetField shape_align_offsets(std::span<const AnchorHW> best_anchor,
                                std::size_t height, std::size_t width,
                                double stride, std::size_t k_h, std::size_t k_w) {
  if (!(stride >= 1.0)) throw std::invalid_argument("shape_align_offsets: stride must be >= 1");
  if (k_h == 0 || k_w == 0) throw std::invalid_argument("shape_align_offsets: empty kernel");
  if (best_anchor.size() != height * width) {
    throw ShapeError("shape_align_offsets: " + std::to_string(best_anchor.size()) +
                     " anchors for a " + std::to_string(height) + "x" +
                     std::to_string(width) + " grid");
  }
  OffsetField field(height, width, k_h * k_w);
  const double kh = static_cast<double>(k_h);
  const double kw = static_cast<double>(k_w);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const AnchorHW a = best_anchor[y * width + x];
      if (!(a.h > 0.0) || !(a.w > 0.0)) {
        throw std::invalid_argument("shape_align_offsets: anchor size must be positive");
      }
      const double row_gain = a.h / (stride * kh) - 1.0;
      const double col_gain = a.w / (stride * kw) - 1.0;
      for (std::size_t i = 0; i < k_h; ++i) {
        for (std::size_t j = 0; j < k_w; ++j) {
          const std::size_t t = i * k_w + j;
          field.dy(y, x, t) = row_gain * (static_cast<double>(i) - kh / 2.0 + 0.5);
          field.dx(y, x, t) = col_gain * (static_cast<double>(j) - kw / 2.0 + 0.5);
        }
      }
    }
  }
  return field;
}

std::vector<AnchorHW> select_best_anchor(const Tensor& scores,
                                         std::span<const AnchorHW> templates) {
  if (templates.empty()) throw std::invalid_argument("select_best_anchor: no anchors");
  if (!scores.is_matrix() || scores.cols() != templates.size()) {
    throw ShapeError("select_best_anchor: scores " + to_string(scores.shape()) +
                     " for " + std::to_string(templates.size()) + " anchors");
  }
  std::vector<AnchorHW> best(scores.rows());
  for (std::size_t p = 0; p < scores.rows(); ++p) {
    std::size_t arg = 0;
    for (std::size_t a = 1; a < templates.size(); ++a) {
      if (scores(p, a) > scores(p, arg)) arg = a;
    }
    best[p] = templates[arg];
  }
  return best;
}

OffsetField center_align_offsets(const CenterResidualField& residuals,
                                 double stride, std::size_t taps) {
  if (!(stride >= 1.0)) throw std::invalid_argument("center_align_offsets: stride must be >= 1");
  if (residuals.residuals.size() != residuals.height * residuals.width) {
    throw ShapeError("center_align_offsets: residual count does not match grid");
  }
  OffsetField field(residuals.height, residuals.width, taps);
  for (std::size_t y = 0; y < residuals.height; ++y) {
    for (std::size_t x = 0; x < residuals.width; ++x) {
      const PixelResidual r = residuals.residuals[y * residuals.width + x];
      for (std::size_t t = 0; t < taps; ++t) {
        field.dy(y, x, t) = r.y / stride;
        field.dx(y, x, t) = r.x / stride;
      }
    }
  }
  return field;
}

namespace {

struct SamplePoint {
  double y;
  double x;
  bool integral;
  long iy;
  long ix;
};

SamplePoint sample_point(long base_y, long base_x, double dy, double dx) {
  SamplePoint p{static_cast<double>(base_y) + dy, static_cast<double>(base_x) + dx,
                false, 0, 0};
  if (std::floor(p.y) == p.y && std::floor(p.x) == p.x) {
    p.integral = true;
    p.iy = static_cast<long>(p.y);
    p.ix = static_cast<long>(p.x);
  }
  return p;
}

}  // namespace

Var align_conv(Var input, Var weight, Var bias, Var offsets, ConvGeometry g) {
  if (input.tape() != weight.tape() || input.tape() != bias.tape() ||
      input.tape() != offsets.tape()) {
    throw std::invalid_argument("align_conv: operands on different tapes");
  }
  const Tensor& x = input.value();
  const Tensor& w = weight.value();
  const Shape xs = x.shape();
  const Shape ws = w.shape();
  if (ws.channels != xs.channels) {
    throw ShapeError("align_conv: input channels " + std::to_string(xs.channels) +
                     " != weight in-channels " + std::to_string(ws.channels));
  }
  if (bias.shape() != Shape{1, ws.batch, 1, 1}) {
    throw ShapeError("align_conv: bias shape " + to_string(bias.shape()));
  }
  const auto [oh, ow] = conv_output_hw(xs, ws.height, ws.width, g);
  const std::size_t taps = ws.height * ws.width;
  if (offsets.shape() != Shape{oh, ow, taps, 2}) {
    throw ShapeError("align_conv: offsets " + to_string(offsets.shape()) +
                     " do not match output grid " + std::to_string(oh) + "x" +
                     std::to_string(ow) + " with " + std::to_string(taps) + " taps");
  }
  const long pad = static_cast<long>(g.padding);
  const long stride = static_cast<long>(g.stride);
  const long ih = static_cast<long>(xs.height);
  const long iw = static_cast<long>(xs.width);
  auto inside = [ih, iw](long y, long xx) { return y >= 0 && xx >= 0 && y < ih && xx < iw; };

  // Sampling points depend only on (oy, ox, tap); compute them once.
  std::vector<SamplePoint> points(oh * ow * taps);
  {
    const Tensor& off = offsets.value();
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t ky = 0; ky < ws.height; ++ky)
          for (std::size_t kx = 0; kx < ws.width; ++kx) {
            const std::size_t t = ky * ws.width + kx;
            points[(oy * ow + ox) * taps + t] = sample_point(
                static_cast<long>(oy) * stride - pad + static_cast<long>(ky),
                static_cast<long>(ox) * stride - pad + static_cast<long>(kx),
                off.at(oy, ox, t, 0), off.at(oy, ox, t, 1));
          }
  }

  Tensor out(Shape{xs.batch, ws.batch, oh, ow});
  const Tensor& bv = bias.value();
  for (std::size_t b = 0; b < xs.batch; ++b) {
    for (std::size_t oc = 0; oc < ws.batch; ++oc) {
      for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
          double acc = bv[oc];
          const SamplePoint* pts = &points[(oy * ow + ox) * taps];
          for (std::size_t ic = 0; ic < ws.channels; ++ic) {
            for (std::size_t t = 0; t < taps; ++t) {
              const SamplePoint& p = pts[t];
              const double wv = w.at(oc, ic, t / ws.width, t % ws.width);
              if (p.integral) {
                if (!inside(p.iy, p.ix)) continue;
                acc += wv * x.at(b, ic, static_cast<std::size_t>(p.iy),
                                 static_cast<std::size_t>(p.ix));
              } else {
                acc += wv * bilinear_sample(x, p.y, p.x, b, ic);
              }
            }
          }
          out.at(b, oc, oy, ox) = acc;
        }
      }
    }
  }

  Tape& tape = *input.tape();
  const Var inputs[] = {input, weight, bias, offsets};
  return tape.record(
      "align_conv", std::move(out), inputs,
      [=, &tape, points = std::move(points)](const Tensor&, std::span<const double> gout) {
        const Tensor& x = input.value();
        const Tensor& w = weight.value();
        std::span<double> gx = input.requires_grad() ? tape.grad(input) : std::span<double>{};
        std::span<double> gw = weight.requires_grad() ? tape.grad(weight) : std::span<double>{};
        std::span<double> gb = bias.requires_grad() ? tape.grad(bias) : std::span<double>{};
        std::span<double> go = offsets.requires_grad() ? tape.grad(offsets) : std::span<double>{};
        std::size_t o = 0;
        for (std::size_t b = 0; b < xs.batch; ++b) {
          for (std::size_t oc = 0; oc < ws.batch; ++oc) {
            for (std::size_t oy = 0; oy < oh; ++oy) {
              for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                const double g = gout[o];
                if (g == 0.0) continue;
                if (!gb.empty()) gb[oc] += g;
                const std::size_t base = (oy * ow + ox) * taps;
                for (std::size_t ic = 0; ic < ws.channels; ++ic) {
                  for (std::size_t t = 0; t < taps; ++t) {
                    const SamplePoint& p = points[base + t];
                    const std::size_t wi = w.offset(oc, ic, t / ws.width, t % ws.width);
                    const double wv = w[wi];
                    if (p.integral && !inside(p.iy, p.ix) && go.empty()) continue;
                    const BilinearResult r = bilinear_sample_grad(x, p.y, p.x, b, ic);
                    if (!gw.empty()) gw[wi] += g * r.value;
                    if (!gx.empty()) bilinear_scatter(gx, xs, p.y, p.x, b, ic, g * wv);
                    if (!go.empty()) {
                      go[(base + t) * 2] += g * wv * r.d_dy;
                      go[(base + t) * 2 + 1] += g * wv * r.d_dx;
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor align_conv(const Tensor& input, const ConvSpec& spec,
                  const OffsetField& offsets) {
  spec.validate();
  Tape tape;
  return align_conv(tape.constant(input), tape.constant(spec.weight),
                    tape.constant(spec.bias), tape.constant(offsets.tensor()),
                    spec.geometry)
      .value();
}

void write_offsets_csv(std::ostream& out, const OffsetField& offsets) {
  out << "y,x";
  for (std::size_t t = 0; t < offsets.taps(); ++t) out << ",dy" << t << ",dx" << t;
  out << '\n';
  for (std::size_t y = 0; y < offsets.height(); ++y) {
    for (std::size_t x = 0; x < offsets.width(); ++x) {
      out << y << ',' << x;
      for (std::size_t t = 0; t < offsets.taps(); ++t) {
        out << ',' << offsets.dy(y, x, t) << ',' << offsets.dx(y, x, t);
      }
      out << '\n';
    }
  }
}

}  // namespace mono3d
