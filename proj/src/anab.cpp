#include "mono3d/anab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string>

namespace mono3d {

// ---------------------------------------------------------------------------
// PyramidSpec

PyramidSpec PyramidSpec::squares(std::initializer_list<std::size_t> sides,
                                 double epsilon) {
  PyramidSpec spec;
  spec.levels.clear();
  for (std::size_t n : sides) spec.levels.push_back({n, n});
  spec.epsilon = epsilon;
  return spec;
}

std::size_t PyramidSpec::descriptor_count() const {
  std::size_t total = 0;
  for (const PyramidLevel& l : levels) total += l.bins();
  return total;
}

void PyramidSpec::validate() const {
  if (levels.empty()) throw std::invalid_argument("pyramid: no levels");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i].rows == 0 || levels[i].cols == 0) {
      throw std::invalid_argument("pyramid: level with zero bins");
    }
    if (i > 0 && levels[i].bins() <= levels[i - 1].bins()) {
      throw std::invalid_argument("pyramid: levels must be strictly increasing");
    }
  }
  if (!(epsilon >= 0.0)) throw std::invalid_argument("pyramid: epsilon must be >= 0");
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

ConvSpec random_1x1(std::size_t in, std::size_t out, std::mt19937_64& rng,
                    double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  ConvSpec spec = ConvSpec::zeros(in, out, 1, 1);
  for (double& v : spec.weight.values()) v = dist(rng);
  for (double& v : spec.bias.values()) v = dist(rng);
  return spec;
}

ConvSpec identity_1x1(std::size_t channels) {
  ConvSpec spec = ConvSpec::zeros(channels, channels, 1, 1);
  for (std::size_t c = 0; c < channels; ++c) spec.weight.at(c, c, 0, 0) = 1.0;
  return spec;
}

void check_1x1(const ConvSpec& spec, std::size_t in, std::size_t out,
               const char* name) {
  spec.validate();
  if (spec.kernel_h() != 1 || spec.kernel_w() != 1 || spec.in_channels() != in ||
      spec.out_channels() != out) {
    throw ShapeError(std::string("anab: ") + name + " must be a 1x1 conv " +
                     std::to_string(in) + " -> " + std::to_string(out) + ", got " +
                     to_string(spec.weight.shape()));
  }
}

}  // namespace

void AnabParams::validate() const {
  const std::size_t c = channels();
  check_1x1(query, c, c, "query");
  check_1x1(key, c, c, "key");
  check_1x1(value, c, c, "value");
  check_1x1(attention, c, 1, "attention");
  check_1x1(output, c, c, "output");
  pyramid.validate();
}

AnabParams AnabParams::random(std::size_t channels, std::uint64_t seed,
                              double scale) {
  std::mt19937_64 rng(seed);
  AnabParams p;
  p.query = random_1x1(channels, channels, rng, scale);
  p.key = random_1x1(channels, channels, rng, scale);
  p.value = random_1x1(channels, channels, rng, scale);
  p.attention = random_1x1(channels, 1, rng, scale);
  p.output = random_1x1(channels, channels, rng, scale);
  return p;
}

AnabParams AnabParams::identity(std::size_t channels) {
  AnabParams p;
  p.query = identity_1x1(channels);
  p.key = identity_1x1(channels);
  p.value = identity_1x1(channels);
  p.attention = ConvSpec::zeros(channels, 1, 1, 1);
  p.output = identity_1x1(channels);
  return p;
}

AnabVars bind_anab(Tape& tape, const AnabParams& p, bool trainable) {
  return {tape.leaf(p.query.weight, trainable),     tape.leaf(p.query.bias, trainable),
          tape.leaf(p.key.weight, trainable),       tape.leaf(p.key.bias, trainable),
          tape.leaf(p.value.weight, trainable),     tape.leaf(p.value.bias, trainable),
          tape.leaf(p.attention.weight, trainable), tape.leaf(p.attention.bias, trainable),
          tape.leaf(p.output.weight, trainable),    tape.leaf(p.output.bias, trainable)};
}

// ---------------------------------------------------------------------------
// Ops

Var attention_map(Var features, Var weight, Var bias) {
  if (weight.shape().batch != 1) {
    throw ShapeError("attention_map: conv must have one output channel");
  }
  return sigmoid(conv2d(features, weight, bias, ConvGeometry{1, 0}));
}

Var pa2_pool(Var features, Var attention, const PyramidSpec& spec) {
  spec.validate();
  if (features.tape() != attention.tape()) {
    throw std::invalid_argument("pa2_pool: operands on different tapes");
  }
  const Shape fs = features.shape();
  if (fs.batch != 1 || attention.shape() != Shape{1, 1, fs.height, fs.width}) {
    throw ShapeError("pa2_pool: features " + to_string(fs) + " and attention " +
                     to_string(attention.shape()) + " disagree");
  }
  const std::size_t h = fs.height;
  const std::size_t w = fs.width;
  const std::size_t channels = fs.channels;
  const std::size_t plane = h * w;
  const Tensor& f = features.value();
  const Tensor& a = attention.value();
  const double eps = spec.epsilon;

  struct Bin {
    std::size_t y0, y1, x0, x1;
    double mass;  // sum(a) + eps
  };
  std::vector<Bin> bins;
  bins.reserve(spec.descriptor_count());
  for (const PyramidLevel& level : spec.levels) {
    for (std::size_t py = 0; py < level.rows; ++py) {
      const auto [y0, y1] = pool_bin(py, level.rows, h);
      for (std::size_t px = 0; px < level.cols; ++px) {
        const auto [x0, x1] = pool_bin(px, level.cols, w);
        double mass = 0.0;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) mass += a[y * w + x];
        mass += eps;
        if (!(mass > 0.0)) {
          throw std::domain_error("pa2_pool: bin with zero attention mass (empty bin "
                                  "or zero map with epsilon 0)");
        }
        bins.push_back({y0, y1, x0, x1, mass});
      }
    }
  }

  Tensor out = Tensor::matrix(bins.size(), channels);
  for (std::size_t r = 0; r < bins.size(); ++r) {
    const Bin& b = bins[r];
    for (std::size_t c = 0; c < channels; ++c) {
      double acc = 0.0;
      for (std::size_t y = b.y0; y < b.y1; ++y)
        for (std::size_t x = b.x0; x < b.x1; ++x)
          acc += a[y * w + x] * f[c * plane + y * w + x];
      out(r, c) = acc / b.mass;
    }
  }

  Tape& tape = *features.tape();
  const Var inputs[] = {features, attention};
  return tape.record(
      "pa2_pool", std::move(out), inputs,
      [=, &tape, bins = std::move(bins)](const Tensor& desc, std::span<const double> gout) {
        const Tensor& f = features.value();
        const Tensor& a = attention.value();
        std::span<double> gf = features.requires_grad() ? tape.grad(features) : std::span<double>{};
        std::span<double> ga = attention.requires_grad() ? tape.grad(attention) : std::span<double>{};
        for (std::size_t r = 0; r < bins.size(); ++r) {
          const Bin& b = bins[r];
          for (std::size_t c = 0; c < channels; ++c) {
            const double g = gout[r * channels + c] / b.mass;
            if (g == 0.0) continue;
            const double d = desc(r, c);
            for (std::size_t y = b.y0; y < b.y1; ++y)
              for (std::size_t x = b.x0; x < b.x1; ++x) {
                const std::size_t p = y * w + x;
                if (!gf.empty()) gf[c * plane + p] += g * a[p];
                if (!ga.empty()) ga[p] += g * (f[c * plane + p] - d);
              }
          }
        }
      });
}

Var anab_forward(Var features, const AnabVars& v, const AnabParams& params,
                 AttentionTensors* trace) {
  params.validate();
  const Shape s = features.shape();
  if (s.batch != 1 || s.channels != params.channels()) {
    throw ShapeError("anab_forward: features " + to_string(s) + " for a " +
                     std::to_string(params.channels()) + "-channel block");
  }
  const ConvGeometry one{1, 0};
  Var attn = attention_map(features, v.attention_w, v.attention_b);
  Var q = conv2d(features, v.query_w, v.query_b, one);
  Var k = conv2d(features, v.key_w, v.key_b, one);
  Var val = conv2d(features, v.value_w, v.value_b, one);

  Var key_pooled;
  Var value_pooled;
  if (params.sharing == AttentionSharing::kKeyValue) {
    key_pooled = pa2_pool(k, attn, params.pyramid);
    value_pooled = pa2_pool(val, attn, params.pyramid);
  } else {
    q = mul_spatial(q, attn);
    key_pooled = pa2_pool(k, attn, params.pyramid);
    Var uniform = features.tape()->constant(Tensor(attn.shape(), 1.0));
    value_pooled = pa2_pool(val, uniform, params.pyramid);
  }

  Var mq = to_rows(q);
  Var similarity = matmul(mq, transpose(key_pooled));
  Var mixed = matmul(softmax_lastdim(similarity), value_pooled);
  Var projected = conv2d(from_rows(mixed, s.height, s.width), v.output_w, v.output_b, one);
  Var out = params.residual ? add(projected, features) : projected;
  if (trace) *trace = {mq, key_pooled, value_pooled, similarity, mixed, attn};
  return out;
}

Tensor anab_forward(const Tensor& features, const AnabParams& params) {
  Tape tape;
  AnabVars v = bind_anab(tape, params, false);
  return anab_forward(tape.constant(features), v, params).value();
}

Tensor attention_map(const Tensor& features, const ConvSpec& conv1x1) {
  Tape tape;
  return attention_map(tape.constant(features), tape.constant(conv1x1.weight),
                       tape.constant(conv1x1.bias))
      .value();
}

Tensor pa2_pool(const Tensor& features, const Tensor& attention,
                const PyramidSpec& spec) {
  Tape tape;
  return pa2_pool(tape.constant(features), tape.constant(attention), spec).value();
}

// ---------------------------------------------------------------------------
// Baseline and benchmark

Tensor nonlocal_reference(const Tensor& features, const AnabParams& params) {
  params.validate();
  const Shape s = features.shape();
  if (s.batch != 1 || s.channels != params.channels()) {
    throw ShapeError("nonlocal_reference: features " + to_string(s));
  }
  const std::size_t n = s.height * s.width;
  const std::size_t channels = s.channels;
  const Tensor theta = conv2d(features, params.query);
  const Tensor phi = conv2d(features, params.key);
  const Tensor g = conv2d(features, params.value);

  // Position-major copies so the inner loops are contiguous.
  auto rows_of = [&](const Tensor& t) {
    std::vector<double> r(n * channels);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t i = 0; i < n; ++i) r[i * channels + c] = t[c * n + i];
    return r;
  };
  const std::vector<double> tq = rows_of(theta);
  const std::vector<double> tk = rows_of(phi);
  const std::vector<double> tv = rows_of(g);

  Tensor y(Shape{1, channels, s.height, s.width});
  std::vector<double> scores(n);
  std::vector<double> acc(channels);
  for (std::size_t i = 0; i < n; ++i) {
    const double* qi = &tq[i * channels];
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double* kj = &tk[j * channels];
      double dot = 0.0;
      for (std::size_t c = 0; c < channels; ++c) dot += qi[c] * kj[c];
      scores[j] = dot;
      peak = std::max(peak, dot);
    }
    double total = 0.0;
    for (double& sc : scores) {
      sc = std::exp(sc - peak);
      total += sc;
    }
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double p = scores[j] / total;
      const double* vj = &tv[j * channels];
      for (std::size_t c = 0; c < channels; ++c) acc[c] += p * vj[c];
    }
    for (std::size_t c = 0; c < channels; ++c) y[c * n + i] = acc[c];
  }
  Tensor out = conv2d(y, params.output);
  if (params.residual) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += features[i];
  }
  return out;
}

namespace {

template <typename F>
double median_seconds(int runs, F&& f) {
  std::vector<double> times;
  for (int r = 0; r < std::max(runs, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size();
  return m % 2 ? times[m / 2] : 0.5 * (times[m / 2 - 1] + times[m / 2]);
}

}  // namespace

ComplexityResult complexity_bench(std::size_t height, std::size_t width,
                                  std::size_t channels, const PyramidSpec& spec,
                                  int runs, std::uint64_t seed) {
  AnabParams params = AnabParams::random(channels, seed);
  params.pyramid = spec;
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor x(Shape{1, channels, height, width});
  for (double& v : x.values()) v = dist(rng);

  ComplexityResult r;
  r.height = height;
  r.width = width;
  r.channels = channels;
  r.n = height * width;
  r.l = spec.descriptor_count();
  double sink = 0.0;
  r.anab_seconds = median_seconds(runs, [&] { sink += anab_forward(x, params)[0]; });
  r.nonlocal_seconds =
      median_seconds(runs, [&] { sink += nonlocal_reference(x, params)[0]; });
  if (!std::isfinite(sink)) throw std::runtime_error("complexity_bench: non-finite output");
  return r;
}

void write_pgm(std::ostream& out, const Tensor& map) {
  const Shape s = map.shape();
  if (s.batch != 1 || s.channels != 1) {
    throw ShapeError("write_pgm: expected a single-channel map, got " + to_string(s));
  }
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double low = map.size() ? *lo : 0.0;
  const double range = map.size() ? *hi - *lo : 0.0;
  out << "P5\n" << s.width << ' ' << s.height << "\n255\n";
  for (double v : map.values()) {
    const double unit = range > 0.0 ? (v - low) / range : 0.0;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(unit * 255.0))));
  }
}

}  // namespace mono3d
