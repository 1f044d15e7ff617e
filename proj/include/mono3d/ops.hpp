#pragma once

#include <cstddef>
#include <span>
#include <utility>

#include "mono3d/tape.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

struct ConvGeometry {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Convolution parameters. weight is (out_ch, in_ch, k_h, k_w), bias is
/// (1, out_ch, 1, 1).
struct ConvSpec {
  Tensor weight;
  Tensor bias;
  ConvGeometry geometry;

  std::size_t out_channels() const { return weight.shape().batch; }
  std::size_t in_channels() const { return weight.shape().channels; }
  std::size_t kernel_h() const { return weight.shape().height; }
  std::size_t kernel_w() const { return weight.shape().width; }

  /// Zero-initialised spec with the given layout.
  static ConvSpec zeros(std::size_t in_ch, std::size_t out_ch, std::size_t k_h,
                        std::size_t k_w, ConvGeometry geometry = {});
  void validate() const;
};

/// Output spatial extent of a convolution; throws when it would be empty.
std::pair<std::size_t, std::size_t> conv_output_hw(const Shape& input,
                                                   std::size_t k_h,
                                                   std::size_t k_w,
                                                   ConvGeometry geometry);

// ---------------------------------------------------------------------------
// Differentiable ops. Each records a node on the tape of its first operand.

/// Cross-correlation with zero padding. Accumulation order per output is
/// bias, then (in_ch, k_y, k_x) row-major.
Var conv2d(Var input, Var weight, Var bias, ConvGeometry geometry);

/// Bilinear reads of points (P x 2 matrix of (y, x)) from batch 0 of input.
/// Output is P x C. Differentiable in both the input and the coordinates.
Var bilinear_gather(Var input, Var points);

Var matmul(Var a, Var b);
Var transpose(Var m);

/// Row-wise softmax of a matrix, stabilised by row-max subtraction.
Var softmax_lastdim(Var m);

/// Average pooling into bins_h x bins_w bins. Bin p along an axis of extent E
/// covers [floor(p*E/n), floor((p+1)*E/n)); every bin must be non-empty.
Var avg_pool_adaptive(Var input, std::size_t bins_h, std::size_t bins_w);

Var sigmoid(Var x);
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
/// Multiplies every channel of features (B, C, H, W) by map (B, 1, H, W).
Var mul_spatial(Var features, Var map);

Var sum(Var x);
/// Sum of x * weights, weights being a constant of x's shape.
Var weighted_sum(Var x, const Tensor& weights);

/// (1, C, H, W) -> (H*W) x C matrix; row r is pixel r in row-major order.
Var to_rows(Var t);
/// Inverse of to_rows.
Var from_rows(Var m, std::size_t height, std::size_t width);
/// (B, A*G, H, W) -> (B*H*W*A) x G; row ((b*H + y)*W + x)*A + a holds
/// channels [a*G, (a+1)*G).
Var channels_to_rows(Var t, std::size_t group);
Var concat_cols(std::span<const Var> parts);

// ---------------------------------------------------------------------------
// Plain (tape-free) helpers.

Tensor conv2d(const Tensor& input, const ConvSpec& spec);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax_lastdim(const Tensor& m);
Tensor avg_pool_adaptive(const Tensor& input, std::size_t bins_h,
                         std::size_t bins_w);

/// [start, end) of adaptive bin p out of n along an axis of the given extent.
std::pair<std::size_t, std::size_t> pool_bin(std::size_t p, std::size_t n,
                                             std::size_t extent);

/// Bilinear interpolation of plane (b, c) at fractional (y, x); positions
/// outside the plane read as zero. Integral positions return the grid value.
double bilinear_sample(const Tensor& input, double y, double x, std::size_t b,
                       std::size_t c);

struct BilinearResult {
  double value = 0.0;
  double d_dy = 0.0;
  double d_dx = 0.0;
};

/// Value plus partial derivatives in y and x (right derivative at grid lines).
BilinearResult bilinear_sample_grad(const Tensor& input, double y, double x,
                                    std::size_t b, std::size_t c);

/// Adds g times the interpolation weights into a gradient plane laid out like
/// input. Pairs with bilinear_sample for the input-side pullback.
void bilinear_scatter(std::span<double> grad_plane, const Shape& shape,
                      double y, double x, std::size_t b, std::size_t c,
                      double g);

}  // namespace mono3d
