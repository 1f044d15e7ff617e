#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mono3d/ops.hpp"
#include "mono3d/tape.hpp"
#include "mono3d/tensor.hpp"

namespace mono3d {

/// Per output position and kernel tap, the (dy, dx) displacement of the
/// sampling point in feature-grid cells. Backed by a (H, W, taps, 2) tensor;
/// tap t = i * k_w + j.
class OffsetField {
 public:
  OffsetField() = default;
  OffsetField(std::size_t height, std::size_t width, std::size_t taps);
  explicit OffsetField(Tensor data);

  std::size_t height() const { return data_.shape().batch; }
  std::size_t width() const { return data_.shape().channels; }
  std::size_t taps() const { return data_.shape().height; }

  double& dy(std::size_t y, std::size_t x, std::size_t tap) {
    return data_.at(y, x, tap, 0);
  }
  double& dx(std::size_t y, std::size_t x, std::size_t tap) {
    return data_.at(y, x, tap, 1);
  }
  double dy(std::size_t y, std::size_t x, std::size_t tap) const {
    return data_.at(y, x, tap, 0);
  }
  double dx(std::size_t y, std::size_t x, std::size_t tap) const {
    return data_.at(y, x, tap, 1);
  }

  const Tensor& tensor() const { return data_; }

 private:
  Tensor data_;
};

struct AnchorHW {
  double h = 0.0;
  double w = 0.0;
  bool operator==(const AnchorHW&) const = default;
};

struct PixelResidual {
  double x = 0.0;
  double y = 0.0;
};

/// Predicted center residuals in image pixels, one per feature position
/// (row-major).
struct CenterResidualField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<PixelResidual> residuals;
};

/// Which regression head supplies the center residual used for alignment.
enum class CenterSource { kProjected3D, kBox2D };

/// Offsets that stretch a k_h x k_w kernel over the best anchor at each
/// position: (h_a / (S k_h) - 1) * (i - k_h / 2 + 0.5) rows, likewise
/// columns. best_anchor is row-major over height x width.
OffsetField shape_align_offsets(std::span<const AnchorHW> best_anchor,
                                std::size_t height, std::size_t width,
                                double stride, std::size_t k_h, std::size_t k_w);

/// 2D size of the highest-scoring anchor per position. scores is a
/// positions x anchors matrix; ties go to the lowest anchor index.
std::vector<AnchorHW> select_best_anchor(const Tensor& scores,
                                         std::span<const AnchorHW> templates);

/// (y_r / S, x_r / S) replicated over every tap.
OffsetField center_align_offsets(const CenterResidualField& residuals,
                                 double stride, std::size_t taps = 1);

/// Convolution whose taps read bilinearly at base position + offset. The same
/// offsets apply to every batch item. Differentiable in input, weight, bias
/// and offsets; integral sampling positions take the exact conv2d path.
Var align_conv(Var input, Var weight, Var bias, Var offsets,
               ConvGeometry geometry);

Tensor align_conv(const Tensor& input, const ConvSpec& spec,
                  const OffsetField& offsets);

/// Comma-separated dump: header, then y,x,dy0,dx0,dy1,dx1,... per position.
void write_offsets_csv(std::ostream& out, const OffsetField& offsets);

}  // namespace mono3d
