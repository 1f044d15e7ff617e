#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mono3d {

/// Raised when operand shapes do not agree. Never broadcast silently.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t numel() const { return batch * channels * height * width; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& shape);

/// Dense (batch, channels, height, width) array of doubles, row-major, with an
/// optional gradient plane of identical shape. Matrices are stored as
/// (1, 1, rows, cols).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return values_.size(); }
  bool is_matrix() const { return shape_.batch == 1 && shape_.channels == 1; }
  std::size_t rows() const { return shape_.height; }
  std::size_t cols() const { return shape_.width; }

  std::span<double> values() & { return values_; }
  std::span<const double> values() const& { return values_; }
  // Views into a temporary would dangle.
  std::span<const double> values() && = delete;
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::size_t offset(std::size_t b, std::size_t c, std::size_t y,
                     std::size_t x) const {
    return ((b * shape_.channels + c) * shape_.height + y) * shape_.width + x;
  }
  double& at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) {
    return values_[offset(b, c, y, x)];
  }
  double at(std::size_t b, std::size_t c, std::size_t y, std::size_t x) const {
    return values_[offset(b, c, y, x)];
  }
  // Matrix access, (1, 1, rows, cols) layout.
  double& operator()(std::size_t r, std::size_t c) {
    return values_[r * shape_.width + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return values_[r * shape_.width + c];
  }

  bool has_grad() const { return !grad_.empty(); }
  /// Gradient plane; allocated (zero-filled) on first access.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  bool all_finite() const;

  /// Same values, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

 private:
  Shape shape_{};
  std::vector<double> values_;
  std::vector<double> grad_;
};

/// Little-endian binary: "M3TN", 4 x u32 shape, f64 payload.
void write_tensor(std::ostream& out, const Tensor& tensor);
Tensor read_tensor(std::istream& in);

/// Human-readable dump, one (b, c) plane at a time.
void dump_tensor(std::ostream& out, const Tensor& tensor, int precision = 6);

}  // namespace mono3d
