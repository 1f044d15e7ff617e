#include "mono3d/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace mono3d {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(' << shape.batch << ", " << shape.channels << ", " << shape.height
     << ", " << shape.width << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(shape), values_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(shape), values_(std::move(values)) {
  if (values_.size() != shape_.numel()) {
    throw ShapeError("tensor: " + std::to_string(values_.size()) +
                     " values do not fill shape " + to_string(shape_));
  }
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, double fill) {
  return Tensor(Shape{1, 1, rows, cols}, fill);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor(Shape{1, 1, rows, cols}, std::move(values));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1, 1, 1, 1}, value); }

std::span<double> Tensor::grad() {
  if (grad_.size() != values_.size()) grad_.assign(values_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() {
  if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), 0.0);
}

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](double v) { return std::isfinite(v); });
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != shape_.numel()) {
    throw ShapeError("reshape: " + to_string(shape_) + " -> " +
                     to_string(shape));
  }
  return Tensor(shape, values_);
}

namespace {

constexpr std::array<char, 4> kMagic = {'M', '3', 'T', 'N'};

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw std::runtime_error("read_tensor: truncated stream");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  const Shape& s = tensor.shape();
  for (std::size_t d : {s.batch, s.channels, s.height, s.width}) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : tensor.values()) put_le<double>(out, v);
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw std::runtime_error("read_tensor: bad magic, expected M3TN");
  }
  Shape s;
  s.batch = get_le<std::uint32_t>(in);
  s.channels = get_le<std::uint32_t>(in);
  s.height = get_le<std::uint32_t>(in);
  s.width = get_le<std::uint32_t>(in);
  std::vector<double> values(s.numel());
  for (double& v : values) v = get_le<double>(in);
  return Tensor(s, std::move(values));
}

void dump_tensor(std::ostream& out, const Tensor& tensor, int precision) {
  const Shape& s = tensor.shape();
  out << "tensor " << to_string(s) << '\n';
  std::ios::fmtflags flags = out.flags();
  out << std::setprecision(precision);
  for (std::size_t b = 0; b < s.batch; ++b) {
    for (std::size_t c = 0; c < s.channels; ++c) {
      out << "[" << b << ", " << c << "]\n";
      for (std::size_t y = 0; y < s.height; ++y) {
        for (std::size_t x = 0; x < s.width; ++x) {
          out << (x ? " " : "") << tensor.at(b, c, y, x);
        }
        out << '\n';
      }
    }
  }
  out.flags(flags);
}

}  // namespace mono3d
