#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mslm {

// Error with an op name and the offending shapes in the message.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a forward pass produces NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         std::multiplies<std::size_t>());
}

// Dense row-major n-dimensional array. product(shape) == data.size() always.
template <typename T>
struct NdArray {
  Shape shape;
  std::vector<T> data;

  NdArray() = default;
  NdArray(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("NdArray: shape " + shape_str(shape) + " does not match buffer of " +
                       std::to_string(data.size()) + " elements");
    }
  }

  static NdArray zeros(Shape s) {
    std::size_t n = shape_numel(s);
    return NdArray(std::move(s), std::vector<T>(n, T(0)));
  }
  static NdArray full(Shape s, T v) {
    std::size_t n = shape_numel(s);
    return NdArray(std::move(s), std::vector<T>(n, v));
  }
  static NdArray scalar(T v) { return NdArray({1}, {v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  // 2-D accessors; rank-1 arrays are treated as a single row where convenient.
  std::size_t rows() const { return rank() >= 2 ? shape[0] : 1; }
  std::size_t cols() const { return rank() >= 2 ? shape[1] : shape.at(0); }

  T& at2(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& at2(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool same_shape(const NdArray& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

template <typename T>
inline void check_same_shape(const char* op, const NdArray<T>& a, const NdArray<T>& b) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

}  // namespace mslm
