#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace spice::nn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Raised whenever an operation produces NaN or Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense row-major array. Rank-0 tensors (scalars) have an empty shape and
// one element.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() : data(1, T(0)) {}
  explicit Tensor(Shape s, T fill = T(0))
      : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> values)
      : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  std::span<T> values() { return data; }
  std::span<const T> values() const { return data; }

  T item() const {
    if (data.size() != 1) {
      throw ShapeError("item() on tensor of shape " + shape_str(shape));
    }
    return data[0];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

// x * 0 is NaN exactly when x is NaN or infinite; the branch-free sum
// vectorizes.
template <typename T>
bool all_finite(std::span<const T> xs) {
  constexpr std::size_t kLanes = 16;
  T acc[kLanes] = {};
  const std::size_t n = xs.size(), full = n - n % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes)
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += xs[i + j] * T(0);
  T total = T(0);
  for (std::size_t i = full; i < n; ++i) total += xs[i] * T(0);
  for (T a : acc) total += a;
  return total == T(0);
}

inline void expect_shape(const Shape& got, const Shape& want,
                         const char* what) {
  if (got != want) {
    throw ShapeError(std::string(what) + ": expected shape " +
                     shape_str(want) + ", got " + shape_str(got));
  }
}

inline void expect_rank(const Shape& got, std::size_t rank, const char* what) {
  if (got.size() != rank) {
    throw ShapeError(std::string(what) + ": expected rank " +
                     std::to_string(rank) + ", got shape " + shape_str(got));
  }
}

}  // namespace spice::nn
