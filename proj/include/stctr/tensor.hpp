#pragma once

#include <cstddef>
#include <numeric>
#include <sstream>
#include <vector>

#include "stctr/common.hpp"

namespace stctr {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major tensor of doubles. Plain value type: copyable, movable,
// immutable by convention once handed to a Graph.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size()) {
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
    }
  }

  size_t numel() const { return data.size(); }
  size_t ndim() const { return shape.size(); }

  // 2-D accessors; a 1-D tensor is treated as a single row.
  size_t rows() const { return shape.size() >= 2 ? shape[0] : 1; }
  size_t cols() const {
    if (shape.empty()) return 0;
    return shape.size() >= 2 ? shape[1] : shape[0];
  }

  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }

  bool is_scalar() const { return numel() == 1; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor identity(size_t n) {
    Tensor t({n, n});
    for (size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
  }

  static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
  }

  static Tensor normal(Shape s, Rng& rng, double mean, double stddev) {
    Tensor t(std::move(s));
    for (double& v : t.data) v = mean + stddev * rng.normal();
    return t;
  }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

}  // namespace stctr
