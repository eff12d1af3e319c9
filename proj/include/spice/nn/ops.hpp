#pragma once

// Elementwise, reduction and reshaping ops. No broadcasting: binary ops
// require identical shapes.

#include <cmath>
#include <vector>

#include "spice/nn/autodiff.hpp"

namespace spice::nn {

namespace detail {

// bwd(dy, x, y) returns the input gradient contribution. Written as a
// select rather than dy * mask so the loop vectorizes.
template <typename T, typename Bwd>
void accumulate_unary_grad(T* __restrict g, const T* __restrict dy,
                           const T* __restrict x, const T* __restrict y,
                           std::size_t n, Bwd bwd) {
  for (std::size_t i = 0; i < n; ++i) g[i] += bwd(dy[i], x[i], y[i]);
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary(const Var<T>& x, Fwd fwd, Bwd bwd, const char* op) {
  Tensor<T> out(x.shape());
  {
    const T* __restrict xp = x.value().ptr();
    T* __restrict yp = out.ptr();
    const std::size_t n = out.size();
    for (std::size_t i = 0; i < n; ++i) yp[i] = fwd(xp[i]);
  }
  return make_result<T>(
      std::move(out), {x},
      [x, bwd](Node<T>& self) {
        accumulate_unary_grad(x.node().grad_buffer().ptr(), self.grad.ptr(),
                              x.value().ptr(), self.value.ptr(),
                              self.value.size(), bwd);
      },
      op);
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  expect_shape(b.shape(), a.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(
      std::move(out), {a, b},
      [a, b](Node<T>& self) {
        for (const Var<T>* v : {&a, &b}) {
          if (!v->requires_grad()) continue;
          auto& g = v->node().grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  expect_shape(b.shape(), a.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(
      std::move(out), {a, b},
      [a, b](Node<T>& self) {
        if (a.requires_grad()) {
          auto& g = a.node().grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (b.requires_grad()) {
          auto& g = b.node().grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  expect_shape(b.shape(), a.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(
      std::move(out), {a, b},
      [a, b](Node<T>& self) {
        if (a.requires_grad()) {
          auto& g = a.node().grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * b.value()[i];
        }
        if (b.requires_grad()) {
          auto& g = b.node().grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i)
            g[i] += self.grad[i] * a.value()[i];
        }
      },
      "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary<T>(
      x, [s](T v) { return s * v; }, [s](T dy, T, T) { return s * dy; }, "scale");
}

// x + c for a constant tensor c of the same shape.
template <typename T>
Var<T> add_constant(const Var<T>& x, const Tensor<T>& c) {
  expect_shape(c.shape, x.shape(), "add_constant");
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] + c[i];
  return make_result<T>(
      std::move(out), {x},
      [x](Node<T>& self) {
        auto& g = x.node().grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "add_constant");
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T c) {
  return detail::unary<T>(
      x, [c](T v) { return v + c; }, [](T dy, T, T) { return dy; }, "add_scalar");
}

// d|x|/dx is taken as 0 at x = 0.
template <typename T>
Var<T> abs(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return std::abs(v); },
      [](T dy, T v, T) { return v > 0 ? dy : (v < 0 ? -dy : T(0)); }, "abs");
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v * v; }, [](T dy, T v, T) { return T(2) * v * dy; }, "square");
}

// Huber norm: x^2/2 inside [-tau, tau], linear with slope tau outside.
template <typename T>
T huber_value(T x, T tau) {
  const T a = std::abs(x);
  return a <= tau ? T(0.5) * x * x : T(0.5) * tau * tau + tau * (a - tau);
}

template <typename T>
Var<T> huber(const Var<T>& x, T tau) {
  return detail::unary<T>(
      x, [tau](T v) { return huber_value(v, tau); },
      [tau](T dy, T v, T) { return dy * std::min(std::max(v, -tau), tau); },
      "huber");
}

// Gradient is zero wherever the clamp is active.
template <typename T>
Var<T> clamp(const Var<T>& x, T lo, T hi) {
  return detail::unary<T>(
      x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
      [lo, hi](T dy, T v, T) { return (v > lo && v < hi) ? dy : T(0); },
      "clamp");
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return detail::unary<T>(
      x, [](T v) { return v > 0 ? v : T(0); },
      [](T dy, T v, T) { return v > 0 ? dy : T(0); }, "relu");
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary<T>(
      x,
      [](T v) {
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T dy, T, T y) { return dy * y * (T(1) - y); }, "sigmoid");
}

// Sum of all elements, accumulated in double.
template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().values()) acc += static_cast<double>(v);
  return make_result<T>(
      Tensor<T>::scalar(static_cast<T>(acc)), {x},
      [x](Node<T>& self) {
        auto& g = x.node().grad_buffer();
        const T s = self.grad[0];
        for (auto& v : g.data) v += s;
      },
      "sum");
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " +
                     shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.value().data);
  return make_result<T>(
      std::move(out), {x},
      [x](Node<T>& self) {
        auto& g = x.node().grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

// Rows [begin, end) along the leading dimension.
template <typename T>
Var<T> rows(const Var<T>& x, std::size_t begin, std::size_t end) {
  if (x.value().rank() == 0 || begin > end || end > x.shape()[0]) {
    throw ShapeError("rows: range out of bounds for shape " +
                     shape_str(x.shape()));
  }
  const std::size_t stride = x.size() / x.shape()[0];
  Shape shape = x.shape();
  shape[0] = end - begin;
  Tensor<T> out(shape);
  std::copy(x.value().data.begin() + begin * stride,
            x.value().data.begin() + end * stride, out.data.begin());
  return make_result<T>(
      std::move(out), {x},
      [x, begin, stride](Node<T>& self) {
        auto& g = x.node().grad_buffer();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
          g[begin * stride + i] += self.grad[i];
      },
      "rows");
}

// Concatenation along the leading dimension.
template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw ShapeError("concat_rows: scalar input");
  std::size_t lead = 0;
  for (const auto& p : parts) {
    Shape tail_a(shape.begin() + 1, shape.end());
    Shape tail_b(p.shape().begin() + 1, p.shape().end());
    if (p.shape().empty() || tail_a != tail_b) {
      throw ShapeError("concat_rows: mismatched shape " + shape_str(p.shape()));
    }
    lead += p.shape()[0];
  }
  shape[0] = lead;
  Tensor<T> out(shape);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data.begin(), p.value().data.end(),
              out.data.begin() + offset);
    offset += p.size();
  }
  return make_result<T>(
      std::move(out), parts,
      [parts](Node<T>& self) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
          if (p.requires_grad()) {
            auto& g = p.node().grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
              g[i] += self.grad[offset + i];
          }
          offset += p.size();
        }
      },
      "concat_rows");
}

}  // namespace spice::nn
