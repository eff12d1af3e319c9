#pragma once

// Differentiable layer primitives on [batch, channels, width] tensors.
// Convolutions lower to one GEMM per call through im2col, with the batch
// folded into the column dimension.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <string>
#include <vector>

#include "spice/nn/autodiff.hpp"

namespace spice::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t channels = 0;   // channels of the wide (input-side) tensor
  std::size_t width = 0;      // width of the wide tensor
  std::size_t kernel = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t out_width = 0;  // number of sliding positions
};

inline std::size_t conv_output_width(std::size_t width, std::size_t kernel,
                                     std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  if (width + 2 * padding < kernel) {
    throw ShapeError("conv: kernel " + std::to_string(kernel) +
                     " does not fit padded width " +
                     std::to_string(width + 2 * padding));
  }
  return (width + 2 * padding - kernel) / stride + 1;
}

inline std::size_t conv_transpose_output_width(std::size_t width,
                                               std::size_t kernel,
                                               std::size_t stride,
                                               std::size_t padding,
                                               std::size_t output_padding) {
  if (stride == 0) throw ShapeError("conv_transpose: stride must be positive");
  if (output_padding >= stride) {
    throw ShapeError("conv_transpose: output padding must be < stride");
  }
  const long w = static_cast<long>((width - 1) * stride + kernel +
                                   output_padding) -
                 2 * static_cast<long>(padding);
  if (width == 0 || w <= 0) throw ShapeError("conv_transpose: empty output");
  return static_cast<std::size_t>(w);
}

namespace detail {

// Positions j in [lo, hi) for which j*stride + k - padding lies in
// [0, width).
inline std::pair<std::size_t, std::size_t> valid_range(const ConvGeometry& g,
                                                       std::size_t k) {
  const long s = static_cast<long>(g.stride);
  const long off = static_cast<long>(k) - static_cast<long>(g.padding);
  const long w = static_cast<long>(g.width);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (w - 1 - off) < 0 ? 0 : (w - 1 - off) / s + 1;
  lo = std::min<long>(lo, static_cast<long>(g.out_width));
  hi = std::clamp<long>(hi, lo, static_cast<long>(g.out_width));
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// col(c*K + k, b*OW + j) = x[b, c, j*stride + k - padding], zero outside.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  const std::size_t cols = g.batch * g.out_width;
  for (std::size_t k = 0; k < g.kernel; ++k) {
    const auto [lo, hi] = valid_range(g, k);
    const long off = static_cast<long>(k) - static_cast<long>(g.padding);
    for (std::size_t c = 0; c < g.channels; ++c) {
      T* row = col + (c * g.kernel + k) * cols;
      for (std::size_t b = 0; b < g.batch; ++b) {
        const T* src = x + (b * g.channels + c) * g.width;
        T* dst = row + b * g.out_width;
        std::fill(dst, dst + lo, T(0));
        std::fill(dst + hi, dst + g.out_width, T(0));
        if (g.stride == 1) {
          std::copy(src + (static_cast<long>(lo) + off),
                    src + (static_cast<long>(hi) + off), dst + lo);
        } else {
          for (std::size_t j = lo; j < hi; ++j)
            dst[j] = src[static_cast<long>(j * g.stride) + off];
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into x.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  const std::size_t cols = g.batch * g.out_width;
  for (std::size_t k = 0; k < g.kernel; ++k) {
    const auto [lo, hi] = valid_range(g, k);
    const long off = static_cast<long>(k) - static_cast<long>(g.padding);
    for (std::size_t c = 0; c < g.channels; ++c) {
      const T* row = col + (c * g.kernel + k) * cols;
      for (std::size_t b = 0; b < g.batch; ++b) {
        T* dst = x + (b * g.channels + c) * g.width;
        const T* src = row + b * g.out_width;
        if (g.stride == 1) {
          T* d = dst + (static_cast<long>(lo) + off);
          for (std::size_t j = lo; j < hi; ++j) d[j - lo] += src[j];
        } else {
          for (std::size_t j = lo; j < hi; ++j)
            dst[static_cast<long>(j * g.stride) + off] += src[j];
        }
      }
    }
  }
}

// Sum of term(i) over [0, n) in double. Independent lanes let the loop
// vectorize without reassociation flags; the order is still fixed.
template <typename F>
double lane_sum(std::size_t n, F term) {
  constexpr std::size_t kLanes = 16;
  double acc[kLanes] = {};
  const std::size_t full = n - n % kLanes;
  for (std::size_t i = 0; i < full; i += kLanes)
    for (std::size_t j = 0; j < kLanes; ++j) acc[j] += term(i + j);
  double total = 0;
  for (std::size_t i = full; i < n; ++i) total += term(i);
  for (double a : acc) total += a;
  return total;
}

// [B, C, W] <-> [C, B*W]
template <typename T>
void batch_to_channel_major(const T* x, std::size_t B, std::size_t C,
                            std::size_t W, T* out) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      std::copy(x + (b * C + c) * W, x + (b * C + c + 1) * W,
                out + c * B * W + b * W);
}

template <typename T>
void channel_major_to_batch(const T* m, std::size_t B, std::size_t C,
                            std::size_t W, T* out) {
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      std::copy(m + c * B * W + b * W, m + c * B * W + (b + 1) * W,
                out + (b * C + c) * W);
}

}  // namespace detail

// Cross-correlation. input [B, C_in, W], weight [C_out, C_in, K],
// bias [C_out] -> [B, C_out, floor((W + 2p - K)/stride) + 1].
template <typename T>
Var<T> conv1d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              std::size_t stride = 1, std::size_t padding = 0) {
  expect_rank(input.shape(), 3, "conv1d input");
  expect_rank(weight.shape(), 3, "conv1d weight");
  const std::size_t B = input.shape()[0], C = input.shape()[1],
                    W = input.shape()[2];
  const std::size_t CO = weight.shape()[0], K = weight.shape()[2];
  if (weight.shape()[1] != C) {
    throw ShapeError("conv1d: weight expects " +
                     std::to_string(weight.shape()[1]) +
                     " input channels, got " + std::to_string(C));
  }
  expect_shape(bias.shape(), Shape{CO}, "conv1d bias");

  ConvGeometry g{B, C, W, K, stride, padding,
                 conv_output_width(W, K, stride, padding)};
  const std::size_t OW = g.out_width, cols = B * OW;

  auto col = std::make_shared<std::vector<T>>(C * K * cols);
  detail::im2col(input.value().ptr(), g, col->data());

  RowMatrix<T> out_m(CO, cols);
  ConstMatrixMap<T> wm(weight.value().ptr(), CO, C * K);
  ConstMatrixMap<T> cm(col->data(), C * K, cols);
  out_m.noalias() = wm * cm;
  for (std::size_t co = 0; co < CO; ++co)
    out_m.row(co).array() += bias.value()[co];

  Tensor<T> out({B, CO, OW});
  detail::channel_major_to_batch(out_m.data(), B, CO, OW, out.ptr());

  return make_result<T>(
      std::move(out), {input, weight, bias},
      [input, weight, bias, g, CO, col](Node<T>& self) {
        const std::size_t C = g.channels, K = g.kernel,
                          cols = g.batch * g.out_width;
        RowMatrix<T> gm(CO, cols);
        detail::batch_to_channel_major(self.grad.ptr(), g.batch, CO,
                                       g.out_width, gm.data());
        if (weight.requires_grad()) {
          MatrixMap<T> dw(weight.node().grad_buffer().ptr(), CO, C * K);
          ConstMatrixMap<T> cm(col->data(), C * K, cols);
          dw.noalias() += gm * cm.transpose();
        }
        if (bias.requires_grad()) {
          auto& db = bias.node().grad_buffer();
          for (std::size_t co = 0; co < CO; ++co) db[co] += gm.row(co).sum();
        }
        if (input.requires_grad()) {
          ConstMatrixMap<T> wm(weight.value().ptr(), CO, C * K);
          RowMatrix<T> dcol(C * K, cols);
          dcol.noalias() = wm.transpose() * gm;
          detail::col2im(dcol.data(), g, input.node().grad_buffer().ptr());
        }
      },
      "conv1d");
}

// Adjoint of conv1d's linear map in its input. input [B, C_in, W],
// weight [C_in, C_out, K] (same memory layout as the matching conv1d
// weight [C_out_conv = C_in, C_in_conv = C_out, K]), bias [C_out]
// -> [B, C_out, (W - 1)*stride - 2p + K + output_padding].
template <typename T>
Var<T> conv_transpose1d(const Var<T>& input, const Var<T>& weight,
                        const Var<T>& bias, std::size_t stride = 1,
                        std::size_t padding = 0,
                        std::size_t output_padding = 0) {
  expect_rank(input.shape(), 3, "conv_transpose1d input");
  expect_rank(weight.shape(), 3, "conv_transpose1d weight");
  const std::size_t B = input.shape()[0], CI = input.shape()[1],
                    W = input.shape()[2];
  if (weight.shape()[0] != CI) {
    throw ShapeError("conv_transpose1d: weight expects " +
                     std::to_string(weight.shape()[0]) +
                     " input channels, got " + std::to_string(CI));
  }
  const std::size_t CO = weight.shape()[1], K = weight.shape()[2];
  expect_shape(bias.shape(), Shape{CO}, "conv_transpose1d bias");
  const std::size_t OW =
      conv_transpose_output_width(W, K, stride, padding, output_padding);

  // Geometry of the forward conv that maps [B, CO, OW] -> [B, CI, W].
  ConvGeometry g{B, CO, OW, K, stride, padding, W};
  if (conv_output_width(OW, K, stride, padding) != W) {
    throw ShapeError("conv_transpose1d: inconsistent geometry");
  }
  const std::size_t cols = B * W;

  auto xm = std::make_shared<RowMatrix<T>>(CI, cols);
  detail::batch_to_channel_major(input.value().ptr(), B, CI, W, xm->data());
  ConstMatrixMap<T> wm(weight.value().ptr(), CI, CO * K);
  RowMatrix<T> col(CO * K, cols);
  col.noalias() = wm.transpose() * (*xm);

  Tensor<T> out({B, CO, OW});
  detail::col2im(col.data(), g, out.ptr());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t co = 0; co < CO; ++co) {
      T* row = out.ptr() + (b * CO + co) * OW;
      const T bv = bias.value()[co];
      for (std::size_t j = 0; j < OW; ++j) row[j] += bv;
    }

  return make_result<T>(
      std::move(out), {input, weight, bias},
      [input, weight, bias, g, CI, xm](Node<T>& self) {
        const std::size_t CO = g.channels, K = g.kernel, OW = g.width,
                          cols = g.batch * g.out_width;
        std::vector<T> gcol(CO * K * cols);
        detail::im2col(self.grad.ptr(), g, gcol.data());
        ConstMatrixMap<T> gc(gcol.data(), CO * K, cols);
        if (weight.requires_grad()) {
          MatrixMap<T> dw(weight.node().grad_buffer().ptr(), CI, CO * K);
          dw.noalias() += (*xm) * gc.transpose();
        }
        if (bias.requires_grad()) {
          auto& db = bias.node().grad_buffer();
          for (std::size_t b = 0; b < g.batch; ++b)
            for (std::size_t co = 0; co < CO; ++co) {
              const T* row = self.grad.ptr() + (b * CO + co) * OW;
              T acc = 0;
              for (std::size_t j = 0; j < OW; ++j) acc += row[j];
              db[co] += acc;
            }
        }
        if (input.requires_grad()) {
          ConstMatrixMap<T> wm(weight.value().ptr(), CI, CO * K);
          RowMatrix<T> dx(CI, cols);
          dx.noalias() = wm * gc;
          auto& gi = input.node().grad_buffer();
          std::vector<T> tmp(gi.size());
          detail::channel_major_to_batch(dx.data(), g.batch, CI, g.out_width,
                                         tmp.data());
          for (std::size_t i = 0; i < tmp.size(); ++i) gi[i] += tmp[i];
        }
      },
      "conv_transpose1d");
}

inline std::size_t pool_output_width(std::size_t width, std::size_t size,
                                     std::size_t stride, bool ceil_mode) {
  if (size == 0 || stride == 0) throw ShapeError("maxpool1d: bad window");
  if (width < size) {
    throw ShapeError("maxpool1d: window " + std::to_string(size) +
                     " larger than input width " + std::to_string(width));
  }
  std::size_t out = (width - size) / stride + 1;
  // Ceil mode keeps a trailing partial window as long as it starts inside
  // the input.
  if (ceil_mode && (width - size) % stride != 0 && out * stride < width) ++out;
  return out;
}

// Per-window maximum over the width axis. Floor mode drops trailing
// samples; ceil mode adds a clipped final window. Ties route the gradient
// to the first maximal index.
template <typename T>
Var<T> maxpool1d(const Var<T>& input, std::size_t size = 3,
                 std::size_t stride = 2, bool ceil_mode = false) {
  expect_rank(input.shape(), 3, "maxpool1d input");
  const std::size_t B = input.shape()[0], C = input.shape()[1],
                    W = input.shape()[2];
  const std::size_t OW = pool_output_width(W, size, stride, ceil_mode);
  Tensor<T> out({B, C, OW});
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(B * C * OW);
  const T* x = input.value().ptr();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* row = x + bc * W;
    T* orow = out.ptr() + bc * OW;
    std::uint32_t* arow = argmax->data() + bc * OW;
    for (std::size_t j = 0; j < OW; ++j) {
      const std::size_t start = j * stride;
      const std::size_t stop = std::min(start + size, W);
      std::size_t best = start;
      T bv = row[start];
      for (std::size_t i = start + 1; i < stop; ++i) {
        const bool gt = row[i] > bv;
        best = gt ? i : best;
        bv = gt ? row[i] : bv;
      }
      orow[j] = bv;
      arow[j] = static_cast<std::uint32_t>(bc * W + best);
    }
  }
  return make_result<T>(
      std::move(out), {input},
      [input, argmax](Node<T>& self) {
        auto& g = input.node().grad_buffer();
        for (std::size_t i = 0; i < argmax->size(); ++i)
          g[(*argmax)[i]] += self.grad[i];
      },
      "maxpool1d");
}

template <typename T>
struct BatchNormStats {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

enum class Mode { kTrain, kInfer };

// Per-channel normalization over batch and width. Train mode uses biased
// batch statistics and folds them into `stats` as
// running = momentum * running + (1 - momentum) * batch.
template <typename T>
Var<T> batchnorm1d(const Var<T>& input, const Var<T>& gamma,
                   const Var<T>& beta, BatchNormStats<T>& stats, Mode mode,
                   T momentum = T(0.99), T eps = T(1e-5)) {
  expect_rank(input.shape(), 3, "batchnorm1d input");
  const std::size_t B = input.shape()[0], C = input.shape()[1],
                    W = input.shape()[2];
  expect_shape(gamma.shape(), Shape{C}, "batchnorm1d gamma");
  expect_shape(beta.shape(), Shape{C}, "batchnorm1d beta");
  expect_shape(stats.running_mean.shape, Shape{C}, "batchnorm1d stats");
  const std::size_t n = B * W;
  if (n == 0) throw ShapeError("batchnorm1d: empty batch");

  const T* x = input.value().ptr();
  std::vector<double> mean_c(C, 0.0), var_c(C, 0.0);
  if (mode == Mode::kTrain) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* row = x + (b * C + c) * W;
        mean_c[c] += detail::lane_sum(W, [row](std::size_t w) {
          return static_cast<double>(row[w]);
        });
      }
    for (std::size_t c = 0; c < C; ++c) mean_c[c] /= static_cast<double>(n);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c) {
        const T* row = x + (b * C + c) * W;
        const double m = mean_c[c];
        var_c[c] += detail::lane_sum(W, [row, m](std::size_t w) {
          const double d = row[w] - m;
          return d * d;
        });
      }
    for (std::size_t c = 0; c < C; ++c) {
      var_c[c] /= static_cast<double>(n);
      stats.running_mean[c] = static_cast<T>(
          momentum * stats.running_mean[c] + (1 - momentum) * mean_c[c]);
      stats.running_var[c] = static_cast<T>(
          momentum * stats.running_var[c] + (1 - momentum) * var_c[c]);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean_c[c] = stats.running_mean[c];
      var_c[c] = stats.running_var[c];
    }
  }

  auto inv_std = std::make_shared<std::vector<T>>(C);
  for (std::size_t c = 0; c < C; ++c)
    (*inv_std)[c] =
        static_cast<T>(1.0 / std::sqrt(var_c[c] + static_cast<double>(eps)));

  auto xhat = std::make_shared<Tensor<T>>(input.shape());
  Tensor<T> out(input.shape());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t off = (b * C + c) * W;
      const T m = static_cast<T>(mean_c[c]), is = (*inv_std)[c];
      const T gm = gamma.value()[c], bt = beta.value()[c];
      for (std::size_t w = 0; w < W; ++w) {
        const T xh = (x[off + w] - m) * is;
        (*xhat)[off + w] = xh;
        out[off + w] = gm * xh + bt;
      }
    }

  const bool train = mode == Mode::kTrain;
  return make_result<T>(
      std::move(out), {input, gamma, beta},
      [input, gamma, beta, xhat, inv_std, B, C, W, n, train](Node<T>& self) {
        const T* dy = self.grad.ptr();
        const T* xh = xhat->ptr();
        std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const T* d = dy + (b * C + c) * W;
            const T* h = xh + (b * C + c) * W;
            sum_dy[c] += detail::lane_sum(
                W, [d](std::size_t w) { return static_cast<double>(d[w]); });
            sum_dy_xhat[c] += detail::lane_sum(W, [d, h](std::size_t w) {
              return static_cast<double>(d[w]) * h[w];
            });
          }
        for (std::size_t c = 0; c < C; ++c) {
          if (gamma.requires_grad())
            gamma.node().grad_buffer()[c] += static_cast<T>(sum_dy_xhat[c]);
          if (beta.requires_grad())
            beta.node().grad_buffer()[c] += static_cast<T>(sum_dy[c]);
        }
        if (!input.requires_grad()) return;
        auto& gi = input.node().grad_buffer();
        const double nn = static_cast<double>(n);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (b * C + c) * W;
            const double scale = gamma.value()[c] * (*inv_std)[c];
            if (train) {
              // dx = gamma * inv_std / n * (n dy - sum(dy) - xhat sum(dy xhat))
              const T a = static_cast<T>(scale);
              const T mdy = static_cast<T>(sum_dy[c] / nn);
              const T mdx = static_cast<T>(sum_dy_xhat[c] / nn);
              for (std::size_t w = 0; w < W; ++w)
                gi[off + w] += a * (dy[off + w] - mdy - xh[off + w] * mdx);
            } else {
              const T a = static_cast<T>(scale);
              for (std::size_t w = 0; w < W; ++w) gi[off + w] += a * dy[off + w];
            }
          }
      },
      "batchnorm1d");
}

// input [B, N], weight [N, M], bias [M] -> [B, M].
template <typename T>
Var<T> dense(const Var<T>& input, const Var<T>& weight, const Var<T>& bias) {
  expect_rank(input.shape(), 2, "dense input");
  expect_rank(weight.shape(), 2, "dense weight");
  const std::size_t B = input.shape()[0], N = input.shape()[1],
                    M = weight.shape()[1];
  if (weight.shape()[0] != N) {
    throw ShapeError("dense: weight " + shape_str(weight.shape()) +
                     " incompatible with input " + shape_str(input.shape()));
  }
  expect_shape(bias.shape(), Shape{M}, "dense bias");
  Tensor<T> out({B, M});
  {
    MatrixMap<T> om(out.ptr(), B, M);
    ConstMatrixMap<T> xm(input.value().ptr(), B, N);
    ConstMatrixMap<T> wm(weight.value().ptr(), N, M);
    om.noalias() = xm * wm;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t m = 0; m < M; ++m) om(b, m) += bias.value()[m];
  }
  return make_result<T>(
      std::move(out), {input, weight, bias},
      [input, weight, bias, B, N, M](Node<T>& self) {
        ConstMatrixMap<T> gm(self.grad.ptr(), B, M);
        if (weight.requires_grad()) {
          MatrixMap<T> dw(weight.node().grad_buffer().ptr(), N, M);
          ConstMatrixMap<T> xm(input.value().ptr(), B, N);
          dw.noalias() += xm.transpose() * gm;
        }
        if (bias.requires_grad()) {
          auto& db = bias.node().grad_buffer();
          for (std::size_t m = 0; m < M; ++m) db[m] += gm.col(m).sum();
        }
        if (input.requires_grad()) {
          MatrixMap<T> dx(input.node().grad_buffer().ptr(), B, N);
          ConstMatrixMap<T> wm(weight.value().ptr(), N, M);
          dx.noalias() += gm * wm.transpose();
        }
      },
      "dense");
}

}  // namespace spice::nn
