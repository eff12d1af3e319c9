#pragma once

// Training objectives. Batches hold T slice pairs; y and c tensors are
// [T, 1] and reconstructions [T, 1, F].

#include <algorithm>
#include <cmath>
#include <vector>

#include "spice/model/config.hpp"
#include "spice/nn/ops.hpp"

namespace spice {

// |(y1 - y2) - sigma (k1 - k2)| per pair.
template <typename T>
nn::Var<T> pitch_error(const nn::Var<T>& y1, const nn::Var<T>& y2,
                       const std::vector<int>& k1, const std::vector<int>& k2, T sigma) {
  nn::expect_shape(y2.shape(), y1.shape(), "pitch_error");
  if (k1.size() != y1.shape()[0] || k2.size() != k1.size()) {
    throw nn::ShapeError("pitch_error: offset count does not match batch");
  }
  nn::Tensor<T> shift(y1.shape());
  for (std::size_t i = 0; i < k1.size(); ++i)
    shift[i] = -sigma * static_cast<T>(k1[i] - k2[i]);
  return nn::abs(nn::add_constant(nn::sub(y1, y2), shift));
}

// Scalar reference for tests and diagnostics.
inline double pitch_error_value(double y1, double y2, int k1, int k2, double sigma) {
  return std::abs((y1 - y2) - sigma * (k1 - k2));
}

// Elementwise penalty on a nonnegative error: Huber, |x| or x^2/2.
template <typename T>
nn::Var<T> error_penalty(const nn::Var<T>& e, LossKind kind, T tau) {
  switch (kind) {
    case LossKind::kHuber: return nn::huber(e, tau);
    case LossKind::kL1: return nn::abs(e);
    case LossKind::kL2: return nn::scale(nn::square(e), T(0.5));
  }
  throw std::invalid_argument("unknown loss kind");
}

// Mean penalty of the pitch error over the batch.
template <typename T>
nn::Var<T> loss_pitch(const nn::Var<T>& y1, const nn::Var<T>& y2, const std::vector<int>& k1,
                      const std::vector<int>& k2, const SpiceConfig& cfg) {
  const T sigma = static_cast<T>(cfg.sigma()), tau = static_cast<T>(cfg.tau());
  return nn::mean(error_penalty(pitch_error(y1, y2, k1, k2, sigma), cfg.loss_kind, tau));
}

// Average of the four clean/noisy error variants e^{pq}, p, q in {c, n}.
template <typename T>
nn::Var<T> loss_pitch_noisy(const nn::Var<T>& y1c, const nn::Var<T>& y2c,
                            const nn::Var<T>& y1n, const nn::Var<T>& y2n,
                            const std::vector<int>& k1, const std::vector<int>& k2,
                            const SpiceConfig& cfg) {
  nn::Var<T> acc = loss_pitch(y1c, y2c, k1, k2, cfg);
  acc = nn::add(acc, loss_pitch(y1c, y2n, k1, k2, cfg));
  acc = nn::add(acc, loss_pitch(y1n, y2c, k1, k2, cfg));
  acc = nn::add(acc, loss_pitch(y1n, y2n, k1, k2, cfg));
  return nn::scale(acc, T(0.25));
}

// (1/T) sum_t ||x_t - xhat_t||^2 summed over every reconstructed slice.
// `pairs` is T; the reconstruction batch may hold 2T slices (both sides of
// each pair) or more when several variants target the same clean slices.
template <typename T>
nn::Var<T> loss_recon(const nn::Tensor<T>& target, const nn::Var<T>& recon, std::size_t pairs) {
  nn::expect_shape(recon.shape(), target.shape, "loss_recon");
  if (pairs == 0) throw nn::ShapeError("loss_recon: empty batch");
  nn::Tensor<T> neg(target.shape);
  for (std::size_t i = 0; i < neg.size(); ++i) neg[i] = -target[i];
  return nn::scale(nn::sum(nn::square(nn::add_constant(recon, neg))),
                   T(1) / static_cast<T>(pairs));
}

// Regression target 1 - clamp(e / sigma, 0, 1) for the confidence head,
// from pitch values that carry no gradient.
template <typename T>
nn::Tensor<T> confidence_target(const nn::Tensor<T>& y1, const nn::Tensor<T>& y2,
                                const std::vector<int>& k1, const std::vector<int>& k2,
                                double sigma) {
  nn::expect_shape(y2.shape, y1.shape, "confidence_target");
  nn::Tensor<T> out(y1.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double e = pitch_error_value(y1[i], y2[i], k1[i], k2[i], sigma);
    out[i] = static_cast<T>(1.0 - std::clamp(e / sigma, 0.0, 1.0));
  }
  return out;
}

// (1/T) sum_t (1 - c1 - e/sigma)^2 + (1 - c2 - e/sigma)^2 with e/sigma
// clamped to [0, 1]. y values enter only through stop_gradient copies.
template <typename T>
nn::Var<T> loss_conf(const nn::Var<T>& c1, const nn::Var<T>& c2, const nn::Var<T>& y1,
                     const nn::Var<T>& y2, const std::vector<int>& k1,
                     const std::vector<int>& k2, const SpiceConfig& cfg) {
  nn::expect_shape(c1.shape(), y1.shape(), "loss_conf");
  nn::expect_shape(c2.shape(), y1.shape(), "loss_conf");
  const nn::Var<T> s1 = nn::stop_gradient(y1), s2 = nn::stop_gradient(y2);
  nn::Tensor<T> tgt = confidence_target(s1.value(), s2.value(), k1, k2, cfg.sigma());
  for (auto& v : tgt.data) v = -v;
  const auto r1 = nn::sum(nn::square(nn::add_constant(c1, tgt)));
  const auto r2 = nn::sum(nn::square(nn::add_constant(c2, tgt)));
  return nn::scale(nn::add(r1, r2), T(1) / static_cast<T>(k1.size()));
}

template <typename T>
struct LossTerms {
  nn::Var<T> total, pitch, recon, conf;
};

template <typename T>
nn::Var<T> loss_total(const nn::Var<T>& pitch, const nn::Var<T>& recon, const nn::Var<T>& conf,
                      const SpiceConfig& cfg) {
  return nn::add(nn::add(nn::scale(pitch, static_cast<T>(cfg.w_pitch)),
                         nn::scale(recon, static_cast<T>(cfg.w_recon))),
                 nn::scale(conf, static_cast<T>(cfg.w_conf)));
}

}  // namespace spice
