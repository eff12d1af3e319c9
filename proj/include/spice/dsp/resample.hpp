#pragma once

// Band-limited resampling with a Kaiser-windowed sinc kernel, and exact
// octave pitch shifts built on it.

#include <cmath>
#include <numbers>
#include <vector>

#include "spice/dsp/audio.hpp"

namespace spice {

struct ResampleOptions {
  int zero_crossings = 32;   // kernel half-width in (cutoff-scaled) periods
  double kaiser_beta = 9.0;
  double rolloff = 0.95;     // cutoff as a fraction of the lower Nyquist
};

namespace detail {

inline double kaiser(double x, double beta) {
  // x in [-1, 1]
  const double r = 1.0 - x * x;
  if (r <= 0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(r)) / std::cyl_bessel_i(0.0, beta);
}

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

}  // namespace detail

// Output sample i is the band-limited input evaluated at time i*ratio
// (in input samples); `out_len` samples are produced. Cutoff follows the
// lower of the two rates. The kernel is tabulated and linearly
// interpolated.
inline std::vector<double> resample_by_ratio(const std::vector<double>& x,
                                             double ratio, std::size_t out_len,
                                             const ResampleOptions& opt = {}) {
  if (!(ratio > 0)) throw AudioError("resample ratio must be positive");
  const double cutoff = opt.rolloff * std::min(1.0, 1.0 / ratio);
  const double half_width = opt.zero_crossings / cutoff;  // input samples
  constexpr int kTableRes = 1024;                         // entries per sample
  const auto table_len = static_cast<std::size_t>(std::ceil(half_width * kTableRes)) + 2;
  std::vector<double> table(table_len);
  for (std::size_t i = 0; i < table_len; ++i) {
    const double d = static_cast<double>(i) / kTableRes;
    table[i] = d >= half_width ? 0.0
                               : cutoff * detail::sinc(cutoff * d) *
                                     detail::kaiser(d / half_width, opt.kaiser_beta);
  }
  auto kernel = [&](double d) {
    const double u = std::abs(d) * kTableRes;
    const auto i = static_cast<std::size_t>(u);
    if (i + 1 >= table_len) return 0.0;
    const double f = u - static_cast<double>(i);
    return table[i] + f * (table[i + 1] - table[i]);
  };

  const long n = static_cast<long>(x.size());
  std::vector<double> y(out_len, 0.0);
  for (std::size_t i = 0; i < out_len; ++i) {
    const double t = static_cast<double>(i) * ratio;
    const long lo = std::max<long>(0, static_cast<long>(std::ceil(t - half_width)));
    const long hi = std::min<long>(n - 1, static_cast<long>(std::floor(t + half_width)));
    double acc = 0;
    for (long j = lo; j <= hi; ++j)
      acc += x[static_cast<std::size_t>(j)] * kernel(t - static_cast<double>(j));
    y[i] = acc;
  }
  return y;
}

// Output length is round(N * target / source).
inline AudioBuffer resample(const AudioBuffer& audio, int target_rate,
                            const ResampleOptions& opt = {}) {
  if (target_rate <= 0) throw AudioError("target rate must be positive");
  audio.validate();
  if (target_rate == audio.sample_rate) return audio;
  const double ratio = static_cast<double>(audio.sample_rate) / target_rate;
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(audio.size()) / ratio));
  return AudioBuffer(resample_by_ratio(audio.samples, ratio, out_len, opt), target_rate);
}

// Scales pitch by 2^n by reading the signal 2^n times faster. Duration
// changes by 2^-n; the sample rate is kept.
inline AudioBuffer pitch_shift_octaves(const AudioBuffer& audio, int n,
                                       const ResampleOptions& opt = {}) {
  if (n < -1 || n > 1) throw AudioError("octave shift must be -1, 0 or +1");
  audio.validate();
  if (n == 0) return audio;
  const double ratio = std::ldexp(1.0, n);
  const auto out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(audio.size()) / ratio));
  return AudioBuffer(resample_by_ratio(audio.samples, ratio, out_len, opt),
                     audio.sample_rate);
}

}  // namespace spice
