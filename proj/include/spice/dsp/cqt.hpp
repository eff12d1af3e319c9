#pragma once

// Constant-Q magnitude transform computed with direct per-bin atoms.
//
// Bin k is centred at f_base * 2^(k/Q) and uses a Hann window of
// ceil(Q * sr / f_k) samples, so every bin has bandwidth f_k / Q. Atoms are
// scaled by 2 / sum(window), which maps a unit sinusoid at f_k to magnitude
// 1. Frame t is centred on sample t * H, with reflection at both ends.

#include <Eigen/Core>

#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spice/dsp/audio.hpp"

namespace spice {

class CqtError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CqtParams {
  int bins_per_octave = 24;      // Q
  double f_base = 32.7031956626; // C1
  int n_bins = 190;              // F_max
  int hop = 512;                 // H
  int sample_rate = 16000;
  std::string window = "hann";

  double bin_frequency(double k) const { return f_base * std::exp2(k / bins_per_octave); }

  int window_length(int k) const {
    return static_cast<int>(std::ceil(bins_per_octave * sample_rate / bin_frequency(k)));
  }
  int longest_window() const { return window_length(0); }

  void validate() const {
    if (bins_per_octave <= 0) throw CqtError("bins_per_octave must be > 0");
    if (!(f_base > 0)) throw CqtError("f_base must be > 0");
    if (n_bins <= 0) throw CqtError("n_bins must be > 0");
    if (hop <= 0) throw CqtError("hop must be > 0");
    if (sample_rate <= 0) throw CqtError("sample_rate must be > 0");
    if (window != "hann") throw CqtError("unsupported window '" + window + "'");
    if (bin_frequency(n_bins - 1) >= sample_rate / 2.0) {
      throw CqtError("highest CQT bin at " + std::to_string(bin_frequency(n_bins - 1)) +
                     " Hz is not below Nyquist");
    }
  }

  // Bin position of a frequency on the fractional grid.
  double bin_of(double hz) const { return bins_per_octave * std::log2(hz / f_base); }

  std::size_t frame_count(std::size_t n_samples) const { return n_samples / hop + 1; }
};

// T x F_max magnitudes, row-major by frame.
struct CqtMatrix {
  CqtParams params;
  std::size_t frames = 0;
  std::vector<double> values;

  std::size_t bins() const { return static_cast<std::size_t>(params.n_bins); }
  double at(std::size_t t, std::size_t k) const { return values[t * bins() + k]; }
  const double* frame(std::size_t t) const { return values.data() + t * bins(); }
  double time_of(std::size_t t) const {
    return static_cast<double>(t) * params.hop / params.sample_rate;
  }
};

struct CqtSlice {
  std::vector<double> values;
  int offset = 0;
  std::size_t frame = 0;
};

// Precomputed atoms for one parameter set; reusable across signals.
class CqtKernel {
 public:
  explicit CqtKernel(CqtParams params) : params_(std::move(params)) {
    params_.validate();
    const int K = params_.n_bins;
    cos_.resize(K);
    sin_.resize(K);
    for (int k = 0; k < K; ++k) {
      const int n = params_.window_length(k);
      const double f = params_.bin_frequency(k);
      std::vector<double> w(n);
      double wsum = 0;
      for (int i = 0; i < n; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (i + 0.5) / n);
        wsum += w[i];
      }
      const double scale = 2.0 / wsum;
      const double centre = (n - 1) / 2.0;
      cos_[k].resize(n);
      sin_[k].resize(n);
      for (int i = 0; i < n; ++i) {
        const double ph = 2 * std::numbers::pi * f * (i - centre) / params_.sample_rate;
        cos_[k][i] = scale * w[i] * std::cos(ph);
        sin_[k][i] = scale * w[i] * std::sin(ph);
      }
    }
  }

  const CqtParams& params() const { return params_; }

  CqtMatrix operator()(const AudioBuffer& audio) const {
    audio.validate();
    if (audio.sample_rate != params_.sample_rate) {
      throw CqtError("audio rate " + std::to_string(audio.sample_rate) +
                     " Hz does not match CQT rate " +
                     std::to_string(params_.sample_rate) + " Hz");
    }
    const std::size_t len = audio.size();
    const auto longest = static_cast<std::size_t>(params_.longest_window());
    if (len < longest) {
      throw CqtError("audio has " + std::to_string(len) +
                     " samples, shorter than the longest CQT window (" +
                     std::to_string(longest) + ")");
    }
    // Reflection padding: x[-i] = x[i], x[len-1+i] = x[len-1-i].
    const std::size_t pad = longest / 2 + 1;
    std::vector<double> padded(len + 2 * pad);
    for (std::size_t i = 0; i < padded.size(); ++i) {
      long j = static_cast<long>(i) - static_cast<long>(pad);
      const long n = static_cast<long>(len);
      if (j < 0) j = -j;
      if (j >= n) j = 2 * (n - 1) - j;
      padded[i] = audio.samples[static_cast<std::size_t>(j)];
    }

    CqtMatrix out;
    out.params = params_;
    out.frames = params_.frame_count(len);
    const std::size_t F = out.bins();
    out.values.assign(out.frames * F, 0.0);
    using Vec = Eigen::Map<const Eigen::VectorXd>;
    for (std::size_t k = 0; k < F; ++k) {
      const std::size_t n = cos_[k].size();
      const Vec c(cos_[k].data(), static_cast<Eigen::Index>(n));
      const Vec s(sin_[k].data(), static_cast<Eigen::Index>(n));
      const std::size_t half = (n - 1) / 2;
      for (std::size_t t = 0; t < out.frames; ++t) {
        const std::size_t start = t * params_.hop + pad - half;
        const Vec x(padded.data() + start, static_cast<Eigen::Index>(n));
        const double re = x.dot(c), im = x.dot(s);
        out.values[t * F + k] = std::sqrt(re * re + im * im);
      }
    }
    return out;
  }

 private:
  CqtParams params_;
  std::vector<std::vector<double>> cos_, sin_;
};

inline CqtMatrix compute_cqt(const AudioBuffer& audio, const CqtParams& params) {
  return CqtKernel(params)(audio);
}

inline CqtSlice slice_cqt(const CqtMatrix& m, std::size_t t, int k, int width = 128) {
  if (t >= m.frames) {
    throw CqtError("frame " + std::to_string(t) + " out of range (" +
                   std::to_string(m.frames) + " frames)");
  }
  if (k < 0 || width <= 0 || k + width > m.params.n_bins) {
    throw CqtError("slice offset " + std::to_string(k) + " with width " +
                   std::to_string(width) + " exceeds " +
                   std::to_string(m.params.n_bins) + " bins");
  }
  CqtSlice s;
  s.values.assign(m.frame(t) + k, m.frame(t) + k + width);
  s.offset = k;
  s.frame = t;
  return s;
}

// One row per frame, F_max columns, 9 significant digits.
inline void write_cqt_csv(std::ostream& os, const CqtMatrix& m) {
  os << std::setprecision(9);
  for (std::size_t t = 0; t < m.frames; ++t) {
    for (std::size_t k = 0; k < m.bins(); ++k) {
      if (k) os << ',';
      os << m.at(t, k);
    }
    os << '\n';
  }
}

}  // namespace spice
