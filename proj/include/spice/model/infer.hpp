#pragma once

// Frame-level inference: one slice per CQT frame at the fixed offset k*.

#include <iomanip>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "spice/calibration/calibration.hpp"
#include "spice/dsp/cqt.hpp"
#include "spice/model/network.hpp"

namespace spice {

struct FramePitch {
  double time_sec = 0;
  double y = 0;
  double confidence = 0;
  std::optional<double> pitch_semitones;
  std::optional<double> pitch_hz;
};

// Encodes every frame of `m` at offset k_star, `batch` frames at a time.
template <typename T>
std::vector<FramePitch> infer_cqt(SpiceNetwork<T>& net, const CqtMatrix& m, int k_star,
                                  const AffineCalibration* cal = nullptr,
                                  std::size_t batch = 256) {
  if (m.frames == 0) throw std::invalid_argument("infer: no CQT frames");
  const int width = net.spec().input_width;
  if (k_star < 0 || k_star + width > m.params.n_bins) {
    throw std::invalid_argument("infer: offset exceeds the CQT bin count");
  }
  if (cal && cal->k_star != k_star) {
    throw CalibrationError("calibration was fitted at offset " + std::to_string(cal->k_star) +
                           ", inference uses " + std::to_string(k_star));
  }
  std::vector<FramePitch> out(m.frames);
  for (std::size_t t0 = 0; t0 < m.frames; t0 += batch) {
    const std::size_t n = std::min(batch, m.frames - t0);
    nn::Tensor<T> x({n, 1, static_cast<std::size_t>(width)});
    for (std::size_t i = 0; i < n; ++i) {
      const double* row = m.frame(t0 + i) + k_star;
      for (int k = 0; k < width; ++k) x.ptr()[i * width + k] = static_cast<T>(row[k]);
    }
    const auto enc = net.encode(nn::Var<T>::constant(std::move(x)), nn::Mode::kInfer);
    for (std::size_t i = 0; i < n; ++i) {
      FramePitch& f = out[t0 + i];
      f.time_sec = m.time_of(t0 + i);
      f.y = enc.y.value()[i];
      f.confidence = enc.c.value()[i];
      if (cal) {
        f.pitch_semitones = cal->semitones(f.y);
        f.pitch_hz = cal->hz(f.y);
      }
    }
  }
  return out;
}

// Audio shorter than the longest CQT window is padded with silence.
template <typename T>
std::vector<FramePitch> infer_audio(SpiceNetwork<T>& net, const CqtKernel& cqt,
                                    const AudioBuffer& audio, int k_star,
                                    const AffineCalibration* cal = nullptr) {
  AudioBuffer a = audio;
  const auto min_len = static_cast<std::size_t>(cqt.params().longest_window());
  if (a.size() == 0) throw std::invalid_argument("infer: empty audio");
  if (a.size() < min_len) a.samples.resize(min_len, 0.0);
  auto frames = infer_cqt(net, cqt(a), k_star, cal);
  frames.resize(std::min(frames.size(), cqt.params().frame_count(audio.size())));
  return frames;
}

inline void write_pitch_csv(std::ostream& os, const std::vector<FramePitch>& frames) {
  const bool pitched = !frames.empty() && frames.front().pitch_semitones.has_value();
  os << "time_sec,y,confidence";
  if (pitched) os << ",pitch_semitones,pitch_hz";
  os << '\n' << std::setprecision(9);
  for (const auto& f : frames) {
    os << f.time_sec << ',' << f.y << ',' << f.confidence;
    if (pitched) os << ',' << *f.pitch_semitones << ',' << *f.pitch_hz;
    os << '\n';
  }
}

}  // namespace spice
