#pragma once

#include <cmath>
#include <vector>

#include "spice/dsp/audio.hpp"

namespace spice {

// Gain that puts `noise` at `snr_db` below `clean` in RMS terms.
inline double snr_gain(double clean_rms, double noise_rms, double snr_db) {
  return clean_rms / noise_rms * std::pow(10.0, -snr_db / 20.0);
}

// clean + g * noise, with noise looped or truncated to the clean length.
// The result is not renormalized, so peaks may exceed 1.
inline AudioBuffer mix_at_snr(const AudioBuffer& clean, const AudioBuffer& noise,
                              double snr_db) {
  if (clean.sample_rate != noise.sample_rate) {
    throw AudioError("mix_at_snr: sample rates differ");
  }
  if (!std::isfinite(snr_db)) throw AudioError("mix_at_snr: SNR must be finite");
  if (clean.empty() || noise.empty()) throw AudioError("mix_at_snr: empty input");
  std::vector<double> fitted(clean.size());
  for (std::size_t i = 0; i < fitted.size(); ++i)
    fitted[i] = noise.samples[i % noise.size()];
  const double cr = rms(clean.samples), nr = rms(fitted);
  if (cr == 0) throw AudioError("mix_at_snr: silent clean signal, SNR undefined");
  if (nr == 0) throw AudioError("mix_at_snr: silent noise signal");
  const double g = snr_gain(cr, nr, snr_db);
  std::vector<double> out(clean.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = clean.samples[i] + g * fitted[i];
  return AudioBuffer(std::move(out), clean.sample_rate);
}

}  // namespace spice
