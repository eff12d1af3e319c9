#pragma once

// Affine map from the pitch head output to absolute semitones.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "spice/dsp/cqt.hpp"
#include "spice/model/network.hpp"
#include "spice/synth/synth.hpp"

namespace spice {

class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double semitones_to_hz(double p, double f_base = kDefaultFBase) {
  return f_base * std::exp2(p / 12.0);
}

inline double hz_to_semitones(double f, double f_base = kDefaultFBase) {
  if (!(f > 0)) throw std::invalid_argument("frequency must be > 0");
  return 12.0 * std::log2(f / f_base);
}

struct AffineCalibration {
  double b = 0;  // semitones
  double s = 1;  // semitones per unit y
  int m = 0;     // points used
  double residual_rms = 0;
  double f_base = kDefaultFBase;
  int k_star = 4;
  std::string checkpoint_hash;

  double semitones(double y) const { return b + s * y; }
  double hz(double y) const { return semitones_to_hz(semitones(y), f_base); }
};

struct CalibrationPoint {
  double y = 0;
  double p = 0;
};

// Ordinary least squares for p = b + s y, in centred form.
inline AffineCalibration fit_calibration(const std::vector<CalibrationPoint>& pts) {
  if (pts.size() < 2) throw CalibrationError("calibration needs at least 2 points");
  const double n = static_cast<double>(pts.size());
  double my = 0, mp = 0;
  for (const auto& q : pts) {
    if (!std::isfinite(q.y) || !std::isfinite(q.p)) {
      throw CalibrationError("calibration point is not finite");
    }
    my += q.y;
    mp += q.p;
  }
  my /= n;
  mp /= n;
  double syy = 0, syp = 0;
  for (const auto& q : pts) {
    syy += (q.y - my) * (q.y - my);
    syp += (q.y - my) * (q.p - mp);
  }
  if (!(syy > 0) || syy <= 1e-24 * (my * my + 1) * n) {
    throw CalibrationError("calibration points all have the same y");
  }
  AffineCalibration cal;
  cal.s = syp / syy;
  cal.b = mp - cal.s * my;
  if (cal.s == 0) throw CalibrationError("calibration slope is zero");
  cal.m = static_cast<int>(pts.size());
  double sse = 0;
  for (const auto& q : pts) {
    const double r = q.p - cal.semitones(q.y);
    sse += r * r;
  }
  cal.residual_rms = std::sqrt(sse / n);
  return cal;
}

// Centre-frame slices of M synthetic harmonic pieces, encoded at k*.
// Each piece is surrounded by silence so the long low-frequency windows
// never see a neighbouring piece.
template <typename T>
std::vector<CalibrationPoint> calibration_points(SpiceNetwork<T>& net, const CqtKernel& cqt,
                                                 const CalibrationConfig& cfg,
                                                 std::uint64_t seed, int k_star) {
  const CqtParams& cp = cqt.params();
  if (cfg.sample_rate != cp.sample_rate || cfg.hop != cp.hop) {
    throw CalibrationError("calibration set and CQT disagree on rate or hop");
  }
  const int width = net.spec().input_width;
  if (k_star < 0 || k_star + width > cp.n_bins) {
    throw CalibrationError("inference offset exceeds the CQT bin count");
  }
  const auto set = gen_calibration_set(cfg, seed);
  const int lead = (cp.longest_window() / cp.hop + 1);  // silent frames before
  nn::Tensor<T> x({set.size(), 1, static_cast<std::size_t>(width)});
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto& piece = set[i].audio.samples;
    std::vector<double> padded(static_cast<std::size_t>(lead * cp.hop) * 2 + piece.size(), 0.0);
    std::copy(piece.begin(), piece.end(), padded.begin() + lead * cp.hop);
    const CqtMatrix m = cqt(AudioBuffer(std::move(padded), cp.sample_rate));
    const std::size_t t = static_cast<std::size_t>(lead + set[i].center_frame);
    const double* row = m.frame(t) + k_star;
    for (int k = 0; k < width; ++k) x.ptr()[i * width + k] = static_cast<T>(row[k]);
  }
  const auto out = net.encode(nn::Var<T>::constant(std::move(x)), nn::Mode::kInfer);
  std::vector<CalibrationPoint> pts(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    pts[i] = {static_cast<double>(out.y.value()[i]), set[i].f0_semitones};
  }
  return pts;
}

template <typename T>
AffineCalibration calibrate_model(SpiceNetwork<T>& net, const CqtKernel& cqt,
                                  const CalibrationConfig& cfg, std::uint64_t seed,
                                  int k_star) {
  AffineCalibration cal = fit_calibration(calibration_points(net, cqt, cfg, seed, k_star));
  cal.f_base = cfg.f_base;
  cal.k_star = k_star;
  return cal;
}

inline void to_json(nlohmann::json& j, const AffineCalibration& c) {
  j = nlohmann::json{{"b", c.b},
                     {"s", c.s},
                     {"f_base", c.f_base},
                     {"k_star", c.k_star},
                     {"m", c.m},
                     {"residual_rms", c.residual_rms},
                     {"checkpoint_hash", c.checkpoint_hash}};
}

inline void from_json(const nlohmann::json& j, AffineCalibration& c) {
  j.at("b").get_to(c.b);
  j.at("s").get_to(c.s);
  j.at("f_base").get_to(c.f_base);
  j.at("k_star").get_to(c.k_star);
  j.at("m").get_to(c.m);
  j.at("residual_rms").get_to(c.residual_rms);
  c.checkpoint_hash = j.value("checkpoint_hash", std::string());
  if (!std::isfinite(c.b) || !std::isfinite(c.s) || c.s == 0) {
    throw CalibrationError("calibration has a non-finite or zero coefficient");
  }
  if (!(c.f_base > 0)) throw CalibrationError("calibration f_base must be > 0");
}

inline void save_calibration(const std::string& path, const AffineCalibration& c) {
  std::ofstream out(path);
  if (!out) throw CalibrationError("cannot write " + path);
  out << std::setw(2) << nlohmann::json(c) << '\n';
}

inline AffineCalibration load_calibration(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CalibrationError("cannot open " + path);
  try {
    return nlohmann::json::parse(in).get<AffineCalibration>();
  } catch (const nlohmann::json::exception& e) {
    throw CalibrationError(path + ": " + e.what());
  }
}

}  // namespace spice
