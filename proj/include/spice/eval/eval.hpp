#pragma once

// Pitch tracks, ground-truth loading, and the RPA / VRR metrics.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spice/calibration/calibration.hpp"

namespace spice {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PitchTrack {
  double hop = 0.032;  // seconds
  std::vector<std::optional<double>> semitones;  // nullopt = unvoiced
  std::vector<double> confidence;                // empty or one per frame

  std::size_t size() const { return semitones.size(); }
  bool has_confidence() const { return !confidence.empty(); }

  void validate() const {
    if (!(hop > 0)) throw EvalError("track hop must be > 0");
    for (const auto& p : semitones)
      if (p && !std::isfinite(*p)) throw EvalError("non-finite pitch in track");
    if (has_confidence() && confidence.size() != semitones.size()) {
      throw EvalError("confidence count does not match frame count");
    }
  }
};

enum class TruthFormat { kHzCsv, kSemitoneCsv };

inline TruthFormat parse_truth_format(const std::string& s) {
  if (s == "hz_csv") return TruthFormat::kHzCsv;
  if (s == "semitone_csv") return TruthFormat::kSemitoneCsv;
  throw EvalError("unknown truth format '" + s + "' (expected hz_csv or semitone_csv)");
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  const auto e = s.find_last_not_of(ws);
  s.erase(e == std::string::npos ? 0 : e + 1);
  return s;
}

inline std::optional<double> parse_number(const std::string& cell) {
  const std::string s = trim(cell);
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw EvalError("not a number: '" + s + "'");
  }
  if (used != s.size() || !std::isfinite(v)) throw EvalError("not a number: '" + s + "'");
  return v;
}

}  // namespace detail

// Rows `time,pitch` with an optional header line. 0 or an empty pitch
// field is unvoiced. Timestamps must advance by label_hop (or, when
// label_hop is 0, by the first observed step) to within 1% of the hop.
inline PitchTrack parse_ground_truth(std::istream& in, TruthFormat format, double label_hop,
                                     double f_base = kDefaultFBase) {
  PitchTrack track;
  std::vector<double> times;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() < 2) throw EvalError("line " + std::to_string(lineno) + ": expected 2 fields");
    std::optional<double> t;
    try {
      t = detail::parse_number(cells[0]);
    } catch (const EvalError&) {
      if (times.empty() && track.size() == 0 && lineno == 1) continue;  // header
      throw EvalError("line " + std::to_string(lineno) + ": malformed time");
    }
    if (!t) throw EvalError("line " + std::to_string(lineno) + ": missing time");
    std::optional<double> v;
    try {
      v = detail::parse_number(cells[1]);
    } catch (const EvalError& e) {
      throw EvalError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (v && *v < 0) throw EvalError("line " + std::to_string(lineno) + ": negative pitch");
    if (v && *v == 0) v.reset();
    if (v && format == TruthFormat::kHzCsv) v = hz_to_semitones(*v, f_base);
    times.push_back(*t);
    track.semitones.push_back(v);
  }
  if (times.empty()) throw EvalError("ground truth has no rows");
  double hop = label_hop;
  if (!(hop > 0)) {
    if (times.size() < 2) throw EvalError("cannot infer hop from a single row");
    hop = times[1] - times[0];
  }
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double want = times[0] + static_cast<double>(i) * hop;
    if (std::abs(times[i] - want) > 0.01 * hop) {
      throw EvalError("timestamps are not uniform at row " + std::to_string(i + 1));
    }
  }
  if (std::abs(times[0]) > 0.01 * hop) throw EvalError("ground truth must start at time 0");
  track.hop = hop;
  track.validate();
  return track;
}

inline PitchTrack load_ground_truth(const std::string& path, TruthFormat format,
                                    double label_hop, double f_base = kDefaultFBase) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open " + path);
  try {
    return parse_ground_truth(in, format, label_hop, f_base);
  } catch (const EvalError& e) {
    throw EvalError(path + ": " + e.what());
  }
}

// Reads the CSV written by inference. Frames with an empty pitch column
// are unvoiced; a file without pitch columns yields an all-unvoiced track.
inline PitchTrack parse_estimate_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw EvalError("estimate is empty");
  const auto header = detail::split_csv(detail::trim(line));
  int c_col = -1, p_col = -1;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "confidence") c_col = static_cast<int>(i);
    if (header[i] == "pitch_semitones") p_col = static_cast<int>(i);
  }
  if (header.empty() || header[0] != "time_sec" || c_col < 0) {
    throw EvalError("estimate header must start with time_sec and include confidence");
  }
  PitchTrack track;
  std::vector<double> times;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() < header.size()) {
      throw EvalError("line " + std::to_string(lineno) + ": too few fields");
    }
    try {
      times.push_back(detail::parse_number(cells[0]).value());
      track.confidence.push_back(detail::parse_number(cells[c_col]).value());
      track.semitones.push_back(p_col >= 0 ? detail::parse_number(cells[p_col]) : std::nullopt);
    } catch (const std::exception& e) {
      throw EvalError("line " + std::to_string(lineno) + ": malformed row");
    }
  }
  if (times.empty()) throw EvalError("estimate has no frames");
  track.hop = times.size() > 1 ? times[1] - times[0] : 0.032;
  track.validate();
  return track;
}

inline PitchTrack load_estimate(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open " + path);
  try {
    return parse_estimate_csv(in);
  } catch (const EvalError& e) {
    throw EvalError(path + ": " + e.what());
  }
}

// Nearest source frame in time; ties go to the later frame.
inline PitchTrack resample_track(const PitchTrack& src, double target_hop,
                                 std::optional<std::size_t> frames = std::nullopt) {
  src.validate();
  if (!(target_hop > 0)) throw EvalError("target hop must be > 0");
  if (src.size() == 0) throw EvalError("cannot resample an empty track");
  const double duration = static_cast<double>(src.size() - 1) * src.hop;
  const std::size_t n =
      frames ? *frames : static_cast<std::size_t>(std::floor(duration / target_hop + 1e-9)) + 1;
  PitchTrack out;
  out.hop = target_hop;
  out.semitones.resize(n);
  if (src.has_confidence()) out.confidence.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) * target_hop / src.hop;
    auto j = static_cast<std::size_t>(std::llround(pos));
    j = std::min(j, src.size() - 1);
    out.semitones[i] = src.semitones[j];
    if (src.has_confidence()) out.confidence[i] = src.confidence[j];
  }
  return out;
}

namespace detail {

inline void check_aligned(const PitchTrack& est, const PitchTrack& truth) {
  if (est.size() != truth.size()) {
    throw EvalError("estimate has " + std::to_string(est.size()) + " frames, truth has " +
                    std::to_string(truth.size()));
  }
  if (std::abs(est.hop - truth.hop) > 1e-6 * truth.hop) {
    throw EvalError("estimate and truth hops differ");
  }
}

}  // namespace detail

// Percent of truth-voiced frames with |error| < 0.5 semitones. Frames the
// estimate leaves unpitched count as misses.
inline double rpa(const PitchTrack& est, const PitchTrack& truth) {
  detail::check_aligned(est, truth);
  std::size_t voiced = 0, hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (!truth.semitones[i]) continue;
    ++voiced;
    if (est.semitones[i] && std::abs(*est.semitones[i] - *truth.semitones[i]) < 0.5) ++hit;
  }
  if (voiced == 0) throw EvalError("truth has no voiced frames");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(voiced);
}

struct RocPoint {
  double threshold = 0;
  double fa = 0;      // fraction of truth-unvoiced frames with c >= threshold
  double recall = 0;  // fraction of truth-voiced frames with c >= threshold
};

// Sweep over every distinct confidence, from (0,0) to (1,1).
inline std::vector<RocPoint> roc(const std::vector<double>& confidence,
                                 const std::vector<bool>& voiced) {
  if (confidence.size() != voiced.size()) throw EvalError("roc: size mismatch");
  std::size_t nv = 0;
  for (bool v : voiced) nv += v;
  const std::size_t nu = voiced.size() - nv;
  if (nu == 0) throw EvalError("truth has no unvoiced frames");
  if (nv == 0) throw EvalError("truth has no voiced frames");
  std::vector<std::size_t> idx(confidence.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
  std::vector<RocPoint> out;
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double c = confidence[idx[i]];
    while (i < idx.size() && confidence[idx[i]] == c) {
      if (voiced[idx[i]]) ++tp;
      else ++fp;
      ++i;
    }
    out.push_back({c, static_cast<double>(fp) / nu, static_cast<double>(tp) / nv});
  }
  return out;
}

// Recall at the exact FA target, linearly interpolated between the two
// sweep points that bracket it.
inline double recall_at_fa(const std::vector<RocPoint>& curve, double fa_target) {
  for (std::size_t i = 1; i < curve.size(); ++i) {
    if (curve[i].fa >= fa_target) {
      const auto& a = curve[i - 1];
      const auto& b = curve[i];
      if (b.fa == a.fa) return a.recall;
      const double u = (fa_target - a.fa) / (b.fa - a.fa);
      return a.recall + u * (b.recall - a.recall);
    }
  }
  return curve.back().recall;
}

inline std::vector<bool> voicing_of(const PitchTrack& truth) {
  std::vector<bool> v(truth.size());
  for (std::size_t i = 0; i < truth.size(); ++i) v[i] = truth.semitones[i].has_value();
  return v;
}

inline double vrr_at_fa(const PitchTrack& est, const PitchTrack& truth, double fa_target = 0.10) {
  detail::check_aligned(est, truth);
  if (!est.has_confidence()) throw EvalError("estimate carries no confidence");
  return 100.0 * recall_at_fa(roc(est.confidence, voicing_of(truth)), fa_target);
}

struct ErrorBin {
  double lo = 0, hi = 0;  // semitones, [lo, hi)
  std::size_t count = 0;
  double mean_abs_error = 0;
};

// Mean |error| over truth-voiced frames, grouped into equal-count bins of
// ground-truth pitch.
inline std::vector<ErrorBin> error_by_frequency(const PitchTrack& est, const PitchTrack& truth,
                                                std::size_t bins) {
  detail::check_aligned(est, truth);
  if (bins == 0) throw EvalError("error_by_frequency: need at least one bin");
  std::vector<std::pair<double, double>> pts;  // (truth, |error|)
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth.semitones[i] && est.semitones[i]) {
      pts.emplace_back(*truth.semitones[i], std::abs(*est.semitones[i] - *truth.semitones[i]));
    }
  }
  if (pts.empty()) throw EvalError("no frames with both estimate and truth pitch");
  std::sort(pts.begin(), pts.end());
  bins = std::min(bins, pts.size());
  std::vector<ErrorBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t i0 = b * pts.size() / bins, i1 = (b + 1) * pts.size() / bins;
    ErrorBin& e = out[b];
    e.lo = pts[i0].first;
    e.hi = i1 < pts.size() ? pts[i1].first : pts.back().first;
    e.count = i1 - i0;
    double s = 0;
    for (std::size_t i = i0; i < i1; ++i) s += pts[i].second;
    e.mean_abs_error = s / static_cast<double>(e.count);
  }
  return out;
}

// Concatenates aligned tracks for pooled metrics.
inline PitchTrack concat_tracks(const std::vector<PitchTrack>& tracks) {
  if (tracks.empty()) throw EvalError("no tracks to concatenate");
  PitchTrack out;
  out.hop = tracks.front().hop;
  bool conf = true;
  for (const auto& t : tracks) conf = conf && t.has_confidence();
  for (const auto& t : tracks) {
    if (std::abs(t.hop - out.hop) > 1e-6 * out.hop) throw EvalError("tracks have different hops");
    out.semitones.insert(out.semitones.end(), t.semitones.begin(), t.semitones.end());
    if (conf) out.confidence.insert(out.confidence.end(), t.confidence.begin(), t.confidence.end());
  }
  return out;
}

struct EvalReport {
  double rpa = 0;
  double vrr_at_10fa = 0;
  std::vector<RocPoint> roc;
  std::vector<ErrorBin> error_by_freq;
  std::size_t voiced = 0;
  std::size_t total = 0;
};

inline EvalReport evaluate(const PitchTrack& est, const PitchTrack& truth,
                           std::size_t error_bins = 10) {
  EvalReport r;
  r.rpa = rpa(est, truth);
  r.total = truth.size();
  for (const auto& p : truth.semitones) r.voiced += p.has_value();
  if (est.has_confidence() && r.voiced < r.total) {
    r.roc = roc(est.confidence, voicing_of(truth));
    r.vrr_at_10fa = 100.0 * recall_at_fa(r.roc, 0.10);
  } else {
    r.vrr_at_10fa = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    r.error_by_freq = error_by_frequency(est, truth, error_bins);
  } catch (const EvalError&) {
    r.error_by_freq.clear();
  }
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["rpa"] = r.rpa;
  j["vrr_at_10fa"] = std::isfinite(r.vrr_at_10fa) ? nlohmann::json(r.vrr_at_10fa) : nlohmann::json();
  j["voiced"] = r.voiced;
  j["total"] = r.total;
  j["roc"] = nlohmann::json::array();
  for (const auto& p : r.roc) j["roc"].push_back({{"fa", p.fa}, {"recall", p.recall}});
  j["error_by_freq"] = nlohmann::json::array();
  for (const auto& b : r.error_by_freq) {
    j["error_by_freq"].push_back(
        {{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}, {"mean_abs_error", b.mean_abs_error}});
  }
  return j;
}

inline void write_report_text(std::ostream& os, const EvalReport& r) {
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(16) << "RPA (%)" << std::right << std::setw(10) << r.rpa << '\n';
  os << std::left << std::setw(16) << "VRR@10%FA (%)" << std::right << std::setw(10)
     << r.vrr_at_10fa << '\n';
  os << std::left << std::setw(16) << "voiced frames" << std::right << std::setw(10) << r.voiced
     << '\n';
  os << std::left << std::setw(16) << "total frames" << std::right << std::setw(10) << r.total
     << '\n';
  os.unsetf(std::ios::floatfield);
}

inline void write_roc_csv(std::ostream& os, const EvalReport& r) {
  os << "fa,recall\n" << std::setprecision(9);
  for (const auto& p : r.roc) os << p.fa << ',' << p.recall << '\n';
}

inline void write_error_csv(std::ostream& os, const EvalReport& r) {
  os << "pitch_lo,pitch_hi,count,mean_abs_error\n" << std::setprecision(9);
  for (const auto& b : r.error_by_freq) {
    os << b.lo << ',' << b.hi << ',' << b.count << ',' << b.mean_abs_error << '\n';
  }
}

}  // namespace spice
