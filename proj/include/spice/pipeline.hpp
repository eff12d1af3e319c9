#pragma once

// Glue shared by the command-line tool and the acceptance suite: corpus
// directories, model evaluation over labelled items, and linearity.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spice/calibration/calibration.hpp"
#include "spice/dsp/wav.hpp"
#include "spice/eval/eval.hpp"
#include "spice/model/infer.hpp"
#include "spice/synth/synth.hpp"

namespace spice {

// Sorted *.wav paths in a directory.
inline std::vector<std::filesystem::path> list_wavs(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw std::runtime_error("not a directory: " + dir.string());
  }
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw std::runtime_error("no .wav files in " + dir.string());
  return out;
}

// Labels are read from the sibling `<name>.csv` when present.
inline std::vector<CorpusItem> load_corpus_dir(const std::filesystem::path& dir,
                                               int hop = 512, bool labels = true) {
  std::vector<CorpusItem> items;
  for (const auto& wav : list_wavs(dir)) {
    CorpusItem item;
    item.name = wav.stem().string();
    item.audio = load_wav(wav.string());
    item.hop = hop;
    auto csv = wav;
    csv.replace_extension(".csv");
    if (labels && std::filesystem::exists(csv)) {
      std::ifstream in(csv);
      const PitchTrack t = parse_ground_truth(in, TruthFormat::kHzCsv, 0.0);
      for (const auto& p : t.semitones) {
        item.f0_hz.push_back(p ? std::optional<double>(semitones_to_hz(*p)) : std::nullopt);
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

inline PitchTrack truth_track(const CorpusItem& item, double f_base = kDefaultFBase) {
  PitchTrack t;
  t.hop = static_cast<double>(item.hop) / item.audio.sample_rate;
  for (const auto& f : item.f0_hz) {
    t.semitones.push_back(f ? std::optional<double>(hz_to_semitones(*f, f_base)) : std::nullopt);
  }
  return t;
}

inline PitchTrack estimate_track(const std::vector<FramePitch>& frames, double hop_sec) {
  PitchTrack t;
  t.hop = hop_sec;
  for (const auto& f : frames) {
    t.semitones.push_back(f.pitch_semitones);
    t.confidence.push_back(f.confidence);
  }
  return t;
}

struct ModelEvaluation {
  EvalReport report;
  double linearity = 0;  // |corr(y, log2 f0)| over truth-voiced frames
  // The same over stationary frames: no voicing change and no label step
  // above 0.3 semitones within `stationary_margin` frames either side.
  double linearity_stationary = 0;
  std::size_t stationary_frames = 0;
  std::vector<double> y_voiced, log2_f0;
};

inline std::vector<bool> stationary_mask(const PitchTrack& truth, int margin = 2) {
  const std::size_t n = truth.size();
  std::vector<bool> step(n, false);  // change between t-1 and t
  for (std::size_t t = 1; t < n; ++t) {
    const auto& a = truth.semitones[t - 1];
    const auto& b = truth.semitones[t];
    step[t] = a.has_value() != b.has_value() || (a && std::abs(*a - *b) > 0.3);
  }
  std::vector<bool> out(n, false);
  for (std::size_t t = 0; t < n; ++t) {
    if (!truth.semitones[t]) continue;
    bool quiet = true;
    for (int d = -margin; d <= margin && quiet; ++d) {
      const auto u = static_cast<std::ptrdiff_t>(t) + d;
      if (u >= 0 && u < static_cast<std::ptrdiff_t>(n)) quiet = !step[u];
    }
    out[t] = quiet;
  }
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw EvalError("pearson: need 2+ paired values");
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= a.size();
  mb /= b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0) || !(sbb > 0)) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// Per-frame inference results for each item, reused across calibrations.
struct ItemInference {
  std::vector<FramePitch> frames;  // uncalibrated
  PitchTrack truth;
};

template <typename T>
std::vector<ItemInference> infer_items(SpiceNetwork<T>& net, const CqtKernel& cqt,
                                       const std::vector<CorpusItem>& items, int k_star) {
  std::vector<ItemInference> out;
  for (const auto& item : items) {
    ItemInference r;
    r.frames = infer_audio(net, cqt, item.audio, k_star);
    r.truth = truth_track(item, cqt.params().f_base);
    const std::size_t n = std::min(r.frames.size(), r.truth.size());
    r.frames.resize(n);
    r.truth.semitones.resize(n);
    out.push_back(std::move(r));
  }
  return out;
}

// Applies `cal` to stored outputs and scores all items pooled.
inline ModelEvaluation score_items(const std::vector<ItemInference>& inferred,
                                   const AffineCalibration& cal, double hop_sec) {
  std::vector<PitchTrack> est, truth;
  ModelEvaluation ev;
  std::vector<double> ys, ls;
  for (const auto& r : inferred) {
    const auto still = stationary_mask(r.truth);
    PitchTrack e;
    e.hop = hop_sec;
    for (std::size_t t = 0; t < r.frames.size(); ++t) {
      const double y = r.frames[t].y;
      e.semitones.push_back(cal.semitones(y));
      e.confidence.push_back(r.frames[t].confidence);
      if (r.truth.semitones[t]) {
        ev.y_voiced.push_back(y);
        ev.log2_f0.push_back(std::log2(semitones_to_hz(*r.truth.semitones[t], cal.f_base)));
        if (still[t]) ys.push_back(y), ls.push_back(ev.log2_f0.back());
      }
    }
    PitchTrack tt = r.truth;
    tt.hop = hop_sec;
    est.push_back(std::move(e));
    truth.push_back(std::move(tt));
  }
  ev.report = evaluate(concat_tracks(est), concat_tracks(truth));
  ev.linearity = std::abs(pearson(ev.y_voiced, ev.log2_f0));
  ev.stationary_frames = ys.size();
  if (ys.size() >= 2) ev.linearity_stationary = std::abs(pearson(ys, ls));
  return ev;
}

template <typename T>
ModelEvaluation evaluate_model(SpiceNetwork<T>& net, const CqtKernel& cqt,
                               const AffineCalibration& cal,
                               const std::vector<CorpusItem>& items) {
  const double hop_sec = static_cast<double>(cqt.params().hop) / cqt.params().sample_rate;
  return score_items(infer_items(net, cqt, items, cal.k_star), cal, hop_sec);
}

}  // namespace spice
