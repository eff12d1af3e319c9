#pragma once

// Harmonic test signals: calibration pieces and a labelled synthetic corpus
// of voiced phrases separated by pink-noise gaps.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "spice/dsp/audio.hpp"
#include "spice/dsp/wav.hpp"

namespace spice {

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kPeakLevel = 0.8;
inline constexpr double kDefaultFBase = 32.7031956626;  // C1

struct HarmonicSpec {
  double f0 = 220.0;
  int n_harmonics = 0;             // K; partials are f0 * (1..K+1)
  std::vector<double> amplitudes;  // K + 1 entries
  std::vector<double> phases;      // K + 1 entries, radians

  void validate() const {
    if (!(f0 > 0) || !std::isfinite(f0)) throw SynthError("f0 must be positive");
    if (n_harmonics < 0) throw SynthError("n_harmonics must be >= 0");
    const auto n = static_cast<std::size_t>(n_harmonics) + 1;
    if (amplitudes.size() != n || phases.size() != n) {
      throw SynthError("need K+1 amplitudes and phases");
    }
  }
};

// Number of partials strictly below Nyquist.
inline int partials_below_nyquist(double f0, int n_partials, int sample_rate) {
  int n = 0;
  while (n < n_partials && (n + 1) * f0 < sample_rate / 2.0) ++n;
  return n;
}

// sum_k a_k sin(2 pi (k+1) f0 t + phi_k), partials at or above Nyquist
// dropped, then scaled to a peak of 0.8.
inline AudioBuffer gen_harmonic_piece(const HarmonicSpec& spec, std::size_t n_samples,
                                      int sample_rate) {
  spec.validate();
  if (n_samples == 0) throw SynthError("n_samples must be > 0");
  if (sample_rate <= 0) throw SynthError("sample_rate must be > 0");
  const int kept = partials_below_nyquist(spec.f0, spec.n_harmonics + 1, sample_rate);
  bool any = false;
  for (int k = 0; k < kept; ++k) any = any || spec.amplitudes[k] != 0.0;
  if (!any) throw SynthError("all audible harmonic amplitudes are zero");
  std::vector<double> x(n_samples, 0.0);
  for (int k = 0; k < kept; ++k) {
    const double w = 2 * std::numbers::pi * (k + 1) * spec.f0 / sample_rate;
    for (std::size_t i = 0; i < n_samples; ++i)
      x[i] += spec.amplitudes[k] * std::sin(w * static_cast<double>(i) + spec.phases[k]);
  }
  const double p = peak(x);
  if (p == 0) throw SynthError("harmonic piece is silent");
  for (double& v : x) v *= kPeakLevel / p;
  return AudioBuffer(std::move(x), sample_rate);
}

struct CalibrationConfig {
  int pieces = 5;  // M
  int frames = 11; // N
  int hop = 512;   // H
  int n_harmonics = 3;
  double f_lo = 110.0;
  double f_hi = 440.0;
  int sample_rate = 16000;
  double f_base = kDefaultFBase;

  void validate() const {
    if (pieces < 2) throw SynthError("calibration needs at least 2 pieces");
    if (frames <= 0 || hop <= 0) throw SynthError("frames and hop must be > 0");
    if (n_harmonics < 0) throw SynthError("n_harmonics must be >= 0");
    if (!(f_lo > 0) || !(f_lo < f_hi)) throw SynthError("need 0 < f_lo < f_hi");
    if (std::floor(12 * std::log2(f_hi / f_lo) + 1e-9) < 0)
      throw SynthError("empty semitone grid");
  }
  std::size_t piece_samples() const {
    return static_cast<std::size_t>(frames) * static_cast<std::size_t>(hop);
  }
};

struct CalibrationSample {
  AudioBuffer audio;
  double f0_hz = 0;
  double f0_semitones = 0;  // above f_base
  int center_frame = 0;
};

// Each piece: f0 on the equal-tempered grid from f_lo, a_0 ~ N(0,1)
// redrawn while |a_0| < 0.1, a_k ~ |a_0| U(0,1), uniform phases.
inline std::vector<CalibrationSample> gen_calibration_set(const CalibrationConfig& cfg,
                                                          std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int steps = static_cast<int>(std::floor(12 * std::log2(cfg.f_hi / cfg.f_lo) + 1e-9));
  std::uniform_int_distribution<int> semitone(0, steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2 * std::numbers::pi);
  std::vector<CalibrationSample> out;
  for (int m = 0; m < cfg.pieces; ++m) {
    HarmonicSpec spec;
    spec.f0 = cfg.f_lo * std::exp2(semitone(rng) / 12.0);
    spec.n_harmonics = cfg.n_harmonics;
    double a0 = 0;
    do {
      a0 = normal(rng);
    } while (std::abs(a0) < 0.1);
    spec.amplitudes.push_back(a0);
    for (int k = 1; k <= cfg.n_harmonics; ++k) spec.amplitudes.push_back(std::abs(a0) * unit(rng));
    for (int k = 0; k <= cfg.n_harmonics; ++k) spec.phases.push_back(phase(rng));
    CalibrationSample s;
    s.audio = gen_harmonic_piece(spec, cfg.piece_samples(), cfg.sample_rate);
    s.f0_hz = spec.f0;
    s.f0_semitones = 12 * std::log2(spec.f0 / cfg.f_base);
    s.center_frame = cfg.frames / 2;
    out.push_back(std::move(s));
  }
  return out;
}

// Pink noise from white Gaussian noise through Paul Kellet's filter,
// scaled to unit RMS.
inline std::vector<double> gen_pink_noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> white(0.0, 1.0);
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    x[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  const double r = rms(x);
  if (r > 0)
    for (double& v : x) v /= r;
  return x;
}

struct CorpusConfig {
  int items = 200;
  double item_seconds = 4.0;
  double f_lo = 110.0;  // A2
  double f_hi = 880.0;  // A5
  double unvoiced_fraction = 0.2;
  double vibrato_depth_max = 0.25;  // semitones
  double vibrato_rate_lo = 4.0;     // Hz
  double vibrato_rate_hi = 6.0;
  double glide_probability = 0.3;   // chance that a note is a linear glide
  double glide_max = 2.0;           // semitones over the note
  double note_min_seconds = 0.3;
  double note_max_seconds = 1.0;
  int harmonics_min = 1;
  int harmonics_max = 6;
  double harmonic_amp_max = 0.6;    // relative to the fundamental
  double noise_rms_lo = 1e-4;       // unvoiced level range
  double noise_rms_hi = 0.05;
  int sample_rate = 16000;
  int hop = 512;

  void validate() const {
    if (items <= 0) throw SynthError("corpus needs at least one item");
    if (!(item_seconds > 0)) throw SynthError("item_seconds must be > 0");
    if (!(f_lo > 0) || !(f_lo < f_hi)) throw SynthError("need 0 < f_lo < f_hi");
    if (f_hi >= sample_rate / 2.0) throw SynthError("f_hi must be below Nyquist");
    if (unvoiced_fraction < 0 || unvoiced_fraction > 1)
      throw SynthError("unvoiced_fraction must be in [0, 1]");
    if (vibrato_depth_max < 0 || glide_max < 0) throw SynthError("negative modulation depth");
    if (!(vibrato_rate_lo > 0) || vibrato_rate_hi < vibrato_rate_lo)
      throw SynthError("bad vibrato rate range");
    if (glide_probability < 0 || glide_probability > 1)
      throw SynthError("glide_probability must be in [0, 1]");
    if (!(note_min_seconds > 0) || note_max_seconds < note_min_seconds)
      throw SynthError("bad note duration range");
    if (harmonics_min < 0 || harmonics_max < harmonics_min)
      throw SynthError("bad harmonic count range");
    if (harmonic_amp_max < 0 || harmonic_amp_max > 1)
      throw SynthError("harmonic_amp_max must be in [0, 1]");
    if (!(noise_rms_lo > 0) || noise_rms_hi < noise_rms_lo)
      throw SynthError("bad noise level range");
    if (sample_rate <= 0 || hop <= 0) throw SynthError("sample_rate and hop must be > 0");
  }
  std::size_t item_samples() const {
    return static_cast<std::size_t>(std::llround(item_seconds * sample_rate));
  }
};

struct CorpusItem {
  std::string name;
  AudioBuffer audio;
  int hop = 512;
  std::vector<std::optional<double>> f0_hz;  // one label per CQT frame

  double frame_time(std::size_t t) const {
    return static_cast<double>(t) * hop / audio.sample_rate;
  }
};

namespace detail {

// Splits `total` samples into `parts` lengths of at least `min_len` each
// when possible.
inline std::vector<std::size_t> random_partition(std::size_t total, std::size_t parts,
                                                 std::size_t min_len, std::mt19937_64& rng) {
  std::vector<std::size_t> out(parts, 0);
  if (parts == 0) return out;
  if (min_len * parts > total) min_len = total / parts;
  const std::size_t spare = total - min_len * parts;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> cuts(parts - 1);
  for (double& c : cuts) c = unit(rng);
  std::sort(cuts.begin(), cuts.end());
  std::size_t used = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const double hi = i + 1 < parts ? cuts[i] : 1.0;
    const auto edge = static_cast<std::size_t>(std::llround(hi * static_cast<double>(spare)));
    out[i] = min_len + (edge - std::min(edge, used));
    used = std::max(used, edge);
  }
  return out;
}

// Fills [begin, begin + len) with a phrase of notes; writes the
// instantaneous f0 of every sample into `f0`.
inline void render_phrase(const CorpusConfig& cfg, std::size_t begin, std::size_t len,
                          std::vector<double>& x, std::vector<double>& f0,
                          std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> harmonics(cfg.harmonics_min, cfg.harmonics_max);
  const double sr = cfg.sample_rate;
  const int K = harmonics(rng);
  std::vector<double> amp(K + 1), ph(K + 1);
  amp[0] = 1.0;
  for (int k = 1; k <= K; ++k) amp[k] = cfg.harmonic_amp_max * unit(rng);
  for (double& p : ph) p = 2 * std::numbers::pi * unit(rng);
  double amp_sum = 0;
  for (double a : amp) amp_sum += a;
  // Peak stays below `level` <= 0.8 whatever the partial phases.
  const double level = (0.3 + 0.5 * unit(rng)) / amp_sum;
  const double depth = cfg.vibrato_depth_max * unit(rng);
  const double rate = cfg.vibrato_rate_lo + (cfg.vibrato_rate_hi - cfg.vibrato_rate_lo) * unit(rng);
  const double vib_phase = 2 * std::numbers::pi * unit(rng);

  // Notes live in semitones relative to f_lo, kept inside the range with
  // room for vibrato and glides.
  const double span = 12 * std::log2(cfg.f_hi / cfg.f_lo);
  const double margin = std::min(span / 2, depth);
  std::vector<double> st(len);
  std::size_t pos = 0;
  while (pos < len) {
    const double dur = cfg.note_min_seconds +
                       (cfg.note_max_seconds - cfg.note_min_seconds) * unit(rng);
    std::size_t n = static_cast<std::size_t>(dur * sr);
    if (len - pos < n + static_cast<std::size_t>(cfg.note_min_seconds * sr)) n = len - pos;
    double start = margin + (span - 2 * margin) * unit(rng);
    double end = start;
    if (unit(rng) < cfg.glide_probability) {
      end = start + cfg.glide_max * (2 * unit(rng) - 1);
      end = std::clamp(end, margin, span - margin);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double a = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
      st[pos + i] = start + (end - start) * a;
    }
    pos += n;
  }

  double phase = 0;
  const std::size_t ramp = std::min<std::size_t>(len / 4, static_cast<std::size_t>(0.01 * sr));
  for (std::size_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sr;
    const double s = st[i] + depth * std::sin(2 * std::numbers::pi * rate * t + vib_phase);
    const double f = cfg.f_lo * std::exp2(s / 12.0);
    f0[begin + i] = f;
    double env = level;
    if (i < ramp) env *= static_cast<double>(i) / ramp;
    if (len - 1 - i < ramp) env *= static_cast<double>(len - 1 - i) / ramp;
    double v = 0;
    for (int k = 0; k <= K; ++k) {
      if ((k + 1) * f >= sr / 2) break;
      v += amp[k] * std::sin((k + 1) * phase + ph[k]);
    }
    x[begin + i] = env * v;
    phase += 2 * std::numbers::pi * f / sr;
    if (phase >= 2 * std::numbers::pi) phase -= 2 * std::numbers::pi;
  }
}

}  // namespace detail

// One item: voiced phrases and unvoiced gaps in random order. Frames whose
// centre sample is unvoiced, or within one hop of a voiced/unvoiced edge,
// are labelled unvoiced.
inline CorpusItem gen_corpus_item(const CorpusConfig& cfg, std::uint64_t seed,
                                  std::string name) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t L = cfg.item_samples();
  const auto unvoiced = static_cast<std::size_t>(std::llround(cfg.unvoiced_fraction * L));
  const std::size_t voiced = L - unvoiced;
  const std::size_t phrases =
      voiced == 0 ? 0 : std::uniform_int_distribution<std::size_t>(1, 3)(rng);
  const std::size_t gaps = unvoiced == 0 ? 0 : std::max<std::size_t>(phrases, 1);
  const auto min_note = static_cast<std::size_t>(cfg.note_min_seconds * cfg.sample_rate);
  auto vlen = detail::random_partition(voiced, phrases, min_note, rng);
  auto ulen = detail::random_partition(unvoiced, gaps, static_cast<std::size_t>(cfg.hop) * 2, rng);
  const bool gap_first = unit(rng) < 0.5;

  std::vector<double> x(L, 0.0), f0(L, 0.0);
  std::size_t pos = 0, vi = 0, ui = 0;
  bool next_gap = gap_first ? gaps > 0 : phrases == 0;
  while (vi < vlen.size() || ui < ulen.size()) {
    if (next_gap && ui < ulen.size()) {
      const std::size_t n = ulen[ui++];
      const double level = std::exp(std::log(cfg.noise_rms_lo) +
                                    (std::log(cfg.noise_rms_hi) - std::log(cfg.noise_rms_lo)) *
                                        unit(rng));
      auto noise = gen_pink_noise(n, rng);
      for (std::size_t i = 0; i < n; ++i) x[pos + i] = level * noise[i];
      pos += n;
    } else if (vi < vlen.size()) {
      const std::size_t n = vlen[vi++];
      detail::render_phrase(cfg, pos, n, x, f0, rng);
      pos += n;
    }
    next_gap = !next_gap;
  }

  CorpusItem item;
  item.name = std::move(name);
  item.hop = cfg.hop;
  item.audio = AudioBuffer(std::move(x), cfg.sample_rate);
  const std::size_t frames = L / cfg.hop + 1;
  const auto guard = static_cast<long>(cfg.hop);
  item.f0_hz.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const long c = static_cast<long>(t) * cfg.hop;
    bool ok = true;
    for (long d = -guard; d <= guard && ok; d += guard) {
      const long j = std::clamp<long>(c + d, 0, static_cast<long>(L) - 1);
      ok = f0[static_cast<std::size_t>(j)] > 0;
    }
    if (ok) item.f0_hz[t] = f0[static_cast<std::size_t>(std::min<long>(c, static_cast<long>(L) - 1))];
  }
  return item;
}

// Items are seeded independently from (seed, index), so any subset can be
// regenerated alone.
inline std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint32_t parts[2];
  seq.generate(parts, parts + 2);
  return (static_cast<std::uint64_t>(parts[0]) << 32) | parts[1];
}

inline std::vector<CorpusItem> gen_training_corpus(const CorpusConfig& cfg, std::uint64_t seed,
                                                   const std::string& prefix = "item") {
  cfg.validate();
  std::vector<CorpusItem> out;
  out.reserve(static_cast<std::size_t>(cfg.items));
  for (int i = 0; i < cfg.items; ++i) {
    std::ostringstream name;
    name << prefix << '_' << std::setw(4) << std::setfill('0') << i;
    out.push_back(gen_corpus_item(cfg, item_seed(seed, static_cast<std::uint64_t>(i)), name.str()));
  }
  return out;
}

// Label sidecar: `time_sec,f0_hz`, empty f0 for unvoiced frames.
inline void write_label_csv(std::ostream& os, const CorpusItem& item) {
  os << "time_sec,f0_hz\n" << std::setprecision(9);
  for (std::size_t t = 0; t < item.f0_hz.size(); ++t) {
    os << item.frame_time(t) << ',';
    if (item.f0_hz[t]) os << *item.f0_hz[t];
    os << '\n';
  }
}

inline void write_corpus(const std::filesystem::path& dir, const std::vector<CorpusItem>& items) {
  std::filesystem::create_directories(dir);
  for (const auto& item : items) {
    write_wav((dir / (item.name + ".wav")).string(), item.audio);
    std::ofstream csv(dir / (item.name + ".csv"));
    if (!csv) throw SynthError("cannot write labels for " + item.name);
    write_label_csv(csv, item);
  }
}

}  // namespace spice
