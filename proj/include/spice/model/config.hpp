#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace spice {

enum class LossKind { kHuber, kL1, kL2 };

inline std::string to_string(LossKind k) {
  switch (k) {
    case LossKind::kHuber: return "huber";
    case LossKind::kL1: return "l1";
    case LossKind::kL2: return "l2";
  }
  return "huber";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "huber") return LossKind::kHuber;
  if (s == "l1") return LossKind::kL1;
  if (s == "l2") return LossKind::kL2;
  throw std::invalid_argument("unknown loss kind '" + s +
                              "' (expected huber, l1 or l2)");
}

// Scale that maps the [f_min, f_max] pitch range onto a unit interval of
// the pitch head output.
inline double pitch_scale_sigma(int bins_per_octave, double f_min, double f_max) {
  if (bins_per_octave <= 0 || f_min <= 0 || f_max <= f_min) {
    throw std::invalid_argument("sigma: need Q > 0 and 0 < f_min < f_max");
  }
  return 1.0 / (bins_per_octave * std::log2(f_max / f_min));
}

// Model and training hyperparameters.
struct SpiceConfig {
  int slice_bins = 128;       // F
  int k_min = 0;
  int k_max = 8;
  int bins_per_octave = 24;   // Q
  double f_min = 110.0;       // A2
  double f_max = 880.0;       // A5
  double tau_factor = 0.25;   // Huber threshold in units of sigma
  double w_pitch = 1e4;
  double w_recon = 1.0;
  double w_conf = 1.0;
  double lr = 1e-4;
  double lr_final = 0.0;     // cosine decay target; 0 keeps lr constant
  int batch_size = 64;
  int d_enc = 64;
  int d_dec = 32;
  std::string input_compression = "none";  // none | log
  bool augment_octaves = true;
  bool noisy_training = false;
  double snr_min_db = -5.0;
  double snr_max_db = 25.0;
  LossKind loss_kind = LossKind::kHuber;
  std::int64_t steps = 15000;
  std::int64_t checkpoint_every = 5000;
  std::uint64_t seed = 0;

  double sigma() const { return pitch_scale_sigma(bins_per_octave, f_min, f_max); }
  double tau() const { return tau_factor * sigma(); }
  // Slice offset used at inference and calibration time.
  // Learning rate for a 0-based step: constant, or a cosine from lr down
  // to lr_final over `steps` when lr_final > 0.
  double learning_rate(std::int64_t step) const {
    if (lr_final <= 0 || steps <= 1) return lr;
    const double u = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps - 1));
    return lr_final + 0.5 * (lr - lr_final) * (1 + std::cos(3.14159265358979323846 * u));
  }
  int inference_offset() const {
    return static_cast<int>(std::lround((k_min + k_max) / 2.0));
  }

  void validate() const {
    if (slice_bins <= 0) throw std::invalid_argument("slice_bins must be > 0");
    if (k_min < 0 || k_max < k_min)
      throw std::invalid_argument("need 0 <= k_min <= k_max");
    if (batch_size <= 0) throw std::invalid_argument("batch_size must be > 0");
    if (d_enc <= 0 || d_dec <= 0) throw std::invalid_argument("d_enc, d_dec must be > 0");
    if (input_compression != "none" && input_compression != "log")
      throw std::invalid_argument("input_compression must be none or log");
    if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
    if (lr_final < 0 || lr_final > lr) throw std::invalid_argument("need 0 <= lr_final <= lr");
    if (w_pitch < 0 || w_recon < 0 || w_conf < 0)
      throw std::invalid_argument("loss weights must be >= 0");
    if (snr_min_db > snr_max_db) throw std::invalid_argument("snr range inverted");
    if (steps < 0) throw std::invalid_argument("steps must be >= 0");
    (void)sigma();
  }
};

inline void to_json(nlohmann::json& j, const SpiceConfig& c) {
  j = nlohmann::json{{"slice_bins", c.slice_bins},
                     {"k_min", c.k_min},
                     {"k_max", c.k_max},
                     {"bins_per_octave", c.bins_per_octave},
                     {"f_min", c.f_min},
                     {"f_max", c.f_max},
                     {"tau_factor", c.tau_factor},
                     {"w_pitch", c.w_pitch},
                     {"w_recon", c.w_recon},
                     {"w_conf", c.w_conf},
                     {"lr", c.lr},
                     {"lr_final", c.lr_final},
                     {"batch_size", c.batch_size},
                     {"d_enc", c.d_enc},
                     {"d_dec", c.d_dec},
                     {"input_compression", c.input_compression},
                     {"augment_octaves", c.augment_octaves},
                     {"noisy_training", c.noisy_training},
                     {"snr_min_db", c.snr_min_db},
                     {"snr_max_db", c.snr_max_db},
                     {"loss_kind", to_string(c.loss_kind)},
                     {"steps", c.steps},
                     {"checkpoint_every", c.checkpoint_every},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, SpiceConfig& c) {
  j.at("slice_bins").get_to(c.slice_bins);
  j.at("k_min").get_to(c.k_min);
  j.at("k_max").get_to(c.k_max);
  j.at("bins_per_octave").get_to(c.bins_per_octave);
  j.at("f_min").get_to(c.f_min);
  j.at("f_max").get_to(c.f_max);
  j.at("tau_factor").get_to(c.tau_factor);
  j.at("w_pitch").get_to(c.w_pitch);
  j.at("w_recon").get_to(c.w_recon);
  j.at("w_conf").get_to(c.w_conf);
  j.at("lr").get_to(c.lr);
  c.lr_final = j.value("lr_final", 0.0);
  j.at("batch_size").get_to(c.batch_size);
  j.at("d_enc").get_to(c.d_enc);
  j.at("d_dec").get_to(c.d_dec);
  c.input_compression = j.value("input_compression", std::string("none"));
  j.at("augment_octaves").get_to(c.augment_octaves);
  j.at("noisy_training").get_to(c.noisy_training);
  j.at("snr_min_db").get_to(c.snr_min_db);
  j.at("snr_max_db").get_to(c.snr_max_db);
  c.loss_kind = parse_loss_kind(j.at("loss_kind").get<std::string>());
  j.at("steps").get_to(c.steps);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("seed").get_to(c.seed);
}

// Noisy training uses a much larger pitch weight by default.
inline SpiceConfig noisy_defaults(SpiceConfig cfg) {
  cfg.noisy_training = true;
  cfg.w_pitch = 3e5;
  return cfg;
}

}  // namespace spice
