#pragma once

// Sectioned key=value run configuration shared by every command.
//
//   [model]        training hyperparameters
//   [cqt]          frontend parameters
//   [corpus]       synthetic corpus recipe
//   [calibration]  synthetic calibration recipe
//   [run]          seed, step count and output directory
//
// Unknown sections or keys are errors. `--set section.key=value` and the
// dedicated command-line flags override file values.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "spice/dsp/cqt.hpp"
#include "spice/model/config.hpp"
#include "spice/synth/synth.hpp"

namespace spice {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  SpiceConfig model;
  CqtParams cqt;
  CorpusConfig corpus;
  CalibrationConfig calibration;
  std::uint64_t calibration_seed = 12345;
  std::string out_dir = "out";
  bool seed_set = false;  // seed came from the file or a flag

  void validate() const {
    try {
      model.validate();
      cqt.validate();
      corpus.validate();
      calibration.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (model.k_max + model.slice_bins > cqt.n_bins) {
      throw ConfigError("model.k_max + model.slice_bins exceeds cqt.n_bins");
    }
    if (corpus.hop != cqt.hop || corpus.sample_rate != cqt.sample_rate) {
      throw ConfigError("corpus and cqt disagree on hop or sample_rate");
    }
    if (calibration.hop != cqt.hop || calibration.sample_rate != cqt.sample_rate) {
      throw ConfigError("calibration and cqt disagree on hop or sample_rate");
    }
  }
};

namespace detail {

template <typename V>
V parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<V, bool>) {
    if (text == "true" || text == "1" || text == "on") return true;
    if (text == "false" || text == "0" || text == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + text + "'");
  } else if constexpr (std::is_same_v<V, std::string>) {
    return text;
  } else {
    V v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end || text.empty()) {
      throw ConfigError(key + ": cannot parse '" + text + "'");
    }
    return v;
  }
}

template <typename V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  }
}

struct Field {
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

class FieldTable {
 public:
  template <typename V>
  void bind(const std::string& name, V& ref) {
    fields_[name] = {[name, &ref](const std::string& s) { ref = parse_value<V>(name, s); },
                     [&ref] { return format_value(ref); }};
  }
  void bind(const std::string& name, Field f) { fields_[name] = std::move(f); }

  void set(const std::string& name, const std::string& value) {
    auto it = fields_.find(name);
    if (it == fields_.end()) throw ConfigError("unknown config key '" + name + "'");
    it->second.set(value);
  }

  const std::map<std::string, Field>& fields() const { return fields_; }

 private:
  std::map<std::string, Field> fields_;
};

inline FieldTable field_table(RunConfig& c) {
  FieldTable t;
  auto& m = c.model;
  t.bind("model.slice_bins", m.slice_bins);
  t.bind("model.k_min", m.k_min);
  t.bind("model.k_max", m.k_max);
  t.bind("model.bins_per_octave", m.bins_per_octave);
  t.bind("model.f_min", m.f_min);
  t.bind("model.f_max", m.f_max);
  t.bind("model.tau_factor", m.tau_factor);
  t.bind("model.w_pitch", m.w_pitch);
  t.bind("model.w_recon", m.w_recon);
  t.bind("model.w_conf", m.w_conf);
  t.bind("model.lr", m.lr);
  t.bind("model.lr_final", m.lr_final);
  t.bind("model.batch_size", m.batch_size);
  t.bind("model.d_enc", m.d_enc);
  t.bind("model.d_dec", m.d_dec);
  t.bind("model.input_compression", m.input_compression);
  t.bind("model.augment_octaves", m.augment_octaves);
  t.bind("model.noisy_training", m.noisy_training);
  t.bind("model.snr_min_db", m.snr_min_db);
  t.bind("model.snr_max_db", m.snr_max_db);
  t.bind("model.loss_kind",
         Field{[&m](const std::string& s) { m.loss_kind = parse_loss_kind(s); },
               [&m] { return to_string(m.loss_kind); }});
  t.bind("run.steps", m.steps);
  t.bind("run.checkpoint_every", m.checkpoint_every);
  t.bind("run.seed", Field{[&c](const std::string& s) {
                             c.model.seed = parse_value<std::uint64_t>("run.seed", s);
                             c.seed_set = true;
                           },
                           [&c] { return format_value(c.model.seed); }});
  t.bind("run.out_dir", c.out_dir);

  auto& q = c.cqt;
  t.bind("cqt.bins_per_octave", q.bins_per_octave);
  t.bind("cqt.f_base", q.f_base);
  t.bind("cqt.n_bins", q.n_bins);
  t.bind("cqt.hop", q.hop);
  t.bind("cqt.sample_rate", q.sample_rate);
  t.bind("cqt.window", q.window);

  auto& s = c.corpus;
  t.bind("corpus.items", s.items);
  t.bind("corpus.item_seconds", s.item_seconds);
  t.bind("corpus.f_lo", s.f_lo);
  t.bind("corpus.f_hi", s.f_hi);
  t.bind("corpus.unvoiced_fraction", s.unvoiced_fraction);
  t.bind("corpus.vibrato_depth_max", s.vibrato_depth_max);
  t.bind("corpus.vibrato_rate_lo", s.vibrato_rate_lo);
  t.bind("corpus.vibrato_rate_hi", s.vibrato_rate_hi);
  t.bind("corpus.glide_probability", s.glide_probability);
  t.bind("corpus.glide_max", s.glide_max);
  t.bind("corpus.note_min_seconds", s.note_min_seconds);
  t.bind("corpus.note_max_seconds", s.note_max_seconds);
  t.bind("corpus.harmonics_min", s.harmonics_min);
  t.bind("corpus.harmonics_max", s.harmonics_max);
  t.bind("corpus.harmonic_amp_max", s.harmonic_amp_max);
  t.bind("corpus.noise_rms_lo", s.noise_rms_lo);
  t.bind("corpus.noise_rms_hi", s.noise_rms_hi);
  t.bind("corpus.sample_rate", s.sample_rate);
  t.bind("corpus.hop", s.hop);

  auto& k = c.calibration;
  t.bind("calibration.pieces", k.pieces);
  t.bind("calibration.frames", k.frames);
  t.bind("calibration.hop", k.hop);
  t.bind("calibration.n_harmonics", k.n_harmonics);
  t.bind("calibration.f_lo", k.f_lo);
  t.bind("calibration.f_hi", k.f_hi);
  t.bind("calibration.sample_rate", k.sample_rate);
  t.bind("calibration.f_base", k.f_base);
  t.bind("calibration.seed", c.calibration_seed);
  return t;
}

}  // namespace detail

// Applies "section.key=value".
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not section.key=value");
  }
  auto table = detail::field_table(cfg);
  table.set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

inline void apply_ini(RunConfig& cfg, std::istream& in, const std::string& origin = "config") {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(origin + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  auto table = detail::field_table(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty()) {
      throw ConfigError(origin + ": key '" + section + "' is outside any section");
    }
    for (const auto& [key, value] : body) {
      table.set(section + "." + key, value.get_value<std::string>());
    }
  }
}

inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  apply_ini(cfg, in, path);
  return cfg;
}

// Falls back to SPICE_SEED when neither file nor flags set a seed.
inline void apply_seed_env(RunConfig& cfg) {
  if (cfg.seed_set) return;
  if (const char* env = std::getenv("SPICE_SEED")) {
    cfg.model.seed = detail::parse_value<std::uint64_t>("SPICE_SEED", env);
    cfg.seed_set = true;
  }
}

// Every key, grouped by section, in a form apply_ini reads back.
inline void write_run_config(std::ostream& os, RunConfig cfg) {
  const auto table = detail::field_table(cfg);
  std::string current;
  for (const auto& [name, field] : table.fields()) {
    const auto dot = name.find('.');
    const std::string section = name.substr(0, dot);
    if (section != current) {
      if (!current.empty()) os << '\n';
      os << '[' << section << "]\n";
      current = section;
    }
    os << name.substr(dot + 1) << " = " << field.get() << '\n';
  }
}

}  // namespace spice
