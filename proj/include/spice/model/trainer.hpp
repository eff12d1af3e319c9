#pragma once

// Frame pool construction and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spice/dsp/cqt.hpp"
#include "spice/dsp/mix.hpp"
#include "spice/dsp/resample.hpp"
#include "spice/model/checkpoint.hpp"
#include "spice/model/config.hpp"
#include "spice/model/losses.hpp"
#include "spice/model/network.hpp"
#include "spice/nn/optim.hpp"
#include "spice/synth/synth.hpp"
#include "spice/util/hash.hpp"

namespace spice {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every CQT frame of the training audio, optionally with a noisy twin of
// each frame computed from the same audio mixed with a backing track.
struct FramePool {
  int bins = 0;
  std::vector<float> clean;  // frames x bins
  std::vector<float> noisy;  // empty unless built with noise

  std::size_t size() const { return bins ? clean.size() / bins : 0; }
  bool has_noisy() const { return !noisy.empty(); }
  const float* frame(std::size_t i) const { return clean.data() + i * bins; }
  const float* noisy_frame(std::size_t i) const { return noisy.data() + i * bins; }
};

struct PoolOptions {
  bool augment_octaves = true;
  bool noisy = false;
  double snr_min_db = -5.0;
  double snr_max_db = 25.0;
  std::uint64_t seed = 0;
};

namespace detail {

// Tracks shorter than the longest CQT window get trailing silence.
inline AudioBuffer pad_to(const AudioBuffer& a, std::size_t n) {
  if (a.size() >= n) return a;
  AudioBuffer out = a;
  out.samples.resize(n, 0.0);
  return out;
}

inline void append_frames(const CqtMatrix& m, std::vector<float>& dst) {
  dst.insert(dst.end(), m.values.begin(), m.values.end());
}

}  // namespace detail

// Octave augmentation adds copies of each track shifted by -1 and +1
// octaves. Noisy twins mix each track variant with unit-RMS pink noise at
// an SNR drawn uniformly from [snr_min_db, snr_max_db].
inline FramePool build_frame_pool(const std::vector<AudioBuffer>& tracks, const CqtKernel& cqt,
                                  const PoolOptions& opt) {
  if (tracks.empty()) throw TrainingError("training corpus is empty");
  FramePool pool;
  pool.bins = cqt.params().n_bins;
  std::mt19937_64 rng(opt.seed ^ 0x6e6f697365ull);
  std::uniform_real_distribution<double> snr(opt.snr_min_db, opt.snr_max_db);
  const auto min_len = static_cast<std::size_t>(cqt.params().longest_window());
  std::vector<int> shifts = {0};
  if (opt.augment_octaves) shifts = {0, -1, 1};
  for (const auto& track : tracks) {
    for (int n : shifts) {
      const AudioBuffer v = detail::pad_to(pitch_shift_octaves(track, n), min_len);
      detail::append_frames(cqt(v), pool.clean);
      if (opt.noisy) {
        const double db = snr(rng);
        const std::vector<double> backing = gen_pink_noise(v.size(), rng);
        const AudioBuffer mixed = rms(v.samples) > 0
                                      ? mix_at_snr(v, AudioBuffer(backing, v.sample_rate), db)
                                      : v;
        detail::append_frames(cqt(mixed), pool.noisy);
      }
    }
  }
  return pool;
}

struct StepStats {
  std::int64_t step = 0;
  double total = 0, pitch = 0, recon = 0, conf = 0;
};

inline NetworkSpec network_spec_for(const SpiceConfig& cfg) {
  NetworkSpec spec;
  spec.input_width = cfg.slice_bins;
  spec.d_enc = cfg.d_enc;
  spec.d_dec = cfg.d_dec;
  spec.input_compression = cfg.input_compression;
  return spec;
}

inline std::string config_hash(const SpiceConfig& cfg) {
  return hex64(fnv1a64(nlohmann::json(cfg).dump()));
}

// One optimizer step per call. Frames are visited in a fresh random order
// every epoch; offsets are drawn per pair. Both the epoch order and the
// per-step offsets derive from (seed, index), so a resumed run follows
// the same trajectory.
template <typename T = float>
class Trainer {
 public:
  Trainer(SpiceConfig cfg, const FramePool& pool)
      : cfg_(std::move(cfg)),
        pool_(pool),
        net_(network_spec_for(cfg_), cfg_.seed),
        adam_(nn::AdamOptions{cfg_.lr, 0.9, 0.999, 1e-8}) {
    cfg_.validate();
    if (pool_.size() == 0) throw TrainingError("frame pool is empty");
    if (cfg_.k_max + cfg_.slice_bins > pool_.bins) {
      throw TrainingError("slice offsets exceed the CQT bin count");
    }
    if (cfg_.noisy_training && !pool_.has_noisy()) {
      throw TrainingError("noisy training needs a frame pool with noisy twins");
    }
    params_ = net_.parameters();
    if (cfg_.w_recon == 0) {
      // Without the reconstruction term the decoder receives no gradient.
      params_ = net_.encoder_parameters();
    }
  }

  const SpiceConfig& config() const { return cfg_; }
  SpiceNetwork<T>& network() { return net_; }
  nn::Adam<T>& optimizer() { return adam_; }
  std::int64_t step_count() const { return step_; }

  StepStats step() {
    const std::size_t B = static_cast<std::size_t>(cfg_.batch_size);
    const std::size_t F = static_cast<std::size_t>(cfg_.slice_bins);
    const bool noisy = cfg_.noisy_training;
    const std::size_t variants = noisy ? 2 : 1;

    std::mt19937_64 rng(item_seed(cfg_.seed ^ 0x737465707365ull, static_cast<std::uint64_t>(step_)));
    std::uniform_int_distribution<int> offset(cfg_.k_min, cfg_.k_max);
    std::vector<int> k1(B), k2(B);
    // Rows: [x1 clean, x2 clean, (x1 noisy, x2 noisy)].
    nn::Tensor<T> x({2 * variants * B, 1, F});
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t idx = next_frame();
      k1[b] = offset(rng);
      k2[b] = offset(rng);
      for (std::size_t v = 0; v < variants; ++v) {
        const float* src = v == 0 ? pool_.frame(idx) : pool_.noisy_frame(idx);
        T* r1 = x.ptr() + ((2 * v) * B + b) * F;
        T* r2 = x.ptr() + ((2 * v + 1) * B + b) * F;
        std::copy(src + k1[b], src + k1[b] + F, r1);
        std::copy(src + k2[b], src + k2[b] + F, r2);
      }
    }

    nn::zero_grad(params_);
    const auto xv = nn::Var<T>::constant(x);
    const auto out = net_.encode(xv, nn::Mode::kTrain);
    auto part = [&](const nn::Var<T>& v, std::size_t i) {
      return nn::rows(v, i * B, (i + 1) * B);
    };

    nn::Var<T> lp, lc;
    if (noisy) {
      lp = loss_pitch_noisy(part(out.y, 0), part(out.y, 1), part(out.y, 2), part(out.y, 3), k1,
                            k2, cfg_);
      const auto cc = loss_conf(part(out.c, 0), part(out.c, 1), part(out.y, 0), part(out.y, 1),
                                k1, k2, cfg_);
      const auto cn = loss_conf(part(out.c, 2), part(out.c, 3), part(out.y, 2), part(out.y, 3),
                                k1, k2, cfg_);
      lc = nn::scale(nn::add(cc, cn), T(0.5));
    } else {
      lp = loss_pitch(part(out.y, 0), part(out.y, 1), k1, k2, cfg_);
      lc = loss_conf(part(out.c, 0), part(out.c, 1), part(out.y, 0), part(out.y, 1), k1, k2,
                     cfg_);
    }

    nn::Var<T> lr = nn::Var<T>::constant(nn::Tensor<T>::scalar(T(0)));
    if (cfg_.w_recon > 0) {
      const auto recon = net_.decode(out.y, nn::Mode::kTrain);
      // Every variant is asked to reproduce the clean slices.
      nn::Tensor<T> target = net_.compress_input(x);
      if (noisy) std::copy(target.data.begin(), target.data.begin() + 2 * B * F, target.data.begin() + 2 * B * F);
      lr = nn::scale(loss_recon(target, recon, B), T(1) / static_cast<T>(variants));
    }

    const auto total = loss_total(lp, lr, lc, cfg_);
    StepStats s;
    s.step = step_;
    s.total = total.item();
    s.pitch = lp.item();
    s.recon = lr.item();
    s.conf = lc.item();
    nn::backward(total);
    adam_.set_learning_rate(cfg_.learning_rate(step_));
    adam_.step(params_);
    ++step_;
    return s;
  }

  // Runs until `steps` total steps; divergence surfaces as TrainingError.
  void run(std::int64_t steps, const std::function<void(const StepStats&)>& on_step = {}) {
    while (step_ < steps) {
      StepStats s;
      try {
        s = step();
      } catch (const nn::NumericError& e) {
        std::ostringstream msg;
        msg << "training diverged at step " << step_ << ": " << e.what();
        throw TrainingError(msg.str());
      }
      if (on_step) on_step(s);
    }
  }

  nlohmann::json checkpoint_extra(const StepStats& s) const {
    return {{"config_hash", config_hash(cfg_)},
            {"loss_total", s.total},
            {"loss_pitch", s.pitch},
            {"loss_recon", s.recon},
            {"loss_conf", s.conf}};
  }

  void save(const std::string& path, const StepStats& last) {
    save_checkpoint(path, net_, nlohmann::json(cfg_), step_, &adam_, checkpoint_extra(last));
  }

  // Restores weights, running statistics and Adam state from a checkpoint
  // written by save() with the same configuration.
  void restore(const Checkpoint<T>& ck) {
    if (!ck.has_adam_state) throw TrainingError("checkpoint has no optimizer state");
    const std::string want = config_hash(cfg_);
    if (ck.extra.value("config_hash", std::string()) != want) {
      throw TrainingError("checkpoint was written with a different configuration");
    }
    auto src = detail::checkpoint_tensors(*ck.network, true);
    auto dst = detail::checkpoint_tensors(net_, true);
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = *src[i].tensor;
    step_ = ck.step;
    adam_.set_step_count(ck.adam_steps);
    epoch_ = static_cast<std::uint64_t>(-1);
    cursor_ = 0;
    // Replay the frame cursor so sampling continues where it stopped.
    const std::uint64_t drawn = static_cast<std::uint64_t>(step_) * cfg_.batch_size;
    epoch_ = drawn / pool_.size();
    cursor_ = drawn % pool_.size();
    shuffle_epoch();
  }

 private:
  void shuffle_epoch() {
    order_.resize(pool_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::mt19937_64 rng(item_seed(cfg_.seed ^ 0x65706f6368ull, epoch_));
    std::shuffle(order_.begin(), order_.end(), rng);
  }

  std::size_t next_frame() {
    if (order_.empty()) shuffle_epoch();
    if (cursor_ == order_.size()) {
      ++epoch_;
      cursor_ = 0;
      shuffle_epoch();
    }
    return order_[cursor_++];
  }

  SpiceConfig cfg_;
  const FramePool& pool_;
  SpiceNetwork<T> net_;
  nn::Adam<T> adam_;
  std::vector<nn::Parameter<T>*> params_;
  std::int64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace spice
