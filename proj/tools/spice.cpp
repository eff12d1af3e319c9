// spice: corpus synthesis, training, calibration, inference and evaluation.

#include <malloc.h>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "spice/spice.hpp"

namespace fs = std::filesystem;
using namespace spice;

namespace {

// Reported as `error: <command>: <message>` on stderr with exit code 1.
struct CommandError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "override a config key: section.key=value");
  cmd->add_option("--seed", c.seed, "random seed (falls back to SPICE_SEED)");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  for (const auto& o : c.overrides) apply_override(cfg, o);
  if (c.seed) {
    cfg.model.seed = *c.seed;
    cfg.seed_set = true;
  }
  apply_seed_env(cfg);
  cfg.validate();
  return cfg;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved_config.ini");
  if (!out) throw CommandError("cannot write " + (dir / "resolved_config.ini").string());
  write_run_config(out, cfg);
}

CqtKernel make_cqt(const RunConfig& cfg) { return CqtKernel(cfg.cqt); }

// Training ---------------------------------------------------------------

struct TrainResult {
  fs::path final_checkpoint;
  std::int64_t steps = 0;
};

TrainResult train_into(const RunConfig& cfg, const std::vector<AudioBuffer>& tracks,
                       const CqtKernel& cqt, const fs::path& out, const std::string& resume,
                       bool quiet) {
  fs::create_directories(out);
  write_resolved(out, cfg);
  PoolOptions po;
  po.augment_octaves = cfg.model.augment_octaves;
  po.noisy = cfg.model.noisy_training;
  po.snr_min_db = cfg.model.snr_min_db;
  po.snr_max_db = cfg.model.snr_max_db;
  po.seed = cfg.model.seed;
  const FramePool pool = build_frame_pool(tracks, cqt, po);
  if (!quiet) std::cerr << "frame pool: " << pool.size() << " frames\n";

  Trainer<float> trainer(cfg.model, pool);
  const fs::path log_path = out / "train_log.csv";
  std::ios::openmode mode = std::ios::out;
  if (!resume.empty()) {
    trainer.restore(load_checkpoint<float>(resume));
    mode |= std::ios::app;
  }
  std::ofstream log(log_path, mode);
  if (!log) throw CommandError("cannot write " + log_path.string());
  if (resume.empty()) log << "step,loss_total,loss_pitch,loss_recon,loss_conf\n";
  log << std::setprecision(9);

  StepStats last;
  trainer.run(cfg.model.steps, [&](const StepStats& s) {
    last = s;
    log << s.step << ',' << s.total << ',' << s.pitch << ',' << s.recon << ',' << s.conf << '\n';
    const std::int64_t done = s.step + 1;
    if (cfg.model.checkpoint_every > 0 && done % cfg.model.checkpoint_every == 0 &&
        done < cfg.model.steps) {
      std::ostringstream name;
      name << "checkpoint_" << std::setw(7) << std::setfill('0') << done << ".ckpt";
      trainer.save((out / name.str()).string(), s);
    }
    if (!quiet && done % 500 == 0) {
      std::cerr << "step " << done << " loss " << s.total << '\n';
    }
  });
  TrainResult r;
  r.final_checkpoint = out / "final.ckpt";
  r.steps = trainer.step_count();
  trainer.save(r.final_checkpoint.string(), last);
  return r;
}

std::vector<AudioBuffer> load_tracks(const std::string& dir) {
  std::vector<AudioBuffer> tracks;
  for (const auto& p : list_wavs(dir)) tracks.push_back(load_wav(p.string()));
  return tracks;
}

// Calibration ------------------------------------------------------------

AffineCalibration calibrate_checkpoint(const RunConfig& cfg, const std::string& ckpt,
                                       const CqtKernel& cqt) {
  auto ck = load_checkpoint<float>(ckpt);
  const int k_star = cfg.model.inference_offset();
  AffineCalibration cal =
      calibrate_model(*ck.network, cqt, cfg.calibration, cfg.calibration_seed, k_star);
  cal.checkpoint_hash = checkpoint_hash(ckpt);
  return cal;
}

// Evaluation -------------------------------------------------------------

void write_report(const fs::path& dir, const EvalReport& r) {
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << std::setw(2) << to_json(r) << '\n';
  std::ofstream txt(dir / "report.txt");
  write_report_text(txt, r);
  std::ofstream roc_csv(dir / "roc.csv");
  write_roc_csv(roc_csv, r);
  std::ofstream err_csv(dir / "error_by_freq.csv");
  write_error_csv(err_csv, r);
}

int run_guarded(const std::string& name, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << name << ": " << msg << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees the same large buffers every step.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Self-supervised pitch estimation"};
  app.require_subcommand(1);
  std::function<void()> action;
  std::string action_name;

  // synth-gen
  Common gen_c;
  std::string gen_out, gen_prefix = "item";
  std::optional<int> gen_items;
  auto* gen = app.add_subcommand("synth-gen", "write a labelled synthetic corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--items", gen_items, "number of items");
  gen->add_option("--prefix", gen_prefix, "file name prefix");
  gen->callback([&] {
    action_name = "synth-gen";
    action = [&] {
      RunConfig cfg = resolve(gen_c);
      if (gen_items) cfg.corpus.items = *gen_items;
      cfg.validate();
      write_corpus(gen_out, gen_training_corpus(cfg.corpus, cfg.model.seed, gen_prefix));
      write_resolved(gen_out, cfg);
    };
  });

  // train
  Common tr_c;
  std::string tr_corpus, tr_out, tr_resume;
  std::optional<std::int64_t> tr_steps;
  bool tr_quiet = false;
  auto* tr = app.add_subcommand("train", "train the encoder/decoder");
  add_common(tr, tr_c);
  tr->add_option("--corpus", tr_corpus, "directory of training .wav files")->required();
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--steps", tr_steps, "total optimizer steps");
  tr->add_option("--resume", tr_resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  tr->add_flag("--quiet", tr_quiet, "no progress output");
  tr->callback([&] {
    action_name = "train";
    action = [&] {
      RunConfig cfg = resolve(tr_c);
      if (tr_steps) cfg.model.steps = *tr_steps;
      cfg.validate();
      const auto r = train_into(cfg, load_tracks(tr_corpus), make_cqt(cfg), tr_out, tr_resume,
                                tr_quiet);
      std::cout << r.final_checkpoint.string() << '\n';
    };
  });

  // calibrate
  Common cal_c;
  std::string cal_ckpt, cal_out;
  std::optional<int> cal_pieces;
  auto* cal = app.add_subcommand("calibrate", "fit the affine pitch calibration");
  add_common(cal, cal_c);
  cal->add_option("--checkpoint", cal_ckpt, "trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  cal->add_option("--out", cal_out, "calibration JSON path")->required();
  cal->add_option("--pieces", cal_pieces, "number of synthetic pieces (M)");
  cal->callback([&] {
    action_name = "calibrate";
    action = [&] {
      RunConfig cfg = resolve(cal_c);
      if (cal_pieces) cfg.calibration.pieces = *cal_pieces;
      cfg.validate();
      const auto result = calibrate_checkpoint(cfg, cal_ckpt, make_cqt(cfg));
      const fs::path out(cal_out);
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      save_calibration(cal_out, result);
      write_resolved(out.has_parent_path() ? out.parent_path() : fs::path("."), cfg);
    };
  });

  // infer
  Common inf_c;
  std::string inf_ckpt, inf_cal, inf_out_dir, inf_out, inf_channel = "mix";
  std::vector<std::string> inf_inputs;
  auto* inf = app.add_subcommand("infer", "per-frame pitch and confidence");
  add_common(inf, inf_c);
  inf->add_option("inputs", inf_inputs, "input .wav files")->required()->check(CLI::ExistingFile);
  inf->add_option("--checkpoint", inf_ckpt, "trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  inf->add_option("--calibration", inf_cal, "calibration JSON")->check(CLI::ExistingFile);
  inf->add_option("--out", inf_out, "output CSV (single input only)");
  inf->add_option("--out-dir", inf_out_dir, "directory for <stem>.csv outputs");
  inf->add_option("--voice-channel", inf_channel, "mix, left or right");
  inf->callback([&] {
    action_name = "infer";
    action = [&] {
      RunConfig cfg = resolve(inf_c);
      if (!inf_out.empty() && inf_inputs.size() != 1) {
        throw CommandError("--out takes a single input; use --out-dir");
      }
      const CqtKernel cqt = make_cqt(cfg);
      auto ck = load_checkpoint<float>(inf_ckpt);
      std::optional<AffineCalibration> calib;
      if (!inf_cal.empty()) calib = load_calibration(inf_cal);
      const int k_star = calib ? calib->k_star : cfg.model.inference_offset();
      const Channel ch = parse_channel(inf_channel);
      for (const auto& in : inf_inputs) {
        AudioBuffer audio = load_wav(in, ch);
        if (audio.sample_rate != cfg.cqt.sample_rate) audio = resample(audio, cfg.cqt.sample_rate);
        const auto frames = infer_audio(*ck.network, cqt, audio, k_star, calib ? &*calib : nullptr);
        if (!inf_out.empty() || !inf_out_dir.empty()) {
          fs::path path = inf_out.empty() ? fs::path(inf_out_dir) / fs::path(in).stem() : fs::path(inf_out);
          if (inf_out.empty()) path += ".csv";
          if (path.has_parent_path()) fs::create_directories(path.parent_path());
          std::ofstream os(path);
          if (!os) throw CommandError("cannot write " + path.string());
          write_pitch_csv(os, frames);
        } else {
          write_pitch_csv(std::cout, frames);
        }
      }
    };
  });

  // eval
  std::vector<std::string> ev_est, ev_truth;
  std::string ev_format = "hz_csv", ev_out;
  double ev_hop = 0.0;
  int ev_bins = 10;
  auto* ev = app.add_subcommand("eval", "RPA, VRR, ROC and error-by-frequency");
  ev->add_option("--estimate", ev_est, "inference CSV (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--truth", ev_truth, "ground-truth CSV, one per estimate")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--truth-format", ev_format, "hz_csv or semitone_csv");
  ev->add_option("--truth-hop", ev_hop, "label hop in seconds (0: infer from timestamps)");
  ev->add_option("--bins", ev_bins, "error-by-frequency bins");
  ev->add_option("--out", ev_out, "report directory")->required();
  ev->callback([&] {
    action_name = "eval";
    action = [&] {
      if (ev_est.size() != ev_truth.size()) {
        throw CommandError("need one --truth per --estimate");
      }
      const TruthFormat fmt = parse_truth_format(ev_format);
      std::vector<PitchTrack> est, truth;
      for (std::size_t i = 0; i < ev_est.size(); ++i) {
        PitchTrack e = load_estimate(ev_est[i]);
        const PitchTrack t = load_ground_truth(ev_truth[i], fmt, ev_hop);
        truth.push_back(resample_track(t, e.hop, e.size()));
        est.push_back(std::move(e));
      }
      const EvalReport r = evaluate(concat_tracks(est), concat_tracks(truth),
                                    static_cast<std::size_t>(std::max(ev_bins, 1)));
      write_report(ev_out, r);
      write_report_text(std::cout, r);
    };
  });

  // ablate
  Common ab_c;
  std::string ab_corpus, ab_eval, ab_out;
  std::vector<std::string> ab_losses = {"huber", "l1", "l2"};
  auto* ab = app.add_subcommand("ablate", "loss x reconstruction x augmentation matrix");
  add_common(ab, ab_c);
  ab->add_option("--corpus", ab_corpus, "training .wav directory")->required();
  ab->add_option("--eval-corpus", ab_eval, "labelled evaluation directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--losses", ab_losses, "loss kinds to include");
  ab->callback([&] {
    action_name = "ablate";
    action = [&] {
      const RunConfig base = resolve(ab_c);
      const CqtKernel cqt = make_cqt(base);
      const auto tracks = load_tracks(ab_corpus);
      const auto items = load_corpus_dir(ab_eval, base.cqt.hop);
      fs::create_directories(ab_out);
      std::ofstream matrix(fs::path(ab_out) / "ablation.csv");
      matrix << "loss,recon,augment,rpa,vrr_at_10fa,linearity\n" << std::setprecision(6);
      for (const auto& loss : ab_losses) {
        for (bool recon : {true, false}) {
          for (bool augment : {true, false}) {
            RunConfig cfg = base;
            cfg.model.loss_kind = parse_loss_kind(loss);
            if (!recon) cfg.model.w_recon = 0;
            cfg.model.augment_octaves = augment;
            const std::string tag = loss + (recon ? "_recon" : "_norecon") +
                                    (augment ? "_aug" : "_noaug");
            const fs::path dir = fs::path(ab_out) / tag;
            const auto r = train_into(cfg, tracks, cqt, dir, "", true);
            const auto calib = calibrate_checkpoint(cfg, r.final_checkpoint.string(), cqt);
            save_calibration((dir / "calibration.json").string(), calib);
            auto ck = load_checkpoint<float>(r.final_checkpoint.string());
            const auto evr = evaluate_model(*ck.network, cqt, calib, items);
            write_report(dir, evr.report);
            matrix << loss << ',' << recon << ',' << augment << ',' << evr.report.rpa << ','
                   << evr.report.vrr_at_10fa << ',' << evr.linearity << '\n';
            matrix.flush();
            std::cerr << tag << ": RPA " << evr.report.rpa << '\n';
          }
        }
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << "error: usage: " << e.what() << '\n';
    return 2;
  }
  return run_guarded(action_name, action);
}
