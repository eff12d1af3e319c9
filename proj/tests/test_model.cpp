#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <sstream>

#include "spice/calibration/calibration.hpp"
#include "spice/cli/run_config.hpp"
#include "spice/model/checkpoint.hpp"
#include "spice/model/infer.hpp"
#include "spice/model/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace spice;
using spice::testing::random_tensor;
using spice::testing::TensorD;
using spice::testing::VarD;
using Catch::Approx;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("spice_test_" + name);
}

const FramePool& tiny_pool() {
  static const FramePool pool = [] {
    CorpusConfig cc;
    cc.items = 2;
    cc.item_seconds = 1.0;
    std::vector<AudioBuffer> audio;
    for (const auto& item : gen_training_corpus(cc, 3)) audio.push_back(item.audio);
    PoolOptions opt;
    opt.augment_octaves = false;
    return build_frame_pool(audio, CqtKernel{CqtParams{}}, opt);
  }();
  return pool;
}

SpiceConfig tiny_config() {
  SpiceConfig cfg;
  cfg.d_enc = 2;
  cfg.d_dec = 2;
  cfg.batch_size = 4;
  cfg.seed = 21;
  return cfg;
}

}  // namespace

TEST_CASE("network shapes", "[model]") {
  NetworkSpec full;
  CHECK(full.embedding_size() == 1024);
  CHECK(full.encoder_final_width() == 2);
  const auto layers = full.layers();
  CHECK(layers.front().out_width == 64);
  CHECK(layers.back().out_width == 128);

  SpiceNetwork<double> net(NetworkSpec{128, 2, 2}, 1);
  std::mt19937_64 rng(1);
  const auto x = VarD::constant(random_tensor({5, 1, 128}, rng, 0, 1));
  const auto out = net.encode(x, nn::Mode::kTrain);
  CHECK(out.y.shape() == nn::Shape{5, 1});
  CHECK(out.c.shape() == nn::Shape{5, 1});
  CHECK(out.embedding.shape() == nn::Shape{5, 32});
  for (double c : out.c.value().data) CHECK((c >= 0 && c <= 1));
  CHECK(net.decode(out.y, nn::Mode::kTrain).shape() == nn::Shape{5, 1, 128});
  CHECK_THROWS_AS(net.encode(VarD::constant(TensorD({2, 1, 100}, 0.0)), nn::Mode::kInfer),
                  nn::ShapeError);
}

TEST_CASE("inference mode is deterministic per slice", "[model]") {
  SpiceNetwork<double> net(NetworkSpec{128, 2, 2}, 2);
  std::mt19937_64 rng(2);
  TensorD x = random_tensor({1, 1, 128}, rng, 0, 1);
  TensorD xx({2, 1, 128});
  for (std::size_t i = 0; i < 128; ++i) xx[i] = xx[128 + i] = x[i];
  const auto out = net.encode(VarD::constant(xx), nn::Mode::kInfer);
  CHECK(out.y.value()[0] == out.y.value()[1]);
  CHECK(out.c.value()[0] == out.c.value()[1]);
  // A different batch size may change the summation order in the last bit.
  const auto again = net.encode(VarD::constant(x), nn::Mode::kInfer);
  CHECK(again.y.value()[0] == Approx(out.y.value()[0]).epsilon(1e-12));
  const auto d1 = net.decode(out.y, nn::Mode::kInfer), d2 = net.decode(out.y, nn::Mode::kInfer);
  CHECK(d1.value().data == d2.value().data);
}

TEST_CASE("whole encoder matches finite differences", "[model][grad]") {
  SpiceNetwork<double> net(NetworkSpec{128, 2, 2}, 5);
  std::mt19937_64 rng(5);
  const TensorD x = random_tensor({4, 1, 128}, rng, 0, 1);
  const TensorD r = random_tensor({4, 1}, rng);
  // The confidence head sees a stop-gradient copy of the embedding, so
  // finite differences of c through the trunk are not expected to match.
  // The trunk and pitch head are checked through y, the confidence head
  // through c.
  auto check = [&](bool use_c, const std::vector<nn::Parameter<double>*>& params) {
    auto loss = [&] {
      const auto o = net.encode(VarD::constant(x), nn::Mode::kTrain);
      return nn::sum(nn::mul(use_c ? o.c : o.y, VarD::constant(r)));
    };
    for (auto* p : net.parameters()) p->var.zero_grad();
    nn::backward(loss());
    double worst = 0;
    const double h = 1e-6;
    for (auto* p : params) {
      const auto g = p->var.grad();
      auto& w = p->var.mutable_value();
      for (std::size_t i : {std::size_t{0}, w.size() / 2, w.size() - 1}) {
        const double keep = w[i];
        w[i] = keep + h;
        const double up = loss().item();
        w[i] = keep - h;
        const double down = loss().item();
        w[i] = keep;
        const double fd = (up - down) / (2 * h);
        // Conv biases feeding batchnorm have an exact zero gradient; the floor
        // keeps round-off in their differences from counting as error.
        worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-3}));
      }
    }
    return worst;
  };
  auto trunk = net.trunk_parameters();
  for (auto* p : net.pitch_head_parameters()) trunk.push_back(p);
  CHECK(check(false, trunk) < 1e-5);
  CHECK(check(true, net.confidence_head_parameters()) < 1e-5);
}

TEST_CASE("log input compression", "[model]") {
  NetworkSpec spec{128, 2, 2};
  spec.input_compression = "log";
  SpiceNetwork<double> net(spec, 1);
  TensorD x({1, 1, 128}, 0.0);
  x[1] = 1.0;
  x[2] = -0.5;
  const auto c = net.compress_input(x);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == Approx(1.0).epsilon(1e-15));
  CHECK(c[2] == 0.0);
  spec.input_compression = "sqrt";
  CHECK_THROWS(spec.layers());
  SpiceConfig cfg;
  cfg.input_compression = "sqrt";
  CHECK_THROWS(cfg.validate());
}

TEST_CASE("checkpoint round trip", "[model][checkpoint]") {
  SpiceNetwork<float> net(NetworkSpec{128, 2, 2}, 7);
  std::mt19937_64 rng(7);
  nn::Tensor<float> x({3, 1, 128});
  std::uniform_real_distribution<float> u(0, 1);
  for (auto& v : x.data) v = u(rng);
  (void)net.encode(nn::Var<float>::constant(x), nn::Mode::kTrain);  // move running stats
  const auto path = temp_path("ckpt.bin").string();
  save_checkpoint(path, net, nlohmann::json{{"note", 1}}, 17, static_cast<nn::Adam<float>*>(nullptr));
  auto ck = load_checkpoint<float>(path);
  CHECK(ck.step == 17);
  CHECK(ck.config["note"] == 1);
  CHECK_FALSE(ck.has_adam_state);
  const auto a = net.encode(nn::Var<float>::constant(x), nn::Mode::kInfer);
  const auto b = ck.network->encode(nn::Var<float>::constant(x), nn::Mode::kInfer);
  CHECK(a.y.value().data == b.y.value().data);
  CHECK(a.c.value().data == b.c.value().data);
  CHECK(checkpoint_hash(path) == checkpoint_hash(path));

  std::string bytes = read_file_bytes(path);
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_checkpoint<float>(bad), CheckpointError);
  CHECK_THROWS_AS(deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 5)), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint<float>("/nonexistent/x.ckpt"), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("training is deterministic for a fixed seed", "[model][train]") {
  Trainer<float> a(tiny_config(), tiny_pool()), b(tiny_config(), tiny_pool());
  for (int i = 0; i < 4; ++i) {
    const auto sa = a.step(), sb = b.step();
    REQUIRE(sa.total == sb.total);
    REQUIRE(sa.pitch == sb.pitch);
    REQUIRE(std::isfinite(sa.total));
  }
  auto other = tiny_config();
  other.seed = 22;
  Trainer<float> c(other, tiny_pool());
  Trainer<float> d(tiny_config(), tiny_pool());
  CHECK(c.step().total != d.step().total);
}

TEST_CASE("training resumes exactly from a checkpoint", "[model][train]") {
  Trainer<float> straight(tiny_config(), tiny_pool());
  std::vector<double> want;
  straight.run(6, [&](const StepStats& s) { want.push_back(s.total); });

  Trainer<float> first(tiny_config(), tiny_pool());
  StepStats last;
  first.run(3, [&](const StepStats& s) { last = s; });
  const auto path = temp_path("resume.ckpt").string();
  first.save(path, last);
  Trainer<float> second(tiny_config(), tiny_pool());
  second.restore(load_checkpoint<float>(path));
  CHECK(second.step_count() == 3);
  std::vector<double> got;
  second.run(6, [&](const StepStats& s) { got.push_back(s.total); });
  REQUIRE(got.size() == 3);
  for (int i = 0; i < 3; ++i) CHECK(got[i] == want[3 + i]);

  auto changed = tiny_config();
  changed.lr = 5e-4;
  Trainer<float> mismatch(changed, tiny_pool());
  CHECK_THROWS_AS(mismatch.restore(load_checkpoint<float>(path)), TrainingError);
  std::filesystem::remove(path);
}

TEST_CASE("trainer argument errors", "[model][train]") {
  FramePool empty;
  empty.bins = 190;
  CHECK_THROWS_AS(Trainer<float>(tiny_config(), empty), TrainingError);
  auto noisy = tiny_config();
  noisy.noisy_training = true;
  CHECK_THROWS_AS(Trainer<float>(noisy, tiny_pool()), TrainingError);
  CHECK_THROWS_AS(build_frame_pool({}, CqtKernel{CqtParams{}}, PoolOptions{}), TrainingError);
  CHECK(tiny_pool().size() == 2 * (16000 / 512 + 1));
}

TEST_CASE("noisy training runs on a pool with noisy twins", "[model][train]") {
  CorpusConfig cc;
  cc.items = 1;
  cc.item_seconds = 1.0;
  PoolOptions opt;
  opt.augment_octaves = false;
  opt.noisy = true;
  const auto pool = build_frame_pool({gen_corpus_item(cc, 4, "n").audio}, CqtKernel{CqtParams{}}, opt);
  REQUIRE(pool.has_noisy());
  CHECK(pool.noisy.size() == pool.clean.size());
  CHECK(pool.noisy != pool.clean);
  auto cfg = tiny_config();
  cfg.noisy_training = true;
  Trainer<float> t(cfg, pool);
  CHECK(std::isfinite(t.step().total));
}

TEST_CASE("inference output", "[model][infer]") {
  SpiceNetwork<float> net(NetworkSpec{128, 2, 2}, 3);
  const CqtKernel cqt{CqtParams{}};
  std::vector<double> tone(8000);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.5 * std::sin(2 * M_PI * 330 * i / 16000.0);
  const AudioBuffer audio(tone, 16000);
  const auto plain = infer_audio(net, cqt, audio, 4);
  REQUIRE(plain.size() == 8000 / 512 + 1);
  CHECK(plain[1].time_sec == Approx(0.032));
  for (const auto& f : plain) {
    CHECK_FALSE(f.pitch_semitones);
    CHECK((f.confidence >= 0 && f.confidence <= 1));
  }
  std::ostringstream os;
  write_pitch_csv(os, plain);
  CHECK(os.str().rfind("time_sec,y,confidence\n", 0) == 0);

  AffineCalibration cal;
  cal.b = 50;
  cal.s = -36;
  const auto pitched = infer_audio(net, cqt, audio, 4, &cal);
  REQUIRE(pitched[0].pitch_semitones);
  CHECK(*pitched[0].pitch_semitones == Approx(50 - 36 * pitched[0].y));
  CHECK(*pitched[0].pitch_hz == Approx(semitones_to_hz(*pitched[0].pitch_semitones)));
  std::ostringstream os2;
  write_pitch_csv(os2, pitched);
  CHECK(os2.str().rfind("time_sec,y,confidence,pitch_semitones,pitch_hz\n", 0) == 0);
  cal.k_star = 3;
  CHECK_THROWS(infer_audio(net, cqt, audio, 4, &cal));
  CHECK_THROWS(infer_audio(net, cqt, AudioBuffer(std::vector<double>{}, 16000), 4));
}

TEST_CASE("run configuration parsing", "[config]") {
  RunConfig cfg;
  apply_override(cfg, "model.lr=0.001");
  apply_override(cfg, "model.loss_kind=l1");
  apply_override(cfg, "model.augment_octaves=false");
  CHECK(cfg.model.lr == 0.001);
  CHECK(cfg.model.loss_kind == LossKind::kL1);
  CHECK_FALSE(cfg.model.augment_octaves);
  CHECK_THROWS_AS(apply_override(cfg, "model.nope=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "model.lr"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "model.d_enc=1.5"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "run.steps=abc"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "model.augment_octaves=maybe"), ConfigError);

  std::istringstream ini("[model]\nd_enc = 16\n[run]\nseed = 9\nsteps = 100\n[calibration]\npieces = 7\n");
  RunConfig a;
  apply_ini(a, ini);
  CHECK(a.model.d_enc == 16);
  CHECK(a.model.seed == 9);
  CHECK(a.seed_set);
  CHECK(a.model.steps == 100);
  CHECK(a.calibration.pieces == 7);
  CHECK_NOTHROW(a.validate());

  std::istringstream unknown("[model]\nwidth = 3\n");
  RunConfig b;
  CHECK_THROWS_AS(apply_ini(b, unknown), ConfigError);
  std::istringstream loose("lr = 3\n");
  CHECK_THROWS_AS(apply_ini(b, loose), ConfigError);

  std::ostringstream out;
  write_run_config(out, a);
  RunConfig c;
  std::istringstream back(out.str());
  apply_ini(c, back);
  CHECK(nlohmann::json(c.model) == nlohmann::json(a.model));
  CHECK(c.calibration.pieces == 7);
  CHECK(c.out_dir == a.out_dir);

  RunConfig bad;
  bad.corpus.hop = 256;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("seed from the environment", "[config]") {
  RunConfig cfg;
  ::setenv("SPICE_SEED", "77", 1);
  apply_seed_env(cfg);
  CHECK(cfg.model.seed == 77);
  RunConfig fixed;
  apply_override(fixed, "run.seed=5");
  apply_seed_env(fixed);
  CHECK(fixed.model.seed == 5);
  ::unsetenv("SPICE_SEED");
}
