#pragma once

// Encoder with pitch and confidence heads, and the mirrored decoder.
//
// Encoder: six blocks of [conv k3 same, batchnorm, relu, maxpool 3/2 ceil]
// with channels d * {1,2,4,8,8,8}. Width 128 halves to 2, so the flattened
// embedding has 8d * 2 = 16d elements (1024 for d = 64).
// Pitch head: 16d -> 48 (relu) -> 1. Confidence head: 16d -> 1 (sigmoid),
// fed through a stop-gradient so its loss never reaches the trunk.
// Decoder: 1 -> 48 (relu) -> 16d' (relu), reshape [8d', 2], six blocks of
// [transposed conv k3 stride 2, batchnorm, relu] with channels
// d' * {8,8,8,4,2,1}, then a linear conv k3 to one channel at width 128.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spice/nn/modules.hpp"
#include "spice/nn/ops.hpp"

namespace spice {

struct LayerSpec {
  std::string kind;  // conv, conv_transpose, dense, reshape
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 0;
  int stride = 1;
  int padding = 0;
  int output_padding = 0;
  std::string normalization;  // "batchnorm" or ""
  std::string activation;     // relu, sigmoid, linear
  std::string pooling;        // "max3s2ceil" or ""
  int in_width = 0;
  int out_width = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LayerSpec, kind, in_channels, out_channels,
                                   kernel, stride, padding, output_padding,
                                   normalization, activation, pooling,
                                   in_width, out_width)

struct NetworkSpec {
  static constexpr std::array<int, 6> kChannelMultipliers{1, 2, 4, 8, 8, 8};
  static constexpr int kPitchHidden = 48;
  static constexpr int kKernel = 3;

  int input_width = 128;
  int d_enc = 64;
  int d_dec = 32;
  // Input compression applied inside encode: "none" or "log"
  // (log1p(1000 x) / log1p(1000), so a unit magnitude maps to 1).
  std::string input_compression = "none";

  int encoder_channels(std::size_t i) const { return d_enc * kChannelMultipliers[i]; }
  int decoder_channels(std::size_t i) const {
    return d_dec * kChannelMultipliers[kChannelMultipliers.size() - 1 - i];
  }
  int encoder_final_width() const {
    int w = input_width;
    for (std::size_t i = 0; i < kChannelMultipliers.size(); ++i) {
      w = static_cast<int>(nn::pool_output_width(w, 3, 2, true));
    }
    return w;
  }
  int embedding_size() const { return encoder_channels(5) * encoder_final_width(); }
  int decoder_seed_width() const {
    return input_width >> kChannelMultipliers.size();
  }

  // Ordered description of every layer with its widths; throws if the
  // stack does not compose back to the input width.
  std::vector<LayerSpec> layers() const {
    if (input_compression != "none" && input_compression != "log") {
      throw std::invalid_argument("unknown input compression: " + input_compression);
    }
    if (input_width <= 0 || input_width % (1 << kChannelMultipliers.size()) != 0) {
      throw std::invalid_argument("input width must be a positive multiple of 64");
    }
    std::vector<LayerSpec> out;
    int w = input_width, c = 1;
    for (std::size_t i = 0; i < kChannelMultipliers.size(); ++i) {
      const int nw = static_cast<int>(nn::pool_output_width(w, 3, 2, true));
      out.push_back({"conv", c, encoder_channels(i), kKernel, 1, 1, 0,
                     "batchnorm", "relu", "max3s2ceil", w, nw});
      c = encoder_channels(i);
      w = nw;
    }
    const int emb = c * w;
    out.push_back({"dense", emb, kPitchHidden, 0, 1, 0, 0, "", "relu", "", 0, 0});
    out.push_back({"dense", kPitchHidden, 1, 0, 1, 0, 0, "", "linear", "", 0, 0});
    out.push_back({"dense", emb, 1, 0, 1, 0, 0, "", "sigmoid", "", 0, 0});
    const int seed_w = decoder_seed_width();
    const int seed_c = decoder_channels(0);
    out.push_back({"dense", 1, kPitchHidden, 0, 1, 0, 0, "", "relu", "", 0, 0});
    out.push_back({"dense", kPitchHidden, seed_c * seed_w, 0, 1, 0, 0, "", "relu", "", 0, 0});
    out.push_back({"reshape", seed_c * seed_w, seed_c, 0, 1, 0, 0, "", "linear", "", 1, seed_w});
    w = seed_w;
    c = seed_c;
    for (std::size_t i = 0; i < kChannelMultipliers.size(); ++i) {
      const int nw = static_cast<int>(
          nn::conv_transpose_output_width(w, kKernel, 2, 1, 1));
      out.push_back({"conv_transpose", c, decoder_channels(i), kKernel, 2, 1, 1,
                     "batchnorm", "relu", "", w, nw});
      c = decoder_channels(i);
      w = nw;
    }
    out.push_back({"conv", c, 1, kKernel, 1, 1, 0, "", "linear", "", w, w});
    if (w != input_width) throw std::logic_error("decoder does not restore input width");
    return out;
  }
};

inline void to_json(nlohmann::json& j, const NetworkSpec& s) {
  j = nlohmann::json{{"input_width", s.input_width},
                     {"d_enc", s.d_enc},
                     {"d_dec", s.d_dec},
                     {"input_compression", s.input_compression},
                     {"layers", s.layers()}};
}

inline void from_json(const nlohmann::json& j, NetworkSpec& s) {
  j.at("input_width").get_to(s.input_width);
  j.at("d_enc").get_to(s.d_enc);
  j.at("d_dec").get_to(s.d_dec);
  s.input_compression = j.value("input_compression", std::string("none"));
}

template <typename T>
struct EncoderOutput {
  nn::Var<T> y;          // [B, 1] pitch code
  nn::Var<T> c;          // [B, 1] confidence in [0, 1]
  nn::Var<T> embedding;  // [B, 16 d_enc]
};

template <typename T>
class SpiceNetwork {
 public:
  explicit SpiceNetwork(NetworkSpec spec, std::uint64_t seed = 0) : spec_(spec) {
    (void)spec_.layers();
    std::mt19937_64 rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t out = spec_.encoder_channels(i);
      const std::string name = "enc.block" + std::to_string(i);
      enc_conv_[i] = nn::Conv1dLayer<T>(name + ".conv", in, out, 3, 1, 1, rng);
      enc_bn_[i] = nn::BatchNorm1dLayer<T>(name + ".bn", out);
      in = out;
    }
    const std::size_t emb = spec_.embedding_size();
    pitch_hidden_ = nn::DenseLayer<T>("pitch.hidden", emb, NetworkSpec::kPitchHidden, rng);
    pitch_out_ = nn::DenseLayer<T>("pitch.out", NetworkSpec::kPitchHidden, 1, rng);
    conf_out_ = nn::DenseLayer<T>("conf.out", emb, 1, rng);

    const std::size_t seed_c = spec_.decoder_channels(0);
    const std::size_t seed_w = spec_.decoder_seed_width();
    dec_in_ = nn::DenseLayer<T>("dec.in", 1, NetworkSpec::kPitchHidden, rng);
    dec_expand_ = nn::DenseLayer<T>("dec.expand", NetworkSpec::kPitchHidden,
                                    seed_c * seed_w, rng);
    in = seed_c;
    for (std::size_t i = 0; i < 6; ++i) {
      const std::size_t out = spec_.decoder_channels(i);
      const std::string name = "dec.block" + std::to_string(i);
      dec_convt_[i] = nn::ConvTranspose1dLayer<T>(name + ".convt", in, out, 3, 2, 1, 1, rng);
      dec_bn_[i] = nn::BatchNorm1dLayer<T>(name + ".bn", out);
      in = out;
    }
    dec_out_ = nn::Conv1dLayer<T>("dec.out", in, 1, 3, 1, 1, rng);
  }

  const NetworkSpec& spec() const { return spec_; }

  // The slice as the first conv sees it. Also the reconstruction target.
  nn::Tensor<T> compress_input(nn::Tensor<T> x) const {
    if (spec_.input_compression == "log") {
      const T norm = T(1) / std::log1p(T(1000));
      for (auto& v : x.data) v = norm * std::log1p(T(1000) * std::max(v, T(0)));
    }
    return x;
  }

  // x: [B, 1, F] or [B, F].
  EncoderOutput<T> encode(const nn::Var<T>& x, nn::Mode mode) {
    nn::Var<T> h = x;
    if (h.shape().size() == 2) h = nn::reshape(h, {h.shape()[0], 1, h.shape()[1]});
    nn::expect_shape(h.shape(), {h.shape()[0], 1, std::size_t(spec_.input_width)},
                     "encode input");
    const std::size_t B = h.shape()[0];
    if (spec_.input_compression != "none") h = nn::Var<T>::constant(compress_input(h.value()));
    for (std::size_t i = 0; i < 6; ++i) {
      h = enc_conv_[i](h);
      h = enc_bn_[i](h, mode);
      h = nn::relu(h);
      h = nn::maxpool1d(h, 3, 2, true);
    }
    nn::Var<T> emb = nn::reshape(h, {B, h.size() / B});
    nn::Var<T> y = pitch_out_(nn::relu(pitch_hidden_(emb)));
    nn::Var<T> c = nn::sigmoid(conf_out_(nn::stop_gradient(emb)));
    return {y, c, emb};
  }

  // y: [B, 1] -> [B, 1, F].
  nn::Var<T> decode(const nn::Var<T>& y, nn::Mode mode) {
    nn::expect_rank(y.shape(), 2, "decode input");
    const std::size_t B = y.shape()[0];
    nn::Var<T> h = nn::relu(dec_in_(y));
    h = nn::relu(dec_expand_(h));
    h = nn::reshape(h, {B, std::size_t(spec_.decoder_channels(0)),
                        std::size_t(spec_.decoder_seed_width())});
    for (std::size_t i = 0; i < 6; ++i) {
      h = dec_convt_[i](h);
      h = dec_bn_[i](h, mode);
      h = nn::relu(h);
    }
    return dec_out_(h);
  }

  std::vector<nn::Parameter<T>*> trunk_parameters() {
    std::vector<nn::Parameter<T>*> out;
    for (std::size_t i = 0; i < 6; ++i) {
      enc_conv_[i].collect(out);
      enc_bn_[i].collect(out);
    }
    return out;
  }
  std::vector<nn::Parameter<T>*> pitch_head_parameters() {
    std::vector<nn::Parameter<T>*> out;
    pitch_hidden_.collect(out);
    pitch_out_.collect(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> confidence_head_parameters() {
    std::vector<nn::Parameter<T>*> out;
    conf_out_.collect(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> decoder_parameters() {
    std::vector<nn::Parameter<T>*> out;
    dec_in_.collect(out);
    dec_expand_.collect(out);
    for (std::size_t i = 0; i < 6; ++i) {
      dec_convt_[i].collect(out);
      dec_bn_[i].collect(out);
    }
    dec_out_.collect(out);
    return out;
  }
  std::vector<nn::Parameter<T>*> encoder_parameters() {
    auto out = trunk_parameters();
    for (auto* p : pitch_head_parameters()) out.push_back(p);
    for (auto* p : confidence_head_parameters()) out.push_back(p);
    return out;
  }
  std::vector<nn::Parameter<T>*> parameters() {
    auto out = encoder_parameters();
    for (auto* p : decoder_parameters()) out.push_back(p);
    return out;
  }

  // Running statistics keyed by layer name, for checkpoints.
  std::vector<std::pair<std::string, nn::BatchNormStats<T>*>> batchnorm_stats() {
    std::vector<std::pair<std::string, nn::BatchNormStats<T>*>> out;
    for (std::size_t i = 0; i < 6; ++i)
      out.emplace_back("enc.block" + std::to_string(i) + ".bn", &enc_bn_[i].stats);
    for (std::size_t i = 0; i < 6; ++i)
      out.emplace_back("dec.block" + std::to_string(i) + ".bn", &dec_bn_[i].stats);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->var.size();
    return n;
  }
  std::size_t encoder_parameter_count() {
    std::size_t n = 0;
    for (auto* p : encoder_parameters()) n += p->var.size();
    return n;
  }

 private:
  NetworkSpec spec_;
  std::array<nn::Conv1dLayer<T>, 6> enc_conv_;
  std::array<nn::BatchNorm1dLayer<T>, 6> enc_bn_;
  nn::DenseLayer<T> pitch_hidden_, pitch_out_, conf_out_;
  nn::DenseLayer<T> dec_in_, dec_expand_;
  std::array<nn::ConvTranspose1dLayer<T>, 6> dec_convt_;
  std::array<nn::BatchNorm1dLayer<T>, 6> dec_bn_;
  nn::Conv1dLayer<T> dec_out_;
};

}  // namespace spice
