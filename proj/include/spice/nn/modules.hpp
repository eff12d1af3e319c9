#pragma once

// Stateful wrappers that own parameters for each layer kind.

#include <random>
#include <string>
#include <vector>

#include "spice/nn/layers.hpp"
#include "spice/nn/optim.hpp"

namespace spice::nn {

template <typename T>
struct Conv1dLayer {
  Parameter<T> weight, bias;
  std::size_t stride = 1, padding = 0;

  Conv1dLayer() = default;
  Conv1dLayer(const std::string& name, std::size_t in, std::size_t out,
              std::size_t kernel, std::size_t stride_, std::size_t padding_,
              std::mt19937_64& rng)
      : weight(name + ".weight", he_uniform<T>({out, in, kernel}, in * kernel, rng)),
        bias(name + ".bias", Tensor<T>({out}, T(0))),
        stride(stride_),
        padding(padding_) {}

  Var<T> operator()(const Var<T>& x) const {
    return conv1d(x, weight.var, bias.var, stride, padding);
  }
  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <typename T>
struct ConvTranspose1dLayer {
  Parameter<T> weight, bias;
  std::size_t stride = 1, padding = 0, output_padding = 0;

  ConvTranspose1dLayer() = default;
  ConvTranspose1dLayer(const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::size_t stride_,
                       std::size_t padding_, std::size_t output_padding_,
                       std::mt19937_64& rng)
      : weight(name + ".weight",
               he_uniform<T>({in, out, kernel}, in * kernel / stride_, rng)),
        bias(name + ".bias", Tensor<T>({out}, T(0))),
        stride(stride_),
        padding(padding_),
        output_padding(output_padding_) {}

  Var<T> operator()(const Var<T>& x) const {
    return conv_transpose1d(x, weight.var, bias.var, stride, padding,
                            output_padding);
  }
  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

template <typename T>
struct BatchNorm1dLayer {
  Parameter<T> gamma, beta;
  BatchNormStats<T> stats;
  T momentum = T(0.99);
  T eps = T(1e-5);

  BatchNorm1dLayer() = default;
  BatchNorm1dLayer(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", Tensor<T>({channels}, T(1))),
        beta(name + ".beta", Tensor<T>({channels}, T(0))),
        stats(channels) {}

  Var<T> operator()(const Var<T>& x, Mode mode) {
    return batchnorm1d(x, gamma.var, beta.var, stats, mode, momentum, eps);
  }
  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&gamma); out.push_back(&beta); }
};

template <typename T>
struct DenseLayer {
  Parameter<T> weight, bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out,
             std::mt19937_64& rng)
      : weight(name + ".weight", he_uniform<T>({in, out}, in, rng)),
        bias(name + ".bias", Tensor<T>({out}, T(0))) {}

  Var<T> operator()(const Var<T>& x) const { return dense(x, weight.var, bias.var); }
  void collect(std::vector<Parameter<T>*>& out) { out.push_back(&weight); out.push_back(&bias); }
};

}  // namespace spice::nn
