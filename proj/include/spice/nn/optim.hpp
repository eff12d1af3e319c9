#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "spice/nn/autodiff.hpp"

namespace spice::nn {

// Trainable tensor plus its Adam moments.
template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  Tensor<T> m;
  Tensor<T> v;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> init)
      : name(std::move(n)),
        var(Var<T>::leaf(std::move(init), true)),
        m(var.shape(), T(0)),
        v(var.shape(), T(0)) {}

  const Shape& shape() const { return var.shape(); }
};

// He-uniform: U(-limit, limit), limit = sqrt(6 / fan_in).
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor<T> t(std::move(shape));
  for (auto& x : t.data) x = static_cast<T>(dist(rng));
  return t;
}

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  const AdamOptions& options() const { return opts_; }
  std::int64_t step_count() const { return step_; }
  void set_step_count(std::int64_t s) { step_ = s; }
  void set_learning_rate(double lr) { opts_.lr = lr; }

  // Bias-corrected update; parameters without a gradient are left alone.
  void step(const std::vector<Parameter<T>*>& params) {
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (Parameter<T>* p : params) {
      if (!p->var.has_grad()) continue;
      const auto& g = p->var.node().grad;
      auto& w = p->var.mutable_value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i];
        const double mi = opts_.beta1 * p->m[i] + (1 - opts_.beta1) * gi;
        const double vi = opts_.beta2 * p->v[i] + (1 - opts_.beta2) * gi * gi;
        p->m[i] = static_cast<T>(mi);
        p->v[i] = static_cast<T>(vi);
        w[i] -= static_cast<T>(opts_.lr * (mi / c1) /
                               (std::sqrt(vi / c2) + opts_.eps));
      }
    }
  }

 private:
  AdamOptions opts_;
  std::int64_t step_ = 0;
};

template <typename T>
void zero_grad(const std::vector<Parameter<T>*>& params) {
  for (Parameter<T>* p : params) p->var.zero_grad();
}

}  // namespace spice::nn
