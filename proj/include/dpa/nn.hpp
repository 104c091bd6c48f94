#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dpa/autograd.hpp"
#include "dpa/random.hpp"

namespace dpa::nn {

template <typename Real>
struct Parameter {
  std::string name;
  ag::Var<Real> var;
  // Adam moments; allocated on first optimizer step.
  Tensor<Real> m, v;

  Tensor<Real>& value() { return var.mutable_value(); }
  const Tensor<Real>& value() const { return var.value(); }
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) variance-scaling init.
template <typename Real>
Tensor<Real> uniform_init(typename Tensor<Real>::Shape shape, int fan_in, Rng& rng) {
  Tensor<Real> t(shape);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<Real>(rng.uniform(-bound, bound));
  return t;
}

template <typename Real>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in, int out, int kernel, Rng& rng) {
    const int fan_in = in * kernel * kernel;
    weight.name = name + ".weight";
    weight.var = ag::Var<Real>::leaf(uniform_init<Real>({out, in, kernel, kernel}, fan_in, rng));
    bias.name = name + ".bias";
    bias.var = ag::Var<Real>::leaf(uniform_init<Real>({1, out, 1, 1}, fan_in, rng));
  }

  ag::Var<Real> operator()(const ag::Var<Real>& x) const { return ag::conv2d(x, weight.var, bias.var); }

  void collect(std::vector<Parameter<Real>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter<Real> weight, bias;
};

template <typename Real>
class Dense {
 public:
  Dense() = default;
  Dense(std::string name, int in, int out, Rng& rng) {
    weight.name = name + ".weight";
    weight.var = ag::Var<Real>::leaf(uniform_init<Real>({out, in, 1, 1}, in, rng));
    bias.name = name + ".bias";
    bias.var = ag::Var<Real>::leaf(uniform_init<Real>({1, out, 1, 1}, in, rng));
  }

  ag::Var<Real> operator()(const ag::Var<Real>& x) const { return ag::dense(x, weight.var, bias.var); }

  void collect(std::vector<Parameter<Real>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Parameter<Real> weight, bias;
};

inline constexpr double kLeakySlope = 0.2;

/// Pre-activation residual block: x + conv(act(conv(act(x)))).
template <typename Real>
class ResidualBlock {
 public:
  ResidualBlock() = default;
  ResidualBlock(const std::string& name, int channels, Rng& rng)
      : conv1_(name + ".conv1", channels, channels, 3, rng), conv2_(name + ".conv2", channels, channels, 3, rng) {}

  ag::Var<Real> operator()(const ag::Var<Real>& x) const {
    const Real slope = static_cast<Real>(kLeakySlope);
    auto h = conv1_(ag::leaky_relu(x, slope));
    h = conv2_(ag::leaky_relu(h, slope));
    return ag::add(x, h);
  }

  void collect(std::vector<Parameter<Real>*>& out) {
    conv1_.collect(out);
    conv2_.collect(out);
  }

 private:
  Conv2d<Real> conv1_, conv2_;
};

/// Adam with bias correction.
template <typename Real>
class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  explicit Adam(Options o) : opt_(o) {}

  /// One update over `params`; each parameter counts its own steps so that blocks
  /// added mid-training start with fresh bias correction.
  void step(const std::vector<Parameter<Real>*>& params) {
    for (auto* p : params) {
      const auto& g = p->var.grad();
      if (g.empty()) continue;
      if (p->m.empty()) {
        p->m = Tensor<Real>(g.shape());
        p->v = Tensor<Real>(g.shape());
      }
      const long t = ++steps_[p->name];
      const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t));
      const Real b1 = static_cast<Real>(opt_.beta1), b2 = static_cast<Real>(opt_.beta2);
      const Real step = static_cast<Real>(opt_.lr / c1);
      const Real inv_c2 = static_cast<Real>(1.0 / c2);
      const Real eps = static_cast<Real>(opt_.eps);
      auto& w = p->value();
      for (std::size_t i = 0; i < w.size(); ++i) {
        p->m[i] = b1 * p->m[i] + (Real(1) - b1) * g[i];
        p->v[i] = b2 * p->v[i] + (Real(1) - b2) * g[i] * g[i];
        w[i] -= step * p->m[i] / (std::sqrt(p->v[i] * inv_c2) + eps);
      }
    }
  }

  static void zero_grad(const std::vector<Parameter<Real>*>& params) {
    for (auto* p : params) p->var.zero_grad();
  }

 private:
  Options opt_;
  std::map<std::string, long> steps_;
};

}  // namespace dpa::nn
