#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "wtpose/autodiff.hpp"
#include "wtpose/tensor.hpp"

namespace wtpose {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

template <typename T>
Tensor<T> random_normal(Shape shape, Rng& rng, double stddev = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.normal(0.0, stddev));
  return t;
}

template <typename T>
Tensor<T> random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Per-pixel linear layer; weight is [out, in].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::int64_t in, std::int64_t out, Rng& rng, double stddev = 0.02) {
    return {random_normal<T>({out, in}, rng, stddev), Tensor<T>({out})};
  }
  static Linear zeros(std::int64_t in, std::int64_t out) { return {Tensor<T>({out, in}), Tensor<T>({out})}; }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    f(name + ".weight", weight);
    f(name + ".bias", bias);
  }

  NodeId forward(Graph<T>& g, NodeId x) const {
    return ad::linear(g, x, g.parameter(weight), g.parameter(bias));
  }
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;

  // He-normal weights, zero bias.
  static Conv2d init(std::int64_t in, std::int64_t out, int kernel, int stride, int padding, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
    return {random_normal<T>({out, in, kernel, kernel}, rng, stddev), Tensor<T>({out}), stride, padding};
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    f(name + ".weight", weight);
    f(name + ".bias", bias);
  }

  NodeId forward(Graph<T>& g, NodeId x) const {
    return ad::conv2d(g, x, g.parameter(weight), g.parameter(bias), stride, padding);
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  static LayerNorm init(std::int64_t channels) { return {Tensor<T>({channels}, T(1)), Tensor<T>({channels})}; }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    f(name + ".gamma", gamma);
    f(name + ".beta", beta);
  }

  NodeId forward(Graph<T>& g, NodeId x) const {
    return ad::layer_norm(g, x, g.parameter(gamma), g.parameter(beta));
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1;
  Linear<T> fc2;

  static Mlp init(std::int64_t channels, int ratio, Rng& rng) {
    return {Linear<T>::init(channels, ratio * channels, rng), Linear<T>::init(ratio * channels, channels, rng)};
  }

  template <typename F>
  void visit(const std::string& name, F&& f) {
    fc1.visit(name + ".fc1", f);
    fc2.visit(name + ".fc2", f);
  }

  NodeId forward(Graph<T>& g, NodeId x) const {
    return ad::mlp(g, x, g.parameter(fc1.weight), g.parameter(fc1.bias), g.parameter(fc2.weight),
                   g.parameter(fc2.bias));
  }
};

}  // namespace wtpose
