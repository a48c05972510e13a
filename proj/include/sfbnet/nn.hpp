#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sfbnet/ops.hpp"

namespace sfbnet {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
};

/// Non-learnable per-layer state (batch-norm running statistics) that is
/// saved alongside the parameters.
template <typename T>
struct Buffer {
  std::string name;
  std::shared_ptr<RunningStats<T>> stats;
  bool is_var = false;

  std::vector<T>& values() const { return is_var ? stats->var : stats->mean; }
};

/// Ordered, name-unique registry of a model's learnable tensors.
template <typename T>
class ParameterRegistry {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> tensor) {
    for (const auto& p : params_) {
      if (p.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    }
    tensor.set_requires_grad(true);
    params_.push_back({name, tensor});
    return tensor;
  }

  void add_stats(const std::string& prefix, std::shared_ptr<RunningStats<T>> stats) {
    buffers_.push_back({prefix + ".running_mean", stats, false});
    buffers_.push_back({prefix + ".running_var", stats, true});
  }

  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  const std::vector<Buffer<T>>& buffers() const noexcept { return buffers_; }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return &p;
    }
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<Parameter<T>> params_;
  std::vector<Buffer<T>> buffers_;
};

/// `embedding` draws from U(-0.02, 0.02).
enum class Init { he_uniform, glorot_uniform, embedding, zeros, ones };

/// Creates initialised parameters and registers them under a name prefix.
template <typename T>
class LayerFactory {
 public:
  LayerFactory(ParameterRegistry<T>& registry, std::mt19937_64& rng)
      : registry_(registry), rng_(rng) {}

  Tensor<T> make(const std::string& name, Shape shape, Init init, std::int64_t fan_in = 1,
                 std::int64_t fan_out = 1) {
    std::vector<T> values(static_cast<std::size_t>(numel(shape)), T(0));
    double bound = 0.0;
    switch (init) {
      case Init::he_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        break;
      case Init::glorot_uniform:
        bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        break;
      case Init::embedding:
        bound = 0.02;
        break;
      case Init::ones:
        std::fill(values.begin(), values.end(), T(1));
        break;
      case Init::zeros:
        break;
    }
    if (bound > 0.0) {
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : values) v = static_cast<T>(dist(rng_));
    }
    return registry_.add(name, Tensor<T>(std::move(shape), std::move(values)));
  }

  ParameterRegistry<T>& registry() { return registry_; }
  std::mt19937_64& rng() { return rng_; }

 private:
  ParameterRegistry<T>& registry_;
  std::mt19937_64& rng_;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(LayerFactory<T>& f, const std::string& name, int in, int out, int kernel, int stride_,
         int padding_, Init init = Init::he_uniform)
      : stride(stride_), padding(padding_) {
    const std::int64_t fan_in = static_cast<std::int64_t>(in) * kernel * kernel;
    const std::int64_t fan_out = static_cast<std::int64_t>(out) * kernel * kernel;
    weight = f.make(name + ".weight", {out, in, kernel, kernel}, init, fan_in, fan_out);
    bias = f.make(name + ".bias", {out}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 2;

  ConvTranspose2d() = default;
  ConvTranspose2d(LayerFactory<T>& f, const std::string& name, int in, int out, int kernel,
                  int stride_)
      : stride(stride_) {
    weight = f.make(name + ".weight", {in, out, kernel, kernel}, Init::he_uniform, in);
    bias = f.make(name + ".bias", {out}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride);
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  Linear() = default;
  Linear(LayerFactory<T>& f, const std::string& name, int in, int out, Init init) {
    weight = f.make(name + ".weight", {out, in}, init, in, out);
    bias = f.make(name + ".bias", {out}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  LayerNorm(LayerFactory<T>& f, const std::string& name, int dim) {
    gamma = f.make(name + ".gamma", {dim}, Init::ones);
    beta = f.make(name + ".beta", {dim}, Init::zeros);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_lastdim(x, gamma, beta); }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma;
  Tensor<T> beta;
  std::shared_ptr<RunningStats<T>> stats;

  BatchNorm2d() = default;
  BatchNorm2d(LayerFactory<T>& f, const std::string& name, int channels)
      : stats(std::make_shared<RunningStats<T>>()) {
    gamma = f.make(name + ".gamma", {channels}, Init::ones);
    beta = f.make(name + ".beta", {channels}, Init::zeros);
    stats->mean.assign(static_cast<std::size_t>(channels), T(0));
    stats->var.assign(static_cast<std::size_t>(channels), T(1));
    f.registry().add_stats(name, stats);
  }

  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) const {
    return batch_norm2d(x, gamma, beta, mode, stats.get());
  }
};

/// Two rounds of 3x3 conv -> batch-norm -> gelu. The first conv may be strided.
template <typename T>
struct ConvBlock {
  Conv2d<T> conv0, conv1;
  BatchNorm2d<T> norm0, norm1;

  ConvBlock() = default;
  ConvBlock(LayerFactory<T>& f, const std::string& name, int in, int out, int first_stride = 1)
      : conv0(f, name + ".conv0", in, out, 3, first_stride, 1),
        conv1(f, name + ".conv1", out, out, 3, 1, 1),
        norm0(f, name + ".norm0", out),
        norm1(f, name + ".norm1", out) {}

  Tensor<T> operator()(const Tensor<T>& x, NormMode mode) const {
    auto h = gelu(norm0(conv0(x), mode));
    return gelu(norm1(conv1(h), mode));
  }
};

}  // namespace sfbnet
