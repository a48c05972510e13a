#pragma once

#include <cstdint>
#include <vector>

#include "sfbnet/nn.hpp"

namespace sfbnet {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
template <typename T>
class AdamW {
 public:
  AdamW(ParameterRegistry<T>& registry, AdamWOptions options);

  /// One update with learning rate `lr`; parameters without a gradient are
  /// still decayed.
  void step(double lr);
  std::int64_t steps() const noexcept { return t_; }
  const AdamWOptions& options() const noexcept { return options_; }

 private:
  ParameterRegistry<T>& registry_;
  AdamWOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// lr(t) = lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2, for t in [0, total].
double cosine_lr(double lr_max, double lr_min, std::int64_t step, std::int64_t total);

}  // namespace sfbnet
