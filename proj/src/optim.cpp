#include "sfbnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sfbnet {

template <typename T>
AdamW<T>::AdamW(ParameterRegistry<T>& registry, AdamWOptions options)
    : registry_(registry), options_(options) {
  if (!(options_.lr > 0.0)) throw ConfigError("AdamW: learning rate must be > 0");
  for (const auto& p : registry_.parameters()) {
    m_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<std::size_t>(p.tensor.numel()), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const auto& params = registry_.parameters();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto tensor = params[k].tensor;
    auto w = tensor.mutable_data();
    auto g = tensor.grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
      m[i] = b1 * m[i] + (1.0 - b1) * gi;
      v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
      const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
      w[i] = static_cast<T>(w[i] - lr * (update + options_.weight_decay * w[i]));
    }
  }
}

double cosine_lr(double lr_max, double lr_min, std::int64_t step, std::int64_t total) {
  if (total <= 0) return lr_max;
  const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
  return lr_min + (lr_max - lr_min) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace sfbnet
