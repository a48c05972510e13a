#include "sfbnet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sfbnet/ops.hpp"

namespace sfbnet {
namespace {

struct Geometry {
  std::int64_t n, c, hw;
};

template <typename T>
Geometry check_pair(const char* op, const Tensor<T>& logits, const LabelMap& labels) {
  if (!logits.defined() || logits.rank() != 4) {
    throw ShapeError(op, "logits must be N x C x H x W");
  }
  if (logits.dim(0) != labels.batch || logits.dim(2) != labels.height ||
      logits.dim(3) != labels.width) {
    throw ShapeError(op, "logits " + to_string(logits.shape()) + " vs labels [" +
                             std::to_string(labels.batch) + ", " + std::to_string(labels.height) +
                             ", " + std::to_string(labels.width) + "] differ on axes 0,2,3");
  }
  check_labels(labels, static_cast<int>(logits.dim(1)));
  return {logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3)};
}

// Softmax over the channel axis of NCHW data.
template <typename T>
std::vector<T> channel_softmax(const Tensor<T>& logits, const Geometry& g) {
  std::vector<T> p(logits.data().begin(), logits.data().end());
  for (std::int64_t n = 0; n < g.n; ++n) {
    T* base = p.data() + n * g.c * g.hw;
    for (std::int64_t i = 0; i < g.hw; ++i) {
      T mx = base[i];
      for (std::int64_t c = 1; c < g.c; ++c) mx = std::max(mx, base[c * g.hw + i]);
      T total = T(0);
      for (std::int64_t c = 0; c < g.c; ++c) {
        T& v = base[c * g.hw + i];
        v = std::exp(v - mx);
        total += v;
      }
      for (std::int64_t c = 0; c < g.c; ++c) base[c * g.hw + i] /= total;
    }
  }
  return p;
}

// dz = p * (dp - sum_c p dp), per pixel.
template <typename T>
void softmax_backward(const std::vector<T>& p, const std::vector<T>& dp, T* dz, const Geometry& g) {
  for (std::int64_t n = 0; n < g.n; ++n) {
    const std::int64_t off = n * g.c * g.hw;
    for (std::int64_t i = 0; i < g.hw; ++i) {
      T dot = T(0);
      for (std::int64_t c = 0; c < g.c; ++c) dot += p[off + c * g.hw + i] * dp[off + c * g.hw + i];
      for (std::int64_t c = 0; c < g.c; ++c) {
        const auto k = off + c * g.hw + i;
        dz[k] += p[k] * (dp[k] - dot);
      }
    }
  }
}

}  // namespace

void check_labels(const LabelMap& labels, int classes) {
  if (static_cast<std::int64_t>(labels.values.size()) != labels.batch * labels.pixels()) {
    throw DataError("label map holds " + std::to_string(labels.values.size()) +
                    " values for extents " + std::to_string(labels.batch) + "x" +
                    std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  for (std::size_t i = 0; i < labels.values.size(); ++i) {
    const auto v = labels.values[i];
    if (v < 0 || v >= classes) {
      throw DataError("label " + std::to_string(v) + " at flat index " + std::to_string(i) +
                      " is outside [0, " + std::to_string(classes) + ")");
    }
  }
}

template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const LabelMap& labels) {
  const auto g = check_pair("cross_entropy_loss", logits, labels);
  auto p = channel_softmax(logits, g);
  const double count = static_cast<double>(g.n * g.hw);
  double total = 0.0;
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t i = 0; i < g.hw; ++i) {
      const auto cls = labels.values[static_cast<std::size_t>(n * g.hw + i)];
      // log-sum-exp form keeps saturated logits finite
      const T* z = logits.data().data() + n * g.c * g.hw;
      T mx = z[i];
      for (std::int64_t c = 1; c < g.c; ++c) mx = std::max(mx, z[c * g.hw + i]);
      double s = 0.0;
      for (std::int64_t c = 0; c < g.c; ++c) s += std::exp(static_cast<double>(z[c * g.hw + i] - mx));
      total += static_cast<double>(mx) + std::log(s) - static_cast<double>(z[cls * g.hw + i]);
    }
  }
  const T value = static_cast<T>(total / count);
  return make_result<T>(
      {1}, {value}, "cross_entropy", {logits.node_ptr()},
      [p = std::move(p), labels, g, count](Node<T>& self) {
        T* dz = self.parents[0]->ensure_grad().data();
        const T scale = self.grad[0] / static_cast<T>(count);
        for (std::int64_t n = 0; n < g.n; ++n) {
          for (std::int64_t c = 0; c < g.c; ++c) {
            for (std::int64_t i = 0; i < g.hw; ++i) {
              const auto k = (n * g.c + c) * g.hw + i;
              const T target = labels.values[static_cast<std::size_t>(n * g.hw + i)] == c ? T(1) : T(0);
              dz[k] += scale * (p[k] - target);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, const LabelMap& labels, double smooth) {
  const auto g = check_pair("soft_dice_loss", logits, labels);
  if (g.c < 2) throw ShapeError("soft_dice_loss", "need at least one foreground class");
  auto p = channel_softmax(logits, g);
  const std::int64_t fg = g.c - 1;
  std::vector<double> inter(g.c, 0.0), psum(g.c, 0.0), gsum(g.c, 0.0);
  for (std::int64_t n = 0; n < g.n; ++n) {
    for (std::int64_t c = 1; c < g.c; ++c) {
      for (std::int64_t i = 0; i < g.hw; ++i) {
        const double pv = static_cast<double>(p[(n * g.c + c) * g.hw + i]);
        const bool hit = labels.values[static_cast<std::size_t>(n * g.hw + i)] == c;
        psum[c] += pv;
        if (hit) {
          inter[c] += pv;
          gsum[c] += 1.0;
        }
      }
    }
  }
  double mean_dice = 0.0;
  for (std::int64_t c = 1; c < g.c; ++c) {
    mean_dice += (2.0 * inter[c] + smooth) / (psum[c] + gsum[c] + smooth);
  }
  mean_dice /= static_cast<double>(fg);
  const T value = static_cast<T>(1.0 - mean_dice);
  return make_result<T>(
      {1}, {value}, "soft_dice", {logits.node_ptr()},
      [p = std::move(p), labels, g, inter, psum, gsum, smooth, fg](Node<T>& self) {
        std::vector<T> dp(p.size(), T(0));
        for (std::int64_t c = 1; c < g.c; ++c) {
          const double den = psum[c] + gsum[c] + smooth;
          const double num = 2.0 * inter[c] + smooth;
          // d(1 - mean dice)/dp for target 1 and target 0 pixels
          const double on = -(2.0 * den - num) / (den * den) / static_cast<double>(fg);
          const double off = num / (den * den) / static_cast<double>(fg);
          for (std::int64_t n = 0; n < g.n; ++n) {
            for (std::int64_t i = 0; i < g.hw; ++i) {
              const bool hit = labels.values[static_cast<std::size_t>(n * g.hw + i)] == c;
              dp[(n * g.c + c) * g.hw + i] = static_cast<T>((hit ? on : off)) * self.grad[0];
            }
          }
        }
        softmax_backward(p, dp, self.parents[0]->ensure_grad().data(), g);
      });
}

template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels) {
  return add(soft_dice_loss(logits, labels), cross_entropy_loss(logits, labels));
}

SupervisionWeights SupervisionWeights::halving(int stages, double first) {
  SupervisionWeights w;
  w.alpha.clear();
  double a = first;
  for (int i = 0; i < stages; ++i, a /= 2.0) w.alpha.push_back(a);
  return w;
}

bool SupervisionWeights::is_halving() const noexcept {
  for (std::size_t i = 1; i < alpha.size(); ++i) {
    if (alpha[i] != alpha[i - 1] / 2.0) return false;
  }
  return true;
}

LabelMap downsample_labels(const LabelMap& labels, int factor) {
  if (factor < 1) throw ContractError("downsample_labels: factor must be >= 1");
  if (labels.height % factor != 0 || labels.width % factor != 0) {
    throw ShapeError("downsample_labels", "extents " + std::to_string(labels.height) + "x" +
                                              std::to_string(labels.width) +
                                              " are not divisible by " + std::to_string(factor));
  }
  LabelMap out(labels.batch, labels.height / factor, labels.width / factor);
  for (std::int64_t n = 0; n < out.batch; ++n) {
    for (std::int64_t y = 0; y < out.height; ++y) {
      for (std::int64_t x = 0; x < out.width; ++x) {
        out.at(n, y, x) = labels.at(n, y * factor, x * factor);
      }
    }
  }
  return out;
}

std::vector<LabelMap> label_pyramid(const LabelMap& labels, int stages) {
  std::vector<LabelMap> out;
  for (int s = 0; s < stages; ++s) out.push_back(downsample_labels(labels, 1 << s));
  return out;
}

template <typename T>
Tensor<T> deep_supervision_loss(const std::vector<Tensor<T>>& outputs,
                                const std::vector<LabelMap>& pyramid,
                                const SupervisionWeights& weights) {
  if (outputs.empty() || outputs.size() != pyramid.size() ||
      outputs.size() != weights.alpha.size()) {
    throw ContractError("deep_supervision_loss: " + std::to_string(outputs.size()) +
                        " outputs, " + std::to_string(pyramid.size()) + " label maps, " +
                        std::to_string(weights.alpha.size()) + " weights");
  }
  Tensor<T> total;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    auto term = scale(segmentation_loss(outputs[i], pyramid[i]), static_cast<T>(weights.alpha[i]));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores) {
  if (scores.rank() != 4) throw ShapeError("argmax_labels", "expected N x C x H x W");
  const auto n = scores.dim(0), c = scores.dim(1), h = scores.dim(2), w = scores.dim(3);
  LabelMap out(n, h, w);
  const T* s = scores.data().data();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t i = 0; i < h * w; ++i) {
      std::int32_t best = 0;
      for (std::int64_t k = 1; k < c; ++k) {
        if (s[(b * c + k) * h * w + i] > s[(b * c + best) * h * w + i]) best = static_cast<std::int32_t>(k);
      }
      out.values[static_cast<std::size_t>(b * h * w + i)] = best;
    }
  }
  return out;
}

double dice_score(const LabelMap& predicted, const LabelMap& truth, int cls) {
  if (predicted.values.size() != truth.values.size()) {
    throw ShapeError("dice_score", "label maps differ in size");
  }
  std::int64_t p = 0, g = 0, both = 0;
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const bool a = predicted.values[i] == cls;
    const bool b = truth.values[i] == cls;
    p += a;
    g += b;
    both += a && b;
  }
  if (p + g == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + g);
}

#define SFBNET_INSTANTIATE_LOSS(T)                                                             \
  template Tensor<T> soft_dice_loss(const Tensor<T>&, const LabelMap&, double);                \
  template Tensor<T> cross_entropy_loss(const Tensor<T>&, const LabelMap&);                    \
  template Tensor<T> segmentation_loss(const Tensor<T>&, const LabelMap&);                     \
  template Tensor<T> deep_supervision_loss(const std::vector<Tensor<T>>&,                      \
                                           const std::vector<LabelMap>&,                       \
                                           const SupervisionWeights&);                         \
  template LabelMap argmax_labels(const Tensor<T>&);

SFBNET_INSTANTIATE_LOSS(float)
SFBNET_INSTANTIATE_LOSS(double)

}  // namespace sfbnet
