// Independent reference implementations used as test oracles. Nothing here
// calls into the library's op code paths beyond reading tensor values.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "sfbnet/attention.hpp"
#include "sfbnet/loss.hpp"
#include "sfbnet/model.hpp"

namespace oracle {

using sfbnet::Tensor;

template <typename T>
Tensor<T> random_tensor(sfbnet::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                        double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(sfbnet::numel(shape)));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
double max_abs_diff(const std::vector<double>& ref, const Tensor<T>& got) {
  double m = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    m = std::max(m, std::abs(ref[i] - static_cast<double>(got.data()[i])));
  }
  return m;
}

// Direct sliding-window convolution, NCHW x OIKK.
template <typename T>
std::vector<double> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                           int pad) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto o = w.dim(0), k = w.dim(2);
  const auto oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * o * oh * ow));
  for (std::int64_t in = 0; in < n; ++in)
    for (std::int64_t oc = 0; oc < o; ++oc)
      for (std::int64_t y = 0; y < oh; ++y)
        for (std::int64_t xx = 0; xx < ow; ++xx) {
          double s = b.defined() ? b.data()[oc] : 0.0;
          for (std::int64_t ic = 0; ic < c; ++ic)
            for (std::int64_t ky = 0; ky < k; ++ky)
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const auto sy = y * stride + ky - pad, sx = xx * stride + kx - pad;
                if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
                s += static_cast<double>(x.data()[((in * c + ic) * h + sy) * wd + sx]) *
                     w.data()[((oc * c + ic) * k + ky) * k + kx];
              }
          out[((in * o + oc) * oh + y) * ow + xx] = s;
        }
  return out;
}

// y = W x + b for one position, W stored D_out x D_in.
template <typename T>
std::vector<double> affine(const sfbnet::Linear<T>& l, const std::vector<double>& x) {
  const auto dout = l.weight.dim(0), din = l.weight.dim(1);
  std::vector<double> y(static_cast<std::size_t>(dout));
  for (std::int64_t o = 0; o < dout; ++o) {
    double s = l.bias.defined() ? l.bias.data()[o] : 0.0;
    for (std::int64_t i = 0; i < din; ++i) s += l.weight.data()[o * din + i] * x[i];
    y[o] = s;
  }
  return y;
}

template <typename T>
std::vector<double> pixel(const Tensor<T>& x, std::int64_t n, std::int64_t y, std::int64_t xx) {
  const auto c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<double> v(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) v[ch] = x.data()[((n * c + ch) * h + y) * w + xx];
  return v;
}

// Windowed attention computed query by query. Windows tile the map from the
// top-left in M x M blocks after displacing the grid by `shift`; positions
// wrapped around the border by the displacement form their own groups and
// never see the others. Returns N x C_v x H x W.
template <typename T>
std::vector<double> window_attention(const Tensor<T>& q_src, const Tensor<T>& k_src,
                                     const Tensor<T>& v_src,
                                     const sfbnet::AttentionProjections<T>& proj, int heads, int m,
                                     int shift, const Tensor<T>& table) {
  const auto n = q_src.dim(0), h = q_src.dim(2), w = q_src.dim(3);
  const auto ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  const auto cv = proj.v.weight.dim(0), cq = proj.q.weight.dim(0);
  const auto dq = cq / heads, dv = cv / heads;
  const int span = 2 * m - 1;
  std::vector<double> out(static_cast<std::size_t>(n * cv * h * w), 0.0);
  for (std::int64_t b = 0; b < n; ++b) {
    // projections per position
    std::vector<std::vector<double>> q(h * w), k(h * w), v(h * w);
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        q[y * w + x] = affine(proj.q, pixel(q_src, b, y, x));
        k[y * w + x] = affine(proj.k, pixel(k_src, b, y, x));
        v[y * w + x] = affine(proj.v, pixel(v_src, b, y, x));
      }
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const auto ry = (y - shift + ph) % ph, rx = (x - shift + pw) % pw;
        std::vector<std::int64_t> keys;
        for (std::int64_t ky = 0; ky < h; ++ky)
          for (std::int64_t kx = 0; kx < w; ++kx) {
            const auto kry = (ky - shift + ph) % ph, krx = (kx - shift + pw) % pw;
            if (kry / m != ry / m || krx / m != rx / m) continue;
            if ((ky < shift) != (y < shift) || (kx < shift) != (x < shift)) continue;
            keys.push_back(ky * w + kx);
          }
        for (int hd = 0; hd < heads; ++hd) {
          std::vector<double> logits;
          for (auto key : keys) {
            const auto ky = key / w, kx = key % w;
            const auto kry = (ky - shift + ph) % ph, krx = (kx - shift + pw) % pw;
            double s = 0.0;
            for (std::int64_t d = 0; d < dq; ++d) s += q[y * w + x][hd * dq + d] * k[key][hd * dq + d];
            s /= std::sqrt(static_cast<double>(dq));
            if (table.defined()) {
              const auto dy = ry % m - kry % m + m - 1, dx = rx % m - krx % m + m - 1;
              s += table.data()[hd * span * span + dy * span + dx];
            }
            logits.push_back(s);
          }
          const double mx = *std::max_element(logits.begin(), logits.end());
          double z = 0.0;
          for (auto& l : logits) z += (l = std::exp(l - mx));
          for (std::int64_t d = 0; d < dv; ++d) {
            double acc = 0.0;
            for (std::size_t i = 0; i < keys.size(); ++i) acc += logits[i] / z * v[keys[i]][hd * dv + d];
            out[((b * cv + hd * dv + d) * h + y) * w + x] = acc;
          }
        }
      }
  }
  return out;
}

// Largest 4-connected foreground component by explicit flood fill. Ties go to
// the component whose first pixel comes first in row-major order.
inline sfbnet::LabelMap largest_component(const sfbnet::LabelMap& in) {
  sfbnet::LabelMap out = in;
  const auto h = in.height, w = in.width;
  for (std::int64_t n = 0; n < in.batch; ++n) {
    std::vector<int> comp(static_cast<std::size_t>(h * w), -1);
    std::vector<std::int64_t> sizes;
    for (std::int64_t s = 0; s < h * w; ++s) {
      if (in.at(n, s / w, s % w) == 0 || comp[s] >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      std::int64_t count = 0;
      std::vector<std::int64_t> stack{s};
      comp[s] = id;
      while (!stack.empty()) {
        const auto p = stack.back();
        stack.pop_back();
        ++count;
        const std::int64_t y = p / w, x = p % w;
        const std::int64_t ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
        for (int d = 0; d < 4; ++d) {
          if (ny[d] < 0 || ny[d] >= h || nx[d] < 0 || nx[d] >= w) continue;
          const auto q = ny[d] * w + nx[d];
          if (comp[q] < 0 && in.at(n, ny[d], nx[d]) != 0) {
            comp[q] = id;
            stack.push_back(q);
          }
        }
      }
      sizes.push_back(count);
    }
    int best = -1;
    for (int i = 0; i < static_cast<int>(sizes.size()); ++i) {
      if (best < 0 || sizes[i] > sizes[best]) best = i;
    }
    for (std::int64_t p = 0; p < h * w; ++p) {
      if (comp[p] != best) out.at(n, p / w, p % w) = 0;
    }
  }
  return out;
}

inline double dice_count(const sfbnet::LabelMap& p, const sfbnet::LabelMap& g, int cls) {
  std::int64_t inter = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    const bool a = p.values[i] == cls, b = g.values[i] == cls;
    np += a;
    ng += b;
    inter += a && b;
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

inline sfbnet::LabelMap random_labels(std::int64_t n, std::int64_t h, std::int64_t w, int classes,
                                      std::mt19937_64& rng) {
  sfbnet::LabelMap m(n, h, w);
  std::uniform_int_distribution<int> d(0, classes - 1);
  for (auto& v : m.values) v = d(rng);
  return m;
}

inline std::vector<double> softmax_at(const Tensor<double>& x, std::int64_t n, std::int64_t p) {
  const auto c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<double> e(static_cast<std::size_t>(c));
  double m = -1e300, s = 0;
  for (std::int64_t k = 0; k < c; ++k) m = std::max(m, x.data()[(n * c + k) * plane + p]);
  for (std::int64_t k = 0; k < c; ++k) s += e[k] = std::exp(x.data()[(n * c + k) * plane + p] - m);
  for (auto& v : e) v /= s;
  return e;
}

// Mean per-pixel -log p(true class).
inline double cross_entropy(const Tensor<double>& x, const sfbnet::LabelMap& g) {
  double s = 0;
  const auto plane = g.pixels();
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t p = 0; p < plane; ++p) s -= std::log(softmax_at(x, n, p)[g.values[n * plane + p]]);
  return s / static_cast<double>(g.batch * plane);
}

// 1 - mean over foreground classes of the smoothed soft Dice, batch-pooled.
inline double soft_dice_loss(const Tensor<double>& x, const sfbnet::LabelMap& g) {
  const auto c = x.dim(1);
  const auto plane = g.pixels();
  double total = 0;
  for (std::int64_t k = 1; k < c; ++k) {
    double inter = 0, ps = 0, gs = 0;
    for (std::int64_t n = 0; n < g.batch; ++n)
      for (std::int64_t p = 0; p < plane; ++p) {
        const double pk = softmax_at(x, n, p)[k];
        const double gk = g.values[n * plane + p] == k ? 1.0 : 0.0;
        inter += pk * gk;
        ps += pk;
        gs += gk;
      }
    total += (2 * inter + sfbnet::kDiceSmooth) / (ps + gs + sfbnet::kDiceSmooth);
  }
  return 1.0 - total / static_cast<double>(c - 1);
}

// Copies every parameter and running statistic of `to` from the same-named
// entry of `from`.
template <typename T>
void copy_shared(const sfbnet::SFBNet<T>& from, sfbnet::SFBNet<T>& to) {
  for (const auto& p : to.registry().parameters()) {
    const auto* src = from.registry().find(p.name);
    if (src == nullptr) throw std::runtime_error("copy_shared: no " + p.name);
    auto dst = p.tensor;
    std::copy(src->tensor.data().begin(), src->tensor.data().end(), dst.mutable_data().begin());
  }
  for (const auto& b : to.registry().buffers()) {
    for (const auto& s : from.registry().buffers()) {
      if (s.name == b.name) b.values() = s.values();
    }
  }
}

}  // namespace oracle
