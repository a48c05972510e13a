#include "sfbnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "gemm.hpp"
#include "sfbnet/instrument.hpp"

namespace sfbnet {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

std::string axis_msg(const char* what, std::size_t axis, std::int64_t got, std::int64_t want) {
  return std::string(what) + " axis " + std::to_string(axis) + " has extent " +
         std::to_string(got) + ", expected " + std::to_string(want);
}

template <typename T>
void require_rank(const char* op, const Tensor<T>& t, std::size_t rank, const char* name) {
  if (!t.defined()) throw ContractError(std::string(op) + ": " + name + " is undefined");
  if (t.rank() != rank) {
    throw ShapeError(op, std::string(name) + " must have rank " + std::to_string(rank) +
                             ", got shape " + to_string(t.shape()));
  }
}

std::vector<std::int64_t> strides_of(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
  bool same = false;
};

BroadcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a.size() != b.size()) {
    throw ShapeError(op, "rank mismatch " + to_string(a) + " vs " + to_string(b));
  }
  BroadcastPlan p;
  p.same = a == b;
  p.out.resize(a.size());
  const auto sa = strides_of(a);
  const auto sb = strides_of(b);
  p.stride_a.resize(a.size());
  p.stride_b.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i] && a[i] != 1 && b[i] != 1) {
      throw ShapeError(op, "axis " + std::to_string(i) + " extents " + std::to_string(a[i]) +
                               " and " + std::to_string(b[i]) + " do not broadcast");
    }
    p.out[i] = std::max(a[i], b[i]);
    p.stride_a[i] = a[i] == 1 ? 0 : sa[i];
    p.stride_b[i] = b[i] == 1 ? 0 : sb[i];
  }
  return p;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
  const std::int64_t n = numel(p.out);
  if (p.same) {
    for (std::int64_t i = 0; i < n; ++i) f(i, i, i);
    return;
  }
  const int r = static_cast<int>(p.out.size());
  std::vector<std::int64_t> idx(p.out.size(), 0);
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t ia_step = p.stride_a[r - 1];
  const std::int64_t ib_step = p.stride_b[r - 1];
  std::int64_t ia = 0, ib = 0;
  for (std::int64_t i = 0; i < n; i += inner) {
    for (std::int64_t j = 0; j < inner; ++j) f(i + j, ia + j * ia_step, ib + j * ib_step);
    for (int ax = r - 2; ax >= 0; --ax) {
      ++idx[ax];
      ia += p.stride_a[ax];
      ib += p.stride_b[ax];
      if (idx[ax] < p.out[ax]) break;
      ia -= p.stride_a[ax] * p.out[ax];
      ib -= p.stride_b[ax] * p.out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { add, sub, mul };

template <typename T>
Tensor<T> binary(const char* op, BinaryKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  auto plan = plan_broadcast(op, a.shape(), b.shape());
  std::vector<T> out(static_cast<std::size_t>(numel(plan.out)));
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  switch (kind) {
    case BinaryKind::add:
      for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] + pb[ib]; });
      break;
    case BinaryKind::sub:
      for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] - pb[ib]; });
      break;
    case BinaryKind::mul:
      for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { out[i] = pa[ia] * pb[ib]; });
      break;
  }
  FlopCounter::record(static_cast<double>(out.size()));
  Shape shape = plan.out;
  return make_result<T>(
      std::move(shape), std::move(out), op, {a.node_ptr(), b.node_ptr()},
      [plan = std::move(plan), kind](Node<T>& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        const T* g = self.grad.data();
        if (na.requires_grad) {
          T* ga = na.ensure_grad().data();
          if (kind == BinaryKind::mul) {
            const T* pb = nb.data.data();
            for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { ga[ia] += g[i] * pb[ib]; });
          } else {
            for_each_broadcast(plan, [&](auto i, auto ia, auto) { ga[ia] += g[i]; });
          }
        }
        if (nb.requires_grad) {
          T* gb = nb.ensure_grad().data();
          if (kind == BinaryKind::mul) {
            const T* pa = na.data.data();
            for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { gb[ib] += g[i] * pa[ia]; });
          } else if (kind == BinaryKind::sub) {
            for_each_broadcast(plan, [&](auto i, auto, auto ib) { gb[ib] -= g[i]; });
          } else {
            for_each_broadcast(plan, [&](auto i, auto, auto ib) { gb[ib] += g[i]; });
          }
        }
      });
}

// Patch gather for a single image: cols[(c*K + ky)*K + kx][oy*Wo + ox].
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::int64_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds columns back into the image.
template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* x) {
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<std::int64_t>(oy) * wo;
          T* dst = x + (static_cast<std::int64_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
T erf_t(T x) {
  return std::erf(x);
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("add", BinaryKind::add, a, b);
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("sub", BinaryKind::sub, a, b);
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary("mul", BinaryKind::mul, a, b);
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  FlopCounter::record(static_cast<double>(out.size()));
  return make_result<T>(a.shape(), std::move(out), "scale", {a.node_ptr()},
                        [factor](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (auto v : a.data()) total += v;
  FlopCounter::record(static_cast<double>(a.numel()));
  return make_result<T>(Shape{1}, std::vector<T>{total}, "sum", {a.node_ptr()},
                        [](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          const T s = self.grad[0];
                          for (auto& v : g) v += s;
                        });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape", "cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {a.node_ptr()},
                        [](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                        });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm) {
  const auto& in_shape = a.shape();
  const std::size_t r = in_shape.size();
  if (perm.size() != r) throw ShapeError("permute", "permutation rank mismatch");
  std::vector<bool> seen(r, false);
  for (int p : perm) {
    if (p < 0 || static_cast<std::size_t>(p) >= r || seen[p]) {
      throw ContractError("permute: invalid permutation");
    }
    seen[p] = true;
  }
  Shape out_shape(r);
  const auto in_strides = strides_of(in_shape);
  std::vector<std::int64_t> src_stride(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = in_shape[perm[i]];
    src_stride[i] = in_strides[perm[i]];
  }
  // The flat source index of each output element; shared with backward.
  auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(a.numel()));
  {
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t src = 0;
    auto& map = *index;
    for (std::size_t i = 0; i < map.size(); ++i) {
      map[i] = src;
      for (int ax = static_cast<int>(r) - 1; ax >= 0; --ax) {
        ++idx[ax];
        src += src_stride[ax];
        if (idx[ax] < out_shape[ax]) break;
        src -= src_stride[ax] * out_shape[ax];
        idx[ax] = 0;
      }
    }
  }
  std::vector<T> out(index->size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[(*index)[i]];
  return make_result<T>(std::move(out_shape), std::move(out), "permute", {a.node_ptr()},
                        [index](Node<T>& self) {
                          T* g = self.parents[0]->ensure_grad().data();
                          for (std::size_t i = 0; i < index->size(); ++i) {
                            g[(*index)[i]] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, const IndexMap& index, Shape shape) {
  if (!index || static_cast<std::int64_t>(index->size()) != numel(shape)) {
    throw ShapeError("gather", "index map size does not match output shape " + to_string(shape));
  }
  const auto n = a.numel();
  std::vector<T> out(index->size());
  const T* pa = a.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto src = (*index)[i];
    if (src >= n) throw ShapeError("gather", "index out of range for " + to_string(a.shape()));
    out[i] = src >= 0 ? pa[src] : T(0);
  }
  return make_result<T>(std::move(shape), std::move(out), "gather", {a.node_ptr()},
                        [index](Node<T>& self) {
                          T* g = self.parents[0]->ensure_grad().data();
                          for (std::size_t i = 0; i < index->size(); ++i) {
                            const auto src = (*index)[i];
                            if (src >= 0) g[src] += self.grad[i];
                          }
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank()) {
    throw ShapeError("concat_channels", "operands " + to_string(a.shape()) + " and " +
                                            to_string(b.shape()) + " have incompatible rank");
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != 1 && a.shape()[i] != b.shape()[i]) {
      throw ShapeError("concat_channels", axis_msg("second operand", i, b.shape()[i], a.shape()[i]));
    }
  }
  const std::int64_t batch = a.shape()[0];
  const std::int64_t block_a = a.numel() / batch;
  const std::int64_t block_b = b.numel() / batch;
  Shape out_shape = a.shape();
  out_shape[1] += b.shape()[1];
  std::vector<T> out(static_cast<std::size_t>(a.numel() + b.numel()));
  for (std::int64_t n = 0; n < batch; ++n) {
    std::copy_n(a.data().data() + n * block_a, block_a, out.data() + n * (block_a + block_b));
    std::copy_n(b.data().data() + n * block_b, block_b,
                out.data() + n * (block_a + block_b) + block_a);
  }
  return make_result<T>(std::move(out_shape), std::move(out), "concat_channels",
                        {a.node_ptr(), b.node_ptr()},
                        [batch, block_a, block_b](Node<T>& self) {
                          for (int side = 0; side < 2; ++side) {
                            auto& p = *self.parents[side];
                            if (!p.requires_grad) continue;
                            T* g = p.ensure_grad().data();
                            const std::int64_t block = side == 0 ? block_a : block_b;
                            const std::int64_t offset = side == 0 ? 0 : block_a;
                            for (std::int64_t n = 0; n < batch; ++n) {
                              const T* src = self.grad.data() + n * (block_a + block_b) + offset;
                              for (std::int64_t i = 0; i < block; ++i) g[n * block + i] += src[i];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = T(0.5) * v * (T(1) + erf_t(v * inv_sqrt2));
  FlopCounter::record(static_cast<double>(out.size()));
  return make_result<T>(x.shape(), std::move(out), "gelu", {x.node_ptr()},
                        [inv_sqrt2](Node<T>& self) {
                          auto& p = *self.parents[0];
                          auto& g = p.ensure_grad();
                          const T inv_sqrt_2pi = inv_sqrt2 * std::numbers::inv_sqrtpi_v<T>;
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T v = p.data[i];
                            const T cdf = T(0.5) * (T(1) + erf_t(v * inv_sqrt2));
                            const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                            g[i] += self.grad[i] * (cdf + v * pdf);
                          }
                        });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.data().begin(), x.data().end());
  for (auto& v : out) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  FlopCounter::record(static_cast<double>(out.size()));
  return make_result<T>(x.shape(), std::move(out), "sigmoid", {x.node_ptr()},
                        [](Node<T>& self) {
                          auto& g = self.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const T s = self.data[i];
                            g[i] += self.grad[i] * s * (T(1) - s);
                          }
                        });
}

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  const std::int64_t len = x.dim(-1);
  const std::int64_t rows = x.numel() / len;
  std::vector<T> out(x.data().begin(), x.data().end());
  for (std::int64_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * len;
    const T mx = *std::max_element(row, row + len);
    T total = T(0);
    for (std::int64_t i = 0; i < len; ++i) {
      row[i] = std::exp(row[i] - mx);
      total += row[i];
    }
    const T inv = T(1) / total;
    for (std::int64_t i = 0; i < len; ++i) row[i] *= inv;
  }
  FlopCounter::record(3.0 * static_cast<double>(out.size()));
  return make_result<T>(x.shape(), std::move(out), "softmax", {x.node_ptr()},
                        [rows, len](Node<T>& self) {
                          T* g = self.parents[0]->ensure_grad().data();
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const T* y = self.data.data() + r * len;
                            const T* dy = self.grad.data() + r * len;
                            T dot = T(0);
                            for (std::int64_t i = 0; i < len; ++i) dot += dy[i] * y[i];
                            for (std::int64_t i = 0; i < len; ++i) {
                              g[r * len + i] += y[i] * (dy[i] - dot);
                            }
                          }
                        });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_rank("linear", weight, 2, "weight");
  const std::int64_t d_out = weight.dim(0);
  const std::int64_t d_in = weight.dim(1);
  if (x.dim(-1) != d_in) {
    throw ShapeError("linear", axis_msg("input", x.rank() - 1, x.dim(-1), d_in));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != d_out)) {
    throw ShapeError("linear", "bias shape " + to_string(bias.shape()) + " does not match D_out " +
                                   std::to_string(d_out));
  }
  const std::int64_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  std::vector<T> out(static_cast<std::size_t>(rows * d_out));
  detail::gemm(false, true, static_cast<int>(rows), static_cast<int>(d_out),
               static_cast<int>(d_in), T(1), x.data().data(), static_cast<int>(d_in),
               weight.data().data(), static_cast<int>(d_in), T(0), out.data(),
               static_cast<int>(d_out));
  if (bias.defined()) {
    const T* b = bias.data().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      for (std::int64_t o = 0; o < d_out; ++o) out[r * d_out + o] += b[o];
    }
  }
  FlopCounter::record(2.0 * rows * d_in * d_out + (bias.defined() ? rows * d_out : 0));
  std::vector<NodePtr<T>> parents{x.node_ptr(), weight.node_ptr()};
  if (bias.defined()) parents.push_back(bias.node_ptr());
  return make_result<T>(
      std::move(out_shape), std::move(out), "linear", std::move(parents),
      [rows, d_in, d_out](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& nw = *self.parents[1];
        const int r = static_cast<int>(rows), di = static_cast<int>(d_in),
                  dout = static_cast<int>(d_out);
        const T* dy = self.grad.data();
        if (nx.requires_grad) {
          detail::gemm(false, false, r, di, dout, T(1), dy, dout, nw.data.data(), di, T(1),
                       nx.ensure_grad().data(), di);
        }
        if (nw.requires_grad) {
          detail::gemm(true, false, dout, di, r, T(1), dy, dout, nx.data.data(), di, T(1),
                       nw.ensure_grad().data(), di);
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
          T* gb = self.parents[2]->ensure_grad().data();
          for (std::int64_t i = 0; i < rows; ++i) {
            for (std::int64_t o = 0; o < d_out; ++o) gb[o] += dy[i * d_out + o];
          }
        }
      });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a, bool transpose_b) {
  require_rank("bmm", a, 3, "a");
  require_rank("bmm", b, 3, "b");
  const std::int64_t batch = a.dim(0);
  if (b.dim(0) != batch) throw ShapeError("bmm", axis_msg("b", 0, b.dim(0), batch));
  const std::int64_t m = transpose_a ? a.dim(2) : a.dim(1);
  const std::int64_t k = transpose_a ? a.dim(1) : a.dim(2);
  const std::int64_t kb = transpose_b ? b.dim(2) : b.dim(1);
  const std::int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (kb != k) {
    throw ShapeError("bmm", "inner extents differ: " + to_string(a.shape()) + " x " +
                                to_string(b.shape()));
  }
  const int lda = static_cast<int>(transpose_a ? m : k);
  const int ldb = static_cast<int>(transpose_b ? k : n);
  std::vector<T> out(static_cast<std::size_t>(batch * m * n));
  for (std::int64_t i = 0; i < batch; ++i) {
    detail::gemm(transpose_a, transpose_b, static_cast<int>(m), static_cast<int>(n),
                 static_cast<int>(k), T(1), a.data().data() + i * m * k, lda,
                 b.data().data() + i * k * n, ldb, T(0), out.data() + i * m * n,
                 static_cast<int>(n));
  }
  FlopCounter::record(2.0 * batch * m * n * k);
  return make_result<T>(
      Shape{batch, m, n}, std::move(out), "bmm", {a.node_ptr(), b.node_ptr()},
      [=](Node<T>& self) {
        auto& na = *self.parents[0];
        auto& nb = *self.parents[1];
        const int im = static_cast<int>(m), in = static_cast<int>(n), ik = static_cast<int>(k);
        for (std::int64_t i = 0; i < batch; ++i) {
          const T* dc = self.grad.data() + i * m * n;
          const T* pa = na.data.data() + i * m * k;
          const T* pb = nb.data.data() + i * k * n;
          if (na.requires_grad) {
            T* ga = na.ensure_grad().data() + i * m * k;
            if (!transpose_a) {
              detail::gemm(false, !transpose_b, im, ik, in, T(1), dc, in, pb, ldb, T(1), ga, ik);
            } else {
              detail::gemm(transpose_b, true, ik, im, in, T(1), pb, ldb, dc, in, T(1), ga, im);
            }
          }
          if (nb.requires_grad) {
            T* gb = nb.ensure_grad().data() + i * k * n;
            if (!transpose_b) {
              detail::gemm(!transpose_a, false, ik, in, im, T(1), pa, lda, dc, in, T(1), gb, in);
            } else {
              detail::gemm(true, transpose_a, in, ik, im, T(1), dc, in, pa, lda, T(1), gb, ik);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
  require_rank("conv2d", input, 4, "input");
  require_rank("conv2d", weight, 4, "weight");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (padding < 0) throw ContractError("conv2d: padding must be >= 0");
  const int n = static_cast<int>(input.dim(0));
  const int c = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2));
  const int w = static_cast<int>(input.dim(3));
  const int o = static_cast<int>(weight.dim(0));
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != c) throw ShapeError("conv2d", axis_msg("weight", 1, weight.dim(1), c));
  if (weight.dim(3) != k) throw ShapeError("conv2d", axis_msg("weight", 3, weight.dim(3), k));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != o)) {
    throw ShapeError("conv2d", "bias shape " + to_string(bias.shape()) + " does not match " +
                                   std::to_string(o) + " output channels");
  }
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (w + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d", "kernel " + std::to_string(k) + " exceeds padded input " +
                                   std::to_string(h + 2 * padding) + "x" +
                                   std::to_string(w + 2 * padding) + " on axes 2,3");
  }
  const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t ckk = static_cast<std::int64_t>(c) * k * k;
  const bool pointwise = k == 1 && stride == 1 && padding == 0;
  std::vector<T> out(static_cast<std::size_t>(n) * o * plane);
  {
    std::vector<T> cols(pointwise ? 0 : static_cast<std::size_t>(ckk * plane));
    memory::ScratchReservation scratch(cols.size() * sizeof(T));
    for (int b = 0; b < n; ++b) {
      const T* x = input.data().data() + static_cast<std::int64_t>(b) * c * h * w;
      if (!pointwise) im2col(x, c, h, w, k, stride, padding, ho, wo, cols.data());
      T* y = out.data() + static_cast<std::int64_t>(b) * o * plane;
      detail::gemm(false, false, o, static_cast<int>(plane), static_cast<int>(ckk), T(1),
                   weight.data().data(), static_cast<int>(ckk), pointwise ? x : cols.data(),
                   static_cast<int>(plane), T(0), y, static_cast<int>(plane));
      if (bias.defined()) {
        for (int oc = 0; oc < o; ++oc) {
          const T bv = bias.data()[oc];
          for (std::int64_t i = 0; i < plane; ++i) y[oc * plane + i] += bv;
        }
      }
    }
  }
  FlopCounter::record(2.0 * n * o * ckk * plane + (bias.defined() ? 1.0 * n * o * plane : 0.0));
  std::vector<NodePtr<T>> parents{input.node_ptr(), weight.node_ptr()};
  if (bias.defined()) parents.push_back(bias.node_ptr());
  return make_result<T>(
      Shape{n, o, ho, wo}, std::move(out), "conv2d", std::move(parents),
      [=](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& nw = *self.parents[1];
        std::vector<T> cols(static_cast<std::size_t>(ckk * plane));
        memory::ScratchReservation scratch(cols.size() * sizeof(T));
        for (int b = 0; b < n; ++b) {
          const T* x = nx.data.data() + static_cast<std::int64_t>(b) * c * h * w;
          const T* dy = self.grad.data() + static_cast<std::int64_t>(b) * o * plane;
          if (nw.requires_grad) {
            const T* src = x;
            if (!pointwise) {
              im2col(x, c, h, w, k, stride, padding, ho, wo, cols.data());
              src = cols.data();
            }
            detail::gemm(false, true, o, static_cast<int>(ckk), static_cast<int>(plane), T(1), dy,
                         static_cast<int>(plane), src, static_cast<int>(plane), T(1),
                         nw.ensure_grad().data(), static_cast<int>(ckk));
          }
          if (nx.requires_grad) {
            T* gx = nx.ensure_grad().data() + static_cast<std::int64_t>(b) * c * h * w;
            if (pointwise) {
              detail::gemm(true, false, static_cast<int>(ckk), static_cast<int>(plane), o, T(1),
                           nw.data.data(), static_cast<int>(ckk), dy, static_cast<int>(plane),
                           T(1), gx, static_cast<int>(plane));
            } else {
              detail::gemm(true, false, static_cast<int>(ckk), static_cast<int>(plane), o, T(1),
                           nw.data.data(), static_cast<int>(ckk), dy, static_cast<int>(plane),
                           T(0), cols.data(), static_cast<int>(plane));
              col2im(cols.data(), c, h, w, k, stride, padding, ho, wo, gx);
            }
          }
          if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            T* gb = self.parents[2]->ensure_grad().data();
            for (int oc = 0; oc < o; ++oc) {
              T acc = T(0);
              for (std::int64_t i = 0; i < plane; ++i) acc += dy[oc * plane + i];
              gb[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           int stride) {
  require_rank("conv_transpose2d", input, 4, "input");
  require_rank("conv_transpose2d", weight, 4, "weight");
  if (stride < 1) throw ContractError("conv_transpose2d: stride must be >= 1");
  const int n = static_cast<int>(input.dim(0));
  const int ci = static_cast<int>(input.dim(1));
  const int h = static_cast<int>(input.dim(2));
  const int w = static_cast<int>(input.dim(3));
  const int co = static_cast<int>(weight.dim(1));
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(0) != ci) {
    throw ShapeError("conv_transpose2d", axis_msg("weight", 0, weight.dim(0), ci));
  }
  if (weight.dim(3) != k) {
    throw ShapeError("conv_transpose2d", axis_msg("weight", 3, weight.dim(3), k));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != co)) {
    throw ShapeError("conv_transpose2d", "bias shape " + to_string(bias.shape()) +
                                             " does not match " + std::to_string(co) +
                                             " output channels");
  }
  const int ho = (h - 1) * stride + k;
  const int wo = (w - 1) * stride + k;
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t ckk = static_cast<std::int64_t>(co) * k * k;
  std::vector<T> out(static_cast<std::size_t>(n) * co * out_plane, T(0));
  {
    std::vector<T> cols(static_cast<std::size_t>(ckk * in_plane));
    memory::ScratchReservation scratch(cols.size() * sizeof(T));
    for (int b = 0; b < n; ++b) {
      const T* x = input.data().data() + static_cast<std::int64_t>(b) * ci * in_plane;
      detail::gemm(true, false, static_cast<int>(ckk), static_cast<int>(in_plane), ci, T(1),
                   weight.data().data(), static_cast<int>(ckk), x, static_cast<int>(in_plane),
                   T(0), cols.data(), static_cast<int>(in_plane));
      T* y = out.data() + static_cast<std::int64_t>(b) * co * out_plane;
      col2im(cols.data(), co, ho, wo, k, stride, 0, h, w, y);
      if (bias.defined()) {
        for (int oc = 0; oc < co; ++oc) {
          const T bv = bias.data()[oc];
          for (std::int64_t i = 0; i < out_plane; ++i) y[oc * out_plane + i] += bv;
        }
      }
    }
  }
  FlopCounter::record(2.0 * n * ci * ckk * in_plane +
                      (bias.defined() ? 1.0 * n * co * out_plane : 0.0));
  std::vector<NodePtr<T>> parents{input.node_ptr(), weight.node_ptr()};
  if (bias.defined()) parents.push_back(bias.node_ptr());
  return make_result<T>(
      Shape{n, co, ho, wo}, std::move(out), "conv_transpose2d", std::move(parents),
      [=](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& nw = *self.parents[1];
        std::vector<T> cols(static_cast<std::size_t>(ckk * in_plane));
        memory::ScratchReservation scratch(cols.size() * sizeof(T));
        for (int b = 0; b < n; ++b) {
          const T* dy = self.grad.data() + static_cast<std::int64_t>(b) * co * out_plane;
          im2col(dy, co, ho, wo, k, stride, 0, h, w, cols.data());
          if (nx.requires_grad) {
            T* gx = nx.ensure_grad().data() + static_cast<std::int64_t>(b) * ci * in_plane;
            detail::gemm(false, false, ci, static_cast<int>(in_plane), static_cast<int>(ckk), T(1),
                         nw.data.data(), static_cast<int>(ckk), cols.data(),
                         static_cast<int>(in_plane), T(1), gx, static_cast<int>(in_plane));
          }
          if (nw.requires_grad) {
            const T* x = nx.data.data() + static_cast<std::int64_t>(b) * ci * in_plane;
            detail::gemm(false, true, ci, static_cast<int>(ckk), static_cast<int>(in_plane), T(1),
                         x, static_cast<int>(in_plane), cols.data(), static_cast<int>(in_plane),
                         T(1), nw.ensure_grad().data(), static_cast<int>(ckk));
          }
          if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            T* gb = self.parents[2]->ensure_grad().data();
            for (int oc = 0; oc < co; ++oc) {
              T acc = T(0);
              for (std::int64_t i = 0; i < out_plane; ++i) acc += dy[oc * out_plane + i];
              gb[oc] += acc;
            }
          }
        }
      });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, RunningStats<T>* stats, double momentum, double eps) {
  require_rank("batch_norm2d", input, 4, "input");
  const std::int64_t n = input.dim(0), c = input.dim(1);
  const std::int64_t plane = input.dim(2) * input.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batch_norm2d", "gamma/beta must have " + std::to_string(c) +
                                         " entries to match input axis 1");
  }
  if (mode == NormMode::eval && (stats == nullptr || !stats->populated())) {
    throw ConfigError("batch_norm2d: eval mode requires populated running statistics");
  }
  if (stats != nullptr && stats->populated() && static_cast<std::int64_t>(stats->mean.size()) != c) {
    throw ShapeError("batch_norm2d", "running statistics have " +
                                         std::to_string(stats->mean.size()) + " channels, input " +
                                         std::to_string(c));
  }
  const std::int64_t count = n * plane;
  std::vector<T> inv_std(static_cast<std::size_t>(c));
  std::vector<T> mu(static_cast<std::size_t>(c));
  const T* x = input.data().data();
  if (mode == NormMode::train) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T s = T(0);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += p[i];
      }
      const T m = s / static_cast<T>(count);
      T v = T(0);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* p = x + (b * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) v += (p[i] - m) * (p[i] - m);
      }
      v /= static_cast<T>(count);
      mu[ch] = m;
      inv_std[ch] = T(1) / std::sqrt(v + static_cast<T>(eps));
      if (stats != nullptr) {
        if (!stats->populated()) {
          stats->mean.assign(static_cast<std::size_t>(c), T(0));
          stats->var.assign(static_cast<std::size_t>(c), T(1));
        }
        const T unbiased = count > 1 ? v * static_cast<T>(count) / static_cast<T>(count - 1) : v;
        const T mom = static_cast<T>(momentum);
        stats->mean[ch] = (T(1) - mom) * stats->mean[ch] + mom * m;
        stats->var[ch] = (T(1) - mom) * stats->var[ch] + mom * unbiased;
      }
    }
  } else {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mu[ch] = stats->mean[ch];
      inv_std[ch] = T(1) / std::sqrt(stats->var[ch] + static_cast<T>(eps));
    }
  }
  std::vector<T> xhat(static_cast<std::size_t>(input.numel()));
  std::vector<T> out(xhat.size());
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const std::int64_t base = (b * c + ch) * plane;
      const T g = gamma.data()[ch], be = beta.data()[ch];
      for (std::int64_t i = 0; i < plane; ++i) {
        const T xh = (x[base + i] - mu[ch]) * inv_std[ch];
        xhat[base + i] = xh;
        out[base + i] = g * xh + be;
      }
    }
  }
  FlopCounter::record(4.0 * static_cast<double>(out.size()));
  const bool training = mode == NormMode::train;
  return make_result<T>(
      input.shape(), std::move(out), "batch_norm2d",
      {input.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), n, c, plane, count,
       training](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& ng = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* dy = self.grad.data();
        std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0));
        std::vector<T> sum_dy_xhat(static_cast<std::size_t>(c), T(0));
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t base = (b * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
              sum_dy[ch] += dy[base + i];
              sum_dy_xhat[ch] += dy[base + i] * xhat[base + i];
            }
          }
        }
        if (ng.requires_grad) {
          auto& gg = ng.ensure_grad();
          for (std::int64_t ch = 0; ch < c; ++ch) gg[ch] += sum_dy_xhat[ch];
        }
        if (nb.requires_grad) {
          auto& gb = nb.ensure_grad();
          for (std::int64_t ch = 0; ch < c; ++ch) gb[ch] += sum_dy[ch];
        }
        if (!nx.requires_grad) return;
        T* gx = nx.ensure_grad().data();
        const T* gamma_v = ng.data.data();
        const T inv_count = T(1) / static_cast<T>(count);
        for (std::int64_t b = 0; b < n; ++b) {
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t base = (b * c + ch) * plane;
            const T k = gamma_v[ch] * inv_std[ch];
            if (training) {
              const T mean_dy = sum_dy[ch] * inv_count;
              const T mean_dy_xhat = sum_dy_xhat[ch] * inv_count;
              for (std::int64_t i = 0; i < plane; ++i) {
                gx[base + i] += k * (dy[base + i] - mean_dy - xhat[base + i] * mean_dy_xhat);
              }
            } else {
              for (std::int64_t i = 0; i < plane; ++i) gx[base + i] += k * dy[base + i];
            }
          }
        }
      });
}

template <typename T>
Tensor<T> layer_norm_lastdim(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps) {
  const std::int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm", "gamma/beta must have " + std::to_string(d) +
                                       " entries to match the last axis");
  }
  const std::int64_t rows = x.numel() / d;
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> out(xhat.size());
  const T* px = x.data().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* row = px + r * d;
    T m = T(0);
    for (std::int64_t i = 0; i < d; ++i) m += row[i];
    m /= static_cast<T>(d);
    T v = T(0);
    for (std::int64_t i = 0; i < d; ++i) v += (row[i] - m) * (row[i] - m);
    v /= static_cast<T>(d);
    inv_std[r] = T(1) / std::sqrt(v + static_cast<T>(eps));
    for (std::int64_t i = 0; i < d; ++i) {
      const T xh = (row[i] - m) * inv_std[r];
      xhat[r * d + i] = xh;
      out[r * d + i] = gamma.data()[i] * xh + beta.data()[i];
    }
  }
  FlopCounter::record(4.0 * static_cast<double>(out.size()));
  return make_result<T>(
      x.shape(), std::move(out), "layer_norm", {x.node_ptr(), gamma.node_ptr(), beta.node_ptr()},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](Node<T>& self) {
        auto& nx = *self.parents[0];
        auto& ng = *self.parents[1];
        auto& nb = *self.parents[2];
        const T* dy = self.grad.data();
        if (ng.requires_grad || nb.requires_grad) {
          auto& gg = ng.ensure_grad();
          auto& gb = nb.ensure_grad();
          for (std::int64_t r = 0; r < rows; ++r) {
            for (std::int64_t i = 0; i < d; ++i) {
              gg[i] += dy[r * d + i] * xhat[r * d + i];
              gb[i] += dy[r * d + i];
            }
          }
        }
        if (!nx.requires_grad) return;
        T* gx = nx.ensure_grad().data();
        const T* g = ng.data.data();
        for (std::int64_t r = 0; r < rows; ++r) {
          T s1 = T(0), s2 = T(0);
          for (std::int64_t i = 0; i < d; ++i) {
            const T dxh = dy[r * d + i] * g[i];
            s1 += dxh;
            s2 += dxh * xhat[r * d + i];
          }
          s1 /= static_cast<T>(d);
          s2 /= static_cast<T>(d);
          for (std::int64_t i = 0; i < d; ++i) {
            const T dxh = dy[r * d + i] * g[i];
            gx[r * d + i] += inv_std[r] * (dxh - s1 - xhat[r * d + i] * s2);
          }
        }
      });
}

#define SFBNET_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> scale(const Tensor<T>&, T);                                               \
  template Tensor<T> sum(const Tensor<T>&);                                                    \
  template Tensor<T> mean(const Tensor<T>&);                                                   \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                         \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<int>&);                       \
  template Tensor<T> gather(const Tensor<T>&, const IndexMap&, Shape);                         \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> gelu(const Tensor<T>&);                                                   \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> softmax_lastdim(const Tensor<T>&);                                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);             \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool, bool);                      \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);   \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,    \
                                      int);                                                    \
  template Tensor<T> batch_norm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                  NormMode, RunningStats<T>*, double, double);                 \
  template Tensor<T> layer_norm_lastdim(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        double);

SFBNET_INSTANTIATE_OPS(float)
SFBNET_INSTANTIATE_OPS(double)

}  // namespace sfbnet
