#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "sfbnet/tensor.hpp"

namespace sfbnet {

// Elementwise arithmetic with numpy-style broadcasting over equal-rank
// operands (an extent of 1 broadcasts).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
/// Output axis i is input axis perm[i].
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& perm);

/// Flat gather: out[i] = a[index[i]], or 0 where index[i] < 0.
/// Backward scatter-adds. Index maps are shared so cached layouts can be
/// reused without copying.
using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;
template <typename T> Tensor<T> gather(const Tensor<T>& a, const IndexMap& index, Shape shape);

/// Concatenation along axis 1 (channels for NCHW).
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Exact-erf GELU: x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& x);
/// Max-subtracted softmax over the last axis.
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

/// Affine map of the last axis: y = x W^T + b with W of shape D_out x D_in.
/// `bias` may be undefined.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Batched matrix product of rank-3 tensors, optionally transposing the last
/// two axes of either operand.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_a = false,
              bool transpose_b = false);

/// 2D convolution, NCHW input and OIKK weights. `bias` may be undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0);

/// 2D transposed convolution with IOKK weights (no padding). Output extent is
/// (H - 1) * stride + K.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight,
                           const Tensor<T>& bias, int stride);

enum class NormMode { train, eval };

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
  bool populated() const noexcept { return !mean.empty() && mean.size() == var.size(); }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel batch normalisation of NCHW input. In train mode the batch
/// statistics normalise the input and `stats` (if given) is updated by an
/// exponential moving average; eval mode normalises with `stats`.
template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                       NormMode mode, RunningStats<T>* stats,
                       double momentum = kBatchNormMomentum, double eps = kBatchNormEps);

template <typename T>
Tensor<T> layer_norm_lastdim(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps = 1e-5);

}  // namespace sfbnet
