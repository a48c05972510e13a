#pragma once

#include <string>

#include "sfbnet/attention.hpp"

namespace sfbnet {

/// Where the shifted stage takes its queries and keys from.
enum class SecondStage {
  cross,  ///< Q, K from the decoder map, V from the first stage output.
  self,   ///< Q, K and V all from the first stage output.
};

/// Intermediate maps of one SFB evaluation, for inspection in tests.
template <typename T>
struct SfbTrace {
  Tensor<T> window_out;  ///< W-MHSA(Q_dec, K_dec, V_enc)
  Tensor<T> ca_out;      ///< shifted stage output
  Tensor<T> gate;        ///< w = sigmoid(bn(conv1x1(ca_out)))
};

/// Swin Filtering Block: rescales an encoder skip map by a sigmoid gate
/// computed from windowed cross-attention of decoder queries/keys over
/// encoder values.
///
///   inter  = W-MHSA(Q(F_dec), K(F_dec), V(F_enc))
///   CA_out = SW-MHSA(Q(F_dec), K(F_dec), V(inter))
///   w      = sigmoid(BN(conv1x1(CA_out)))
///   F_out  = F_enc * w
///
/// The gate conv starts at zero so every gate value starts at 0.5.
template <typename T>
class SwinFilteringBlock {
 public:
  SwinFilteringBlock() = default;
  SwinFilteringBlock(LayerFactory<T>& f, const std::string& name, int channels, int heads,
                     int window, SecondStage second = SecondStage::cross);

  /// When `force_unit_gate` is set the block returns F_enc unchanged (w = 1).
  Tensor<T> operator()(const Tensor<T>& f_enc, const Tensor<T>& f_dec, NormMode mode,
                       SfbTrace<T>* trace = nullptr, bool force_unit_gate = false) const;

  WindowAttention<T> window_stage;
  WindowAttention<T> shifted_stage;
  Conv2d<T> gate_conv;
  BatchNorm2d<T> gate_norm;
  SecondStage second_stage = SecondStage::cross;
  int channels = 0;
  int heads = 0;
  int window = 0;
};

template <typename T>
Tensor<T> sfb_apply(const Tensor<T>& f_enc, const Tensor<T>& f_dec,
                    const SwinFilteringBlock<T>& block, NormMode mode) {
  return block(f_enc, f_dec, mode);
}

}  // namespace sfbnet
