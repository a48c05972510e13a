#include "sfbnet/sfb.hpp"

namespace sfbnet {

template <typename T>
SwinFilteringBlock<T>::SwinFilteringBlock(LayerFactory<T>& f, const std::string& name,
                                          int channels_, int heads_, int window_,
                                          SecondStage second)
    : window_stage(f, name + ".window", channels_, heads_, window_, false),
      shifted_stage(f, name + ".shifted", channels_, heads_, window_, true),
      gate_conv(f, name + ".gate_conv", channels_, channels_, 1, 1, 0, Init::zeros),
      gate_norm(f, name + ".gate_norm", channels_),
      second_stage(second),
      channels(channels_),
      heads(heads_),
      window(window_) {}

template <typename T>
Tensor<T> SwinFilteringBlock<T>::operator()(const Tensor<T>& f_enc, const Tensor<T>& f_dec,
                                            NormMode mode, SfbTrace<T>* trace,
                                            bool force_unit_gate) const {
  if (f_enc.rank() != 4 || f_dec.rank() != 4) throw ShapeError("sfb", "expected NCHW maps");
  if (f_enc.dim(0) != f_dec.dim(0) || f_enc.dim(2) != f_dec.dim(2) ||
      f_enc.dim(3) != f_dec.dim(3)) {
    throw ContractError("sfb: encoder map " + to_string(f_enc.shape()) + " and decoder map " +
                        to_string(f_dec.shape()) + " differ on axes 0,2,3");
  }
  if (f_enc.dim(1) != channels || f_dec.dim(1) != channels) {
    throw ShapeError("sfb", "expected " + std::to_string(channels) + " channels on axis 1, got " +
                                std::to_string(f_enc.dim(1)) + " (enc) and " +
                                std::to_string(f_dec.dim(1)) + " (dec)");
  }
  if (force_unit_gate) return f_enc;
  auto inter = window_stage(f_dec, f_dec, f_enc);
  auto ca_out = second_stage == SecondStage::cross ? shifted_stage(f_dec, f_dec, inter)
                                                   : shifted_stage(inter, inter, inter);
  auto w = sigmoid(gate_norm(gate_conv(ca_out), mode));
  if (trace != nullptr) {
    trace->window_out = inter;
    trace->ca_out = ca_out;
    trace->gate = w;
  }
  return mul(f_enc, w);
}

template class SwinFilteringBlock<float>;
template class SwinFilteringBlock<double>;

}  // namespace sfbnet
