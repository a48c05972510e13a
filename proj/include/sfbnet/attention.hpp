#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "sfbnet/nn.hpp"

namespace sfbnet {

/// Large finite negative used for blocked attention logits. Finite so that a
/// fully blocked row (a padded query) still yields a valid distribution.
inline constexpr double kMaskedLogit = -1e9;

/// Partition of an H x W feature map into M x M windows.
///
/// The map is zero-padded at the bottom/right to multiples of M, then (for the
/// shifted variant) cyclically rolled by -shift along both axes before being
/// cut into windows. Positions are addressed in that padded, rolled frame.
/// Region ids follow the cyclic-shift slicing: two positions of one window
/// may attend to each other only if their region ids agree and neither is
/// padding.
struct WindowLayout {
  int height = 0;
  int width = 0;
  int window = 0;
  int shift = 0;
  int pad_bottom = 0;
  int pad_right = 0;
  int padded_height = 0;
  int padded_width = 0;
  int windows_y = 0;
  int windows_x = 0;
  /// Region id per padded/rolled position, row-major padded_height x padded_width.
  std::vector<int> region_id;

  static WindowLayout make(int height, int width, int window, bool shifted);

  int window_count() const noexcept { return windows_y * windows_x; }
  int tokens() const noexcept { return window * window; }

  /// Source coordinate (row, col) of a window token in the unpadded,
  /// unrolled map; nullopt for padding.
  std::optional<std::pair<int, int>> source(int window_index, int token) const;
  int region(int window_index, int token) const;
  bool is_padding(int window_index, int token) const { return !source(window_index, token); }

  /// True when the query token may not attend to the key token.
  bool blocked(int window_index, int query, int key) const;
  /// True when the cyclic-shift region ids differ (ignores padding).
  bool region_blocked(int window_index, int query, int key) const;

  /// Index maps between NCHW maps and (N * windows) x M^2 x C token windows.
  IndexMap partition_index(int batch, int channels) const;
  IndexMap merge_index(int batch, int channels) const;

  /// Additive mask of shape windows x M^2 x M^2 (0 or kMaskedLogit); undefined
  /// when nothing is blocked.
  template <typename T>
  Tensor<T> additive_mask() const;

  bool any_blocked() const noexcept { return shift > 0 || pad_bottom > 0 || pad_right > 0; }
};

/// NCHW -> (N * windows) x M^2 x C.
template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& layout);

/// Inverse of window_partition; drops padding.
template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const WindowLayout& layout);

/// Learnable relative position bias: one (2M-1)^2 offset table per head.
template <typename T>
struct RelPosBias {
  Tensor<T> table;  // heads x (2M-1)^2
  int heads = 0;
  int window = 0;

  RelPosBias() = default;
  RelPosBias(LayerFactory<T>& f, const std::string& name, int heads_, int window_);

  /// heads x M^2 x M^2 with B[h, p, q] = table[h, offset(p) - offset(q)].
  Tensor<T> materialize() const;

  /// For tokens p, q of an M x M window, the flat offset-table column.
  static IndexMap relative_index(int heads, int window);
};

/// Optional capture of post-softmax attention weights,
/// (N * windows) x heads x M^2 x M^2 flattened.
template <typename T>
struct AttentionProbe {
  std::vector<T> weights;
  Shape shape;
};

/// Multi-head scaled dot-product attention over token groups.
/// q, k, v: B x L x C (already projected); heads must divide C.
/// `bias` (heads x L x L) and `mask` (groups x L x L, with B a multiple of
/// groups) are optional additive logit terms.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               int heads, const Tensor<T>& bias, const Tensor<T>& mask,
                               AttentionProbe<T>* probe = nullptr);

/// Separate linear projections generating queries, keys and values.
template <typename T>
struct AttentionProjections {
  Linear<T> q, k, v;

  AttentionProjections() = default;
  AttentionProjections(LayerFactory<T>& f, const std::string& name, int q_in, int v_in, int dim);
};

/// Windowed multi-head attention with relative position bias:
/// Softmax(Q K^T / sqrt(d) + B + mask) V inside each window of `layout`.
/// Queries come from q_src, keys from k_src and values from v_src (NCHW,
/// equal spatial extents). Output has the projected value width.
template <typename T>
Tensor<T> w_mhsa(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                 const AttentionProjections<T>& proj, int heads, const WindowLayout& layout,
                 const RelPosBias<T>& bias, AttentionProbe<T>* probe = nullptr);

/// w_mhsa over windows displaced by floor(M/2) in both axes, with the
/// cyclic-shift attention mask.
template <typename T>
Tensor<T> sw_mhsa(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                  const AttentionProjections<T>& proj, int heads, int window,
                  const RelPosBias<T>& bias, AttentionProbe<T>* probe = nullptr);

/// One windowed attention stage (plain or shifted) with its own projections
/// and bias table. Layouts are cached per feature size.
template <typename T>
class WindowAttention {
 public:
  WindowAttention() = default;
  WindowAttention(LayerFactory<T>& f, const std::string& name, int channels, int heads,
                  int window, bool shifted);

  Tensor<T> operator()(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                       AttentionProbe<T>* probe = nullptr) const;

  const WindowLayout& layout_for(int height, int width) const;

  AttentionProjections<T> proj;
  RelPosBias<T> bias;
  int heads = 1;
  int window = 1;
  bool shifted = false;

 private:
  struct Cached {
    WindowLayout layout;
    Tensor<T> mask;
  };
  const Cached& cached(int height, int width) const;
  mutable std::deque<Cached> cache_;
};

/// Pre-norm transformer encoder layer over all bottleneck positions:
/// x + MHSA(LN(x + pos)), then + MLP(LN(.)) with a gelu hidden layer.
template <typename T>
class BottleneckTransformer {
 public:
  BottleneckTransformer() = default;
  BottleneckTransformer(LayerFactory<T>& f, const std::string& name, int channels, int tokens,
                        int heads, int mlp_ratio);

  Tensor<T> operator()(const Tensor<T>& x) const;

  Tensor<T> pos_emb;  // tokens x C
  LayerNorm<T> norm_attn, norm_mlp;
  Linear<T> q, k, v, out;
  Linear<T> fc1, fc2;
  int heads = 1;
};

}  // namespace sfbnet
