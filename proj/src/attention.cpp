#include "sfbnet/attention.hpp"

#include <cmath>

namespace sfbnet {

WindowLayout WindowLayout::make(int height, int width, int window, bool shifted) {
  if (window <= 0) throw ContractError("window size must be positive, got " + std::to_string(window));
  if (height <= 0 || width <= 0) throw ContractError("feature map extents must be positive");
  WindowLayout l;
  l.height = height;
  l.width = width;
  l.window = window;
  l.pad_bottom = (window - height % window) % window;
  l.pad_right = (window - width % window) % window;
  l.padded_height = height + l.pad_bottom;
  l.padded_width = width + l.pad_right;
  l.windows_y = l.padded_height / window;
  l.windows_x = l.padded_width / window;
  // A single window has no neighbour to exchange information with.
  const bool single = l.windows_y == 1 && l.windows_x == 1;
  l.shift = (shifted && !single) ? window / 2 : 0;

  auto band = [&](int p, int extent) {
    if (l.shift == 0) return 0;
    if (p < extent - window) return 0;
    if (p < extent - l.shift) return 1;
    return 2;
  };
  l.region_id.resize(static_cast<std::size_t>(l.padded_height) * l.padded_width);
  for (int y = 0; y < l.padded_height; ++y) {
    for (int x = 0; x < l.padded_width; ++x) {
      l.region_id[static_cast<std::size_t>(y) * l.padded_width + x] =
          band(y, l.padded_height) * 3 + band(x, l.padded_width);
    }
  }
  return l;
}

std::optional<std::pair<int, int>> WindowLayout::source(int window_index, int token) const {
  const int py = (window_index / windows_x) * window + token / window;
  const int px = (window_index % windows_x) * window + token % window;
  const int sy = (py + shift) % padded_height;
  const int sx = (px + shift) % padded_width;
  if (sy >= height || sx >= width) return std::nullopt;
  return std::make_pair(sy, sx);
}

int WindowLayout::region(int window_index, int token) const {
  const int py = (window_index / windows_x) * window + token / window;
  const int px = (window_index % windows_x) * window + token % window;
  return region_id[static_cast<std::size_t>(py) * padded_width + px];
}

bool WindowLayout::region_blocked(int window_index, int query, int key) const {
  return region(window_index, query) != region(window_index, key);
}

bool WindowLayout::blocked(int window_index, int query, int key) const {
  return region_blocked(window_index, query, key) || is_padding(window_index, key);
}

IndexMap WindowLayout::partition_index(int batch, int channels) const {
  const int nw = window_count();
  const int t = tokens();
  auto index = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(batch) * nw * t * channels);
  auto& map = *index;
  for (int w = 0; w < nw; ++w) {
    for (int tok = 0; tok < t; ++tok) {
      const auto src = source(w, tok);
      for (int n = 0; n < batch; ++n) {
        const std::int64_t dst = ((static_cast<std::int64_t>(n) * nw + w) * t + tok) * channels;
        for (int c = 0; c < channels; ++c) {
          map[dst + c] =
              src ? ((static_cast<std::int64_t>(n) * channels + c) * height + src->first) * width +
                        src->second
                  : -1;
        }
      }
    }
  }
  return index;
}

IndexMap WindowLayout::merge_index(int batch, int channels) const {
  const int nw = window_count();
  const int t = tokens();
  auto index = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(batch) * channels * height * width);
  auto& map = *index;
  for (int y = 0; y < height; ++y) {
    const int py = ((y - shift) % padded_height + padded_height) % padded_height;
    for (int x = 0; x < width; ++x) {
      const int px = ((x - shift) % padded_width + padded_width) % padded_width;
      const int w = (py / window) * windows_x + px / window;
      const int tok = (py % window) * window + px % window;
      for (int n = 0; n < batch; ++n) {
        for (int c = 0; c < channels; ++c) {
          const std::int64_t dst =
              ((static_cast<std::int64_t>(n) * channels + c) * height + y) * width + x;
          map[dst] = ((static_cast<std::int64_t>(n) * nw + w) * t + tok) * channels + c;
        }
      }
    }
  }
  return index;
}

template <typename T>
Tensor<T> WindowLayout::additive_mask() const {
  if (!any_blocked()) return {};
  const int nw = window_count();
  const int t = tokens();
  std::vector<T> mask(static_cast<std::size_t>(nw) * t * t, T(0));
  for (int w = 0; w < nw; ++w) {
    for (int q = 0; q < t; ++q) {
      for (int k = 0; k < t; ++k) {
        if (blocked(w, q, k)) {
          mask[(static_cast<std::size_t>(w) * t + q) * t + k] = static_cast<T>(kMaskedLogit);
        }
      }
    }
  }
  return Tensor<T>({nw, t, t}, std::move(mask));
}

namespace {

void check_layout(const char* op, const Shape& s, const WindowLayout& layout) {
  if (s.size() != 4) throw ShapeError(op, "expected NCHW input, got " + to_string(s));
  if (s[2] != layout.height || s[3] != layout.width) {
    throw ShapeError(op, "axes 2,3 are " + std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                             " but the layout covers " + std::to_string(layout.height) + "x" +
                             std::to_string(layout.width));
  }
}

template <typename T>
void check_same_spatial(const Tensor<T>& a, const Tensor<T>& b, const char* name) {
  if (a.rank() != 4 || b.rank() != 4) {
    throw ShapeError("w_mhsa", std::string(name) + " must be NCHW");
  }
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ContractError(std::string("w_mhsa: ") + name + " extents " + to_string(b.shape()) +
                        " differ from query source " + to_string(a.shape()) + " on axes 0,2,3");
  }
}

template <typename T>
Tensor<T> attention_core(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                         const AttentionProjections<T>& proj, int heads,
                         const WindowLayout& layout, const Tensor<T>& bias,
                         const Tensor<T>& mask, AttentionProbe<T>* probe) {
  check_same_spatial(q_src, k_src, "key source");
  check_same_spatial(q_src, v_src, "value source");
  check_layout("w_mhsa", q_src.shape(), layout);
  const auto qw = window_partition(q_src, layout);
  const auto kw = k_src.node() == q_src.node() ? qw : window_partition(k_src, layout);
  const auto vw = v_src.node() == q_src.node()   ? qw
                  : v_src.node() == k_src.node() ? kw
                                                 : window_partition(v_src, layout);
  auto out = multi_head_attention(proj.q(qw), proj.k(kw), proj.v(vw), heads, bias, mask, probe);
  return window_merge(out, layout);
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  const auto b = x.dim(0), len = x.dim(1), c = x.dim(2);
  auto h = reshape(x, {b, len, heads, c / heads});
  h = permute(h, {0, 2, 1, 3});
  return reshape(h, {b * heads, len, c / heads});
}

}  // namespace

template <typename T>
Tensor<T> window_partition(const Tensor<T>& x, const WindowLayout& layout) {
  check_layout("window_partition", x.shape(), layout);
  const int n = static_cast<int>(x.dim(0));
  const int c = static_cast<int>(x.dim(1));
  return gather(x, layout.partition_index(n, c),
                {static_cast<std::int64_t>(n) * layout.window_count(), layout.tokens(), c});
}

template <typename T>
Tensor<T> window_merge(const Tensor<T>& windows, const WindowLayout& layout) {
  if (windows.rank() != 3 || windows.dim(1) != layout.tokens() ||
      windows.dim(0) % layout.window_count() != 0) {
    throw ShapeError("window_merge", "windows of shape " + to_string(windows.shape()) +
                                         " do not match a layout of " +
                                         std::to_string(layout.window_count()) + " windows x " +
                                         std::to_string(layout.tokens()) + " tokens");
  }
  const int n = static_cast<int>(windows.dim(0) / layout.window_count());
  const int c = static_cast<int>(windows.dim(2));
  return gather(windows, layout.merge_index(n, c), {n, c, layout.height, layout.width});
}

template <typename T>
RelPosBias<T>::RelPosBias(LayerFactory<T>& f, const std::string& name, int heads_, int window_)
    : heads(heads_), window(window_) {
  const int span = 2 * window - 1;
  table = f.make(name + ".table", {heads, span * span}, Init::zeros);
}

template <typename T>
IndexMap RelPosBias<T>::relative_index(int heads, int window) {
  const int t = window * window;
  const int span = 2 * window - 1;
  auto index = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(heads) * t * t);
  auto& map = *index;
  for (int h = 0; h < heads; ++h) {
    for (int p = 0; p < t; ++p) {
      for (int q = 0; q < t; ++q) {
        const int dy = p / window - q / window + window - 1;
        const int dx = p % window - q % window + window - 1;
        map[(static_cast<std::size_t>(h) * t + p) * t + q] =
            static_cast<std::int64_t>(h) * span * span + dy * span + dx;
      }
    }
  }
  return index;
}

template <typename T>
Tensor<T> RelPosBias<T>::materialize() const {
  const int t = window * window;
  return gather(table, relative_index(heads, window), {heads, t, t});
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                               int heads, const Tensor<T>& bias, const Tensor<T>& mask,
                               AttentionProbe<T>* probe) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("attention", "q, k, v must be B x L x C");
  }
  const auto b = q.dim(0), len = q.dim(1), c = q.dim(2);
  const auto len_k = k.dim(1), cv = v.dim(2);
  if (heads <= 0 || c % heads != 0 || cv % heads != 0) {
    throw ConfigError("attention: channel count " + std::to_string(c) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.dim(2) != c) throw ShapeError("attention", "key width differs from query width");
  if (k.dim(0) != b || v.dim(0) != b || v.dim(1) != len_k) {
    throw ShapeError("attention", "key/value extents do not match: " + to_string(k.shape()) +
                                      " vs " + to_string(v.shape()));
  }
  const auto d = c / heads;
  auto logits = bmm(split_heads(q, heads), split_heads(k, heads), false, true);
  logits = scale(logits, T(1) / std::sqrt(static_cast<T>(d)));
  if (bias.defined()) {
    logits = reshape(logits, {b, heads, len, len_k});
    logits = add(logits, reshape(bias, {1, heads, len, len_k}));
  }
  if (mask.defined()) {
    const auto groups = mask.dim(0);
    if (b % groups != 0) throw ShapeError("attention", "batch is not a multiple of mask groups");
    logits = reshape(logits, {b / groups, groups, heads, len, len_k});
    logits = add(logits, reshape(mask, {1, groups, 1, len, len_k}));
  }
  auto probs = softmax_lastdim(reshape(logits, {b * heads, len, len_k}));
  if (probe != nullptr) {
    probe->weights.assign(probs.data().begin(), probs.data().end());
    probe->shape = {b, heads, len, len_k};
  }
  auto out = bmm(probs, split_heads(v, heads));
  out = reshape(out, {b, heads, len, cv / heads});
  out = permute(out, {0, 2, 1, 3});
  return reshape(out, {b, len, cv});
}

template <typename T>
AttentionProjections<T>::AttentionProjections(LayerFactory<T>& f, const std::string& name,
                                              int q_in, int v_in, int dim)
    : q(f, name + ".q", q_in, dim, Init::glorot_uniform),
      k(f, name + ".k", q_in, dim, Init::glorot_uniform),
      v(f, name + ".v", v_in, dim, Init::glorot_uniform) {}

template <typename T>
Tensor<T> w_mhsa(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                 const AttentionProjections<T>& proj, int heads, const WindowLayout& layout,
                 const RelPosBias<T>& bias, AttentionProbe<T>* probe) {
  if (bias.table.defined() && bias.window != layout.window) {
    throw ConfigError("w_mhsa: bias table built for window " + std::to_string(bias.window) +
                      ", layout uses " + std::to_string(layout.window));
  }
  const Tensor<T> b = bias.table.defined() ? bias.materialize() : Tensor<T>{};
  return attention_core(q_src, k_src, v_src, proj, heads, layout, b,
                        layout.template additive_mask<T>(), probe);
}

template <typename T>
Tensor<T> sw_mhsa(const Tensor<T>& q_src, const Tensor<T>& k_src, const Tensor<T>& v_src,
                  const AttentionProjections<T>& proj, int heads, int window,
                  const RelPosBias<T>& bias, AttentionProbe<T>* probe) {
  if (q_src.rank() != 4) throw ShapeError("sw_mhsa", "expected NCHW query source");
  const auto layout = WindowLayout::make(static_cast<int>(q_src.dim(2)),
                                         static_cast<int>(q_src.dim(3)), window, true);
  return w_mhsa(q_src, k_src, v_src, proj, heads, layout, bias, probe);
}

template <typename T>
WindowAttention<T>::WindowAttention(LayerFactory<T>& f, const std::string& name, int channels,
                                    int heads_, int window_, bool shifted_)
    : proj(f, name, channels, channels, channels),
      bias(f, name + ".rel_bias", heads_, window_),
      heads(heads_),
      window(window_),
      shifted(shifted_) {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError(name + ": " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (window <= 0) throw ContractError(name + ": window size must be positive");
}

template <typename T>
const typename WindowAttention<T>::Cached& WindowAttention<T>::cached(int height, int width) const {
  for (const auto& c : cache_) {
    if (c.layout.height == height && c.layout.width == width) return c;
  }
  auto layout = WindowLayout::make(height, width, window, shifted);
  auto mask = layout.template additive_mask<T>();
  cache_.push_back({std::move(layout), std::move(mask)});
  return cache_.back();
}

template <typename T>
const WindowLayout& WindowAttention<T>::layout_for(int height, int width) const {
  return cached(height, width).layout;
}

template <typename T>
Tensor<T> WindowAttention<T>::operator()(const Tensor<T>& q_src, const Tensor<T>& k_src,
                                         const Tensor<T>& v_src, AttentionProbe<T>* probe) const {
  if (q_src.rank() != 4) throw ShapeError("window_attention", "expected NCHW query source");
  const auto& c = cached(static_cast<int>(q_src.dim(2)), static_cast<int>(q_src.dim(3)));
  return attention_core(q_src, k_src, v_src, proj, heads, c.layout, bias.materialize(), c.mask,
                        probe);
}

template <typename T>
BottleneckTransformer<T>::BottleneckTransformer(LayerFactory<T>& f, const std::string& name,
                                                int channels, int tokens, int heads_,
                                                int mlp_ratio)
    : heads(heads_) {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError(name + ": " + std::to_string(channels) + " channels are not divisible by " +
                      std::to_string(heads) + " heads");
  }
  pos_emb = f.make(name + ".pos_emb", {tokens, channels}, Init::embedding);
  norm_attn = LayerNorm<T>(f, name + ".norm_attn", channels);
  q = Linear<T>(f, name + ".q", channels, channels, Init::glorot_uniform);
  k = Linear<T>(f, name + ".k", channels, channels, Init::glorot_uniform);
  v = Linear<T>(f, name + ".v", channels, channels, Init::glorot_uniform);
  out = Linear<T>(f, name + ".out", channels, channels, Init::glorot_uniform);
  norm_mlp = LayerNorm<T>(f, name + ".norm_mlp", channels);
  fc1 = Linear<T>(f, name + ".fc1", channels, channels * mlp_ratio, Init::he_uniform);
  fc2 = Linear<T>(f, name + ".fc2", channels * mlp_ratio, channels, Init::glorot_uniform);
}

template <typename T>
Tensor<T> BottleneckTransformer<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() != 4) throw ShapeError("bottleneck_transformer", "expected NCHW input");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto tokens = h * w;
  if (pos_emb.dim(0) != tokens || pos_emb.dim(1) != c) {
    throw ShapeError("bottleneck_transformer",
                     "input " + to_string(x.shape()) + " does not match position embedding " +
                         to_string(pos_emb.shape()));
  }
  auto t = reshape(permute(x, {0, 2, 3, 1}), {n, tokens, c});
  auto a = norm_attn(add(t, reshape(pos_emb, {1, tokens, c})));
  auto attended = multi_head_attention(q(a), k(a), v(a), heads, Tensor<T>{}, Tensor<T>{});
  auto y = add(t, out(attended));
  auto z = add(y, fc2(gelu(fc1(norm_mlp(y)))));
  return permute(reshape(z, {n, h, w, c}), {0, 3, 1, 2});
}

#define SFBNET_INSTANTIATE_ATTENTION(T)                                                         \
  template Tensor<T> WindowLayout::additive_mask<T>() const;                                   \
  template Tensor<T> window_partition(const Tensor<T>&, const WindowLayout&);                  \
  template Tensor<T> window_merge(const Tensor<T>&, const WindowLayout&);                      \
  template struct RelPosBias<T>;                                                               \
  template struct AttentionProjections<T>;                                                     \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                          int, const Tensor<T>&, const Tensor<T>&,             \
                                          AttentionProbe<T>*);                                 \
  template Tensor<T> w_mhsa(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            const AttentionProjections<T>&, int, const WindowLayout&,          \
                            const RelPosBias<T>&, AttentionProbe<T>*);                         \
  template Tensor<T> sw_mhsa(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                             const AttentionProjections<T>&, int, int, const RelPosBias<T>&,   \
                             AttentionProbe<T>*);                                              \
  template class WindowAttention<T>;                                                           \
  template class BottleneckTransformer<T>;

SFBNET_INSTANTIATE_ATTENTION(float)
SFBNET_INSTANTIATE_ATTENTION(double)

}  // namespace sfbnet
