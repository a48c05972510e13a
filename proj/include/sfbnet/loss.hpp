#pragma once

#include <cstdint>
#include <vector>

#include "sfbnet/tensor.hpp"

namespace sfbnet {

/// Integer class map, N x H x W, row-major.
struct LabelMap {
  std::int64_t batch = 0;
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<std::int32_t> values;

  LabelMap() = default;
  LabelMap(std::int64_t n, std::int64_t h, std::int64_t w, std::int32_t fill = 0)
      : batch(n), height(h), width(w), values(static_cast<std::size_t>(n * h * w), fill) {}

  std::int64_t pixels() const noexcept { return height * width; }
  std::int32_t& at(std::int64_t n, std::int64_t y, std::int64_t x) {
    return values[static_cast<std::size_t>((n * height + y) * width + x)];
  }
  std::int32_t at(std::int64_t n, std::int64_t y, std::int64_t x) const {
    return values[static_cast<std::size_t>((n * height + y) * width + x)];
  }
  bool operator==(const LabelMap&) const = default;
};

/// Throws DataError if any label lies outside [0, classes).
void check_labels(const LabelMap& labels, int classes);

inline constexpr double kDiceSmooth = 1e-5;

/// 1 - mean over foreground classes (1..C-1) of
/// (2 sum p g + eps) / (sum p + sum g + eps), with p the channel softmax of
/// `logits` and sums taken over the whole batch.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& logits, const LabelMap& labels,
                         double smooth = kDiceSmooth);

/// Mean over pixels of -log softmax(logits)[true class].
template <typename T>
Tensor<T> cross_entropy_loss(const Tensor<T>& logits, const LabelMap& labels);

/// Dice + cross-entropy at one scale.
template <typename T>
Tensor<T> segmentation_loss(const Tensor<T>& logits, const LabelMap& labels);

/// Per-stage loss weights, finest stage first.
struct SupervisionWeights {
  std::vector<double> alpha{1.0, 0.5, 0.25};

  /// alpha_0 = first, alpha_{i+1} = alpha_i / 2.
  static SupervisionWeights halving(int stages, double first = 1.0);
  bool is_halving() const noexcept;
};

/// Nearest-neighbour reduction keeping the top-left label of each block.
LabelMap downsample_labels(const LabelMap& labels, int factor);

/// Label maps at full, 1/2, 1/4, ... resolution, one per stage.
std::vector<LabelMap> label_pyramid(const LabelMap& labels, int stages);

/// sum_i alpha_i * (dice_i + ce_i) over the deep-supervision outputs.
template <typename T>
Tensor<T> deep_supervision_loss(const std::vector<Tensor<T>>& outputs,
                                const std::vector<LabelMap>& pyramid,
                                const SupervisionWeights& weights = {});

/// Channel argmax of N x C x H x W logits or probabilities.
template <typename T>
LabelMap argmax_labels(const Tensor<T>& scores);

/// 2 |P & G| / (|P| + |G|) for one class; 1.0 when both sets are empty.
double dice_score(const LabelMap& predicted, const LabelMap& truth, int cls);

}  // namespace sfbnet
