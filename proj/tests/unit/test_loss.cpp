#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "../support.hpp"
#include "sfbnet/gradcheck.hpp"
#include "sfbnet/loss.hpp"

using namespace sfbnet;
using oracle::random_labels;
using oracle::random_tensor;

namespace {

// Logits of +-s around the given labels.
Tensor<double> saturated(const LabelMap& labels, int classes, double s = 40.0) {
  const auto plane = labels.pixels();
  std::vector<double> v(static_cast<std::size_t>(labels.batch * classes * plane), -s);
  for (std::int64_t n = 0; n < labels.batch; ++n)
    for (std::int64_t p = 0; p < plane; ++p) v[(n * classes + labels.values[n * plane + p]) * plane + p] = s;
  return Tensor<double>({labels.batch, classes, labels.height, labels.width}, v);
}

}  // namespace

TEST_CASE("cross entropy: uniform logits give ln 4, saturated correct logits give ~0") {
  std::mt19937_64 rng(1);
  auto g = random_labels(2, 4, 4, 4, rng);
  CHECK(cross_entropy_loss(Tensor<double>::zeros({2, 4, 4, 4}), g).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK(cross_entropy_loss(saturated(g, 4), g).item() < 1e-12);
}

TEST_CASE("cross entropy and soft dice match per-pixel oracles on random cases") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 5; ++t) {
    auto x = random_tensor<double>({2, 4, 5, 6}, rng, -3, 3);
    auto g = random_labels(2, 5, 6, 4, rng);
    CHECK(std::abs(cross_entropy_loss(x, g).item() - oracle::cross_entropy(x, g)) < 1e-6);
    CHECK(std::abs(soft_dice_loss(x, g).item() - oracle::soft_dice_loss(x, g)) < 1e-9);
    const double l = soft_dice_loss(x, g).item();
    CHECK(l >= 0.0);
    CHECK(l <= 1.0);
  }
}

TEST_CASE("soft dice: perfect, disjoint and half-overlap predictions") {
  std::mt19937_64 rng(3);
  auto g = random_labels(2, 8, 8, 4, rng);
  CHECK(soft_dice_loss(saturated(g, 4), g).item() < 0.01);

  // Every foreground class present in truth, prediction puts each pixel on a
  // different foreground class (or background on foreground).
  LabelMap truth(1, 4, 4), pred(1, 4, 4);
  for (std::int64_t i = 0; i < 16; ++i) {
    truth.values[i] = 1 + static_cast<int>(i % 3);
    pred.values[i] = (truth.values[i] % 3) + 1;
  }
  // Classes present on both sides but never on the same pixel.
  CHECK(soft_dice_loss(saturated(pred, 4), truth).item() == doctest::Approx(1.0).epsilon(1e-6));

  // |A| = |B| = 8, |A & B| = 4, class 1 only.
  LabelMap a(1, 4, 4), b(1, 4, 4);
  for (int i = 0; i < 8; ++i) a.values[i] = 1;
  for (int i = 4; i < 12; ++i) b.values[i] = 1;
  CHECK(dice_score(b, a, 1) == oracle::dice_count(b, a, 1));
  CHECK(oracle::dice_count(b, a, 1) == 0.5);
  // Absent classes 2 and 3 score (0 + eps) / (0 + eps) = 1.
  const double loss = soft_dice_loss(saturated(b, 4), a).item();
  CHECK(loss == doctest::Approx(1.0 - (0.5 + 1.0 + 1.0) / 3.0).epsilon(1e-6));
}

TEST_CASE("losses reject out-of-range labels and mismatched shapes") {
  LabelMap g(1, 2, 2);
  g.values[3] = 4;
  CHECK_THROWS_AS(cross_entropy_loss(Tensor<double>::zeros({1, 4, 2, 2}), g), DataError);
  CHECK_THROWS_AS(soft_dice_loss(Tensor<double>::zeros({1, 4, 2, 2}), g), DataError);
  g.values[3] = -1;
  CHECK_THROWS_AS(check_labels(g, 4), DataError);
  LabelMap ok(1, 2, 2);
  CHECK_THROWS_AS(cross_entropy_loss(Tensor<double>::zeros({1, 4, 2, 3}), ok), ShapeError);
}

TEST_CASE("supervision weights halve") {
  SupervisionWeights w;
  CHECK(w.alpha == std::vector<double>{1.0, 0.5, 0.25});
  CHECK(w.is_halving());
  CHECK(SupervisionWeights::halving(4, 2.0).alpha == std::vector<double>{2.0, 1.0, 0.5, 0.25});
  w.alpha = {1.0, 0.5, 0.3};
  CHECK_FALSE(w.is_halving());
}

TEST_CASE("label downsampling keeps the top-left sample of each block") {
  LabelMap c(1, 32, 32, 2);
  auto d = downsample_labels(c, 2);
  CHECK(d.height == 16);
  CHECK(d.width == 16);
  for (auto v : d.values) CHECK(v == 2);

  std::mt19937_64 rng(4);
  auto g = random_labels(2, 8, 12, 4, rng);
  for (int f : {2, 4}) {
    auto r = downsample_labels(g, f);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t y = 0; y < r.height; ++y)
        for (std::int64_t x = 0; x < r.width; ++x) CHECK(r.at(n, y, x) == g.at(n, y * f, x * f));
  }

  // Checkerboard of 2x2 tiles {0,1}.
  LabelMap cb(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) cb.at(0, y, x) = ((y / 2) + (x / 2)) % 2;
  auto r = downsample_labels(cb, 2);
  CHECK(r.values == std::vector<std::int32_t>{0, 1, 1, 0});

  CHECK_THROWS_AS(downsample_labels(LabelMap(1, 6, 6), 4), ShapeError);
  auto pyr = label_pyramid(g, 3);
  REQUIRE(pyr.size() == 3);
  CHECK(pyr[0] == g);
  CHECK(pyr[2] == downsample_labels(g, 4));
}

TEST_CASE("deep supervision equals the manual weighted sum") {
  std::mt19937_64 rng(5);
  auto g = random_labels(2, 16, 16, 4, rng);
  auto pyr = label_pyramid(g, 3);
  std::vector<Tensor<double>> outs{random_tensor<double>({2, 4, 16, 16}, rng, -2, 2),
                                   random_tensor<double>({2, 4, 8, 8}, rng, -2, 2),
                                   random_tensor<double>({2, 4, 4, 4}, rng, -2, 2)};
  double manual = 0;
  const double alpha[] = {1.0, 0.5, 0.25};
  for (int i = 0; i < 3; ++i) manual += alpha[i] * (oracle::soft_dice_loss(outs[i], pyr[i]) + oracle::cross_entropy(outs[i], pyr[i]));
  const double total = deep_supervision_loss(outs, pyr).item();
  CHECK(std::abs(total - manual) < 1e-7);

  // Linear in the weights.
  SupervisionWeights w3;
  w3.alpha = {3.0, 1.5, 0.75};
  CHECK(std::abs(deep_supervision_loss(outs, pyr, w3).item() - 3 * total) < 1e-9);

  // Perfect predictions at every stage give ~0; unit-loss stages give 1.75.
  std::vector<Tensor<double>> perfect{saturated(pyr[0], 4), saturated(pyr[1], 4), saturated(pyr[2], 4)};
  CHECK(deep_supervision_loss(perfect, pyr).item() < 0.01);
  // Uniform logits on a constant map give the same stage loss L at every
  // scale (up to the smoothing term), so the total is 1.75 L.
  auto ones = label_pyramid(LabelMap(1, 16, 16, 1), 3);
  std::vector<Tensor<double>> flat{Tensor<double>::zeros({1, 4, 16, 16}), Tensor<double>::zeros({1, 4, 8, 8}),
                                   Tensor<double>::zeros({1, 4, 4, 4})};
  const double stage = segmentation_loss(flat[0], ones[0]).item();
  CHECK(deep_supervision_loss(flat, ones).item() == doctest::Approx(1.75 * stage).epsilon(1e-5));

  CHECK_THROWS_AS(deep_supervision_loss(std::vector<Tensor<double>>{outs[0], outs[1]}, pyr), ContractError);
  std::vector<Tensor<double>> swapped{outs[1], outs[0], outs[2]};
  CHECK_THROWS_AS(deep_supervision_loss(swapped, pyr), ShapeError);
}

TEST_CASE("loss gradients agree with finite differences") {
  std::mt19937_64 rng(6);
  auto x = random_tensor<double>({2, 4, 4, 4}, rng, -2, 2, true);
  auto g = random_labels(2, 4, 4, 4, rng);
  for (const auto& [name, fn] : std::vector<std::pair<std::string, std::function<Tensor<double>()>>>{
           {"ce", [&] { return cross_entropy_loss(x, g); }},
           {"dice", [&] { return soft_dice_loss(x, g); }},
           {"seg", [&] { return segmentation_loss(x, g); }}}) {
    auto e = check_gradient(name, {x}, fn);
    CAPTURE(name);
    CAPTURE(e.worst_relative_error);
    CHECK(e.passed);
  }
}

TEST_CASE("dice score: examples, counting oracle, symmetry, relabeling") {
  LabelMap a(1, 4, 4), b(1, 4, 4);
  CHECK(dice_score(a, b, 1) == 1.0);  // both empty
  for (int i = 0; i < 6; ++i) a.values[i] = 1;
  CHECK(dice_score(a, a, 1) == 1.0);
  for (int i = 6; i < 12; ++i) b.values[i] = 1;
  CHECK(dice_score(a, b, 1) == 0.0);

  LabelMap p(1, 4, 4), g(1, 4, 4);
  for (int i = 0; i < 6; ++i) p.values[i] = 2;
  for (int i = 3; i < 13; ++i) g.values[i] = 2;
  CHECK(dice_score(p, g, 2) == doctest::Approx(0.375).epsilon(1e-15));

  std::mt19937_64 rng(7);
  const int perm[] = {2, 0, 3, 1};
  for (int t = 0; t < 20; ++t) {
    auto x = random_labels(1, 16, 16, 4, rng), y = random_labels(1, 16, 16, 4, rng);
    auto xr = x, yr = y;
    for (auto& v : xr.values) v = perm[v];
    for (auto& v : yr.values) v = perm[v];
    for (int c = 0; c < 4; ++c) {
      CHECK(std::abs(dice_score(x, y, c) - oracle::dice_count(x, y, c)) < 1e-9);
      CHECK(dice_score(x, y, c) == dice_score(y, x, c));
      CHECK(dice_score(x, y, c) == dice_score(xr, yr, perm[c]));
    }
  }
  CHECK_THROWS_AS(dice_score(LabelMap(1, 2, 2), LabelMap(1, 2, 3), 1), ShapeError);
}

TEST_CASE("argmax picks the highest channel, first on ties") {
  Tensor<float> s({1, 3, 1, 2}, {0.1f, 0.5f, 0.7f, 0.5f, 0.7f, 0.0f});
  auto l = argmax_labels(s);
  CHECK(l.values == std::vector<std::int32_t>{1, 0});
}
