// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "../support.hpp"
#include "sfbnet/app.hpp"
#include "sfbnet/sfb.hpp"

using namespace sfbnet;
using oracle::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failed = 0;

void report(const char* name, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s %-22s %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), s);
  std::fflush(stdout);
  failed += !o.pass;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

struct Rig {
  ParameterRegistry<double> registry;
  std::mt19937_64 rng;
  LayerFactory<double> factory{registry, rng};
  explicit Rig(std::uint64_t seed) : rng(seed) {}
};

Outcome gradient_fidelity() {
  const auto config = RunConfig::preset("gradcheck");
  const auto r = run_gradcheck(config);
  std::string worst_name;
  double worst = 0;
  for (const auto& e : r.entries) {
    if (e.worst_relative_error >= worst) {
      worst = e.worst_relative_error;
      worst_name = e.component;
    }
  }
  const bool pass = r.passed() && r.seconds < 120.0;
  auto d = fmt("worst rel err %.3g (< 1e-5), %.0f components, %.1f s (< 120 s)", worst,
               static_cast<double>(r.entries.size()), r.seconds);
  d += "; worst at " + worst_name + ", " + std::to_string(r.failures().size()) + " failing";
  return {pass, d};
}

Outcome attention_oracle() {
  std::mt19937_64 rng(100);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  double worst = 0;
  for (int t = 0; t < 50; ++t) {
    const int heads = 1 << pick(0, 2), c = heads * pick(1, 4), m = pick(1, 5);
    const int h = pick(1, 3 * m), w = pick(1, 3 * m), n = pick(1, 2);
    Rig rig(200 + t);
    AttentionProjections<double> proj(rig.factory, "a", c, c, c);
    RelPosBias<double> bias(rig.factory, "a.rel_bias", heads, m);
    randomize_parameters(rig.registry, 300 + t);
    auto q = random_tensor<double>({n, c, h, w}, rng), k = random_tensor<double>({n, c, h, w}, rng);
    auto v = random_tensor<double>({n, c, h, w}, rng);
    auto y = w_mhsa(q, k, v, proj, heads, WindowLayout::make(h, w, m, false), bias);
    worst = std::max(worst, oracle::max_abs_diff(oracle::window_attention(q, k, v, proj, heads, m, 0, bias.table), y));
  }
  // Single window (H = W = M) against unwindowed attention over all tokens.
  Rig rig(400);
  AttentionProjections<double> proj(rig.factory, "a", 4, 4, 4);
  randomize_parameters(rig.registry, 401);
  auto x = random_tensor<double>({2, 4, 5, 5}, rng);
  auto y = w_mhsa(x, x, x, proj, 2, WindowLayout::make(5, 5, 5, false), RelPosBias<double>{});
  auto tokens = reshape(permute(x, {0, 2, 3, 1}), {2, 25, 4});
  auto full = multi_head_attention(proj.q(tokens), proj.k(tokens), proj.v(tokens), 2, Tensor<double>{},
                                   Tensor<double>{});
  auto full_nchw = permute(reshape(full, {2, 5, 5, 4}), {0, 3, 1, 2});
  double single = 0;
  for (std::int64_t i = 0; i < y.numel(); ++i) single = std::max(single, std::abs(y.data()[i] - full_nchw.data()[i]));
  return {worst < 1e-5 && single < 1e-5,
          fmt("50 random cases max |diff| %.3g, single window %.3g (< 1e-5)", worst, single)};
}

Outcome shift_mask() {
  Rig rig(500);
  AttentionProjections<double> proj(rig.factory, "a", 4, 4, 4);
  RelPosBias<double> bias(rig.factory, "a.rel_bias", 2, 4);
  randomize_parameters(rig.registry, 501);
  std::mt19937_64 rng(502);
  auto x = random_tensor<double>({1, 4, 8, 8}, rng, -2, 2);
  AttentionProbe<double> probe;
  sw_mhsa(x, x, x, proj, 2, 4, bias, &probe);
  // Regions from source coordinates alone: rolling by -2 on an 8-wide axis
  // puts rows/cols 0..1 at the end of the last window, so they form their
  // own region on that axis.
  auto region = [](int v) { return v < 2 ? 2 : (v < 6 ? 0 : 1); };
  const int m = 4, t = 16, windows = 4, shift = 2;
  std::int64_t pairs = 0, blocked = 0, leaks = 0, starved = 0;
  for (int win = 0; win < windows; ++win)
    for (int p = 0; p < t; ++p)
      for (int q = 0; q < t; ++q) {
        // position in the rolled frame, mapped back to the source map
        auto src = [&](int token) {
          const int ry = (win / 2) * m + token / m, rx = (win % 2) * m + token % m;
          return std::pair{(ry + shift) % 8, (rx + shift) % 8};
        };
        const auto [py, px] = src(p);
        const auto [qy, qx] = src(q);
        const bool same = region(py) == region(qy) && region(px) == region(qx);
        for (int h = 0; h < 2; ++h) {
          const double w = probe.weights[((win * 2 + h) * t + p) * t + q];
          ++pairs;
          if (!same) {
            ++blocked;
            leaks += w != 0.0;
          } else {
            starved += !(w > 0.0);
          }
        }
      }
  return {leaks == 0 && starved == 0 && blocked > 0,
          fmt("%.0f pairs, %.0f cross-region, %.0f nonzero cross-region, %.0f zero same-region",
              static_cast<double>(pairs), static_cast<double>(blocked), static_cast<double>(leaks),
              static_cast<double>(starved))};
}

Outcome window_roundtrip() {
  std::mt19937_64 rng(600);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  int padded = 0, bad = 0;
  for (int t = 0; t < 100; ++t) {
    const int m = pick(1, 7), h = pick(1, 20), w = pick(1, 20);
    const bool shifted = pick(0, 1);
    auto layout = WindowLayout::make(h, w, m, shifted);
    padded += layout.pad_bottom > 0 || layout.pad_right > 0;
    auto x = random_tensor<float>({pick(1, 3), pick(1, 5), h, w}, rng);
    bad += !bitwise_equal(window_merge(window_partition(x, layout), layout), x);
  }
  return {bad == 0 && padded > 0,
          fmt("100 shapes (%.0f padded), %.0f not bitwise identical", padded, bad)};
}

Outcome gate_properties() {
  std::mt19937_64 rng(700);
  double lo = 1, hi = 0, zero_out = 0;
  for (int t = 0; t < 10; ++t) {
    Rig rig(710 + t);
    SwinFilteringBlock<double> sfb(rig.factory, "sfb", 8, 2, 4);
    randomize_parameters(rig.registry, 720 + t);
    auto enc = random_tensor<double>({2, 8, 8, 8}, rng, -3, 3), dec = random_tensor<double>({2, 8, 8, 8}, rng, -3, 3);
    SfbTrace<double> trace;
    sfb(enc, dec, NormMode::train, &trace);
    for (double w : trace.gate.data()) {
      lo = std::min(lo, w);
      hi = std::max(hi, w);
    }
    auto y0 = sfb(Tensor<double>::zeros({2, 8, 8, 8}), dec, NormMode::train);
    for (double v : y0.data()) zero_out = std::max(zero_out, std::abs(v));
  }
  // Unit gates against the plain-skip network with the same shared weights.
  auto full = build_model<double>(ModelConfig::tiny());
  auto plain = build_model<double>(with_variant(ModelConfig::tiny(), "no_sfb"));
  randomize_parameters(full->registry(), 730);
  oracle::copy_shared(*full, *plain);
  full->set_force_unit_gate(true);
  auto x = random_tensor<double>({2, 1, 32, 32}, rng);
  auto a = full->forward(x, NormMode::eval), b = plain->forward(x, NormMode::eval);
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) same = bitwise_equal(a[i], b[i]);
  return {lo > 0 && hi < 1 && zero_out == 0 && same,
          fmt("gate range [%.4g, %.4g], max |out| at F_enc=0 %.3g, unit gate = plain skip bitwise: ", lo, hi,
              zero_out) + (same ? "yes" : "no")};
}

Outcome deep_supervision() {
  std::mt19937_64 rng(800);
  double worst = 0;
  for (int t = 0; t < 5; ++t) {
    auto g = oracle::random_labels(2, 16, 16, 4, rng);
    auto pyr = label_pyramid(g, 3);
    std::vector<Tensor<double>> outs{random_tensor<double>({2, 4, 16, 16}, rng, -3, 3),
                                     random_tensor<double>({2, 4, 8, 8}, rng, -3, 3),
                                     random_tensor<double>({2, 4, 4, 4}, rng, -3, 3)};
    const double alpha[] = {1.0, 0.5, 0.25};
    double manual = 0;
    for (int i = 0; i < 3; ++i) manual += alpha[i] * (oracle::soft_dice_loss(outs[i], pyr[i]) + oracle::cross_entropy(outs[i], pyr[i]));
    worst = std::max(worst, std::abs(deep_supervision_loss(outs, pyr).item() - manual));
  }
  const bool halving = SupervisionWeights{}.alpha == std::vector<double>{1.0, 0.5, 0.25};
  return {worst < 1e-7 && halving, fmt("max |total - a1 L1 - a2 L2 - a3 L3| %.3g (< 1e-7)", worst)};
}

Outcome overfit() {
  const auto dir = std::filesystem::temp_directory_path() / "sfbnet_acceptance_overfit";
  std::filesystem::remove_all(dir);
  auto config = RunConfig::preset("tiny");
  config.output_dir = dir.string();
  const auto samples = phantom_set(8, config.model.height, config.model.width, 0);
  std::ostringstream log;
  const auto t = run_train(config, samples, &log);
  const auto steps = static_cast<std::int64_t>(t.losses.size());
  const double final_dice = t.epochs.back().mean_dice;
  std::int64_t first = -1;
  for (const auto& e : t.epochs) {
    if (first < 0 && e.mean_dice >= 0.95) first = e.step;
  }
  const auto eval = run_eval(config, t.checkpoint.string(), samples, {});
  std::filesystem::remove_all(dir);
  const bool pass = final_dice >= 0.95 && steps <= 2000 && t.seconds < 1800 && eval.mean_dice >= 0.95;
  return {pass, fmt("train Dice %.4f after %.0f steps (>= 0.95 within 2000), first reached at step %.0f, ",
                    final_dice, static_cast<double>(steps), static_cast<double>(first)) +
                    fmt("checkpoint eval %.4f, %.0f s (< 1800 s)", eval.mean_dice, t.seconds)};
}

Outcome cost_structure(double* full_params) {
  auto config = RunConfig::preset("paper");
  config.bench.repeats = 3;
  config.bench.max_batch = 2;
  const auto rows = run_bench(config);
  const auto& full = rows.at(0);
  const auto& no_sfb = rows.at(1);
  const auto& no_trans = rows.at(2);
  *full_params = static_cast<double>(full.parameters);
  const double r_sfb = no_sfb.flops / full.flops, r_trans = no_trans.flops / full.flops;
  const bool ok_sfb = std::abs(r_sfb - 0.38) <= 0.15;
  const bool ok_trans = std::abs(r_trans - 0.84) <= 0.10;
  const bool ok_abs = std::abs(full.gflops() - 18.91) <= 0.25 * 18.91;
  const bool ok_order = no_sfb.images_per_second > no_trans.images_per_second &&
                        no_trans.images_per_second > full.images_per_second;
  std::string d = fmt("no_sfb/full %.3f (0.38 +- 0.15) ", r_sfb) + (ok_sfb ? "ok" : "out") +
                  fmt("; no_trans/full %.3f (0.84 +- 0.10) ", r_trans) + (ok_trans ? "ok" : "out") +
                  fmt("; full %.2f Gflops (18.91 +- 25%%) ", full.gflops()) + (ok_abs ? "ok" : "out") +
                  fmt("; img/s full %.2f no_sfb %.2f no_trans %.2f, ordering ", full.images_per_second,
                      no_sfb.images_per_second, no_trans.images_per_second) +
                  (ok_order ? "ok" : "out");
  return {ok_sfb && ok_trans && ok_abs && ok_order, d};
}

Outcome postprocess_oracle() {
  std::mt19937_64 rng(900);
  int mismatch = 0, not_idempotent = 0;
  for (int t = 0; t < 100; ++t) {
    sfbnet::LabelMap m(1, 64, 64);
    // densities around the percolation threshold give many components
    std::bernoulli_distribution on(0.35 + 0.003 * t);
    std::uniform_int_distribution<int> cls(1, 3);
    for (auto& v : m.values) v = on(rng) ? cls(rng) : 0;
    const auto f = largest_component_filter(m);
    mismatch += !(f == oracle::largest_component(m));
    not_idempotent += !(largest_component_filter(f) == f);
  }
  return {mismatch == 0 && not_idempotent == 0,
          fmt("100 random 64x64 masks: %.0f differ from flood fill, %.0f not idempotent", mismatch, not_idempotent)};
}

Outcome metric() {
  std::mt19937_64 rng(1000);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    auto p = oracle::random_labels(1, 32, 32, 4, rng), g = oracle::random_labels(1, 32, 32, 4, rng);
    for (int c = 0; c < 4; ++c) worst = std::max(worst, std::abs(dice_score(p, g, c) - oracle::dice_count(p, g, c)));
  }
  const double empty = dice_score(sfbnet::LabelMap(1, 8, 8), sfbnet::LabelMap(1, 8, 8), 2);
  return {worst <= 1e-9 && empty == 1.0, fmt("100 pairs max |diff| %.3g (<= 1e-9), empty-empty %.1f", worst, empty)};
}

}  // namespace

int main() {
  double full_params = 0;
  report("gradient_fidelity", gradient_fidelity);
  report("attention_oracle", attention_oracle);
  report("shift_mask", shift_mask);
  report("window_roundtrip", window_roundtrip);
  report("gate_properties", gate_properties);
  report("deep_supervision", deep_supervision);
  report("overfit_sanity", overfit);
  report("cost_structure", [&] { return cost_structure(&full_params); });
  report("parameter_count", [&] {
    const double n = full_params > 0 ? full_params
                                     : static_cast<double>(count_parameters(*build_model<float>(ModelConfig::paper())));
    return Outcome{std::abs(n - 23e6) <= 0.25 * 23e6, fmt("%.2fM (23M +- 25%%)", n / 1e6)};
  });
  report("postprocess_oracle", postprocess_oracle);
  report("metric_correctness", metric);
  std::printf("%d of 11 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
