#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "../support.hpp"
#include "sfbnet/gradcheck.hpp"
#include "sfbnet/pipeline.hpp"

using namespace sfbnet;
namespace fs = std::filesystem;

namespace {

std::set<std::int32_t> label_set(const std::vector<std::int32_t>& v) { return {v.begin(), v.end()}; }

LabelMap random_mask(std::int64_t h, std::int64_t w, double density, std::mt19937_64& rng) {
  LabelMap m(1, h, w);
  std::bernoulli_distribution on(density);
  std::uniform_int_distribution<int> cls(1, 3);
  for (auto& v : m.values) v = on(rng) ? cls(rng) : 0;
  return m;
}

std::int64_t count_components(const LabelMap& m) {
  const auto filtered = oracle::largest_component(m);
  // one component iff the oracle keeps every foreground pixel
  std::int64_t fg = 0, kept = 0;
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    fg += m.values[i] > 0;
    kept += filtered.values[i] > 0;
  }
  return fg == 0 ? 0 : (fg == kept ? 1 : 2);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Constant-output model: every weight zero, so the softmax ignores the input.
std::unique_ptr<SFBNet<double>> zero_model() {
  auto m = build_model<double>(ModelConfig::gradcheck());
  for (const auto& p : m->registry().parameters()) {
    auto t = p.tensor;
    for (auto& v : t.mutable_data()) v = 0.0;
  }
  return m;
}

}  // namespace

TEST_CASE("phantoms are deterministic and hold all four classes") {
  for (std::uint64_t seed : {0ull, 1ull, 7ull, 123ull}) {
    for (int size : {32, 64, 96}) {
      auto spec = PhantomSpec::random(seed, size, size);
      auto a = generate_phantom(spec), b = generate_phantom(spec);
      CHECK(a == b);
      CHECK(label_set(a.labels) == std::set<std::int32_t>{0, 1, 2, 3});
      a.validate();
    }
  }
  CHECK_FALSE(generate_phantom(PhantomSpec::random(1, 64, 64)) == generate_phantom(PhantomSpec::random(2, 64, 64)));
  CHECK(generate_phantom(PhantomSpec{}).labels.size() == 64u * 64u);
}

TEST_CASE("myocardium rings the LV: every LV pixel's outside neighbour is MYO") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto s = generate_phantom(PhantomSpec::random(seed, 64, 64));
    const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x) {
        if (s.labels[s.index(y, x)] != lv) continue;
        for (int d = 0; d < 4; ++d) {
          const int yy = y + dy[d], xx = x + dx[d];
          REQUIRE(yy >= 0);
          REQUIRE(yy < s.height);
          REQUIRE(xx >= 0);
          REQUIRE(xx < s.width);
          const auto v = s.labels[s.index(yy, xx)];
          if (v != lv) CHECK(v == myo);
        }
      }
  }
}

TEST_CASE("phantom image is z-scored and geometry errors are reported") {
  auto s = generate_phantom(PhantomSpec::random(3, 64, 64));
  double mean = 0, sq = 0;
  for (float v : s.image) mean += v;
  mean /= static_cast<double>(s.image.size());
  for (float v : s.image) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 1e-5);
  CHECK(std::sqrt(sq / static_cast<double>(s.image.size())) == doctest::Approx(1.0).epsilon(1e-4));

  PhantomSpec bad;
  bad.lv_ry = 40;
  CHECK_THROWS_AS(generate_phantom(bad), DataError);
  bad = PhantomSpec{};
  bad.myo_thickness = 0.5;
  CHECK_THROWS_AS(generate_phantom(bad), DataError);
}

TEST_CASE("resampling: identity, doubling, label set, inverse dims") {
  auto s = generate_phantom(PhantomSpec::random(4, 48, 40));
  s.spacing_x = 1.2;
  s.spacing_y = 1.4;
  CHECK(resample_xy(s, 1.2, 1.4) == s);

  auto up = resample_xy(s, 0.6, 0.7);
  CHECK(up.width == 80);
  CHECK(up.height == 96);
  CHECK(up.spacing_x == 0.6);
  CHECK(label_set(up.labels) == label_set(s.labels));
  auto back = resample_xy(up, 1.2, 1.4);
  CHECK(back.width == s.width);
  CHECK(back.height == s.height);

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = generate_phantom(PhantomSpec::random(seed, 64, 64));
    auto r = resample_xy(p, p.spacing_x * 0.8, p.spacing_y * 1.1);
    CHECK(r.width == static_cast<int>(std::lround(64 / 0.8)));
    CHECK(r.height == static_cast<int>(std::lround(64 / 1.1)));
    CHECK(label_set(r.labels) == label_set(p.labels));
  }
  CHECK_THROWS_AS(resample_xy(s, 0.0, 1.0), DataError);
  CHECK_THROWS_AS(resample_xy(s, 1e6, 1.0), DataError);
}

TEST_CASE("mirroring twice restores the sample") {
  auto s = generate_phantom(PhantomSpec::random(5, 32, 48));
  for (auto [fx, fy] : {std::pair{true, false}, std::pair{false, true}, std::pair{true, true}}) {
    AugmentParams a;
    a.geometry.flip_x = fx;
    a.geometry.flip_y = fy;
    auto once = apply_augmentation(s, a);
    CHECK_FALSE(once == s);
    CHECK(apply_augmentation(once, a) == s);
    for (int y = 0; y < s.height; ++y)
      for (int x = 0; x < s.width; ++x)
        CHECK(once.labels[once.index(y, x)] ==
              s.labels[s.index(fy ? s.height - 1 - y : y, fx ? s.width - 1 - x : x)]);
  }
}

TEST_CASE("quarter turn moves pixels as a transpose-and-flip") {
  auto s = generate_phantom(PhantomSpec::random(6, 40, 40));
  AugmentParams a;
  a.geometry.rotation = std::numbers::pi / 2;
  auto r = apply_augmentation(s, a);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      CHECK(r.labels[r.index(y, x)] == s.labels[s.index(39 - x, y)]);
      CHECK(r.image[r.index(y, x)] == doctest::Approx(s.image[s.index(39 - x, y)]).epsilon(1e-5));
    }
}

TEST_CASE("augmentation is reproducible and keeps labels categorical") {
  auto s = generate_phantom(PhantomSpec::random(7, 64, 64));
  CHECK(augment(s, 11) == augment(s, 11));
  AugmentOptions always;
  always.p_rotation = always.p_scale = always.p_gamma = always.p_brightness = 1.0;
  always.p_contrast = always.p_low_res = always.p_noise = always.p_blur = 1.0;
  bool differed = false;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto out = augment(s, seed, seed % 2 ? always : AugmentOptions{});
    differed |= !(out == s);
    CHECK(out.height == s.height);
    const auto in_set = label_set(s.labels);
    for (auto v : label_set(out.labels)) CHECK(in_set.count(v) == 1);
    for (float v : out.image) CHECK(std::isfinite(v));
  }
  CHECK(differed);
}

TEST_CASE("label transport equals argmax of transported one-hot planes") {
  AugmentOptions always;
  always.p_rotation = always.p_scale = 1.0;
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    auto s = generate_phantom(PhantomSpec::random(seed, 48, 48));
    const auto params = draw_augmentation(seed + 100, always);
    const auto out = apply_augmentation(s, params);
    std::vector<std::vector<float>> planes;
    for (int c = 0; c < kTissueClasses; ++c) {
      std::vector<float> onehot(s.labels.size());
      for (std::size_t i = 0; i < onehot.size(); ++i) onehot[i] = s.labels[i] == c ? 1.0f : 0.0f;
      planes.push_back(params.geometry.apply(onehot, 48, 48, Interp::nearest));
    }
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
      int best = 0;
      for (int c = 1; c < kTissueClasses; ++c)
        if (planes[c][i] > planes[best][i]) best = c;
      CHECK(out.labels[i] == best);
    }
  }
}

TEST_CASE("mirroring TTA: constant model, probabilities, manual average") {
  std::mt19937_64 rng(9);
  auto x = oracle::random_tensor<double>({2, 1, 8, 8}, rng);
  auto flat = zero_model();
  auto plain = predict_probabilities(*flat, x);
  auto tta = tta_mirror_predict(*flat, x);
  CHECK(oracle::max_abs_diff(std::vector<double>(plain.data().begin(), plain.data().end()), tta) < 1e-15);

  auto model = build_model<double>(ModelConfig::gradcheck());
  randomize_parameters(model->registry(), 3);
  auto p = tta_mirror_predict(*model, x);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t i = 0; i < 64; ++i) {
      double s = 0;
      for (int c = 0; c < 4; ++c) s += p.data()[(n * 4 + c) * 64 + i];
      CHECK(std::abs(s - 1.0) < 1e-6);
    }

  // Manual four-pass average with index arithmetic for the flips.
  std::vector<double> manual(static_cast<std::size_t>(p.numel()), 0.0);
  for (int f = 0; f < 4; ++f) {
    const bool fx = f & 1, fy = f & 2;
    std::vector<double> flipped(static_cast<std::size_t>(x.numel()));
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t y = 0; y < 8; ++y)
        for (std::int64_t xx = 0; xx < 8; ++xx)
          flipped[(n * 8 + y) * 8 + xx] = x.at({n, 0, fy ? 7 - y : y, fx ? 7 - xx : xx});
    auto q = predict_probabilities(*model, Tensor<double>(x.shape(), flipped));
    for (std::int64_t n = 0; n < 2; ++n)
      for (int c = 0; c < 4; ++c)
        for (std::int64_t y = 0; y < 8; ++y)
          for (std::int64_t xx = 0; xx < 8; ++xx)
            manual[((n * 4 + c) * 8 + y) * 8 + xx] += q.at({n, c, fy ? 7 - y : y, fx ? 7 - xx : xx}) / 4.0;
  }
  CHECK(oracle::max_abs_diff(manual, p) < 1e-6);
}

TEST_CASE("largest component: examples, ties, oracle, idempotence") {
  LabelMap blob(1, 10, 10);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 7; ++x) blob.at(0, y, x) = 1 + (x % 3);
  CHECK(largest_component_filter(blob) == blob);

  LabelMap two = blob;  // 20-pixel blob plus a 5-pixel bar
  for (int x = 0; x < 5; ++x) two.at(0, 8, x) = 2;
  auto kept = largest_component_filter(two);
  CHECK(kept == blob);

  LabelMap tie(1, 5, 5);
  tie.at(0, 0, 3) = tie.at(0, 0, 4) = 1;
  tie.at(0, 3, 0) = tie.at(0, 4, 0) = 3;
  auto t = largest_component_filter(tie);
  CHECK(t.at(0, 0, 3) == 1);
  CHECK(t.at(0, 3, 0) == 0);

  // Diagonal contact does not connect.
  LabelMap diag(1, 3, 3);
  diag.at(0, 0, 0) = diag.at(0, 1, 1) = diag.at(0, 2, 2) = 1;
  auto d = largest_component_filter(diag);
  CHECK(std::count(d.values.begin(), d.values.end(), 1) == 1);
  CHECK(d.at(0, 0, 0) == 1);

  LabelMap empty(2, 4, 4);
  CHECK(largest_component_filter(empty) == empty);

  std::mt19937_64 rng(10);
  for (int i = 0; i < 20; ++i) {
    auto m = random_mask(32, 32, 0.2 + 0.03 * i, rng);
    auto f = largest_component_filter(m);
    CHECK(f == oracle::largest_component(m));
    CHECK(largest_component_filter(f) == f);
    CHECK(count_components(f) <= 1);
  }
  // Batched maps are filtered independently.
  LabelMap batch(2, 10, 10);
  std::copy(two.values.begin(), two.values.end(), batch.values.begin());
  std::copy(tie.values.begin(), tie.values.end(), batch.values.begin() + 100);
  auto fb = largest_component_filter(batch);
  CHECK(std::equal(blob.values.begin(), blob.values.end(), fb.values.begin()));
}

TEST_CASE("stacking samples") {
  auto a = generate_phantom(PhantomSpec::random(1, 16, 16));
  auto b = generate_phantom(PhantomSpec::random(2, 16, 16));
  auto x = stack_images<float>({&a, &b});
  CHECK(x.shape() == Shape{2, 1, 16, 16});
  CHECK(x.at({1, 0, 3, 4}) == b.image[b.index(3, 4)]);
  auto l = stack_labels({&a, &b});
  CHECK(l.at(1, 5, 6) == b.labels[b.index(5, 6)]);
  auto c = generate_phantom(PhantomSpec::random(3, 16, 24));
  CHECK_THROWS_AS(stack_images<float>({&a, &c}), ShapeError);
}

TEST_CASE("RAWT roundtrip and malformed files") {
  TempDir dir("sfbnet_test_pipeline");
  auto s = generate_phantom(PhantomSpec::random(12, 32, 24));
  s.spacing_x = 1.1;
  s.spacing_y = 1.3;
  save_sample(dir.path, 7, s);
  CHECK(fs::exists(dir.path / "case_0007.img.rawt"));
  CHECK(fs::exists(dir.path / "case_0007.lbl.rawt"));
  auto r = load_sample(dir.path / "case_0007.img.rawt", dir.path / "case_0007.lbl.rawt");
  CHECK(r == s);
  save_sample(dir.path, 2, generate_phantom(PhantomSpec::random(13, 32, 24)));
  auto split = load_split(dir.path);
  REQUIRE(split.size() == 2);
  CHECK(split[1] == s);

  // Header is one JSON line.
  {
    std::ifstream in(dir.path / "case_0007.img.rawt");
    std::string line;
    std::getline(in, line);
    CHECK(line.find("\"dtype\"") != std::string::npos);
    CHECK(line.find("f32") != std::string::npos);
  }
  RawtHeader h;
  auto img = read_rawt_f32(dir.path / "case_0007.img.rawt", &h);
  CHECK(h.shape == std::vector<std::int64_t>{1, 32, 24});
  CHECK(h.spacing_x == 1.1);
  CHECK(img.size() == 32u * 24u);
  CHECK_THROWS_AS(read_rawt_i32(dir.path / "case_0007.img.rawt"), DataError);

  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream(dir.path / name, std::ios::binary) << text;
    return dir.path / name;
  };
  CHECK_THROWS_AS(read_rawt_f32(write("a.rawt", "not json\n1234")), DataError);
  CHECK_THROWS_AS(read_rawt_f32(write("b.rawt", "{\"dtype\":\"f64\",\"shape\":[1],\"spacing\":[1,1]}\n12345678")),
                  DataError);
  CHECK_THROWS_AS(read_rawt_f32(write("c.rawt", "{\"dtype\":\"f32\",\"shape\":[2],\"spacing\":[1,1]}\n1234")),
                  DataError);
  CHECK_THROWS_AS(read_rawt_f32(write("d.rawt", "{\"dtype\":\"f32\",\"shape\":[1],\"spacing\":[1,1]}\n12345")),
                  DataError);
  CHECK_THROWS_AS(read_rawt_f32(write("e.rawt", "")), DataError);
  CHECK_THROWS_AS(read_rawt_f32(dir.path / "missing.rawt"), DataError);
  CHECK_THROWS_AS(load_split(dir.path / "nope"), DataError);

  TempDir lonely("sfbnet_test_pipeline_lonely");
  fs::copy_file(dir.path / "case_0007.img.rawt", lonely.path / "case_0001.img.rawt");
  CHECK_THROWS_AS(load_split(lonely.path), DataError);
}
