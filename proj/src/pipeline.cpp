#include "sfbnet/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <regex>

#include "json.hpp"

namespace sfbnet {

void Sample::validate() const {
  if (height <= 0 || width <= 0) throw DataError("sample has empty extents");
  const auto n = static_cast<std::size_t>(height) * width;
  if (image.size() != n || labels.size() != n) {
    throw DataError("sample buffers (" + std::to_string(image.size()) + " image, " +
                    std::to_string(labels.size()) + " label values) do not match " +
                    std::to_string(height) + "x" + std::to_string(width));
  }
  if (!(spacing_x > 0.0) || !(spacing_y > 0.0)) throw DataError("sample spacing must be > 0");
}

PhantomSpec PhantomSpec::random(std::uint64_t seed, int height, int width) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 17);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  PhantomSpec s;
  s.seed = seed;
  s.height = height;
  s.width = width;
  const double size = std::min(height, width);
  s.lv_ry = size * u(0.11, 0.16);
  s.lv_rx = size * u(0.11, 0.16);
  s.myo_thickness = std::max(1.5, size * u(0.05, 0.075));
  const double outer = std::max(s.lv_ry, s.lv_rx) + s.myo_thickness;
  s.rv_radius = size * u(0.15, 0.2);
  s.rv_angle = std::numbers::pi + u(-0.4, 0.4);
  s.rv_offset = outer + s.rv_radius * u(0.2, 0.5);
  // centre the LV + RV pair, then jitter
  const double reach = s.rv_offset + s.rv_radius;
  s.lv_cx = width / 2.0 + (reach * -std::cos(s.rv_angle) - outer) / 2.0 + u(-0.03, 0.03) * size;
  s.lv_cy = height / 2.0 - reach * std::sin(s.rv_angle) / 2.0 + u(-0.03, 0.03) * size;
  for (auto& v : s.intensity) v += u(-0.05, 0.05);
  s.noise_sigma = u(0.03, 0.08);
  s.spacing = u(1.0, 1.5);
  return s;
}

Sample generate_phantom(const PhantomSpec& spec) {
  const int h = spec.height, w = spec.width;
  if (h < 8 || w < 8) throw DataError("phantom: image must be at least 8x8");
  if (spec.lv_ry <= 0 || spec.lv_rx <= 0 || spec.myo_thickness < 1.0 || spec.rv_radius <= 0 ||
      spec.spacing <= 0) {
    throw DataError("phantom: radii, thickness and spacing must be positive (thickness >= 1)");
  }
  const double outer_y = spec.lv_ry + spec.myo_thickness;
  const double outer_x = spec.lv_rx + spec.myo_thickness;
  const double rv_cy = spec.lv_cy + spec.rv_offset * std::sin(spec.rv_angle);
  const double rv_cx = spec.lv_cx + spec.rv_offset * std::cos(spec.rv_angle);
  auto inside = [&](double cy, double cx, double ry, double rx) {
    return cy - ry >= 1.0 && cy + ry <= h - 2.0 && cx - rx >= 1.0 && cx + rx <= w - 2.0;
  };
  if (!inside(spec.lv_cy, spec.lv_cx, outer_y, outer_x) ||
      !inside(rv_cy, rv_cx, spec.rv_radius, spec.rv_radius)) {
    throw DataError("phantom: anatomy does not fit inside " + std::to_string(h) + "x" +
                    std::to_string(w));
  }

  Sample s(h, w);
  s.spacing_x = s.spacing_y = spec.spacing;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dy = y - rv_cy, dx = x - rv_cx;
      if (dy * dy + dx * dx <= spec.rv_radius * spec.rv_radius) s.labels[s.index(y, x)] = rv;
    }
  }
  std::vector<char> cavity(s.labels.size(), 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double ny = (y - spec.lv_cy) / spec.lv_ry, nx = (x - spec.lv_cx) / spec.lv_rx;
      cavity[s.index(y, x)] = ny * ny + nx * nx <= 1.0;
    }
  }
  // myocardium: every non-cavity pixel within `thickness` of the cavity
  const int t = static_cast<int>(std::ceil(spec.myo_thickness));
  const double t2 = spec.myo_thickness * spec.myo_thickness;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!cavity[s.index(y, x)]) continue;
      for (int dy = -t; dy <= t; ++dy) {
        for (int dx = -t; dx <= t; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w || dy * dy + dx * dx > t2) continue;
          if (!cavity[s.index(yy, xx)]) s.labels[s.index(yy, xx)] = myo;
        }
      }
    }
  }
  for (std::size_t i = 0; i < cavity.size(); ++i) {
    if (cavity[i]) s.labels[i] = lv;
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);
  for (std::size_t i = 0; i < s.image.size(); ++i) {
    s.image[i] = static_cast<float>(spec.intensity[s.labels[i]] + noise(rng));
  }
  double mean = 0.0, sq = 0.0;
  for (float v : s.image) mean += v;
  mean /= static_cast<double>(s.image.size());
  for (float v : s.image) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(s.image.size()));
  for (auto& v : s.image) v = static_cast<float>((v - mean) / (sd > 0 ? sd : 1.0));
  return s;
}

namespace {

float sample_bilinear(const std::vector<float>& plane, int h, int w, double sy, double sx) {
  sy = std::clamp(sy, 0.0, h - 1.0);
  sx = std::clamp(sx, 0.0, w - 1.0);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
  const double fy = sy - y0, fx = sx - x0;
  auto at = [&](int y, int x) { return static_cast<double>(plane[static_cast<std::size_t>(y) * w + x]); };
  if (fy == 0.0 && fx == 0.0) return plane[static_cast<std::size_t>(y0) * w + x0];
  const double top = at(y0, x0) * (1 - fx) + at(y0, x1) * fx;
  const double bottom = at(y1, x0) * (1 - fx) + at(y1, x1) * fx;
  return static_cast<float>(top * (1 - fy) + bottom * fy);
}

int clamp_round(double v, int n) {
  return std::clamp(static_cast<int>(std::floor(v + 0.5)), 0, n - 1);
}

std::vector<float> resize_bilinear(const std::vector<float>& plane, int h, int w, int nh, int nw) {
  std::vector<float> out(static_cast<std::size_t>(nh) * nw);
  const double ry = static_cast<double>(h) / nh, rx = static_cast<double>(w) / nw;
  for (int y = 0; y < nh; ++y) {
    for (int x = 0; x < nw; ++x) {
      out[static_cast<std::size_t>(y) * nw + x] =
          sample_bilinear(plane, h, w, (y + 0.5) * ry - 0.5, (x + 0.5) * rx - 0.5);
    }
  }
  return out;
}

}  // namespace

Sample resample_xy(const Sample& sample, double target_x, double target_y) {
  sample.validate();
  if (!(target_x > 0.0) || !(target_y > 0.0)) throw DataError("resample: target spacing must be > 0");
  const double ry = sample.spacing_y / target_y, rx = sample.spacing_x / target_x;
  const int nh = static_cast<int>(std::lround(sample.height * ry));
  const int nw = static_cast<int>(std::lround(sample.width * rx));
  if (nh < 1 || nw < 1) throw DataError("resample: result would be empty");
  Sample out(nh, nw);
  out.spacing_x = target_x;
  out.spacing_y = target_y;
  for (int y = 0; y < nh; ++y) {
    const double sy = (y + 0.5) / ry - 0.5;
    for (int x = 0; x < nw; ++x) {
      const double sx = (x + 0.5) / rx - 0.5;
      out.image[out.index(y, x)] = sample_bilinear(sample.image, sample.height, sample.width, sy, sx);
      out.labels[out.index(y, x)] =
          sample.labels[sample.index(clamp_round(sy, sample.height), clamp_round(sx, sample.width))];
    }
  }
  return out;
}

namespace {

// Source coordinate of output pixel (y, x).
std::pair<double, double> source_of(const GeometricTransform& g, int h, int w, int y, int x) {
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  const double oy = g.flip_y ? h - 1 - y : y;
  const double ox = g.flip_x ? w - 1 - x : x;
  if (g.rotation == 0.0 && g.scale == 1.0) return {oy, ox};
  const double dy = (oy - cy) / g.scale, dx = (ox - cx) / g.scale;
  const double c = std::cos(g.rotation), s = std::sin(g.rotation);
  return {cy + c * dy - s * dx, cx + s * dy + c * dx};
}

}  // namespace

std::vector<float> GeometricTransform::apply(const std::vector<float>& plane, int h, int w,
                                             Interp interp) const {
  if (identity()) return plane;
  std::vector<float> out(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [sy, sx] = source_of(*this, h, w, y, x);
      out[static_cast<std::size_t>(y) * w + x] =
          interp == Interp::bilinear
              ? sample_bilinear(plane, h, w, sy, sx)
              : plane[static_cast<std::size_t>(clamp_round(sy, h)) * w + clamp_round(sx, w)];
    }
  }
  return out;
}

std::vector<std::int32_t> GeometricTransform::apply_labels(const std::vector<std::int32_t>& labels,
                                                           int h, int w) const {
  if (identity()) return labels;
  std::vector<std::int32_t> out(labels.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto [sy, sx] = source_of(*this, h, w, y, x);
      out[static_cast<std::size_t>(y) * w + x] =
          labels[static_cast<std::size_t>(clamp_round(sy, h)) * w + clamp_round(sx, w)];
    }
  }
  return out;
}

AugmentParams draw_augmentation(std::uint64_t seed, const AugmentOptions& o) {
  std::mt19937_64 rng(seed);
  auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  auto coin = [&](double p) { return u(0.0, 1.0) < p; };
  AugmentParams a;
  // draw every value unconditionally so one option does not shift the others
  const double rot = u(-o.max_rotation_deg, o.max_rotation_deg) * std::numbers::pi / 180.0;
  if (coin(o.p_rotation)) a.geometry.rotation = rot;
  const double sc = u(o.min_scale, o.max_scale);
  if (coin(o.p_scale)) a.geometry.scale = sc;
  a.geometry.flip_x = coin(o.p_mirror);
  a.geometry.flip_y = coin(o.p_mirror);
  const double gamma = u(o.min_gamma, o.max_gamma);
  if (coin(o.p_gamma)) a.gamma = gamma;
  const double bright = u(o.min_brightness, o.max_brightness);
  if (coin(o.p_brightness)) a.brightness = bright;
  const double contrast = u(o.min_contrast, o.max_contrast);
  if (coin(o.p_contrast)) a.contrast = contrast;
  const double low = u(o.min_low_res, o.max_low_res);
  if (coin(o.p_low_res)) a.low_res = low;
  const double sigma = u(0.0, o.max_noise_sigma);
  if (coin(o.p_noise)) a.noise_sigma = sigma;
  const double blur = u(o.min_blur_sigma, o.max_blur_sigma);
  if (coin(o.p_blur)) a.blur_sigma = blur;
  a.noise_seed = rng();
  return a;
}

namespace {

void gaussian_blur(std::vector<float>& plane, int h, int w, double sigma) {
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double total = 0.0;
  for (int i = -r; i <= r; ++i) total += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= total;
  std::vector<float> tmp(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * plane[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      plane[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
}

}  // namespace

Sample apply_augmentation(const Sample& sample, const AugmentParams& a) {
  sample.validate();
  const int h = sample.height, w = sample.width;
  Sample out = sample;
  out.image = a.geometry.apply(sample.image, h, w, Interp::bilinear);
  out.labels = a.geometry.apply_labels(sample.labels, h, w);
  auto& img = out.image;

  if (a.noise_sigma > 0.0) {
    std::mt19937_64 rng(a.noise_seed);
    std::normal_distribution<double> n(0.0, a.noise_sigma);
    for (auto& v : img) v = static_cast<float>(v + n(rng));
  }
  if (a.blur_sigma > 0.0) gaussian_blur(img, h, w, a.blur_sigma);
  if (a.brightness != 1.0) {
    for (auto& v : img) v = static_cast<float>(v * a.brightness);
  }
  if (a.contrast != 1.0) {
    const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
    const double mn = *lo, mx = *hi;
    const double m = std::accumulate(img.begin(), img.end(), 0.0) / static_cast<double>(img.size());
    for (auto& v : img) v = static_cast<float>(std::clamp((v - m) * a.contrast + m, mn, mx));
  }
  if (a.low_res > 1.0) {
    const int lh = std::max(1, static_cast<int>(std::lround(h / a.low_res)));
    const int lw = std::max(1, static_cast<int>(std::lround(w / a.low_res)));
    img = resize_bilinear(resize_bilinear(img, h, w, lh, lw), lh, lw, h, w);
  }
  if (a.gamma != 1.0) {
    const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
    const double mn = *lo, range = *hi - *lo;
    if (range > 0.0) {
      for (auto& v : img) v = static_cast<float>(std::pow((v - mn) / range, a.gamma) * range + mn);
    }
  }
  return out;
}

Sample augment(const Sample& sample, std::uint64_t seed, const AugmentOptions& options) {
  return apply_augmentation(sample, draw_augmentation(seed, options));
}

template <typename T>
Tensor<T> flip_planes(const Tensor<T>& x, bool flip_x, bool flip_y) {
  if (x.rank() != 4) throw ShapeError("flip_planes", "expected N x C x H x W");
  const auto planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  const T* src = x.data().data();
  for (std::int64_t p = 0; p < planes; ++p) {
    for (std::int64_t y = 0; y < h; ++y) {
      const auto sy = flip_y ? h - 1 - y : y;
      for (std::int64_t xx = 0; xx < w; ++xx) {
        const auto sx = flip_x ? w - 1 - xx : xx;
        out[static_cast<std::size_t>((p * h + y) * w + xx)] = src[(p * h + sy) * w + sx];
      }
    }
  }
  return Tensor<T>(x.shape(), std::move(out));
}

template <typename T>
Tensor<T> predict_probabilities(const SFBNet<T>& model, const Tensor<T>& image) {
  NoGradGuard no_grad;
  auto logits = model.forward(image, NormMode::eval).front();
  const auto n = logits.dim(0), c = logits.dim(1), hw = logits.dim(2) * logits.dim(3);
  std::vector<T> p(logits.data().begin(), logits.data().end());
  for (std::int64_t b = 0; b < n; ++b) {
    T* base = p.data() + b * c * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      T mx = base[i];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, base[k * hw + i]);
      T total = T(0);
      for (std::int64_t k = 0; k < c; ++k) total += base[k * hw + i] = std::exp(base[k * hw + i] - mx);
      for (std::int64_t k = 0; k < c; ++k) base[k * hw + i] /= total;
    }
  }
  return Tensor<T>(logits.shape(), std::move(p));
}

template <typename T>
Tensor<T> tta_mirror_predict(const SFBNet<T>& model, const Tensor<T>& image) {
  std::vector<T> acc;
  Shape shape;
  for (int f = 0; f < 4; ++f) {
    const bool fx = f & 1, fy = f & 2;
    auto probs = flip_planes(predict_probabilities(model, flip_planes(image, fx, fy)), fx, fy);
    if (acc.empty()) {
      acc.assign(probs.data().begin(), probs.data().end());
      shape = probs.shape();
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += probs.data()[i];
    }
  }
  for (auto& v : acc) v /= T(4);
  return Tensor<T>(std::move(shape), std::move(acc));
}

LabelMap largest_component_filter(const LabelMap& labels) {
  LabelMap out = labels;
  const auto h = labels.height, w = labels.width, hw = h * w;
  std::vector<std::int64_t> parent(static_cast<std::size_t>(hw));
  auto find = [&](std::int64_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::int64_t n = 0; n < labels.batch; ++n) {
    const std::int32_t* v = labels.values.data() + n * hw;
    std::iota(parent.begin(), parent.end(), 0);
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        const auto i = y * w + x;
        if (v[i] <= 0) continue;
        if (x > 0 && v[i - 1] > 0) parent[find(i)] = find(i - 1);
        if (y > 0 && v[i - w] > 0) {
          const auto a = find(i), b = find(i - w);
          // keep the earlier pixel as root so roots follow scan order
          if (a != b) {
            if (a < b) parent[b] = a;
            else parent[a] = b;
          }
        }
      }
    }
    // component size per root; the root is the component's first scan pixel
    std::vector<std::int64_t> size(static_cast<std::size_t>(hw), 0);
    for (std::int64_t i = 0; i < hw; ++i) {
      if (v[i] > 0) ++size[find(i)];
    }
    std::int64_t best = -1;
    for (std::int64_t i = 0; i < hw; ++i) {
      if (size[i] > 0 && (best < 0 || size[i] > size[best])) best = i;
    }
    std::int32_t* o = out.values.data() + n * hw;
    for (std::int64_t i = 0; i < hw; ++i) {
      if (v[i] > 0 && find(i) != best) o[i] = 0;
    }
  }
  return out;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ContractError("stack_images: no samples");
  const int h = samples[0]->height, w = samples[0]->width;
  std::vector<T> data;
  data.reserve(samples.size() * h * w);
  for (const auto* s : samples) {
    if (s->height != h || s->width != w) throw ShapeError("stack_images", "samples differ in size");
    for (float v : s->image) data.push_back(static_cast<T>(v));
  }
  return Tensor<T>({static_cast<std::int64_t>(samples.size()), 1, h, w}, std::move(data));
}

LabelMap stack_labels(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw ContractError("stack_labels: no samples");
  const int h = samples[0]->height, w = samples[0]->width;
  LabelMap out(static_cast<std::int64_t>(samples.size()), h, w);
  out.values.clear();
  for (const auto* s : samples) {
    if (s->height != h || s->width != w) throw ShapeError("stack_labels", "samples differ in size");
    out.values.insert(out.values.end(), s->labels.begin(), s->labels.end());
  }
  return out;
}

void write_rawt(const std::filesystem::path& path, const RawtHeader& header, const void* data,
                std::size_t bytes) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  nlohmann::json j;
  j["dtype"] = header.dtype;
  j["shape"] = header.shape;
  j["spacing"] = {header.spacing_x, header.spacing_y};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  out << j.dump() << '\n';
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!out) throw DataError("write to '" + path.string() + "' failed");
}

namespace {

RawtHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path.string() + "': missing RAWT header");
  RawtHeader h;
  try {
    const auto j = nlohmann::json::parse(line);
    h.dtype = j.at("dtype").get<std::string>();
    h.shape = j.at("shape").get<std::vector<std::int64_t>>();
    if (j.contains("spacing")) {
      const auto sp = j.at("spacing").get<std::vector<double>>();
      if (sp.size() != 2) throw DataError("spacing must have two entries");
      h.spacing_x = sp[0];
      h.spacing_y = sp[1];
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + path.string() + "': bad RAWT header: " + e.what());
  }
  if (h.dtype != "f32" && h.dtype != "i32") {
    throw DataError("'" + path.string() + "': unsupported dtype '" + h.dtype + "'");
  }
  for (auto d : h.shape) {
    if (d <= 0) throw DataError("'" + path.string() + "': non-positive extent in header");
  }
  return h;
}

template <typename V>
std::vector<V> read_blob(const std::filesystem::path& path, const char* dtype, RawtHeader* out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  auto h = parse_header(in, path);
  if (h.dtype != dtype) {
    throw DataError("'" + path.string() + "' holds " + h.dtype + ", expected " + dtype);
  }
  std::vector<V> data(static_cast<std::size_t>(numel(h.shape)));
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(V)));
  if (!in) throw DataError("'" + path.string() + "': blob shorter than header shape");
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError("'" + path.string() + "': trailing bytes after blob");
  }
  if (out != nullptr) *out = h;
  return data;
}

}  // namespace

RawtHeader read_rawt_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return parse_header(in, path);
}

std::vector<float> read_rawt_f32(const std::filesystem::path& path, RawtHeader* header) {
  return read_blob<float>(path, "f32", header);
}

std::vector<std::int32_t> read_rawt_i32(const std::filesystem::path& path, RawtHeader* header) {
  return read_blob<std::int32_t>(path, "i32", header);
}

namespace {

std::string case_name(int index, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "case_%04d.%s.rawt", index, kind);
  return buf;
}

}  // namespace

void save_sample(const std::filesystem::path& dir, int index, const Sample& sample) {
  sample.validate();
  std::filesystem::create_directories(dir);
  RawtHeader img{"f32", {1, sample.height, sample.width}, sample.spacing_x, sample.spacing_y};
  write_rawt(dir / case_name(index, "img"), img, sample.image.data(), sample.image.size() * 4);
  RawtHeader lbl{"i32", {sample.height, sample.width}, sample.spacing_x, sample.spacing_y};
  write_rawt(dir / case_name(index, "lbl"), lbl, sample.labels.data(), sample.labels.size() * 4);
}

Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& label_path) {
  RawtHeader hi, hl;
  auto image = read_rawt_f32(image_path, &hi);
  auto labels = read_rawt_i32(label_path, &hl);
  const auto& s = hi.shape;
  if (!(s.size() == 3 && s[0] == 1) && s.size() != 2) {
    throw DataError("'" + image_path.string() + "': image shape must be [1,H,W] or [H,W]");
  }
  const auto h = s[s.size() - 2], w = s[s.size() - 1];
  if (hl.shape != std::vector<std::int64_t>{h, w}) {
    throw DataError("'" + label_path.string() + "': label shape " + to_string(hl.shape) +
                    " does not match image " + to_string(hi.shape));
  }
  Sample out;
  out.height = static_cast<int>(h);
  out.width = static_cast<int>(w);
  out.image = std::move(image);
  out.labels = std::move(labels);
  out.spacing_x = hi.spacing_x;
  out.spacing_y = hi.spacing_y;
  out.validate();
  return out;
}

std::vector<Sample> load_split(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw DataError("dataset directory '" + dir.string() + "' does not exist");
  }
  static const std::regex pattern(R"(case_(\d{4})\.img\.rawt)");
  std::vector<std::filesystem::path> images;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (std::regex_match(e.path().filename().string(), pattern)) images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  std::vector<Sample> out;
  for (const auto& img : images) {
    auto name = img.filename().string();
    name.replace(name.find(".img."), 5, ".lbl.");
    const auto lbl = img.parent_path() / name;
    if (!std::filesystem::exists(lbl)) throw DataError("missing label file '" + lbl.string() + "'");
    out.push_back(load_sample(img, lbl));
  }
  if (out.empty()) throw DataError("no case_####.img.rawt files in '" + dir.string() + "'");
  return out;
}

#define SFBNET_INSTANTIATE_PIPELINE(T)                                                  \
  template Tensor<T> flip_planes(const Tensor<T>&, bool, bool);                         \
  template Tensor<T> predict_probabilities(const SFBNet<T>&, const Tensor<T>&);         \
  template Tensor<T> tta_mirror_predict(const SFBNet<T>&, const Tensor<T>&);            \
  template Tensor<T> stack_images(const std::vector<const Sample*>&);

SFBNET_INSTANTIATE_PIPELINE(float)
SFBNET_INSTANTIATE_PIPELINE(double)

}  // namespace sfbnet
