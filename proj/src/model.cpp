#include "sfbnet/model.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

#include "sfbnet/instrument.hpp"

namespace sfbnet {

ModelConfig ModelConfig::paper() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.height = 32;
  c.width = 32;
  c.base_channels = 8;
  c.window = 4;
  return c;
}

ModelConfig ModelConfig::gradcheck() {
  ModelConfig c;
  c.height = 8;
  c.width = 8;
  c.base_channels = 4;
  c.window = 2;
  c.precision = Precision::f64;
  return c;
}

int ModelConfig::channels(int level) const {
  std::int64_t c = base_channels;
  for (int i = 0; i < level; ++i) c *= 2;
  return static_cast<int>(std::min<std::int64_t>(c, max_channels));
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (height <= 0 || width <= 0) fail("input size must be positive");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (classes < 2) fail("classes must be >= 2");
  if (base_channels < 1 || max_channels < base_channels) fail("bad channel widths");
  if (downsamples < 1 || downsamples > 8) fail("downsamples must be in [1, 8]");
  const int factor = 1 << downsamples;
  if (height % factor != 0 || width % factor != 0) {
    fail("input " + std::to_string(height) + "x" + std::to_string(width) +
         " is not divisible by " + std::to_string(factor));
  }
  if (window < 1) fail("window must be >= 1");
  if (encoder_blocks < 1 || decoder_blocks < 1) fail("block counts must be >= 1");
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (use_sfb) {
    if (static_cast<int>(sfb_heads.size()) != downsamples) {
      fail("sfb_heads needs one entry per decoder level (" + std::to_string(downsamples) + ")");
    }
    for (int l = 0; l < downsamples; ++l) {
      if (sfb_heads[l] < 1 || channels(l) % sfb_heads[l] != 0) {
        fail("sfb_heads[" + std::to_string(l) + "] = " + std::to_string(sfb_heads[l]) +
             " does not divide " + std::to_string(channels(l)) + " channels");
      }
    }
  }
  if (use_bottleneck_transformer) {
    const int c = channels(downsamples);
    if (bottleneck_heads < 1 || c % bottleneck_heads != 0) {
      fail("bottleneck_heads = " + std::to_string(bottleneck_heads) + " does not divide " +
           std::to_string(c) + " channels");
    }
  }
}

std::string variant_name(const ModelConfig& config) {
  if (config.use_sfb && config.use_bottleneck_transformer) return "full";
  if (!config.use_sfb && config.use_bottleneck_transformer) return "no_sfb";
  if (config.use_sfb && !config.use_bottleneck_transformer) return "no_trans";
  return "no_sfb_no_trans";
}

ModelConfig with_variant(ModelConfig config, const std::string& variant) {
  if (variant == "full") {
    config.use_sfb = true;
    config.use_bottleneck_transformer = true;
  } else if (variant == "no_sfb") {
    config.use_sfb = false;
    config.use_bottleneck_transformer = true;
  } else if (variant == "no_trans") {
    config.use_sfb = true;
    config.use_bottleneck_transformer = false;
  } else {
    throw ConfigError("unknown variant '" + variant + "' (expected full, no_sfb or no_trans)");
  }
  return config;
}

template <typename T>
SFBNet<T>::SFBNet(ModelConfig config) : config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  LayerFactory<T> f(registry_, rng_);
  const int depth = config_.downsamples;

  encoder.resize(static_cast<std::size_t>(depth) + 1);
  int in = config_.in_channels;
  for (int l = 0; l <= depth; ++l) {
    const int c = config_.channels(l);
    for (int b = 0; b < config_.encoder_blocks; ++b) {
      const std::string name = "enc" + std::to_string(l) + ".block" + std::to_string(b);
      const int stride = (l > 0 && b == 0) ? 2 : 1;
      encoder[l].blocks.emplace_back(f, name, b == 0 ? in : c, c, stride);
    }
    in = c;
  }

  const int cb = config_.channels(depth);
  if (config_.use_bottleneck_transformer) {
    const int tokens = config_.level_height(depth) * config_.level_width(depth);
    transformer = std::make_unique<BottleneckTransformer<T>>(
        f, "bottleneck.transformer", cb, tokens, config_.bottleneck_heads, config_.mlp_ratio);
  } else {
    bottleneck_block = std::make_unique<ConvBlock<T>>(f, "bottleneck.block", cb, cb);
  }

  decoder.resize(static_cast<std::size_t>(depth));
  for (int l = depth - 1; l >= 0; --l) {
    const int c = config_.channels(l);
    const std::string prefix = "dec" + std::to_string(l);
    auto& stage = decoder[l];
    stage.up = ConvTranspose2d<T>(f, prefix + ".up", config_.channels(l + 1), c, 2, 2);
    if (config_.use_sfb) {
      stage.sfb = std::make_unique<SwinFilteringBlock<T>>(f, prefix + ".sfb", c, config_.sfb_heads[l],
                                                          config_.window, config_.sfb_second_stage);
    }
    for (int b = 0; b < config_.decoder_blocks; ++b) {
      stage.blocks.emplace_back(f, prefix + ".block" + std::to_string(b), b == 0 ? 2 * c : c, c);
    }
    stage.head = Conv2d<T>(f, prefix + ".head", c, config_.classes, 1, 1, 0);
  }
}

template <typename T>
std::vector<Tensor<T>> SFBNet<T>::forward(const Tensor<T>& image, NormMode mode) const {
  if (image.rank() != 4 || image.dim(1) != config_.in_channels ||
      image.dim(2) != config_.height || image.dim(3) != config_.width) {
    throw ShapeError("forward", "expected N x " + std::to_string(config_.in_channels) + " x " +
                                    std::to_string(config_.height) + " x " +
                                    std::to_string(config_.width) + ", got " +
                                    to_string(image.shape()));
  }
  const int depth = config_.downsamples;
  std::vector<Tensor<T>> skips;
  auto x = image;
  for (int l = 0; l <= depth; ++l) {
    for (const auto& block : encoder[l].blocks) x = block(x, mode);
    if (l < depth) skips.push_back(x);
  }
  x = transformer ? (*transformer)(x) : (*bottleneck_block)(x, mode);

  std::vector<Tensor<T>> outputs(static_cast<std::size_t>(depth));
  for (int l = depth - 1; l >= 0; --l) {
    const auto& stage = decoder[l];
    auto up = stage.up(x);
    auto skip = stage.sfb ? (*stage.sfb)(skips[l], up, mode, nullptr, force_unit_gate_) : skips[l];
    x = concat_channels(skip, up);
    for (const auto& block : stage.blocks) x = block(x, mode);
    outputs[l] = stage.head(x);
  }
  return outputs;
}

template <typename T>
std::int64_t count_parameters(const SFBNet<T>& model) {
  std::int64_t n = 0;
  for (const auto& p : model.registry().parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
double count_flops(const SFBNet<T>& model, int batch) {
  const auto& c = model.config();
  NoGradGuard no_grad;
  auto image = Tensor<T>::zeros({batch, c.in_channels, c.height, c.width});
  FlopCounter counter;
  model.forward(image, NormMode::eval);
  return counter.total();
}

namespace {

template <typename T>
std::size_t peak_forward_bytes(const SFBNet<T>& model, int batch) {
  const auto& c = model.config();
  NoGradGuard no_grad;
  auto image = Tensor<T>::zeros({batch, c.in_channels, c.height, c.width});
  memory::reset_peak();
  const std::size_t base = memory::live_bytes();
  model.forward(image, NormMode::eval);
  return memory::peak_bytes() - base;
}

}  // namespace

template <typename T>
ThroughputResult measure_throughput(SFBNet<T>& model, const ThroughputOptions& options) {
  if (options.repeats < 1) throw ConfigError("throughput: repeats must be >= 1");
  const auto& c = model.config();
  const std::size_t one = peak_forward_bytes(model, 1);
  const std::size_t two = peak_forward_bytes(model, 2);
  const std::size_t per_image = std::max<std::size_t>(two > one ? two - one : one, 1);
  const std::size_t fixed = one > per_image ? one - per_image : 0;
  int batch = 1;
  if (options.memory_budget_bytes > fixed) {
    batch = static_cast<int>((options.memory_budget_bytes - fixed) / per_image);
  }
  batch = std::clamp(batch, 1, std::max(1, options.max_batch));

  NoGradGuard no_grad;
  std::vector<T> values(static_cast<std::size_t>(batch) * c.in_channels * c.height * c.width);
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> dist;
  for (auto& v : values) v = static_cast<T>(dist(rng));
  Tensor<T> image({batch, c.in_channels, c.height, c.width}, std::move(values));

  for (int i = 0; i < options.warmup; ++i) model.forward(image, NormMode::eval);
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < options.repeats; ++i) model.forward(image, NormMode::eval);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  ThroughputResult r;
  r.batch = batch;
  r.seconds = seconds;
  r.images_per_second = static_cast<double>(batch) * options.repeats / seconds;
  return r;
}

namespace {

struct Entry {
  std::string name;
  Shape shape;
  std::uint64_t offset = 0;
};

template <typename Int>
void put(std::ostream& out, Int v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename Int>
Int get(std::istream& in, const std::string& path) {
  Int v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw DataError("checkpoint '" + path + "': truncated header");
  return v;
}

// Parameters followed by batch-norm buffers, in registration order.
template <typename T>
struct Slot {
  std::string name;
  Shape shape;
  T* data;
};

template <typename T>
std::vector<Slot<T>> slots(const SFBNet<T>& model) {
  std::vector<Slot<T>> out;
  for (const auto& p : model.registry().parameters()) {
    auto t = p.tensor;
    out.push_back({p.name, t.shape(), t.mutable_data().data()});
  }
  for (const auto& b : model.registry().buffers()) {
    auto& v = b.values();
    out.push_back({b.name, Shape{static_cast<std::int64_t>(v.size())}, v.data()});
  }
  return out;
}

}  // namespace

template <typename T>
void save_checkpoint(const SFBNet<T>& model, const std::string& path) {
  const auto entries = slots(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write("SFBN", 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  std::uint64_t offset = 0;
  for (const auto& e : entries) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) put<std::uint64_t>(out, static_cast<std::uint64_t>(d));
    put<std::uint64_t>(out, offset);
    offset += static_cast<std::uint64_t>(numel(e.shape)) * sizeof(float);
  }
  for (const auto& e : entries) {
    const auto n = static_cast<std::size_t>(numel(e.shape));
    std::vector<float> blob(n);
    for (std::size_t i = 0; i < n; ++i) blob[i] = static_cast<float>(e.data[i]);
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(n * sizeof(float)));
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

template <typename T>
void load_checkpoint(SFBNet<T>& model, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SFBN", 4) != 0) {
    throw DataError("'" + path + "' is not an SFBN checkpoint");
  }
  const auto version = get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint '" + path + "' has unsupported version " + std::to_string(version));
  }
  const auto count = get<std::uint32_t>(in, path);
  std::vector<Entry> manifest(count);
  for (auto& e : manifest) {
    const auto len = get<std::uint32_t>(in, path);
    if (len > 4096) throw DataError("checkpoint '" + path + "': corrupt entry name");
    e.name.resize(len);
    in.read(e.name.data(), len);
    const auto rank = get<std::uint32_t>(in, path);
    if (rank > 8) throw DataError("checkpoint '" + path + "': corrupt rank");
    for (std::uint32_t r = 0; r < rank; ++r) {
      e.shape.push_back(static_cast<std::int64_t>(get<std::uint64_t>(in, path)));
    }
    e.offset = get<std::uint64_t>(in, path);
  }
  const auto blob_start = static_cast<std::uint64_t>(in.tellg());

  auto targets = slots(model);
  std::map<std::string, const Entry*> by_name;
  for (const auto& e : manifest) by_name[e.name] = &e;
  if (by_name.size() != targets.size()) {
    throw ConfigError("checkpoint '" + path + "' holds " + std::to_string(by_name.size()) +
                      " tensors, model expects " + std::to_string(targets.size()));
  }
  for (const auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint '" + path + "' lacks tensor '" + t.name + "'");
    }
    if (it->second->shape != t.shape) {
      throw ConfigError("checkpoint tensor '" + t.name + "' has shape " +
                        to_string(it->second->shape) + ", model expects " + to_string(t.shape));
    }
  }
  for (auto& t : targets) {
    const auto* e = by_name.at(t.name);
    const auto n = static_cast<std::size_t>(numel(t.shape));
    std::vector<float> blob(n);
    in.seekg(static_cast<std::streamoff>(blob_start + e->offset));
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw DataError("checkpoint '" + path + "': truncated data for '" + t.name + "'");
    for (std::size_t i = 0; i < n; ++i) t.data[i] = static_cast<T>(blob[i]);
  }
}

#define SFBNET_INSTANTIATE(T)                                                            \
  template class SFBNet<T>;                                                              \
  template std::int64_t count_parameters(const SFBNet<T>&);                              \
  template double count_flops(const SFBNet<T>&, int);                                    \
  template ThroughputResult measure_throughput(SFBNet<T>&, const ThroughputOptions&);    \
  template void save_checkpoint(const SFBNet<T>&, const std::string&);                   \
  template void load_checkpoint(SFBNet<T>&, const std::string&);

SFBNET_INSTANTIATE(float)
SFBNET_INSTANTIATE(double)

}  // namespace sfbnet
