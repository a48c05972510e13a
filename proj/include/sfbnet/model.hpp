#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sfbnet/sfb.hpp"

namespace sfbnet {

enum class Precision { f32, f64 };

/// Full architectural description of an SFB-net.
struct ModelConfig {
  int height = 224;
  int width = 224;
  int in_channels = 1;
  int classes = 4;
  int base_channels = 64;
  int max_channels = 512;
  int downsamples = 3;
  int window = 7;
  std::vector<int> sfb_heads{2, 4, 8};  // shallowest skip first
  int bottleneck_heads = 16;
  int mlp_ratio = 4;
  int encoder_blocks = 2;
  int decoder_blocks = 1;
  bool use_sfb = true;
  bool use_bottleneck_transformer = true;
  SecondStage sfb_second_stage = SecondStage::cross;
  Precision precision = Precision::f32;
  std::uint64_t seed = 0;

  /// 224 x 224 profile with 512 filters at the bottleneck.
  static ModelConfig paper();
  /// 32 x 32, base 8, M = 4.
  static ModelConfig tiny();
  /// Profile used by gradient checks (8 x 8, base 4, M = 2).
  static ModelConfig gradcheck();

  /// Throws ConfigError when the configuration cannot be built.
  void validate() const;

  int channels(int level) const;
  int level_height(int level) const { return height >> level; }
  int level_width(int level) const { return width >> level; }
};

std::string variant_name(const ModelConfig& config);
/// Applies a named ablation ("full", "no_sfb", "no_trans") to a config.
ModelConfig with_variant(ModelConfig config, const std::string& variant);

/// SFB-net: a U-Net whose encoder stages carry twice as many conv blocks as
/// the decoder stages, strided-conv downsampling, transposed-conv upsampling,
/// a transformer layer at the bottleneck and Swin Filtering Blocks gating
/// every skip connection. Deep-supervision heads emit logits at full, half and
/// quarter resolution.
template <typename T>
class SFBNet {
 public:
  explicit SFBNet(ModelConfig config);
  SFBNet(const SFBNet&) = delete;
  SFBNet& operator=(const SFBNet&) = delete;

  /// Logits per decoder level, finest first: {H, W}, {H/2, W/2}, {H/4, W/4}.
  std::vector<Tensor<T>> forward(const Tensor<T>& image) const {
    return forward(image, norm_mode());
  }
  std::vector<Tensor<T>> forward(const Tensor<T>& image, NormMode mode) const;

  void set_training(bool training) noexcept { training_ = training; }
  bool training() const noexcept { return training_; }
  NormMode norm_mode() const noexcept { return training_ ? NormMode::train : NormMode::eval; }

  /// Replaces every SFB gate by w = 1 (plain skip connections).
  void set_force_unit_gate(bool flag) noexcept { force_unit_gate_ = flag; }

  const ModelConfig& config() const noexcept { return config_; }
  ParameterRegistry<T>& registry() noexcept { return registry_; }
  const ParameterRegistry<T>& registry() const noexcept { return registry_; }

  struct EncoderStage {
    std::vector<ConvBlock<T>> blocks;
  };
  struct DecoderStage {
    ConvTranspose2d<T> up;
    std::unique_ptr<SwinFilteringBlock<T>> sfb;  // null when SFBs are disabled
    std::vector<ConvBlock<T>> blocks;
    Conv2d<T> head;
  };

  std::vector<EncoderStage> encoder;                   // index = level
  std::unique_ptr<BottleneckTransformer<T>> transformer;
  std::unique_ptr<ConvBlock<T>> bottleneck_block;      // "no trans" replacement
  std::vector<DecoderStage> decoder;                   // index = level

 private:
  ModelConfig config_;
  ParameterRegistry<T> registry_;
  std::mt19937_64 rng_;
  bool training_ = true;
  bool force_unit_gate_ = false;
};

template <typename T>
std::unique_ptr<SFBNet<T>> build_model(const ModelConfig& config) {
  return std::make_unique<SFBNet<T>>(config);
}

/// Exact number of learnable scalars.
template <typename T>
std::int64_t count_parameters(const SFBNet<T>& model);

/// Analytic forward FLOPs, summed over the ops of one forward pass.
template <typename T>
double count_flops(const SFBNet<T>& model, int batch = 1);

struct ThroughputOptions {
  int repeats = 100;
  int warmup = 1;
  std::size_t memory_budget_bytes = std::size_t{2} << 30;
  int max_batch = 256;
};

struct ThroughputResult {
  double images_per_second = 0.0;
  int batch = 0;
  double seconds = 0.0;
};

/// Inference throughput at the largest batch whose estimated working set
/// fits the memory budget, averaged over `repeats` timed passes.
template <typename T>
ThroughputResult measure_throughput(SFBNet<T>& model, const ThroughputOptions& options = {});

struct CostReport {
  std::string variant;
  std::int64_t parameters = 0;
  double flops = 0.0;  // batch 1
  double images_per_second = 0.0;
  int batch = 0;

  double gflops() const noexcept { return flops / 1e9; }
};

/// Checkpoint: "SFBN", u32 version, u32 entry count, then per entry
/// {u32 name length, name, u32 rank, u64 extents..., u64 byte offset}, then
/// the little-endian float32 blob. Parameters and batch-norm running
/// statistics are both stored.
template <typename T>
void save_checkpoint(const SFBNet<T>& model, const std::string& path);

/// Throws ConfigError when names or shapes do not match the model.
template <typename T>
void load_checkpoint(SFBNet<T>& model, const std::string& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace sfbnet
