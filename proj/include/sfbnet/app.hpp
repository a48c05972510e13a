#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sfbnet/gradcheck.hpp"
#include "sfbnet/model.hpp"
#include "sfbnet/pipeline.hpp"

namespace sfbnet {

struct TrainSettings {
  double lr = 1e-4;
  double min_lr = 0.0;
  double weight_decay = 1e-4;
  int epochs = 1;
  int iterations_per_epoch = 250;
  int batch = 10;
  bool augment = true;
};

struct BenchSettings {
  std::vector<std::string> variants{"full", "no_sfb", "no_trans"};
  int repeats = 100;
  int warmup = 1;
  double memory_budget_mib = 2048.0;
  int max_batch = 256;
};

/// Everything a command needs. Serialised as JSON; unknown keys are errors.
struct RunConfig {
  std::string profile = "tiny";
  ModelConfig model = ModelConfig::tiny();
  TrainSettings train;
  std::string train_dir = "data/train";
  std::string val_dir = "data/val";
  std::string output_dir = "runs/tiny";
  std::uint64_t seed = 0;
  BenchSettings bench;
  GradcheckOptions gradcheck;

  /// "tiny": 32 x 32 desk-scale run (the default). "paper": 224 x 224, 1000
  /// epochs of 250 iterations at batch 10; not meant to run on a CPU.
  /// "gradcheck": the 8 x 8 double-precision model used by gradient checks.
  static RunConfig preset(const std::string& profile);

  /// Throws ConfigError (epochs >= 1, batch >= 1, lr > 0, ...).
  void validate() const;

  std::string to_json(int indent = 2) const;
  /// Starts from the preset named by "profile" (default "tiny") and applies
  /// the keys present in `text`.
  static RunConfig from_json(const std::string& text);
};

/// `key` is a dotted path ("train.lr", "model.window"); `value` is parsed as
/// JSON, falling back to a plain string.
void apply_override(RunConfig& config, const std::string& key_value);

/// Reads `path` (empty: the tiny preset), applies `overrides` in order, then
/// SFBNET_SEED when `use_env` is set, then validates.
RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides = {},
                          bool use_env = true);

struct EpochMetrics {
  int epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;       // mean training loss over the epoch
  double lr = 0.0;         // at the last step of the epoch
  double rv = 0.0, myo = 0.0, lv = 0.0;
  double mean_dice = 0.0;  // eval-mode Dice on the training set
  double seconds = 0.0;
};

struct TrainSummary {
  std::vector<EpochMetrics> epochs;
  std::vector<double> losses;  // per step
  std::filesystem::path checkpoint;
  double seconds = 0.0;
};

/// AdamW with cosine annealing over epochs * iterations_per_epoch steps.
/// Batches are drawn uniformly with replacement. Writes model.sfbn,
/// metrics.jsonl and config.json into output_dir (skipped when output_dir is
/// empty). Throws NumericalError on a non-finite loss, DataError on samples
/// that do not match the model extents.
TrainSummary run_train(const RunConfig& config, const std::vector<Sample>& samples,
                       std::ostream* log = nullptr);
/// Loads config.train_dir.
TrainSummary run_train(const RunConfig& config, std::ostream* log = nullptr);

struct EvalOptions {
  bool tta = false;
  bool postprocess = false;
};

struct DiceReport {
  double rv = 0.0, myo = 0.0, lv = 0.0;
  double mean_dice = 0.0;
  std::int64_t n_images = 0;

  std::string to_json(int indent = -1) const;
};

/// Per-class Dice averaged over images, then over the three classes.
DiceReport evaluate_predictions(const std::vector<LabelMap>& predicted,
                                const std::vector<LabelMap>& truth);

template <typename T>
std::vector<LabelMap> predict_labels(const SFBNet<T>& model, const std::vector<Sample>& samples,
                                     const EvalOptions& options);

DiceReport run_eval(const RunConfig& config, const std::string& checkpoint,
                    const std::vector<Sample>& samples, const EvalOptions& options);
/// Loads config.val_dir.
DiceReport run_eval(const RunConfig& config, const std::string& checkpoint,
                    const EvalOptions& options);

/// default_gradcheck_suite on config.model (converted to double precision).
GradcheckReport run_gradcheck(const RunConfig& config);

/// Parameters, forward FLOPs at batch 1 and measured throughput per variant.
std::vector<CostReport> run_bench(const RunConfig& config, std::ostream* log = nullptr);
std::string format_cost_table(const std::vector<CostReport>& rows);
std::string cost_json(const std::vector<CostReport>& rows, int indent = -1);

/// Writes `count` random phantoms sized to the model into `dir`.
void generate_phantom_split(const std::filesystem::path& dir, int count, int height, int width,
                            std::uint64_t seed);
std::vector<Sample> phantom_set(int count, int height, int width, std::uint64_t seed);

}  // namespace sfbnet
