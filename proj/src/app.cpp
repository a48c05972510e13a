#include "sfbnet/app.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "sfbnet/loss.hpp"
#include "sfbnet/optim.hpp"

namespace sfbnet {

using nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json model_to_json(const ModelConfig& m) {
  return {
      {"height", m.height},
      {"width", m.width},
      {"in_channels", m.in_channels},
      {"classes", m.classes},
      {"base_channels", m.base_channels},
      {"max_channels", m.max_channels},
      {"downsamples", m.downsamples},
      {"window", m.window},
      {"sfb_heads", m.sfb_heads},
      {"bottleneck_heads", m.bottleneck_heads},
      {"mlp_ratio", m.mlp_ratio},
      {"encoder_blocks", m.encoder_blocks},
      {"decoder_blocks", m.decoder_blocks},
      {"use_sfb", m.use_sfb},
      {"use_bottleneck_transformer", m.use_bottleneck_transformer},
      {"sfb_second_stage", m.sfb_second_stage == SecondStage::cross ? "cross" : "self"},
      {"precision", m.precision == Precision::f32 ? "f32" : "f64"},
  };
}

json config_to_json(const RunConfig& c) {
  return {
      {"profile", c.profile},
      {"seed", c.seed},
      {"model", model_to_json(c.model)},
      {"train",
       {{"lr", c.train.lr},
        {"min_lr", c.train.min_lr},
        {"weight_decay", c.train.weight_decay},
        {"epochs", c.train.epochs},
        {"iterations_per_epoch", c.train.iterations_per_epoch},
        {"batch", c.train.batch},
        {"augment", c.train.augment}}},
      {"data", {{"train_dir", c.train_dir}, {"val_dir", c.val_dir}}},
      {"output_dir", c.output_dir},
      {"bench",
       {{"variants", c.bench.variants},
        {"repeats", c.bench.repeats},
        {"warmup", c.bench.warmup},
        {"memory_budget_mib", c.bench.memory_budget_mib},
        {"max_batch", c.bench.max_batch}}},
      {"gradcheck",
       {{"step", c.gradcheck.step},
        {"tolerance", c.gradcheck.tolerance},
        {"samples_per_tensor", c.gradcheck.samples_per_tensor}}},
  };
}

// Copies the keys of `patch` into `base`, refusing keys `base` lacks.
void merge_known(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string path = where.empty() ? it.key() : where + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("config: unknown key '" + path + "'");
    auto& slot = base[it.key()];
    if (slot.is_object()) {
      merge_known(slot, it.value(), path);
    } else {
      slot = it.value();
    }
  }
}

template <typename V>
V get(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config: '" + where + key + "' has the wrong type");
  }
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  c.profile = get<std::string>(j, "profile", "");
  c.seed = get<std::uint64_t>(j, "seed", "");
  const auto& m = j.at("model");
  c.model.height = get<int>(m, "height", "model.");
  c.model.width = get<int>(m, "width", "model.");
  c.model.in_channels = get<int>(m, "in_channels", "model.");
  c.model.classes = get<int>(m, "classes", "model.");
  c.model.base_channels = get<int>(m, "base_channels", "model.");
  c.model.max_channels = get<int>(m, "max_channels", "model.");
  c.model.downsamples = get<int>(m, "downsamples", "model.");
  c.model.window = get<int>(m, "window", "model.");
  c.model.sfb_heads = get<std::vector<int>>(m, "sfb_heads", "model.");
  c.model.bottleneck_heads = get<int>(m, "bottleneck_heads", "model.");
  c.model.mlp_ratio = get<int>(m, "mlp_ratio", "model.");
  c.model.encoder_blocks = get<int>(m, "encoder_blocks", "model.");
  c.model.decoder_blocks = get<int>(m, "decoder_blocks", "model.");
  c.model.use_sfb = get<bool>(m, "use_sfb", "model.");
  c.model.use_bottleneck_transformer = get<bool>(m, "use_bottleneck_transformer", "model.");
  const auto second = get<std::string>(m, "sfb_second_stage", "model.");
  if (second != "cross" && second != "self") {
    throw ConfigError("config: model.sfb_second_stage must be \"cross\" or \"self\"");
  }
  c.model.sfb_second_stage = second == "cross" ? SecondStage::cross : SecondStage::self;
  const auto precision = get<std::string>(m, "precision", "model.");
  if (precision != "f32" && precision != "f64") {
    throw ConfigError("config: model.precision must be \"f32\" or \"f64\"");
  }
  c.model.precision = precision == "f32" ? Precision::f32 : Precision::f64;
  c.model.seed = c.seed;

  const auto& t = j.at("train");
  c.train.lr = get<double>(t, "lr", "train.");
  c.train.min_lr = get<double>(t, "min_lr", "train.");
  c.train.weight_decay = get<double>(t, "weight_decay", "train.");
  c.train.epochs = get<int>(t, "epochs", "train.");
  c.train.iterations_per_epoch = get<int>(t, "iterations_per_epoch", "train.");
  c.train.batch = get<int>(t, "batch", "train.");
  c.train.augment = get<bool>(t, "augment", "train.");

  c.train_dir = get<std::string>(j.at("data"), "train_dir", "data.");
  c.val_dir = get<std::string>(j.at("data"), "val_dir", "data.");
  c.output_dir = get<std::string>(j, "output_dir", "");

  const auto& b = j.at("bench");
  c.bench.variants = get<std::vector<std::string>>(b, "variants", "bench.");
  c.bench.repeats = get<int>(b, "repeats", "bench.");
  c.bench.warmup = get<int>(b, "warmup", "bench.");
  c.bench.memory_budget_mib = get<double>(b, "memory_budget_mib", "bench.");
  c.bench.max_batch = get<int>(b, "max_batch", "bench.");

  const auto& g = j.at("gradcheck");
  c.gradcheck.step = get<double>(g, "step", "gradcheck.");
  c.gradcheck.tolerance = get<double>(g, "tolerance", "gradcheck.");
  c.gradcheck.samples_per_tensor = get<int>(g, "samples_per_tensor", "gradcheck.");
  c.gradcheck.seed = c.seed;
  return c;
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

RunConfig RunConfig::preset(const std::string& profile) {
  RunConfig c;
  c.profile = profile;
  if (profile == "tiny") {
    c.model = ModelConfig::tiny();
    c.train.lr = 1e-3;
    c.train.min_lr = 1e-5;
    c.train.epochs = 8;
    c.train.iterations_per_epoch = 250;
    c.train.batch = 8;
    c.train.augment = false;
    c.output_dir = "runs/tiny";
  } else if (profile == "paper") {
    c.model = ModelConfig::paper();
    c.train.lr = 1e-4;
    c.train.epochs = 1000;
    c.train.iterations_per_epoch = 250;
    c.train.batch = 10;
    c.train.augment = true;
    c.output_dir = "runs/paper";
  } else if (profile == "gradcheck") {
    c.model = ModelConfig::gradcheck();
    c.train.epochs = 1;
    c.train.iterations_per_epoch = 10;
    c.train.batch = 2;
    c.train.augment = false;
    c.output_dir = "runs/gradcheck";
  } else {
    throw ConfigError("unknown profile '" + profile + "' (expected tiny, paper or gradcheck)");
  }
  c.model.seed = c.seed;
  c.gradcheck.seed = c.seed;
  return c;
}

void RunConfig::validate() const {
  model.validate();
  if (model.in_channels != 1) throw ConfigError("model.in_channels must be 1 for single-channel samples");
  if (model.classes != kTissueClasses) {
    throw ConfigError("model.classes must be " + std::to_string(kTissueClasses) +
                      " (background, RV, MYO, LV)");
  }
  if (train.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train.iterations_per_epoch < 1) throw ConfigError("train.iterations_per_epoch must be >= 1");
  if (train.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(train.lr > 0.0) || !std::isfinite(train.lr)) throw ConfigError("train.lr must be > 0");
  if (!(train.min_lr >= 0.0) || train.min_lr > train.lr) {
    throw ConfigError("train.min_lr must lie in [0, train.lr]");
  }
  if (!(train.weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (bench.variants.empty()) throw ConfigError("bench.variants is empty");
  for (const auto& v : bench.variants) with_variant(model, v);
  if (bench.repeats < 1) throw ConfigError("bench.repeats must be >= 1");
  if (bench.warmup < 0) throw ConfigError("bench.warmup must be >= 0");
  if (!(bench.memory_budget_mib > 0.0)) throw ConfigError("bench.memory_budget_mib must be > 0");
  if (bench.max_batch < 1) throw ConfigError("bench.max_batch must be >= 1");
  if (!(gradcheck.step > 0.0)) throw ConfigError("gradcheck.step must be > 0");
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be > 0");
  if (gradcheck.samples_per_tensor < 1) throw ConfigError("gradcheck.samples_per_tensor must be >= 1");
}

std::string RunConfig::to_json(int indent) const { return config_to_json(*this).dump(indent); }

RunConfig RunConfig::from_json(const std::string& text) {
  const json patch = parse_json(text, "config");
  if (!patch.is_object()) throw ConfigError("config: top level must be an object");
  const std::string profile = patch.contains("profile") && patch["profile"].is_string()
                                  ? patch["profile"].get<std::string>()
                                  : "tiny";
  json merged = config_to_json(preset(profile));
  merge_known(merged, patch, "");
  return config_from_json(merged);
}

void apply_override(RunConfig& config, const std::string& key_value) {
  const auto eq = key_value.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + key_value + "' is not key=value");
  }
  const std::string key = key_value.substr(0, eq);
  const std::string text = key_value.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json patch = value;
  std::string rest = key;
  // build {"a": {"b": value}} from "a.b" right to left
  for (auto dot = rest.rfind('.'); ; dot = rest.rfind('.')) {
    const std::string leaf = dot == std::string::npos ? rest : rest.substr(dot + 1);
    if (leaf.empty()) throw ConfigError("override key '" + key + "' is malformed");
    patch = json{{leaf, patch}};
    if (dot == std::string::npos) break;
    rest.resize(dot);
  }
  json merged = config_to_json(config);
  merge_known(merged, patch, "");
  config = config_from_json(merged);
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides,
                          bool use_env) {
  RunConfig config = RunConfig::preset("tiny");
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read config '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    config = RunConfig::from_json(buffer.str());
  }
  for (const auto& o : overrides) apply_override(config, o);
  if (use_env) {
    if (const char* env = std::getenv("SFBNET_SEED"); env != nullptr && *env != '\0') {
      char* end = nullptr;
      errno = 0;
      const unsigned long long v = std::strtoull(env, &end, 10);
      if (errno != 0 || *end != '\0' || env[0] == '-') {
        throw ConfigError(std::string("SFBNET_SEED='") + env + "' is not an unsigned integer");
      }
      config.seed = v;
      config.model.seed = v;
      config.gradcheck.seed = v;
    }
  }
  config.validate();
  return config;
}

// ---- training ----

namespace {

void check_extents(const RunConfig& config, const std::vector<Sample>& samples) {
  if (samples.empty()) throw DataError("no samples");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].validate();
    if (samples[i].height != config.model.height || samples[i].width != config.model.width) {
      throw DataError("sample " + std::to_string(i) + " is " + std::to_string(samples[i].height) +
                      "x" + std::to_string(samples[i].width) + ", model expects " +
                      std::to_string(config.model.height) + "x" +
                      std::to_string(config.model.width));
    }
    for (auto v : samples[i].labels) {
      if (v < 0 || v >= config.model.classes) {
        throw DataError("sample " + std::to_string(i) + " has label " + std::to_string(v));
      }
    }
  }
}

std::vector<LabelMap> truth_of(const std::vector<Sample>& samples) {
  std::vector<LabelMap> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(stack_labels({&s}));
  return out;
}

template <typename T>
TrainSummary train_impl(const RunConfig& config, const std::vector<Sample>& samples,
                        std::ostream* log) {
  const auto t0 = std::chrono::steady_clock::now();
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  auto model = build_model<T>(mc);
  AdamWOptions opt_options;
  opt_options.lr = config.train.lr;
  opt_options.weight_decay = config.train.weight_decay;
  AdamW<T> optimizer(model->registry(), opt_options);

  const int stages = mc.downsamples;
  const auto weights = SupervisionWeights::halving(stages);
  const std::int64_t total =
      static_cast<std::int64_t>(config.train.epochs) * config.train.iterations_per_epoch;
  const auto truth = truth_of(samples);

  std::filesystem::path out_dir(config.output_dir);
  std::ofstream metrics;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "config.json") << config.to_json() << "\n";
    metrics.open(out_dir / "metrics.jsonl");
    if (!metrics) throw DataError("cannot write " + (out_dir / "metrics.jsonl").string());
  }

  std::mt19937_64 rng(mix(config.seed, 0x7261696EULL));
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);

  TrainSummary summary;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < config.train.epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    double loss_sum = 0.0, lr = config.train.lr;
    model->set_training(true);
    for (int it = 0; it < config.train.iterations_per_epoch; ++it, ++step) {
      lr = cosine_lr(config.train.lr, config.train.min_lr, step, total);
      std::vector<Sample> batch;
      batch.reserve(config.train.batch);
      for (int b = 0; b < config.train.batch; ++b) {
        const auto& s = samples[pick(rng)];
        batch.push_back(config.train.augment
                            ? augment(s, mix(config.seed, static_cast<std::uint64_t>(step) * 1024 + b))
                            : s);
      }
      std::vector<const Sample*> ptrs;
      for (const auto& s : batch) ptrs.push_back(&s);
      const auto image = stack_images<T>(ptrs);
      const auto labels = stack_labels(ptrs);

      auto outputs = model->forward(image);
      auto loss = deep_supervision_loss(outputs, label_pyramid(labels, stages), weights);
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                             std::to_string(epoch) + ")");
      }
      model->registry().zero_grad();
      loss.backward();
      optimizer.step(lr);
      summary.losses.push_back(value);
      loss_sum += value;
    }

    model->set_training(false);
    const auto report = evaluate_predictions(predict_labels(*model, samples, {}), truth);
    EpochMetrics m;
    m.epoch = epoch;
    m.step = step;
    m.loss = loss_sum / config.train.iterations_per_epoch;
    m.lr = lr;
    m.rv = report.rv;
    m.myo = report.myo;
    m.lv = report.lv;
    m.mean_dice = report.mean_dice;
    m.seconds = seconds_since(e0);
    summary.epochs.push_back(m);

    const json line = {{"epoch", m.epoch},
                       {"step", m.step},
                       {"loss", m.loss},
                       {"lr", m.lr},
                       {"dice", {{"RV", m.rv}, {"MYO", m.myo}, {"LV", m.lv}}},
                       {"mean_dice", m.mean_dice},
                       {"seconds", m.seconds}};
    if (metrics.is_open()) metrics << line.dump() << "\n" << std::flush;
    if (log) *log << line.dump() << "\n" << std::flush;
  }

  if (!config.output_dir.empty()) {
    summary.checkpoint = out_dir / "model.sfbn";
    save_checkpoint(*model, summary.checkpoint.string());
  }
  summary.seconds = seconds_since(t0);
  return summary;
}

}  // namespace

TrainSummary run_train(const RunConfig& config, const std::vector<Sample>& samples,
                       std::ostream* log) {
  config.validate();
  check_extents(config, samples);
  if (config.model.precision == Precision::f64) return train_impl<double>(config, samples, log);
  return train_impl<float>(config, samples, log);
}

TrainSummary run_train(const RunConfig& config, std::ostream* log) {
  return run_train(config, load_split(config.train_dir), log);
}

// ---- evaluation ----

std::string DiceReport::to_json(int indent) const {
  const json j = {{"per_class_dice", {{"RV", rv}, {"MYO", myo}, {"LV", lv}}},
                  {"mean_dice", mean_dice},
                  {"n_images", n_images}};
  return j.dump(indent);
}

DiceReport evaluate_predictions(const std::vector<LabelMap>& predicted,
                                const std::vector<LabelMap>& truth) {
  if (predicted.size() != truth.size()) {
    throw ContractError("evaluate_predictions: " + std::to_string(predicted.size()) +
                        " predictions for " + std::to_string(truth.size()) + " label maps");
  }
  DiceReport r;
  r.n_images = static_cast<std::int64_t>(truth.size());
  if (truth.empty()) return r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    r.rv += dice_score(predicted[i], truth[i], rv);
    r.myo += dice_score(predicted[i], truth[i], myo);
    r.lv += dice_score(predicted[i], truth[i], lv);
  }
  const double n = static_cast<double>(truth.size());
  r.rv /= n;
  r.myo /= n;
  r.lv /= n;
  r.mean_dice = (r.rv + r.myo + r.lv) / 3.0;
  return r;
}

template <typename T>
std::vector<LabelMap> predict_labels(const SFBNet<T>& model, const std::vector<Sample>& samples,
                                     const EvalOptions& options) {
  constexpr std::size_t kChunk = 8;
  std::vector<LabelMap> out;
  out.reserve(samples.size());
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(samples.size(), begin + kChunk);
    std::vector<const Sample*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&samples[i]);
    const auto image = stack_images<T>(ptrs);
    const auto probs = options.tta ? tta_mirror_predict(model, image)
                                   : predict_probabilities(model, image);
    auto labels = argmax_labels(probs);
    if (options.postprocess) labels = largest_component_filter(labels);
    const std::int64_t plane = labels.pixels();
    for (std::int64_t n = 0; n < labels.batch; ++n) {
      LabelMap one(1, labels.height, labels.width);
      std::copy(labels.values.begin() + n * plane, labels.values.begin() + (n + 1) * plane,
                one.values.begin());
      out.push_back(std::move(one));
    }
  }
  return out;
}

template std::vector<LabelMap> predict_labels(const SFBNet<float>&, const std::vector<Sample>&,
                                              const EvalOptions&);
template std::vector<LabelMap> predict_labels(const SFBNet<double>&, const std::vector<Sample>&,
                                              const EvalOptions&);

namespace {

template <typename T>
DiceReport eval_impl(const RunConfig& config, const std::string& checkpoint,
                     const std::vector<Sample>& samples, const EvalOptions& options) {
  ModelConfig mc = config.model;
  mc.seed = config.seed;
  auto model = build_model<T>(mc);
  load_checkpoint(*model, checkpoint);
  model->set_training(false);
  return evaluate_predictions(predict_labels(*model, samples, options), truth_of(samples));
}

}  // namespace

DiceReport run_eval(const RunConfig& config, const std::string& checkpoint,
                    const std::vector<Sample>& samples, const EvalOptions& options) {
  config.validate();
  check_extents(config, samples);
  if (config.model.precision == Precision::f64) {
    return eval_impl<double>(config, checkpoint, samples, options);
  }
  return eval_impl<float>(config, checkpoint, samples, options);
}

DiceReport run_eval(const RunConfig& config, const std::string& checkpoint,
                    const EvalOptions& options) {
  return run_eval(config, checkpoint, load_split(config.val_dir), options);
}

// ---- gradcheck / bench ----

GradcheckReport run_gradcheck(const RunConfig& config) {
  config.validate();
  ModelConfig mc = config.model;
  mc.precision = Precision::f64;
  mc.seed = config.seed;
  auto suite = default_gradcheck_suite(mc, config.seed);
  GradcheckOptions options = config.gradcheck;
  options.seed = config.seed;
  return suite.run(options);
}

namespace {

json row_json(const CostReport& r) {
  return {{"variant", r.variant},
          {"params", r.parameters},
          {"gflops", r.gflops()},
          {"images_per_second", r.images_per_second},
          {"batch", r.batch}};
}

template <typename T>
CostReport bench_one(const ModelConfig& mc, const BenchSettings& bench) {
  auto model = build_model<T>(mc);
  CostReport row;
  row.variant = variant_name(mc);
  row.parameters = count_parameters(*model);
  row.flops = count_flops(*model, 1);
  ThroughputOptions t;
  t.repeats = bench.repeats;
  t.warmup = bench.warmup;
  t.memory_budget_bytes = static_cast<std::size_t>(bench.memory_budget_mib * 1024.0 * 1024.0);
  t.max_batch = bench.max_batch;
  const auto result = measure_throughput(*model, t);
  row.images_per_second = result.images_per_second;
  row.batch = result.batch;
  return row;
}

}  // namespace

std::vector<CostReport> run_bench(const RunConfig& config, std::ostream* log) {
  config.validate();
  std::vector<CostReport> rows;
  for (const auto& variant : config.bench.variants) {
    ModelConfig mc = with_variant(config.model, variant);
    mc.seed = config.seed;
    rows.push_back(mc.precision == Precision::f64 ? bench_one<double>(mc, config.bench)
                                                  : bench_one<float>(mc, config.bench));
    if (log) *log << row_json(rows.back()).dump() << "\n" << std::flush;
  }
  return rows;
}

std::string format_cost_table(const std::vector<CostReport>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %14s %10s %12s %6s\n", "variant", "params", "Gflops",
                "images/s", "batch");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%-10s %14lld %10.3f %12.3f %6d\n", r.variant.c_str(),
                  static_cast<long long>(r.parameters), r.gflops(), r.images_per_second, r.batch);
    out += line;
  }
  return out;
}

std::string cost_json(const std::vector<CostReport>& rows, int indent) {
  json arr = json::array();
  for (const auto& r : rows) arr.push_back(row_json(r));
  return arr.dump(indent);
}

// ---- data ----

std::vector<Sample> phantom_set(int count, int height, int width, std::uint64_t seed) {
  if (count < 1) throw ConfigError("phantom count must be >= 1");
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    out.push_back(generate_phantom(PhantomSpec::random(mix(seed, i), height, width)));
  }
  return out;
}

void generate_phantom_split(const std::filesystem::path& dir, int count, int height, int width,
                            std::uint64_t seed) {
  const auto samples = phantom_set(count, height, width, seed);
  std::filesystem::create_directories(dir);
  for (int i = 0; i < count; ++i) save_sample(dir, i, samples[i]);
}

}  // namespace sfbnet
