#include "sfbnet/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <memory>
#include <numeric>
#include <random>

#include "sfbnet/loss.hpp"

namespace sfbnet {

bool GradcheckReport::passed() const {
  return !entries.empty() &&
         std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.passed; });
}

double GradcheckReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.worst_relative_error);
  return w;
}

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (!e.passed) out.push_back(e.component);
  }
  return out;
}

GradcheckEntry check_gradient(const std::string& component,
                              const std::vector<Tensor<double>>& inputs,
                              const GradcheckSuite::LossFn& loss,
                              const GradcheckOptions& options) {
  std::vector<Tensor<double>> xs = inputs;
  for (auto& x : xs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  {
    auto l = loss();
    if (l.numel() != 1) throw ContractError("gradcheck '" + component + "': loss is not scalar");
    l.backward();
  }
  std::mt19937_64 rng(options.seed ^ std::hash<std::string>{}(component));
  GradcheckEntry entry;
  entry.component = component;
  const double h = options.step;
  for (auto& x : xs) {
    const auto n = x.numel();
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(options.samples_per_tensor)));
    double max_a = 0.0, max_n = 0.0, max_diff = 0.0;
    auto values = x.mutable_data();
    const auto grad = x.grad();
    for (auto i : idx) {
      const double analytic = grad.empty() ? 0.0 : grad[i];
      const double saved = values[i];
      double plus = 0.0, minus = 0.0;
      {
        NoGradGuard no_grad;
        values[i] = saved + h;
        plus = loss().item();
        values[i] = saved - h;
        minus = loss().item();
        values[i] = saved;
      }
      const double numeric = (plus - minus) / (2.0 * h);
      max_a = std::max(max_a, std::abs(analytic));
      max_n = std::max(max_n, std::abs(numeric));
      max_diff = std::max(max_diff, std::abs(analytic - numeric));
    }
    const double rel = max_diff / std::max({max_a, max_n, 1e-6});
    if (!std::isfinite(rel)) {
      entry.worst_relative_error = INFINITY;
    } else {
      entry.worst_relative_error = std::max(entry.worst_relative_error, rel);
    }
    entry.entries_checked += static_cast<std::int64_t>(idx.size());
  }
  entry.passed = entry.worst_relative_error < options.tolerance;
  return entry;
}

void GradcheckSuite::add(std::string component, std::vector<Tensor<double>> inputs, LossFn loss) {
  for (const auto& c : checks_) {
    if (c.component == component) {
      throw ConfigError("gradcheck component '" + component + "' registered twice");
    }
  }
  checks_.push_back({std::move(component), std::move(inputs), std::move(loss)});
}

std::vector<std::string> GradcheckSuite::components() const {
  std::vector<std::string> out;
  for (const auto& c : checks_) out.push_back(c.component);
  return out;
}

GradcheckReport GradcheckSuite::run(const GradcheckOptions& options) const {
  const auto start = std::chrono::steady_clock::now();
  GradcheckReport report;
  report.tolerance = options.tolerance;
  for (const auto& c : checks_) {
    report.entries.push_back(check_gradient(c.component, c.inputs, c.loss, options));
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

void randomize_parameters(ParameterRegistry<double>& registry, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto fill = [&](Tensor<double> t, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.mutable_data()) v = u(rng);
  };
  auto ends_with = [](const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  for (const auto& p : registry.parameters()) {
    const auto& n = p.name;
    if (ends_with(n, "gate_conv.weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(p.tensor.dim(1)));
      fill(p.tensor, -bound, bound);
    } else if (ends_with(n, ".gamma")) {
      fill(p.tensor, 0.5, 1.5);
    } else if (ends_with(n, ".beta") || ends_with(n, ".bias") || ends_with(n, ".table")) {
      fill(p.tensor, -0.5, 0.5);
    }
  }
}

namespace {

using TD = Tensor<double>;

struct Random {
  std::mt19937_64 rng;
  explicit Random(std::uint64_t seed) : rng(seed) {}
  TD tensor(Shape shape, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = u(rng);
    return TD(std::move(shape), std::move(v), true);
  }
  LabelMap labels(std::int64_t n, std::int64_t h, std::int64_t w, int classes) {
    LabelMap m(n, h, w);
    std::uniform_int_distribution<int> u(0, classes - 1);
    for (auto& v : m.values) v = u(rng);
    return m;
  }
};

// sum(out * r) for a fixed random r: every output entry matters.
TD project(const TD& out, std::uint64_t seed) {
  Random r(seed);
  return sum(mul(out, r.tensor(out.shape()).detach()));
}

std::string layer_of(const std::string& parameter) {
  const auto dot = parameter.rfind('.');
  return dot == std::string::npos ? parameter : parameter.substr(0, dot);
}

void add_op_checks(GradcheckSuite& suite, std::uint64_t seed) {
  Random r(seed);
  auto reg = std::make_shared<ParameterRegistry<double>>();
  auto rng = std::make_shared<std::mt19937_64>(seed + 1);
  LayerFactory<double> f(*reg, *rng);

  {
    auto x = r.tensor({2, 3, 6, 6}), w = r.tensor({4, 3, 3, 3}), b = r.tensor({4});
    suite.add("op.conv2d", {x, w, b}, [=] { return project(conv2d(x, w, b, 2, 1), 11); });
  }
  {
    auto x = r.tensor({2, 3, 3, 3}), w = r.tensor({3, 2, 2, 2}), b = r.tensor({2});
    suite.add("op.conv_transpose2d", {x, w, b},
              [=] { return project(conv_transpose2d(x, w, b, 2), 12); });
  }
  {
    auto x = r.tensor({3, 2, 3, 3}), g = r.tensor({2}, 0.5, 1.5), b = r.tensor({2});
    suite.add("op.batch_norm2d", {x, g, b}, [=] {
      RunningStats<double> stats{{0.0, 0.0}, {1.0, 1.0}};
      return project(batch_norm2d(x, g, b, NormMode::train, &stats), 13);
    });
  }
  {
    auto x = r.tensor({4, 5}), g = r.tensor({5}, 0.5, 1.5), b = r.tensor({5});
    suite.add("op.layer_norm", {x, g, b}, [=] { return project(layer_norm_lastdim(x, g, b), 14); });
  }
  {
    auto x = r.tensor({3, 5}, -3.0, 3.0);
    suite.add("op.gelu", {x}, [=] { return project(gelu(x), 15); });
    suite.add("op.sigmoid", {x}, [=] { return project(sigmoid(x), 16); });
    suite.add("op.softmax", {x}, [=] { return project(softmax_lastdim(x), 17); });
  }
  {
    auto x = r.tensor({2, 3, 4}), w = r.tensor({5, 4}), b = r.tensor({5});
    suite.add("op.linear", {x, w, b}, [=] { return project(linear(x, w, b), 18); });
  }
  {
    auto a = r.tensor({2, 4, 3}), b = r.tensor({2, 5, 4});
    suite.add("op.bmm", {a, b}, [=] { return project(bmm(a, b, true, true), 19); });
  }
  {
    auto a = r.tensor({2, 3, 2, 2}), b = r.tensor({1, 3, 1, 1}), c = r.tensor({2, 1, 2, 2});
    suite.add("op.elementwise", {a, b, c}, [=] {
      auto y = sub(mul(add(a, b), c), scale(a, 0.5));
      auto z = permute(reshape(concat_channels(y, a), {2, 6, 4}), {2, 0, 1});
      return add(project(z, 20), mean(mul(a, a)));
    });
  }

  {
    auto proj = std::make_shared<AttentionProjections<double>>(f, "w_mhsa", 4, 4, 4);
    auto bias = std::make_shared<RelPosBias<double>>(f, "w_mhsa.rel_bias", 2, 4);
    auto q = r.tensor({1, 4, 6, 6}), k = r.tensor({1, 4, 6, 6}), v = r.tensor({1, 4, 6, 6});
    const auto layout = WindowLayout::make(6, 6, 4, false);
    suite.add("attention.w_mhsa",
              {q, k, v, proj->q.weight, proj->k.weight, proj->v.weight, proj->v.bias, bias->table},
              [=] { return project(w_mhsa(q, k, v, *proj, 2, layout, *bias), 21); });
    auto q2 = r.tensor({1, 4, 8, 8}), k2 = r.tensor({1, 4, 8, 8}), v2 = r.tensor({1, 4, 8, 8});
    suite.add("attention.sw_mhsa", {q2, k2, v2, bias->table},
              [=] { return project(sw_mhsa(q2, k2, v2, *proj, 2, 4, *bias), 22); });
  }
  {
    auto layer = std::make_shared<BottleneckTransformer<double>>(f, "transformer", 8, 4, 2, 2);
    auto x = r.tensor({2, 8, 2, 2});
    suite.add("attention.bottleneck_transformer",
              {x, layer->pos_emb, layer->q.weight, layer->out.weight, layer->fc1.weight,
               layer->norm_mlp.gamma},
              [=] { return project((*layer)(x), 23); });
  }
  {
    auto block = std::make_shared<SwinFilteringBlock<double>>(f, "sfb", 4, 2, 4);
    auto enc = r.tensor({2, 4, 8, 8}), dec = r.tensor({2, 4, 8, 8});
    suite.add("sfb.apply", {enc, dec, block->gate_conv.weight, block->window_stage.proj.v.weight,
                            block->shifted_stage.proj.q.weight, block->shifted_stage.bias.table},
              [=] { return project((*block)(enc, dec, NormMode::train), 24); });
  }
  randomize_parameters(*reg, seed + 2);

  {
    auto logits = r.tensor({2, 4, 4, 4}, -2.0, 2.0);
    const auto labels = r.labels(2, 4, 4, 4);
    suite.add("loss.cross_entropy", {logits}, [=] { return cross_entropy_loss(logits, labels); });
    suite.add("loss.soft_dice", {logits}, [=] { return soft_dice_loss(logits, labels); });
  }
}

void add_model_checks(GradcheckSuite& suite, const ModelConfig& config, std::uint64_t seed) {
  auto model = std::make_shared<SFBNet<double>>(config);
  randomize_parameters(model->registry(), seed + 3);
  Random r(seed + 4);
  const std::int64_t batch = 2;
  auto image = r.tensor({batch, config.in_channels, config.height, config.width});
  const auto pyramid = label_pyramid(r.labels(batch, config.height, config.width, config.classes),
                                     config.downsamples);
  const auto weights = SupervisionWeights::halving(config.downsamples);
  auto loss = [model, image, pyramid, weights] {
    return deep_supervision_loss(model->forward(image, NormMode::eval), pyramid, weights);
  };

  std::vector<std::string> order;
  std::map<std::string, std::vector<TD>> layers;
  for (const auto& p : model->registry().parameters()) {
    const auto layer = layer_of(p.name);
    if (!layers.count(layer)) order.push_back(layer);
    layers[layer].push_back(p.tensor);
  }
  suite.add("model.input", {image}, loss);
  for (const auto& layer : order) suite.add("model." + layer, layers[layer], loss);
}

}  // namespace

GradcheckSuite default_gradcheck_suite(const ModelConfig& config, std::uint64_t seed) {
  GradcheckSuite suite;
  add_op_checks(suite, seed);
  add_model_checks(suite, config, seed);
  return suite;
}

}  // namespace sfbnet
