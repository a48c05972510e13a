#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfbnet/model.hpp"

namespace sfbnet {

struct GradcheckOptions {
  double step = 1e-3;        // central-difference h
  double tolerance = 1e-5;   // on the relative error below
  int samples_per_tensor = 12;
  std::uint64_t seed = 0;
};

/// Relative error of one component: max |a - n| / max(max |a|, max |n|, 1e-6)
/// over the sampled entries of each of its tensors, worst tensor reported.
struct GradcheckEntry {
  std::string component;
  double worst_relative_error = 0.0;
  std::int64_t entries_checked = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double tolerance = 0.0;
  double seconds = 0.0;

  bool passed() const;
  double worst() const;
  std::vector<std::string> failures() const;
};

/// Named gradient checks against central finite differences in double
/// precision. Each component supplies the tensors to perturb and a closure
/// that recomputes the scalar loss from them.
class GradcheckSuite {
 public:
  using LossFn = std::function<Tensor<double>()>;

  void add(std::string component, std::vector<Tensor<double>> inputs, LossFn loss);
  std::size_t size() const noexcept { return checks_.size(); }
  std::vector<std::string> components() const;

  GradcheckReport run(const GradcheckOptions& options = {}) const;

 private:
  struct Check {
    std::string component;
    std::vector<Tensor<double>> inputs;
    LossFn loss;
  };
  std::vector<Check> checks_;
};

/// Checks one component immediately.
GradcheckEntry check_gradient(const std::string& component,
                              const std::vector<Tensor<double>>& inputs,
                              const GradcheckSuite::LossFn& loss,
                              const GradcheckOptions& options = {});

/// Per-op checks (engine, attention, SFB and losses) plus an end-to-end check
/// of `config` built in double precision, with one component per
/// parameterised layer and one for the input image.
GradcheckSuite default_gradcheck_suite(const ModelConfig& config, std::uint64_t seed = 0);

/// Moves the parameters away from their special initial values: the gate
/// conv gets a He-uniform draw (a zero gate conv makes batch-norm normalise a
/// constant map), gammas U(0.5, 1.5), betas, biases and bias tables
/// U(-0.5, 0.5). Other weights keep their initialisation.
void randomize_parameters(ParameterRegistry<double>& registry, std::uint64_t seed);

}  // namespace sfbnet
