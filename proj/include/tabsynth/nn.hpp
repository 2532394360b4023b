#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include <json.hpp>

#include "tabsynth/autodiff.hpp"

namespace tabsynth::nn {

using ad::Var;

/// Fully connected layer; weight is in x out, bias 1 x out.
struct Linear {
  Var weight;
  Var bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);

  Var operator()(const Var& x) const;
  std::vector<Var> parameters() const { return {weight, bias}; }
  std::size_t in_features() const { return static_cast<std::size_t>(weight.rows()); }
  std::size_t out_features() const { return static_cast<std::size_t>(weight.cols()); }
};

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Var> params, AdamOptions options);

  /// One update from explicit gradients (one per parameter, same shapes).
  void step(const std::vector<Matrix>& grads);
  /// One update from the leaves' accumulated grad(); grads are cleared afterwards.
  void step();
  void zero_grad();

  const std::vector<Var>& parameters() const { return params_; }

 private:
  std::vector<Var> params_;
  AdamOptions opt_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

std::size_t parameter_count(const std::vector<Var>& params);
/// Concatenates matrices into one flat vector (row-major order).
Vector flatten(const std::vector<Matrix>& grads);
/// Inverse of flatten using the parameter shapes.
std::vector<Matrix> unflatten(const Vector& flat, const std::vector<Var>& params);
std::vector<Matrix> values_of(const std::vector<Var>& vars);

nlohmann::json parameters_to_json(const std::vector<Var>& params);
void parameters_from_json(const nlohmann::json& j, std::vector<Var>& params);

}  // namespace tabsynth::nn
