#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nvpf/core/tensor.hpp"

namespace nvpf {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered handles onto a model's trainable tensors. Writing through a handle
// updates the model.
using ParamList = std::vector<NamedTensor>;

inline void append_prefixed(ParamList& out, const std::string& prefix, const ParamList& in) {
  for (const auto& p : in) out.push_back({prefix + p.name, p.tensor});
}

inline std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

inline std::size_t count_scalars(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

// Glorot-uniform in [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))].
inline Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

inline Tensor uniform_tensor(Shape shape, double lo, double hi, std::mt19937_64& rng,
                             bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng,
                            bool requires_grad = false) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

}  // namespace nvpf
