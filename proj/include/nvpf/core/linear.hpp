#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "nvpf/core/labels.hpp"
#include "nvpf/core/ops.hpp"
#include "nvpf/core/params.hpp"

namespace nvpf {

// Dense layer y = W x + b on a vector input.
struct Linear {
  Tensor weight;  // [out, in]
  Tensor bias;    // [out]

  static Linear glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
    return {glorot_uniform({out, in}, in, out, rng), Tensor::zeros({out}, true)};
  }
  static Linear zeros(std::size_t in, std::size_t out) {
    return {Tensor::zeros({out, in}, true), Tensor::zeros({out}, true)};
  }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  Tensor forward(const Tensor& x) const {
    if (x.rank() != 1 || x.dim(0) != in_features())
      throw ShapeError("linear: expected [" + std::to_string(in_features()) + "] input, got " +
                       shape_string(x.shape()));
    return add(matvec(weight, x), bias);
  }

  ParamList parameters(const std::string& prefix) const {
    return {{prefix + "weight", weight}, {prefix + "bias", bias}};
  }
};

// -log softmax(logits)[label]
inline Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  return neg(select(log_softmax(logits), label));
}

inline Tensor cross_entropy(const Tensor& logits, GroupClass label) {
  return cross_entropy(logits, index_of(label));
}

}  // namespace nvpf
