#pragma once

#include <cmath>
#include <vector>

#include "nvpf/core/errors.hpp"
#include "nvpf/core/params.hpp"

namespace nvpf::harness {

struct AdamConfig {
  double lr = 0.1;
  double beta1 = 0.9;  // the published "momentum"
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("adam: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam: betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam: eps must be positive");
  }
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  // One update from the gradients currently stored on the parameters.
  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      if (!p.has_grad()) continue;
      const auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        w[i] -= cfg_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace nvpf::harness
