#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "nvpf/core/ops.hpp"
#include "nvpf/core/tensor.hpp"

namespace nvpf {

namespace detail {

inline void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw DomainError("grad_check: eps must lie in [1e-7, 1e-3], got " + std::to_string(eps));
}

inline double scalar_value(const Tensor& t) {
  if (t.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  return t.item();
}

}  // namespace detail

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar function of one tensor.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps = 1e-6) {
  detail::check_eps(eps);
  Tensor probe = x.detach();
  probe.set_requires_grad(true);
  Tensor y = f(probe);
  detail::scalar_value(y);
  backward(y);
  const std::vector<double> analytic = probe.has_grad()
                                           ? std::vector<double>(probe.grad().begin(), probe.grad().end())
                                           : std::vector<double>(probe.numel(), 0.0);
  NoGradGuard no_grad;
  double worst = 0.0;
  auto data = probe.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double saved = data[i];
    data[i] = saved + eps;
    const double up = detail::scalar_value(f(probe));
    data[i] = saved - eps;
    const double down = detail::scalar_value(f(probe));
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
  }
  return worst;
}

// Same measure for a loss closing over several parameter tensors, which are
// perturbed in place. When max_coords > 0 at most that many coordinates per
// tensor are probed, chosen by a seeded shuffle.
inline double grad_check_params(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                double eps = 1e-6, std::size_t max_coords = 0,
                                std::uint64_t seed = 0) {
  detail::check_eps(eps);
  for (auto& p : params) p.zero_grad();
  Tensor loss = loss_fn();
  detail::scalar_value(loss);
  backward(loss);
  std::mt19937_64 rng(seed);
  NoGradGuard no_grad;
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                     : std::vector<double>(p.numel(), 0.0);
    std::vector<std::size_t> coords(p.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords > 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    auto data = p.mutable_data();
    for (std::size_t i : coords) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double up = detail::scalar_value(loss_fn());
      data[i] = saved - eps;
      const double down = detail::scalar_value(loss_fn());
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i])));
    }
    p.zero_grad();
  }
  return worst;
}

}  // namespace nvpf
