#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/labels.hpp"
#include "nvpf/core/linear.hpp"
#include "nvpf/core/ops.hpp"
#include "nvpf/core/params.hpp"
#include "nvpf/grouping/grouping.hpp"

namespace nvpf::flow {

enum class FlowInit { identity, random };
enum class Classifier { likelihood, softmax };

struct FlowConfig {
  std::size_t rows = 64;  // M
  std::size_t cols = 8;   // N_max
  std::size_t units = 10;
  std::size_t feature_maps = 32;
  std::size_t res_blocks = 2;
  double scale_bound = 2.0;  // log-scale = bound * tanh(T1(.))
  double prior_mean = 3.0;
  double prior_std = 1.0;
  FlowInit init = FlowInit::identity;
  Classifier classifier = Classifier::likelihood;

  std::size_t cells() const { return rows * cols; }
  void validate() const {
    if (rows == 0 || cols == 0) throw ConfigError("flow: rows and cols must be positive");
    if (units == 0) throw ConfigError("flow: need at least one coupling unit");
    if (feature_maps == 0) throw ConfigError("flow: feature_maps must be positive");
    if (!(scale_bound > 0.0) || !std::isfinite(scale_bound))
      throw ConfigError("flow: scale_bound must be positive");
    if (!(prior_std > 0.0) || !std::isfinite(prior_std) || !std::isfinite(prior_mean))
      throw ConfigError("flow: prior std must be positive and finite");
  }
};

// Two-channel input (masked feature map, validity map) -> one-channel map.
// 3x3 input conv, residual blocks of conv-relu-conv with skip, 3x3 output conv.
struct ConvSubnet {
  struct Block {
    Tensor w1, b1, w2, b2;
  };
  Tensor in_w, in_b;
  std::vector<Block> blocks;
  Tensor out_w, out_b;

  static ConvSubnet make(std::size_t in_ch, std::size_t maps, std::size_t n_blocks, bool zero_out,
                         std::mt19937_64& rng) {
    ConvSubnet n;
    n.in_w = glorot_uniform({3, 3, in_ch, maps}, 9 * in_ch, 9 * maps, rng);
    n.in_b = Tensor::zeros({maps}, true);
    for (std::size_t i = 0; i < n_blocks; ++i)
      n.blocks.push_back({glorot_uniform({3, 3, maps, maps}, 9 * maps, 9 * maps, rng),
                          Tensor::zeros({maps}, true),
                          glorot_uniform({3, 3, maps, maps}, 9 * maps, 9 * maps, rng),
                          Tensor::zeros({maps}, true)});
    n.out_w = zero_out ? Tensor::zeros({3, 3, maps, 1}, true)
                       : glorot_uniform({3, 3, maps, 1}, 9 * maps, 9, rng);
    n.out_b = Tensor::zeros({1}, true);
    return n;
  }

  static Tensor conv_bias(const Tensor& x, const Tensor& w, const Tensor& b) {
    return channel_affine(conv2d(x, w), std::nullopt, b);
  }

  Tensor forward(const Tensor& x) const {
    Tensor h = relu(conv_bias(x, in_w, in_b));
    for (const auto& blk : blocks) {
      const Tensor r = conv_bias(relu(conv_bias(h, blk.w1, blk.b1)), blk.w2, blk.b2);
      h = relu(add(h, r));
    }
    return conv_bias(h, out_w, out_b);
  }

  ParamList parameters(const std::string& prefix) const {
    ParamList out = {{prefix + "in.weight", in_w}, {prefix + "in.bias", in_b}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const std::string p = prefix + "block" + std::to_string(i) + ".";
      out.push_back({p + "conv1.weight", blocks[i].w1});
      out.push_back({p + "conv1.bias", blocks[i].b1});
      out.push_back({p + "conv2.weight", blocks[i].w2});
      out.push_back({p + "conv2.bias", blocks[i].b2});
    }
    out.push_back({prefix + "out.weight", out_w});
    out.push_back({prefix + "out.bias", out_b});
    return out;
  }
};

// b for unit k: ones on the first half of the row-major cells, complemented
// on every other unit.
inline Tensor coupling_mask(std::size_t rows, std::size_t cols, std::size_t unit_index) {
  const std::size_t n = rows * cols;
  std::vector<double> b(n);
  for (std::size_t k = 0; k < n; ++k) {
    const bool first = k < n / 2;
    b[k] = (first != (unit_index % 2 == 1)) ? 1.0 : 0.0;
  }
  return Tensor({rows, cols}, std::move(b));
}

struct CouplingUnit {
  Tensor mask;  // b, constant
  ConvSubnet scale_net;  // T1
  ConvSubnet shift_net;  // T2
  double scale_bound = 2.0;
};

struct CouplingOutput {
  Tensor Y;
  Tensor log_det;  // scalar
};

inline Tensor all_valid(const Shape& shape) { return Tensor::full(shape, 1.0); }

inline Tensor valid_map(std::size_t rows, const std::vector<bool>& mask) {
  std::vector<double> v(rows * mask.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < mask.size(); ++c) v[r * mask.size() + c] = mask[c] ? 1.0 : 0.0;
  return Tensor({rows, mask.size()}, std::move(v));
}

namespace detail {

struct ScaleShift {
  Tensor s, t;
};

// s and t from the conditioning cells only; both vanish on held and padded cells.
inline ScaleShift scale_shift(const Tensor& X, const Tensor& valid, const CouplingUnit& unit) {
  const std::size_t M = X.dim(0), N = X.dim(1);
  const Tensor keep = hadamard(unit.mask, valid);
  std::vector<double> fv(M * N);
  for (std::size_t k = 0; k < fv.size(); ++k) fv[k] = (1.0 - unit.mask[k]) * valid[k];
  const Tensor free_cells({M, N}, std::move(fv));
  const Tensor net_in =
      concat_last({reshape(hadamard(X, keep), {M, N, 1}), reshape(valid, {M, N, 1})});
  const Tensor s =
      hadamard(scale(tanh(reshape(unit.scale_net.forward(net_in), {M, N})), unit.scale_bound), free_cells);
  const Tensor t = hadamard(reshape(unit.shift_net.forward(net_in), {M, N}), free_cells);
  return {s, t};
}

inline void check_input(const Tensor& X, const Tensor& valid, const CouplingUnit& unit) {
  if (X.rank() != 2 || X.shape() != unit.mask.shape() || valid.shape() != X.shape())
    throw ShapeError("coupling: input " + shape_string(X.shape()) + " does not match mask " +
                     shape_string(unit.mask.shape()));
}

}  // namespace detail

// Y = b*S + (1-b)*(S*exp(s) + t), s = bound*tanh(T1(b*S)), t = T2(b*S).
// log_det is the sum of s over transformed cells.
inline CouplingOutput coupling_forward(const Tensor& S, const CouplingUnit& unit,
                                       const std::optional<Tensor>& valid = std::nullopt) {
  const Tensor v = valid ? *valid : all_valid(S.shape());
  detail::check_input(S, v, unit);
  try {
    const auto st = detail::scale_shift(S, v, unit);
    return {add(hadamard(S, exp(st.s)), st.t), sum(st.s)};
  } catch (const DomainError& e) {
    throw DivergenceError(std::string("coupling unit produced a non-finite value: ") + e.what());
  }
}

inline Tensor coupling_inverse(const Tensor& Y, const CouplingUnit& unit,
                               const std::optional<Tensor>& valid = std::nullopt) {
  const Tensor v = valid ? *valid : all_valid(Y.shape());
  detail::check_input(Y, v, unit);
  const auto st = detail::scale_shift(Y, v, unit);
  return hadamard(sub(Y, st.t), exp(neg(st.s)));
}

struct ClassPrior {
  Tensor mean;  // M x N
  Tensor std;   // M x N, positive
};

// +mean on the rows r with r % 3 == c (flattened index when there are fewer
// than three rows), 0 elsewhere; unit std.
inline std::array<ClassPrior, kNumClasses> default_priors(std::size_t rows, std::size_t cols,
                                                          double mean, double stddev) {
  std::array<ClassPrior, kNumClasses> out;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::vector<double> mu(rows * cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t key = rows >= kNumClasses ? r : r * cols + j;
        if (key % kNumClasses == c) mu[r * cols + j] = mean;
      }
    out[c] = {Tensor({rows, cols}, std::move(mu)), Tensor::full({rows, cols}, stddev)};
  }
  return out;
}

struct FusedFeature {
  Tensor H;
  Tensor log_det;  // scalar, sum of unit log-dets
  std::vector<bool> mask;
  std::vector<double> unit_log_dets;
};

class FlowModel {
 public:
  FlowModel(FlowConfig cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const bool zero_out = cfg_.init == FlowInit::identity;
    for (std::size_t k = 0; k < cfg_.units; ++k) {
      CouplingUnit u;
      u.mask = coupling_mask(cfg_.rows, cfg_.cols, k);
      u.scale_net = ConvSubnet::make(2, cfg_.feature_maps, cfg_.res_blocks, zero_out, rng);
      u.shift_net = ConvSubnet::make(2, cfg_.feature_maps, cfg_.res_blocks, zero_out, rng);
      u.scale_bound = cfg_.scale_bound;
      units_.push_back(std::move(u));
    }
    priors_ = default_priors(cfg_.rows, cfg_.cols, cfg_.prior_mean, cfg_.prior_std);
    if (cfg_.classifier == Classifier::softmax) head_ = Linear::glorot(cfg_.cells(), kNumClasses, rng);
  }

  const FlowConfig& config() const { return cfg_; }
  const std::vector<CouplingUnit>& units() const { return units_; }
  const std::array<ClassPrior, kNumClasses>& priors() const { return priors_; }
  const std::optional<Linear>& head() const { return head_; }

  void set_prior(GroupClass c, ClassPrior p) {
    if (p.mean.shape() != Shape{cfg_.rows, cfg_.cols} || p.std.shape() != p.mean.shape())
      throw ShapeError("flow: prior shape must be " + shape_string({cfg_.rows, cfg_.cols}));
    for (double s : p.std.data())
      if (!(s > 0.0) || !std::isfinite(s)) throw DomainError("flow: prior std must be positive");
    priors_[index_of(c)] = std::move(p);
  }

  ParamList parameters() const {
    ParamList out;
    for (std::size_t k = 0; k < units_.size(); ++k) {
      const std::string p = "unit" + std::to_string(k) + ".";
      append_prefixed(out, p, units_[k].scale_net.parameters("t1."));
      append_prefixed(out, p, units_[k].shift_net.parameters("t2."));
    }
    if (head_) append_prefixed(out, "head.", head_->parameters(""));
    return out;
  }

 private:
  FlowConfig cfg_;
  std::vector<CouplingUnit> units_;
  std::array<ClassPrior, kNumClasses> priors_;
  std::optional<Linear> head_;
};

// H = (U_1 o ... o U_K)(S), applied in unit order.
inline FusedFeature flow_forward(const Tensor& S, const std::vector<bool>& mask,
                                 const FlowModel& model) {
  const auto& cfg = model.config();
  if (S.shape() != Shape{cfg.rows, cfg.cols} || mask.size() != cfg.cols)
    throw ShapeError("flow: input " + shape_string(S.shape()) + " does not match model " +
                     shape_string({cfg.rows, cfg.cols}));
  const Tensor valid = valid_map(cfg.rows, mask);
  FusedFeature out;
  out.mask = mask;
  Tensor h = S;
  std::vector<Tensor> dets;
  for (const auto& unit : model.units()) {
    auto step = coupling_forward(h, unit, valid);
    h = step.Y;
    out.unit_log_dets.push_back(step.log_det.item());
    dets.push_back(step.log_det);
  }
  out.H = h;
  out.log_det = add_n(dets);
  return out;
}

inline FusedFeature flow_forward(const grouping::GroupedFeature& g, const FlowModel& model) {
  return flow_forward(g.S, g.mask, model);
}

// Inverse of flow_forward on the valid cells.
inline Tensor flow_inverse(const Tensor& H, const std::vector<bool>& mask, const FlowModel& model) {
  const Tensor valid = valid_map(model.config().rows, mask);
  Tensor s = H;
  for (auto it = model.units().rbegin(); it != model.units().rend(); ++it)
    s = coupling_inverse(s, *it, valid);
  return s;
}

// log N(H; mu_c, diag sigma_c^2) + log_det, over valid cells only.
inline Tensor class_log_likelihood(const FusedFeature& h, GroupClass c, const FlowModel& model) {
  const auto& prior = model.priors()[index_of(c)];
  const std::size_t M = h.H.dim(0), N = h.H.dim(1);
  if (prior.mean.shape() != h.H.shape()) throw ShapeError("flow: prior does not match H");
  std::vector<double> w(M * N);
  double constant = 0.0;
  for (std::size_t r = 0; r < M; ++r)
    for (std::size_t j = 0; j < N; ++j) {
      const std::size_t k = r * N + j;
      if (!h.mask[j]) continue;
      const double s = prior.std[k];
      w[k] = 1.0 / (2.0 * s * s);
      constant += -0.5 * std::log(2.0 * std::numbers::pi) - std::log(s);
    }
  const Tensor quad = sum(hadamard(square(sub(h.H, prior.mean)), Tensor({M, N}, std::move(w))));
  return add(shift(neg(quad), constant), h.log_det);
}

struct LabeledGroup {
  grouping::GroupedFeature group;
  GroupClass label;
};

// Mean negative log-likelihood of each group under its label's prior.
inline Tensor nvpf_loss(std::span<const LabeledGroup> batch, const FlowModel& model) {
  if (batch.empty()) throw DomainError("nvpf_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& item : batch)
    terms.push_back(class_log_likelihood(flow_forward(item.group, model), item.label, model));
  return scale(add_n(terms), -1.0 / static_cast<double>(batch.size()));
}

// Logits of the optional softmax head on flattened H.
inline Tensor head_logits(const FusedFeature& h, const FlowModel& model) {
  if (!model.head()) throw ConfigError("flow: model has no softmax head");
  return model.head()->forward(flatten(h.H));
}

inline Tensor head_loss(std::span<const LabeledGroup> batch, const FlowModel& model) {
  if (batch.empty()) throw DomainError("head_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& item : batch)
    terms.push_back(cross_entropy(head_logits(flow_forward(item.group, model), model), item.label));
  return scale(add_n(terms), 1.0 / static_cast<double>(batch.size()));
}

struct Classification {
  GroupClass label = GroupClass::positive;
  std::array<double, kNumClasses> scores{};  // log-likelihoods, or logits for the softmax head
};

inline Classification classify_fused(const FusedFeature& h, const FlowModel& model,
                                     std::optional<Classifier> mode = std::nullopt) {
  NoGradGuard guard;
  Classification out;
  if (mode.value_or(model.config().classifier) == Classifier::softmax) {
    const Tensor z = head_logits(h, model);
    for (std::size_t c = 0; c < kNumClasses; ++c) out.scores[c] = z[c];
  } else {
    for (auto c : kAllClasses) out.scores[index_of(c)] = class_log_likelihood(h, c, model).item();
  }
  out.label = class_from_index(argmax_index(out.scores));
  return out;
}

inline Classification classify_group(const grouping::GroupedFeature& g, const FlowModel& model,
                                     std::optional<Classifier> mode = std::nullopt) {
  NoGradGuard guard;
  return classify_fused(flow_forward(g, model), model, mode);
}

// ---- config I/O ------------------------------------------------------------

inline nlohmann::json to_json(const FlowConfig& c) {
  return {{"rows", c.rows},
          {"cols", c.cols},
          {"units", c.units},
          {"feature_maps", c.feature_maps},
          {"res_blocks", c.res_blocks},
          {"scale_bound", c.scale_bound},
          {"prior_mean", c.prior_mean},
          {"prior_std", c.prior_std},
          {"init", c.init == FlowInit::identity ? "identity" : "random"},
          {"classifier", c.classifier == Classifier::likelihood ? "likelihood" : "softmax"}};
}

inline FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig base = {}) {
  try {
    FlowConfig c = base;
    c.rows = j.value("rows", c.rows);
    c.cols = j.value("cols", c.cols);
    c.units = j.value("units", c.units);
    c.feature_maps = j.value("feature_maps", c.feature_maps);
    c.res_blocks = j.value("res_blocks", c.res_blocks);
    c.scale_bound = j.value("scale_bound", c.scale_bound);
    c.prior_mean = j.value("prior_mean", c.prior_mean);
    c.prior_std = j.value("prior_std", c.prior_std);
    if (j.contains("init")) {
      const auto s = j.at("init").get<std::string>();
      if (s == "identity") c.init = FlowInit::identity;
      else if (s == "random") c.init = FlowInit::random;
      else throw ConfigError("flow: unknown init '" + s + "'");
    }
    if (j.contains("classifier")) {
      const auto s = j.at("classifier").get<std::string>();
      if (s == "likelihood") c.classifier = Classifier::likelihood;
      else if (s == "softmax") c.classifier = Classifier::softmax;
      else throw ConfigError("flow: unknown classifier '" + s + "'");
    }
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("flow config: ") + e.what());
  }
}

}  // namespace nvpf::flow
