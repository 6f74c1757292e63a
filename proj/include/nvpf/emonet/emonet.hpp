#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/ops.hpp"
#include "nvpf/core/params.hpp"

namespace nvpf::emonet {

// Plain or depthwise convolution, optionally followed by a per-channel affine
// (stand-in for batch norm) and ReLU.
struct ConvSpec {
  int kernel = 3;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  bool depthwise = false;
  bool bias = false;
  bool affine = true;
  bool relu = true;
};

// B(x) = B3(B2(B1(x))): 1x1 expand to t*c with ReLU, 3x3 depthwise at stride
// s with ReLU, 1x1 linear projection to c1. Residual blocks add x back.
struct BottleneckConfig {
  int expansion_factor = 2;
  int stride = 1;
  int in_channels = 1;
  int out_channels = 1;
  bool residual = false;

  void validate() const {
    if (expansion_factor <= 0 || in_channels <= 0 || out_channels <= 0)
      throw ConfigError("bottleneck: expansion and channel counts must be positive");
    if (stride != 1 && stride != 2) throw ConfigError("bottleneck: stride must be 1 or 2");
    if (residual != (stride == 1))
      throw ConfigError("bottleneck: residual blocks use stride 1 and only they do");
    if (residual && in_channels != out_channels)
      throw ConfigError("bottleneck: residual block needs in_channels == out_channels");
  }
  int expanded() const { return expansion_factor * in_channels; }
};

// Per-channel fully connected layer over the whole spatial extent
// (h x w x c -> 1 x 1 x c), followed by affine + ReLU.
struct SpatialFcSpec {
  int channels = 1;
};

struct DenseFcSpec {
  int in_features = 1;
  int out_features = 1;
  bool relu = false;
};

using LayerSpec = std::variant<ConvSpec, BottleneckConfig, SpatialFcSpec, DenseFcSpec>;

struct EmoNetConfig {
  std::array<int, 3> input_size{112, 112, 3};  // h, w, channels
  std::vector<LayerSpec> layers;
  int feature_dim = 64;
  // Optional face-category head on top of the feature (0 disables it).
  int num_classes = 0;
};

// ---- shape bookkeeping -----------------------------------------------------

inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  const auto fail = [&](const std::string& why) {
    throw ConfigError("emonet: layer expects " + why + " but receives " + shape_string(in));
  };
  const auto strided = [](std::size_t n, int s) {
    return (n + static_cast<std::size_t>(s) - 1) / static_cast<std::size_t>(s);
  };
  if (const auto* c = std::get_if<ConvSpec>(&layer)) {
    if (in.size() != 3 || in[2] != static_cast<std::size_t>(c->in_channels))
      fail(std::to_string(c->in_channels) + " channels");
    if (c->depthwise && c->in_channels != c->out_channels)
      throw ConfigError("emonet: depthwise conv must keep the channel count");
    return {strided(in[0], c->stride), strided(in[1], c->stride),
            static_cast<std::size_t>(c->out_channels)};
  }
  if (const auto* b = std::get_if<BottleneckConfig>(&layer)) {
    b->validate();
    if (in.size() != 3 || in[2] != static_cast<std::size_t>(b->in_channels))
      fail(std::to_string(b->in_channels) + " channels");
    return {strided(in[0], b->stride), strided(in[1], b->stride),
            static_cast<std::size_t>(b->out_channels)};
  }
  if (const auto* f = std::get_if<SpatialFcSpec>(&layer)) {
    if (in.size() != 3 || in[2] != static_cast<std::size_t>(f->channels))
      fail(std::to_string(f->channels) + " channels");
    return {1, 1, static_cast<std::size_t>(f->channels)};
  }
  const auto& d = std::get<DenseFcSpec>(layer);
  if (shape_numel(in) != static_cast<std::size_t>(d.in_features))
    fail(std::to_string(d.in_features) + " features");
  return {static_cast<std::size_t>(d.out_features)};
}

// Input shape of every layer followed by the network output shape.
inline std::vector<Shape> shape_chain(const EmoNetConfig& cfg) {
  std::vector<Shape> chain;
  Shape cur = {static_cast<std::size_t>(cfg.input_size[0]),
               static_cast<std::size_t>(cfg.input_size[1]),
               static_cast<std::size_t>(cfg.input_size[2])};
  for (const auto& layer : cfg.layers) {
    chain.push_back(cur);
    cur = layer_output_shape(layer, cur);
  }
  chain.push_back(cur);
  if (cur.size() != 1 || cur[0] != static_cast<std::size_t>(cfg.feature_dim))
    throw ConfigError("emonet: network ends in " + shape_string(cur) + ", expected [" +
                      std::to_string(cfg.feature_dim) + "]");
  return chain;
}

namespace detail {

inline std::size_t conv_params(const ConvSpec& c) {
  const std::size_t k2 = static_cast<std::size_t>(c.kernel * c.kernel);
  std::size_t n = c.depthwise ? k2 * c.in_channels : k2 * c.in_channels * c.out_channels;
  if (c.bias) n += c.out_channels;
  if (c.affine) n += 2 * static_cast<std::size_t>(c.out_channels);
  return n;
}

inline std::array<ConvSpec, 3> bottleneck_parts(const BottleneckConfig& b) {
  const int tc = b.expanded();
  return {ConvSpec{1, 1, b.in_channels, tc, false, false, true, true},
          ConvSpec{3, b.stride, tc, tc, true, false, true, true},
          ConvSpec{1, 1, tc, b.out_channels, false, false, true, false}};
}

}  // namespace detail

// Exact trainable scalar count for a configuration.
inline std::size_t param_count(const EmoNetConfig& cfg) {
  const auto chain = shape_chain(cfg);
  std::size_t n = 0;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& layer = cfg.layers[i];
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      n += detail::conv_params(*c);
    } else if (const auto* b = std::get_if<BottleneckConfig>(&layer)) {
      for (const auto& part : detail::bottleneck_parts(*b)) n += detail::conv_params(part);
    } else if (const auto* f = std::get_if<SpatialFcSpec>(&layer)) {
      n += chain[i][0] * chain[i][1] * static_cast<std::size_t>(f->channels) +
           2 * static_cast<std::size_t>(f->channels);
    } else {
      const auto& d = std::get<DenseFcSpec>(layer);
      n += static_cast<std::size_t>(d.in_features + 1) * static_cast<std::size_t>(d.out_features);
    }
  }
  if (cfg.num_classes > 0)
    n += static_cast<std::size_t>(cfg.feature_dim + 1) * static_cast<std::size_t>(cfg.num_classes);
  return n;
}

// ---- reference configurations ---------------------------------------------

// The face feature extractor at full scale: 112x112x3 input. Each row's 1x1
// expansion width is taken from the table, so t = 2 except for the repeated
// blocks of the 28x28 row (128 -> 128). Only the first block of a repeated
// row is strided.
inline EmoNetConfig paper_config(int feature_dim = 64) {
  EmoNetConfig cfg;
  cfg.input_size = {112, 112, 3};
  cfg.feature_dim = feature_dim;
  auto& L = cfg.layers;
  L.push_back(ConvSpec{3, 2, 3, 64, false, false, true, true});
  L.push_back(ConvSpec{3, 1, 64, 64, true, false, true, true});
  const auto row = [&](int repeats, int stride, int cin, int width, int cout) {
    L.push_back(BottleneckConfig{width / cin, stride, cin, cout, stride == 1});
    for (int r = 1; r < repeats; ++r) L.push_back(BottleneckConfig{width / cout, 1, cout, cout, true});
  };
  row(2, 2, 64, 128, 64);
  row(4, 2, 64, 128, 128);
  row(2, 1, 128, 256, 128);
  row(4, 2, 128, 256, 128);
  row(2, 1, 128, 256, 128);
  L.push_back(ConvSpec{1, 1, 128, 512, false, false, true, true});
  L.push_back(SpatialFcSpec{512});
  L.push_back(DenseFcSpec{512, feature_dim, false});
  return cfg;
}

// Layer index at which each row of the architecture table begins.
inline std::vector<std::size_t> paper_row_starts() { return {0, 1, 2, 4, 8, 10, 14, 16, 17, 18}; }

// Small network used for tests and desk-scale experiments.
inline EmoNetConfig toy_config(int feature_dim = 8) {
  EmoNetConfig cfg;
  cfg.input_size = {16, 16, 1};
  cfg.feature_dim = feature_dim;
  cfg.layers = {ConvSpec{3, 2, 1, 8, false, false, true, true},
                ConvSpec{3, 1, 8, 8, true, false, true, true},
                BottleneckConfig{2, 2, 8, 8, false},
                BottleneckConfig{2, 1, 8, 8, true},
                ConvSpec{1, 1, 8, 16, false, false, true, true},
                SpatialFcSpec{16},
                DenseFcSpec{16, feature_dim, false}};
  return cfg;
}

// ---- parameters and forward pass -------------------------------------------

struct ConvParams {
  Tensor weight;
  std::optional<Tensor> bias, scale, shift;
};

struct LayerParams {
  std::vector<ConvParams> convs;  // one for ConvSpec, three for a bottleneck
  std::optional<Tensor> weight, bias, scale, shift;  // FC layers
};

enum class Init { glorot, zeros };

namespace detail {

inline ConvParams init_conv(const ConvSpec& c, std::mt19937_64& rng, Init init) {
  const auto k = static_cast<std::size_t>(c.kernel);
  const auto ci = static_cast<std::size_t>(c.in_channels);
  const auto co = static_cast<std::size_t>(c.out_channels);
  const auto make = [&](Shape s, std::size_t fan_in, std::size_t fan_out) {
    return init == Init::zeros ? Tensor::zeros(std::move(s), true)
                               : glorot_uniform(std::move(s), fan_in, fan_out, rng);
  };
  ConvParams p;
  p.weight = c.depthwise ? make({k, k, ci, 1}, k * k, k * k) : make({k, k, ci, co}, k * k * ci, k * k * co);
  if (c.bias) p.bias = Tensor::zeros({co}, true);
  if (c.affine) {
    p.scale = Tensor::full({co}, init == Init::zeros ? 0.0 : 1.0, true);
    p.shift = Tensor::zeros({co}, true);
  }
  return p;
}

}  // namespace detail

class EmoNet {
 public:
  EmoNet(EmoNetConfig cfg, std::uint64_t seed, Init init = Init::glorot) : cfg_(std::move(cfg)) {
    const auto chain = shape_chain(cfg_);
    std::mt19937_64 rng(seed);
    const auto make = [&](Shape s, std::size_t fan_in, std::size_t fan_out) {
      return init == Init::zeros ? Tensor::zeros(std::move(s), true)
                                 : glorot_uniform(std::move(s), fan_in, fan_out, rng);
    };
    const auto make_conv = [&](const ConvSpec& c) { return detail::init_conv(c, rng, init); };
    for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
      const auto& layer = cfg_.layers[i];
      LayerParams lp;
      if (const auto* c = std::get_if<ConvSpec>(&layer)) {
        lp.convs.push_back(make_conv(*c));
      } else if (const auto* b = std::get_if<BottleneckConfig>(&layer)) {
        for (const auto& part : detail::bottleneck_parts(*b)) lp.convs.push_back(make_conv(part));
      } else if (const auto* f = std::get_if<SpatialFcSpec>(&layer)) {
        const auto c = static_cast<std::size_t>(f->channels);
        lp.weight = make({chain[i][0], chain[i][1], c}, chain[i][0] * chain[i][1], 1);
        lp.scale = Tensor::full({c}, init == Init::zeros ? 0.0 : 1.0, true);
        lp.shift = Tensor::zeros({c}, true);
      } else {
        const auto& d = std::get<DenseFcSpec>(layer);
        const auto in = static_cast<std::size_t>(d.in_features);
        const auto out = static_cast<std::size_t>(d.out_features);
        lp.weight = make({out, in}, in, out);
        lp.bias = Tensor::zeros({out}, true);
      }
      layers_.push_back(std::move(lp));
    }
    if (cfg_.num_classes > 0) {
      const auto m = static_cast<std::size_t>(cfg_.feature_dim);
      const auto k = static_cast<std::size_t>(cfg_.num_classes);
      head_weight_ = make({k, m}, m, k);
      head_bias_ = Tensor::zeros({k}, true);
    }
  }

  const EmoNetConfig& config() const { return cfg_; }

  // x_i = EmoNet(f_i). When trace is given, it receives the input shape of
  // every layer followed by the output shape.
  Tensor forward(const Tensor& face, std::vector<Shape>* trace = nullptr) const {
    const Shape expected = {static_cast<std::size_t>(cfg_.input_size[0]),
                            static_cast<std::size_t>(cfg_.input_size[1]),
                            static_cast<std::size_t>(cfg_.input_size[2])};
    if (face.shape() != expected)
      throw ShapeError("emonet: input " + shape_string(face.shape()) + " does not match " +
                       shape_string(expected));
    Tensor x = face;
    for (std::size_t i = 0; i < cfg_.layers.size(); ++i) {
      if (trace) trace->push_back(x.shape());
      x = apply_layer(cfg_.layers[i], layers_[i], x);
    }
    if (trace) trace->push_back(x.shape());
    return x;
  }

  // Face-category logits from the optional head.
  Tensor logits(const Tensor& feature) const {
    if (!head_weight_) throw ConfigError("emonet: no classification head configured");
    return add(matvec(*head_weight_, feature), *head_bias_);
  }

  ParamList parameters() const {
    ParamList out;
    const auto put = [&](const std::string& name, const std::optional<Tensor>& t) {
      if (t) out.push_back({name, *t});
    };
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string base = "layer" + std::to_string(i);
      const auto& lp = layers_[i];
      static const char* kParts[] = {"expand", "depthwise", "project"};
      for (std::size_t j = 0; j < lp.convs.size(); ++j) {
        const std::string p = lp.convs.size() == 1 ? base : base + "." + kParts[j];
        out.push_back({p + ".weight", lp.convs[j].weight});
        put(p + ".bias", lp.convs[j].bias);
        put(p + ".scale", lp.convs[j].scale);
        put(p + ".shift", lp.convs[j].shift);
      }
      put(base + ".weight", lp.weight);
      put(base + ".bias", lp.bias);
      put(base + ".scale", lp.scale);
      put(base + ".shift", lp.shift);
    }
    put("head.weight", head_weight_);
    put("head.bias", head_bias_);
    return out;
  }

 private:
  static Tensor apply_conv(const ConvSpec& c, const ConvParams& p, const Tensor& x) {
    Tensor y = conv2d(x, p.weight, static_cast<std::size_t>(c.stride), c.depthwise);
    if (p.bias) y = channel_affine(y, std::nullopt, p.bias);
    if (c.affine) y = channel_affine(y, p.scale, p.shift);
    return c.relu ? relu(y) : y;
  }

  static Tensor apply_layer(const LayerSpec& layer, const LayerParams& lp, const Tensor& x) {
    if (const auto* c = std::get_if<ConvSpec>(&layer)) return apply_conv(*c, lp.convs[0], x);
    if (const auto* b = std::get_if<BottleneckConfig>(&layer)) {
      const auto parts = detail::bottleneck_parts(*b);
      Tensor y = x;
      for (std::size_t j = 0; j < 3; ++j) y = apply_conv(parts[j], lp.convs[j], y);
      return b->residual ? add(y, x) : y;
    }
    if (std::holds_alternative<SpatialFcSpec>(layer)) {
      const std::size_t hw = x.dim(0) * x.dim(1), c = x.dim(2);
      Tensor y = sum(hadamard(reshape(x, {hw, c}), reshape(*lp.weight, {hw, c})), 0);
      y = relu(channel_affine(y, lp.scale, lp.shift));
      return reshape(y, {1, 1, c});
    }
    const auto& d = std::get<DenseFcSpec>(layer);
    Tensor y = add(matvec(*lp.weight, flatten(x)), *lp.bias);
    return d.relu ? relu(y) : y;
  }

  EmoNetConfig cfg_;
  std::vector<LayerParams> layers_;
  std::optional<Tensor> head_weight_, head_bias_;
};

// Applies a single bottleneck block given its three conv parameter sets.
inline Tensor bottleneck_forward(const Tensor& x, const BottleneckConfig& cfg,
                                 const std::array<ConvParams, 3>& params) {
  cfg.validate();
  if (x.rank() != 3 || x.dim(2) != static_cast<std::size_t>(cfg.in_channels))
    throw ShapeError("bottleneck: input " + shape_string(x.shape()) + " does not have " +
                     std::to_string(cfg.in_channels) + " channels");
  const auto parts = detail::bottleneck_parts(cfg);
  Tensor y = x;
  for (std::size_t j = 0; j < 3; ++j) {
    y = conv2d(y, params[j].weight, static_cast<std::size_t>(parts[j].stride), parts[j].depthwise);
    y = channel_affine(y, params[j].scale, params[j].shift);
    if (parts[j].relu) y = relu(y);
  }
  return cfg.residual ? add(y, x) : y;
}

inline std::array<ConvParams, 3> bottleneck_params(const BottleneckConfig& cfg, std::uint64_t seed,
                                                   Init init = Init::glorot) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const auto parts = detail::bottleneck_parts(cfg);
  std::array<ConvParams, 3> out;
  for (std::size_t j = 0; j < 3; ++j) out[j] = detail::init_conv(parts[j], rng, init);
  return out;
}

// ---- JSON config -----------------------------------------------------------

inline nlohmann::json to_json(const EmoNetConfig& cfg) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& layer : cfg.layers) {
    if (const auto* c = std::get_if<ConvSpec>(&layer)) {
      layers.push_back({{"type", "conv"}, {"kernel", c->kernel}, {"stride", c->stride},
                        {"in_channels", c->in_channels}, {"out_channels", c->out_channels},
                        {"depthwise", c->depthwise}, {"bias", c->bias}, {"affine", c->affine},
                        {"relu", c->relu}});
    } else if (const auto* b = std::get_if<BottleneckConfig>(&layer)) {
      layers.push_back({{"type", "bottleneck"}, {"expansion_factor", b->expansion_factor},
                        {"stride", b->stride}, {"in_channels", b->in_channels},
                        {"out_channels", b->out_channels}, {"residual", b->residual}});
    } else if (const auto* f = std::get_if<SpatialFcSpec>(&layer)) {
      layers.push_back({{"type", "spatial_fc"}, {"channels", f->channels}});
    } else {
      const auto& d = std::get<DenseFcSpec>(layer);
      layers.push_back({{"type", "fc"}, {"in_features", d.in_features},
                        {"out_features", d.out_features}, {"relu", d.relu}});
    }
  }
  return {{"input_size", cfg.input_size}, {"layers", layers}, {"feature_dim", cfg.feature_dim},
          {"num_classes", cfg.num_classes}};
}

inline EmoNetConfig config_from_json(const nlohmann::json& j) {
  try {
    EmoNetConfig cfg;
    cfg.input_size = j.at("input_size").get<std::array<int, 3>>();
    cfg.feature_dim = j.at("feature_dim").get<int>();
    cfg.num_classes = j.value("num_classes", 0);
    for (const auto& l : j.at("layers")) {
      const auto type = l.at("type").get<std::string>();
      if (type == "conv") {
        cfg.layers.push_back(ConvSpec{l.at("kernel"), l.at("stride"), l.at("in_channels"),
                                      l.at("out_channels"), l.value("depthwise", false),
                                      l.value("bias", false), l.value("affine", true),
                                      l.value("relu", true)});
      } else if (type == "bottleneck") {
        cfg.layers.push_back(BottleneckConfig{l.at("expansion_factor"), l.at("stride"),
                                              l.at("in_channels"), l.at("out_channels"),
                                              l.at("residual")});
      } else if (type == "spatial_fc") {
        cfg.layers.push_back(SpatialFcSpec{l.at("channels")});
      } else if (type == "fc") {
        cfg.layers.push_back(DenseFcSpec{l.at("in_features"), l.at("out_features"),
                                         l.value("relu", false)});
      } else {
        throw ConfigError("emonet: unknown layer type '" + type + "'");
      }
    }
    shape_chain(cfg);
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("emonet config: ") + e.what());
  }
}

}  // namespace nvpf::emonet
