#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/labels.hpp"
#include "nvpf/core/linear.hpp"
#include "nvpf/core/ops.hpp"
#include "nvpf/core/params.hpp"
#include "nvpf/flow/flow.hpp"

namespace nvpf::temporal {

inline constexpr std::size_t kPaperHidden = 4096;
inline constexpr std::size_t kDeskHidden = 64;

struct GruParams {
  Tensor W, U;    // candidate: [d_h, d_in], [d_h, d_h]
  Tensor Wz, Uz;  // update gate
  Tensor Wr, Ur;  // reset gate
  Tensor Wh, bh;  // output: [C, d_h], [C]

  std::size_t d_in() const { return W.dim(1); }
  std::size_t d_h() const { return W.dim(0); }

  static GruParams glorot(std::size_t d_in, std::size_t d_h, std::mt19937_64& rng) {
    GruParams p;
    p.W = glorot_uniform({d_h, d_in}, d_in, d_h, rng);
    p.U = glorot_uniform({d_h, d_h}, d_h, d_h, rng);
    p.Wz = glorot_uniform({d_h, d_in}, d_in, d_h, rng);
    p.Uz = glorot_uniform({d_h, d_h}, d_h, d_h, rng);
    p.Wr = glorot_uniform({d_h, d_in}, d_in, d_h, rng);
    p.Ur = glorot_uniform({d_h, d_h}, d_h, d_h, rng);
    p.Wh = glorot_uniform({kNumClasses, d_h}, d_h, kNumClasses, rng);
    p.bh = Tensor::zeros({kNumClasses}, true);
    return p;
  }

  static GruParams zeros(std::size_t d_in, std::size_t d_h) {
    GruParams p;
    p.W = Tensor::zeros({d_h, d_in}, true);
    p.U = Tensor::zeros({d_h, d_h}, true);
    p.Wz = Tensor::zeros({d_h, d_in}, true);
    p.Uz = Tensor::zeros({d_h, d_h}, true);
    p.Wr = Tensor::zeros({d_h, d_in}, true);
    p.Ur = Tensor::zeros({d_h, d_h}, true);
    p.Wh = Tensor::zeros({kNumClasses, d_h}, true);
    p.bh = Tensor::zeros({kNumClasses}, true);
    return p;
  }

  void validate() const {
    const std::size_t di = d_in(), dh = d_h();
    const auto check = [](const Tensor& t, const Shape& s, const char* name) {
      if (t.shape() != s)
        throw ShapeError(std::string("gru: ") + name + " is " + shape_string(t.shape()) + ", expected " +
                         shape_string(s));
    };
    check(U, {dh, dh}, "U");
    check(Wz, {dh, di}, "W_z");
    check(Uz, {dh, dh}, "U_z");
    check(Wr, {dh, di}, "W_r");
    check(Ur, {dh, dh}, "U_r");
    check(Wh, {kNumClasses, dh}, "W_h");
    check(bh, {kNumClasses}, "b_h");
  }

  ParamList parameters(const std::string& prefix = "") const {
    return {{prefix + "W", W},   {prefix + "U", U},   {prefix + "W_z", Wz}, {prefix + "U_z", Uz},
            {prefix + "W_r", Wr}, {prefix + "U_r", Ur}, {prefix + "W_h", Wh}, {prefix + "b_h", bh}};
  }
};

struct GruState {
  Tensor o;
  static GruState zeros(std::size_t d_h) { return {Tensor::zeros({d_h})}; }
};

// z = sigma(W_z H + U_z o), r = sigma(W_r H + U_r o),
// o' = (1 - z) o + z tanh(W H + U (r * o)).
inline GruState gru_step(const Tensor& h_in, const GruState& state, const GruParams& p) {
  if (h_in.rank() != 1 || h_in.dim(0) != p.d_in())
    throw ShapeError("gru: input " + shape_string(h_in.shape()) + ", expected [" + std::to_string(p.d_in()) + "]");
  if (state.o.rank() != 1 || state.o.dim(0) != p.d_h())
    throw ShapeError("gru: state " + shape_string(state.o.shape()) + ", expected [" + std::to_string(p.d_h()) + "]");
  const Tensor& o = state.o;
  const Tensor z = sigmoid(add(matvec(p.Wz, h_in), matvec(p.Uz, o)));
  const Tensor r = sigmoid(add(matvec(p.Wr, h_in), matvec(p.Ur, o)));
  const Tensor cand = tanh(add(matvec(p.W, h_in), matvec(p.U, hadamard(r, o))));
  const Tensor keep = shift(neg(z), 1.0);
  return {add(hadamard(keep, o), hadamard(z, cand))};
}

inline Tensor frame_logits(const GruState& state, const GruParams& p) {
  return add(matvec(p.Wh, state.o), p.bh);
}

inline std::vector<double> frame_probabilities(const Tensor& logits) { return softmax_values(logits.data()); }

// ---- frame-level fusion ----------------------------------------------------

// Masked mean over the valid columns of a fused group feature: an M-vector.
inline Tensor pool_columns(const flow::FusedFeature& h) {
  const std::size_t N = h.H.dim(1);
  double count = 0.0;
  for (bool v : h.mask) count += v ? 1.0 : 0.0;
  if (count == 0.0) throw DomainError("pool_columns: group has no valid column");
  std::vector<double> w(N);
  for (std::size_t c = 0; c < N; ++c) w[c] = h.mask[c] ? 1.0 / count : 0.0;
  return matvec(h.H, Tensor::vector(std::move(w)));
}

// Group features pooled to M-vectors, stacked as columns of an M x N_max
// matrix (zero-padded, masked) and fused by the frame-level flow.
inline flow::FusedFeature frame_fused(const std::vector<flow::FusedFeature>& groups,
                                      const flow::FlowModel& frame_flow) {
  if (groups.empty()) throw DomainError("frame_feature: frame has no groups");
  const auto& cfg = frame_flow.config();
  if (groups.size() > cfg.cols)
    throw DomainError("frame_feature: " + std::to_string(groups.size()) + " groups exceed N_max " +
                      std::to_string(cfg.cols));
  const std::size_t M = cfg.rows;
  std::vector<Tensor> cols;
  for (const auto& g : groups) {
    if (g.H.dim(0) != M)
      throw ShapeError("frame_feature: group feature has " + std::to_string(g.H.dim(0)) + " rows, expected " +
                       std::to_string(M));
    cols.push_back(reshape(pool_columns(g), {M, 1}));
  }
  if (groups.size() < cfg.cols) cols.push_back(Tensor::zeros({M, cfg.cols - groups.size()}));
  std::vector<bool> mask(cfg.cols, false);
  for (std::size_t c = 0; c < groups.size(); ++c) mask[c] = true;
  return flow::flow_forward(concat_last(cols), mask, frame_flow);
}

inline Tensor frame_feature(const std::vector<flow::FusedFeature>& groups, const flow::FlowModel& frame_flow) {
  return flatten(frame_fused(groups, frame_flow).H);
}

// ---- model -----------------------------------------------------------------

enum class VideoAggregation { final_step, mean_logits };

struct TnvpfConfig {
  flow::FlowConfig group_flow;
  flow::FlowConfig frame_flow;
  std::size_t d_h = kDeskHidden;
  VideoAggregation aggregation = VideoAggregation::final_step;

  std::size_t d_in() const { return frame_flow.cells(); }
  void validate() const {
    group_flow.validate();
    frame_flow.validate();
    if (frame_flow.rows != group_flow.rows)
      throw ConfigError("tnvpf: frame flow rows must equal the feature dimension M");
    if (d_h == 0) throw ConfigError("tnvpf: d_h must be positive");
  }
};

class TnvpfModel {
 public:
  TnvpfModel(TnvpfConfig cfg, std::uint64_t seed)
      : cfg_(cfg), group_flow_(init_flow(cfg, seed, true)), frame_flow_(init_flow(cfg, seed, false)) {
    std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
    gru_ = GruParams::glorot(cfg_.d_in(), cfg_.d_h, rng);
  }

  const TnvpfConfig& config() const { return cfg_; }
  const flow::FlowModel& group_flow() const { return group_flow_; }
  const flow::FlowModel& frame_flow() const { return frame_flow_; }
  const GruParams& gru() const { return gru_; }
  flow::FlowModel& group_flow() { return group_flow_; }

  ParamList parameters() const {
    ParamList out;
    append_prefixed(out, "group_flow.", group_flow_.parameters());
    append_prefixed(out, "frame_flow.", frame_flow_.parameters());
    append_prefixed(out, "gru.", gru_.parameters());
    return out;
  }

 private:
  static flow::FlowModel init_flow(const TnvpfConfig& cfg, std::uint64_t seed, bool group) {
    cfg.validate();
    auto fc = group ? cfg.group_flow : cfg.frame_flow;
    fc.classifier = flow::Classifier::likelihood;
    return flow::FlowModel(fc, group ? seed : seed + 1);
  }

  TnvpfConfig cfg_;
  flow::FlowModel group_flow_;
  flow::FlowModel frame_flow_;
  GruParams gru_;
};

struct FrameInput {
  std::vector<grouping::GroupedFeature> groups;
  GroupClass label = GroupClass::neutral;
};

struct FrameSequence {
  std::vector<FrameInput> frames;
  GroupClass video_label = GroupClass::neutral;
};

// H^t for one frame: group flow on every group, then the frame flow.
inline Tensor encode_frame(const FrameInput& frame, const TnvpfModel& model) {
  std::vector<flow::FusedFeature> fused;
  for (const auto& g : frame.groups) fused.push_back(flow::flow_forward(g, model.group_flow()));
  return frame_feature(fused, model.frame_flow());
}

// Feeds frames one at a time; step() returns that frame's logits.
class SequenceRunner {
 public:
  explicit SequenceRunner(const TnvpfModel& model)
      : model_(model), state_(GruState::zeros(model.config().d_h)) {}

  Tensor step(const FrameInput& frame) { return step_features(encode_frame(frame, model_)); }
  Tensor step_features(const Tensor& h_in) {
    state_ = gru_step(h_in, state_, model_.gru());
    return frame_logits(state_, model_.gru());
  }
  const GruState& state() const { return state_; }

 private:
  const TnvpfModel& model_;
  GruState state_;
};

inline std::vector<Tensor> sequence_logits(const FrameSequence& seq, const TnvpfModel& model) {
  if (seq.frames.empty()) throw DomainError("sequence: no frames");
  SequenceRunner runner(model);
  std::vector<Tensor> out;
  for (const auto& f : seq.frames) out.push_back(runner.step(f));
  return out;
}

// -sum_t log p(l_t | S^{1:t})
inline Tensor sequence_loss(const FrameSequence& seq, const TnvpfModel& model) {
  const auto logits = sequence_logits(seq, model);
  std::vector<Tensor> terms;
  for (std::size_t t = 0; t < logits.size(); ++t) terms.push_back(cross_entropy(logits[t], seq.frames[t].label));
  return add_n(terms);
}

struct VideoPrediction {
  GroupClass video = GroupClass::positive;
  std::vector<GroupClass> frames;
  std::vector<std::vector<double>> frame_logits;
};

inline VideoPrediction predict_from_logits(const std::vector<Tensor>& logits, VideoAggregation agg) {
  if (logits.empty()) throw DomainError("predict_video: empty video");
  VideoPrediction p;
  std::vector<double> mean(kNumClasses, 0.0);
  for (const auto& z : logits) {
    p.frame_logits.push_back(z.values());
    p.frames.push_back(class_from_index(argmax_index(p.frame_logits.back())));
    for (std::size_t c = 0; c < kNumClasses; ++c) mean[c] += z[c];
  }
  p.video = agg == VideoAggregation::final_step ? p.frames.back() : class_from_index(argmax_index(mean));
  return p;
}

inline VideoPrediction predict_video(const FrameSequence& seq, const TnvpfModel& model) {
  NoGradGuard guard;
  return predict_from_logits(sequence_logits(seq, model), model.config().aggregation);
}

// ---- per-frame baseline ----------------------------------------------------

// Same frame features, a linear softmax per frame, video label by majority
// vote (ties to the earlier class).
struct FrameMajorityBaseline {
  flow::FlowModel group_flow;
  flow::FlowModel frame_flow;
  Linear head;

  FrameMajorityBaseline(const TnvpfConfig& cfg, std::uint64_t seed)
      : group_flow(cfg.group_flow, seed), frame_flow(cfg.frame_flow, seed + 1), head([&] {
          std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
          return Linear::glorot(cfg.d_in(), kNumClasses, rng);
        }()) {}

  Tensor logits(const FrameInput& frame) const {
    std::vector<flow::FusedFeature> fused;
    for (const auto& g : frame.groups) fused.push_back(flow::flow_forward(g, group_flow));
    return head.forward(frame_feature(fused, frame_flow));
  }

  ParamList parameters() const {
    ParamList out;
    append_prefixed(out, "group_flow.", group_flow.parameters());
    append_prefixed(out, "frame_flow.", frame_flow.parameters());
    append_prefixed(out, "head.", head.parameters(""));
    return out;
  }
};

inline GroupClass majority_vote(const std::vector<GroupClass>& frames) {
  if (frames.empty()) throw DomainError("majority_vote: no frames");
  std::array<std::size_t, kNumClasses> votes{};
  for (auto c : frames) ++votes[index_of(c)];
  return class_from_index(argmax_index(votes));
}

inline VideoPrediction predict_video(const FrameSequence& seq, const FrameMajorityBaseline& model) {
  NoGradGuard guard;
  if (seq.frames.empty()) throw DomainError("predict_video: empty video");
  VideoPrediction p;
  for (const auto& f : seq.frames) {
    const auto z = model.logits(f);
    p.frame_logits.push_back(z.values());
    p.frames.push_back(class_from_index(argmax_index(p.frame_logits.back())));
  }
  p.video = majority_vote(p.frames);
  return p;
}

// ---- config I/O ------------------------------------------------------------

inline nlohmann::json to_json(const TnvpfConfig& c) {
  return {{"group_flow", flow::to_json(c.group_flow)},
          {"frame_flow", flow::to_json(c.frame_flow)},
          {"d_h", c.d_h},
          {"aggregation", c.aggregation == VideoAggregation::final_step ? "final_step" : "mean_logits"}};
}

inline TnvpfConfig tnvpf_config_from_json(const nlohmann::json& j, TnvpfConfig c = {}) {
  try {
    if (j.contains("group_flow")) c.group_flow = flow::flow_config_from_json(j.at("group_flow"), c.group_flow);
    if (j.contains("frame_flow")) c.frame_flow = flow::flow_config_from_json(j.at("frame_flow"), c.frame_flow);
    c.d_h = j.value("d_h", c.d_h);
    if (j.contains("aggregation")) {
      const auto s = j.at("aggregation").get<std::string>();
      if (s == "final_step") c.aggregation = VideoAggregation::final_step;
      else if (s == "mean_logits") c.aggregation = VideoAggregation::mean_logits;
      else throw ConfigError("tnvpf: unknown aggregation '" + s + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tnvpf config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace nvpf::temporal
