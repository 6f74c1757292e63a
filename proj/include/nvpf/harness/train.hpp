#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "nvpf/core/linear.hpp"
#include "nvpf/flow/flow.hpp"
#include "nvpf/harness/metrics.hpp"
#include "nvpf/harness/optim.hpp"
#include "nvpf/synth/synth.hpp"
#include "nvpf/temporal/temporal.hpp"

namespace nvpf::harness {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;  // shuffling order

  void validate() const {
    adam.validate();
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
  }
};

using Snapshot = std::vector<std::vector<double>>;

inline Snapshot snapshot(const ParamList& params) {
  Snapshot s;
  for (const auto& p : params) s.push_back(p.tensor.values());
  return s;
}

inline void restore(const ParamList& params, const Snapshot& s) {
  if (s.size() != params.size()) throw ShapeError("restore: snapshot does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].tensor;
    auto dst = t.mutable_data();
    if (dst.size() != s[i].size()) throw ShapeError("restore: tensor size mismatch for " + params[i].name);
    std::copy(s[i].begin(), s[i].end(), dst.begin());
  }
}

struct TrainResult {
  std::vector<double> losses;  // one per optimizer step
  std::vector<double> epoch_losses;
  Snapshot best;  // parameters at the end of the epoch with the lowest mean loss
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;  // 0 means the initialization
};

// Minibatch Adam over a fixed dataset. loss_fn maps a batch to a scalar.
template <typename Item, typename LossFn>
TrainResult train_loop(const std::vector<Item>& data, const ParamList& params, const TrainConfig& cfg,
                       LossFn&& loss_fn, std::size_t first_step = 0) {
  cfg.validate();
  TrainResult res;
  res.best = snapshot(params);
  if (cfg.epochs == 0) return res;
  if (data.empty()) throw DomainError("train: empty dataset");
  Adam opt(tensors_of(params), cfg.adam);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Item> batch;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      opt.zero_grad();
      const long step = static_cast<long>(first_step + res.losses.size());
      Tensor loss;
      try {
        loss = loss_fn(std::span<const Item>(batch));
      } catch (const DivergenceError& e) {
        throw DivergenceError(e.what(), step);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      const double value = loss.item();
      if (!std::isfinite(value))
        throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
      try {
        backward(loss);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string(e.what()) + " at step " + std::to_string(step), step);
      }
      opt.step();
      res.losses.push_back(value);
      total += value;
      ++batches;
    }
    const double mean = total / static_cast<double>(batches);
    res.epoch_losses.push_back(mean);
    if (mean < res.best_loss) {
      res.best_loss = mean;
      res.best_epoch = epoch;
      res.best = snapshot(params);
    }
  }
  return res;
}

// "step loss" per line, steps counted from 0.
inline void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& losses) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ' ' << losses[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

// ---- group level -----------------------------------------------------------

inline Tensor nvpf_objective(std::span<const flow::LabeledGroup> batch, const flow::FlowModel& model) {
  Tensor loss = flow::nvpf_loss(batch, model);
  if (model.config().classifier == flow::Classifier::softmax) loss = add(loss, flow::head_loss(batch, model));
  return loss;
}

inline TrainResult train_nvpf(flow::FlowModel& model, const std::vector<flow::LabeledGroup>& data,
                              const TrainConfig& cfg) {
  return train_loop(data, model.parameters(), cfg,
                    [&](std::span<const flow::LabeledGroup> b) { return nvpf_objective(b, model); });
}

// Softmax over the flattened, zero-padded stack S.
struct ConcatBaseline {
  Linear head;

  ConcatBaseline(std::size_t rows, std::size_t cols, std::uint64_t seed)
      : head([&] {
          std::mt19937_64 rng(seed);
          return Linear::glorot(rows * cols, kNumClasses, rng);
        }()) {}

  Tensor logits(const grouping::GroupedFeature& g) const { return head.forward(flatten(g.S)); }
  ParamList parameters() const { return head.parameters("head."); }
};

inline Tensor concat_loss(std::span<const flow::LabeledGroup> batch, const ConcatBaseline& model) {
  if (batch.empty()) throw DomainError("concat_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& lg : batch) terms.push_back(cross_entropy(model.logits(lg.group), lg.label));
  return scale(add_n(terms), 1.0 / static_cast<double>(batch.size()));
}

inline TrainResult train_concat_baseline(ConcatBaseline& model, const std::vector<flow::LabeledGroup>& data,
                                         const TrainConfig& cfg) {
  return train_loop(data, model.parameters(), cfg,
                    [&](std::span<const flow::LabeledGroup> b) { return concat_loss(b, model); });
}

inline std::vector<GroupClass> truth_of(const std::vector<flow::LabeledGroup>& data) {
  std::vector<GroupClass> out;
  for (const auto& lg : data) out.push_back(lg.label);
  return out;
}

inline EvalReport evaluate_nvpf(const flow::FlowModel& model, const std::vector<flow::LabeledGroup>& data) {
  NoGradGuard guard;
  std::vector<GroupClass> pred;
  for (const auto& lg : data) pred.push_back(flow::classify_group(lg.group, model).label);
  return evaluate_predictions(truth_of(data), pred);
}

inline EvalReport evaluate_concat(const ConcatBaseline& model, const std::vector<flow::LabeledGroup>& data) {
  NoGradGuard guard;
  std::vector<GroupClass> pred;
  for (const auto& lg : data) pred.push_back(class_from_index(argmax_index(model.logits(lg.group).values())));
  return evaluate_predictions(truth_of(data), pred);
}

// ---- video level -----------------------------------------------------------

inline temporal::FrameSequence to_sequence(const synth::Video& v, std::size_t n_max) {
  temporal::FrameSequence seq;
  seq.video_label = v.label;
  for (const auto& rec : v.frames) {
    temporal::FrameInput f;
    f.label = rec.frame_label;
    for (auto& lg : synth::scene_groups(rec, n_max)) f.groups.push_back(std::move(lg.group));
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

inline std::vector<temporal::FrameSequence> sequences_from_records(const std::vector<synth::SceneRecord>& records,
                                                                   std::size_t n_max) {
  std::vector<temporal::FrameSequence> out;
  for (const auto& v : synth::collect_videos(records)) out.push_back(to_sequence(v, n_max));
  return out;
}

struct TnvpfSchedule {
  TrainConfig train;               // final stage on full sequences
  std::size_t pretrain_epochs = 0;  // group-flow likelihood on the annotated groups
  std::size_t short_epochs = 0;     // prefixes of short_steps frames
  std::size_t short_steps = 2;
};

inline Tensor sequence_batch_loss(std::span<const temporal::FrameSequence> batch, const temporal::TnvpfModel& model) {
  if (batch.empty()) throw DomainError("sequence_batch_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& s : batch) terms.push_back(temporal::sequence_loss(s, model));
  return scale(add_n(terms), 1.0 / static_cast<double>(batch.size()));
}

// Likelihood training of a group flow on every annotated group, labelled by
// its frame label.
inline TrainResult pretrain_group_flow(flow::FlowModel& gf, const std::vector<temporal::FrameSequence>& data,
                                       TrainConfig cfg, std::size_t epochs) {
  std::vector<flow::LabeledGroup> groups;
  for (const auto& s : data)
    for (const auto& f : s.frames)
      for (const auto& g : f.groups) groups.push_back({g, f.label});
  cfg.epochs = epochs;
  return train_loop(groups, gf.parameters(), cfg,
                    [&](std::span<const flow::LabeledGroup> b) { return flow::nvpf_loss(b, gf); });
}

// Pretraining, short prefixes, then full sequences; losses are concatenated.
// The returned best snapshot comes from the final stage.
inline TrainResult train_tnvpf(temporal::TnvpfModel& model, const std::vector<temporal::FrameSequence>& data,
                               const TnvpfSchedule& sched) {
  std::vector<double> curve;
  if (sched.pretrain_epochs > 0) {
    const auto r = pretrain_group_flow(model.group_flow(), data, sched.train, sched.pretrain_epochs);
    curve.insert(curve.end(), r.losses.begin(), r.losses.end());
  }
  if (sched.short_epochs > 0) {
    if (sched.short_steps == 0) throw ConfigError("train_tnvpf: short_steps must be positive");
    std::vector<temporal::FrameSequence> prefixes;
    for (const auto& s : data) {
      temporal::FrameSequence p = s;
      p.frames.resize(std::min(p.frames.size(), sched.short_steps));
      prefixes.push_back(std::move(p));
    }
    TrainConfig c = sched.train;
    c.epochs = sched.short_epochs;
    c.seed = sched.train.seed + 1;
    const auto r = train_loop(
        prefixes, model.parameters(), c,
        [&](std::span<const temporal::FrameSequence> b) { return sequence_batch_loss(b, model); }, curve.size());
    curve.insert(curve.end(), r.losses.begin(), r.losses.end());
  }
  auto res = train_loop(
      data, model.parameters(), sched.train,
      [&](std::span<const temporal::FrameSequence> b) { return sequence_batch_loss(b, model); }, curve.size());
  curve.insert(curve.end(), res.losses.begin(), res.losses.end());
  res.losses = std::move(curve);
  return res;
}

inline Tensor frame_batch_loss(std::span<const temporal::FrameInput> batch,
                               const temporal::FrameMajorityBaseline& model) {
  if (batch.empty()) throw DomainError("frame_batch_loss: empty batch");
  std::vector<Tensor> terms;
  for (const auto& f : batch) terms.push_back(cross_entropy(model.logits(f), f.label));
  return scale(add_n(terms), 1.0 / static_cast<double>(batch.size()));
}

// Frames are pooled across videos; batch_size counts frames here. The
// optional pretraining stage matches the TNVPF one.
inline TrainResult train_frame_baseline(temporal::FrameMajorityBaseline& model,
                                        const std::vector<temporal::FrameSequence>& data, const TrainConfig& cfg,
                                        std::size_t pretrain_epochs = 0) {
  std::vector<double> curve;
  if (pretrain_epochs > 0) curve = pretrain_group_flow(model.group_flow, data, cfg, pretrain_epochs).losses;
  std::vector<temporal::FrameInput> frames;
  for (const auto& s : data) frames.insert(frames.end(), s.frames.begin(), s.frames.end());
  auto res = train_loop(
      frames, model.parameters(), cfg,
      [&](std::span<const temporal::FrameInput> b) { return frame_batch_loss(b, model); }, curve.size());
  curve.insert(curve.end(), res.losses.begin(), res.losses.end());
  res.losses = std::move(curve);
  return res;
}

struct VideoEval {
  EvalReport video;
  EvalReport frame;
};

template <typename Model>
VideoEval evaluate_videos(const Model& model, const std::vector<temporal::FrameSequence>& data) {
  std::vector<GroupClass> vt, vp, ft, fp;
  for (const auto& s : data) {
    const auto p = temporal::predict_video(s, model);
    vt.push_back(s.video_label);
    vp.push_back(p.video);
    for (std::size_t t = 0; t < s.frames.size(); ++t) {
      ft.push_back(s.frames[t].label);
      fp.push_back(p.frames[t]);
    }
  }
  return {evaluate_predictions(vt, vp), evaluate_predictions(ft, fp)};
}

}  // namespace nvpf::harness
