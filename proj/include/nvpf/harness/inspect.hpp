#pragma once

#include <cstdio>
#include <sstream>
#include <string>

#include "nvpf/flow/flow.hpp"
#include "nvpf/harness/train.hpp"
#include "nvpf/temporal/temporal.hpp"

namespace nvpf::harness {

// Fixed-point so identical values print identically; -0 prints as 0.
inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10f", v + 0.0);
  return buf;
}

namespace detail {

inline void trace_flow(std::ostringstream& out, const std::string& indent, const flow::FusedFeature& h) {
  for (std::size_t k = 0; k < h.unit_log_dets.size(); ++k)
    out << indent << "unit " << k << " log_det " << fmt(h.unit_log_dets[k]) << '\n';
  out << indent << "log_det_total " << fmt(h.log_det.item()) << '\n';
}

inline void trace_logits(std::ostringstream& out, const std::string& indent, const std::vector<double>& z) {
  out << indent << "logits";
  for (auto c : kAllClasses) out << ' ' << to_string(c) << '=' << fmt(z[index_of(c)]);
  out << '\n';
}

}  // namespace detail

inline std::string inspect_group(const grouping::GroupedFeature& g, const flow::FlowModel& model) {
  NoGradGuard guard;
  std::ostringstream out;
  const auto h = flow::flow_forward(g, model);
  out << "group " << g.group_id << " valid " << g.valid_count() << '/' << g.n_max() << '\n';
  detail::trace_flow(out, "  ", h);
  for (auto c : kAllClasses)
    out << "  loglik " << to_string(c) << ' ' << fmt(flow::class_log_likelihood(h, c, model).item()) << '\n';
  const auto cls = flow::classify_fused(h, model);
  if (model.head()) detail::trace_logits(out, "  ", flow::head_logits(h, model).values());
  out << "  predicted " << to_string(cls.label) << '\n';
  return out.str();
}

inline std::string inspect_group(const grouping::GroupedFeature& g, const ConcatBaseline& model) {
  NoGradGuard guard;
  std::ostringstream out;
  const auto z = model.logits(g).values();
  out << "group " << g.group_id << " valid " << g.valid_count() << '/' << g.n_max() << '\n';
  detail::trace_logits(out, "  ", z);
  out << "  predicted " << to_string(class_from_index(argmax_index(z))) << '\n';
  return out.str();
}

inline std::string inspect_video(const temporal::FrameSequence& seq, const temporal::TnvpfModel& model) {
  NoGradGuard guard;
  std::ostringstream out;
  out << "video frames " << seq.frames.size() << " label " << to_string(seq.video_label) << '\n';
  temporal::SequenceRunner runner(model);
  std::vector<Tensor> logits;
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    out << "frame " << t << " label " << to_string(f.label) << '\n';
    std::vector<flow::FusedFeature> fused;
    for (const auto& g : f.groups) {
      fused.push_back(flow::flow_forward(g, model.group_flow()));
      out << "  group " << g.group_id << '\n';
      detail::trace_flow(out, "    ", fused.back());
    }
    const auto frame = temporal::frame_fused(fused, model.frame_flow());
    out << "  frame_flow\n";
    detail::trace_flow(out, "    ", frame);
    logits.push_back(runner.step_features(flatten(frame.H)));
    detail::trace_logits(out, "  ", logits.back().values());
    out << "  predicted " << to_string(class_from_index(argmax_index(logits.back().values()))) << '\n';
  }
  out << "video predicted "
      << to_string(temporal::predict_from_logits(logits, model.config().aggregation).video) << '\n';
  return out.str();
}

inline std::string inspect_video(const temporal::FrameSequence& seq, const temporal::FrameMajorityBaseline& model) {
  NoGradGuard guard;
  std::ostringstream out;
  out << "video frames " << seq.frames.size() << " label " << to_string(seq.video_label) << '\n';
  const auto p = temporal::predict_video(seq, model);
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    out << "frame " << t << " label " << to_string(seq.frames[t].label) << '\n';
    detail::trace_logits(out, "  ", p.frame_logits[t]);
    out << "  predicted " << to_string(p.frames[t]) << '\n';
  }
  out << "video predicted " << to_string(p.video) << '\n';
  return out.str();
}

}  // namespace nvpf::harness
