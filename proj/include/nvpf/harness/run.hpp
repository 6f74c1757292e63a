#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/grad_check.hpp"
#include "nvpf/harness/checkpoint.hpp"
#include "nvpf/harness/inspect.hpp"
#include "nvpf/harness/train.hpp"

namespace nvpf::harness {

namespace fs = std::filesystem;
using nlohmann::json;

enum class Mode { gen_data, train_nvpf, train_tnvpf, eval, grad_check, inspect };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::gen_data: return "gen-data";
    case Mode::train_nvpf: return "train-nvpf";
    case Mode::train_tnvpf: return "train-tnvpf";
    case Mode::eval: return "eval";
    case Mode::grad_check: return "grad-check";
    case Mode::inspect: return "inspect";
  }
  return "?";
}

inline Mode parse_mode(const std::string& s) {
  for (auto m : {Mode::gen_data, Mode::train_nvpf, Mode::train_tnvpf, Mode::eval, Mode::grad_check, Mode::inspect})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown mode '" + s + "'");
}

// Model families a checkpoint can hold.
inline constexpr const char* kNvpfModel = "nvpf";
inline constexpr const char* kConcatModel = "concat";
inline constexpr const char* kTnvpfModel = "tnvpf";
inline constexpr const char* kFrameBaselineModel = "frame-baseline";

struct RunConfig {
  std::string scale = "desk";  // "paper" or "desk" defaults
  std::uint64_t seed = 0;
  std::string train_data, test_data;  // JSONL scene files
  std::string model;                  // checkpoint directory (eval, inspect, grad-check)
  std::string model_type = kNvpfModel;

  flow::FlowConfig flow;
  temporal::TnvpfConfig tnvpf;
  TrainConfig train;
  std::size_t pretrain_epochs = 0;
  std::size_t short_epochs = 0;
  std::size_t short_steps = 2;

  std::string gen_kind = "groups";  // "groups" or "videos"
  std::size_t gen_train = 2000, gen_test = 500;
  std::size_t gen_count = 0;  // with test_fraction: generate this many and split by video
  double gen_test_fraction = 0.0;
  synth::VideoGenConfig video;  // video.group holds the group generator

  std::size_t sample = 0;   // inspect
  double grad_tol = 1e-4;   // grad-check
  std::size_t grad_coords = 64;
};

// Published settings: lr 0.1 with momentum 0.9 for Adam, batch 64 for both
// fusion models, 4096 recurrent units.
inline RunConfig paper_defaults(Mode mode) {
  RunConfig c;
  c.scale = "paper";
  c.train.adam = AdamConfig{};
  c.train.batch_size = 64;
  c.train.epochs = 10;
  c.flow = flow::FlowConfig{};
  c.tnvpf.group_flow = flow::FlowConfig{};
  c.tnvpf.frame_flow = flow::FlowConfig{};
  c.tnvpf.d_h = temporal::kPaperHidden;
  c.video.group.feature_dim = 64;
  c.video.group.n_max = 8;
  c.video.group.min_members = 2;
  c.video.group.max_members = 8;
  c.short_epochs = mode == Mode::train_tnvpf ? 5 : 0;
  c.model_type = mode == Mode::train_tnvpf ? kTnvpfModel : kNvpfModel;
  return c;
}

inline RunConfig desk_defaults(Mode mode) {
  RunConfig c;
  c.scale = "desk";
  c.train.adam.lr = 1e-3;
  c.flow.rows = 8;
  c.flow.cols = 4;
  c.flow.units = 4;
  c.flow.feature_maps = 16;
  c.flow.res_blocks = 2;
  c.tnvpf.group_flow = c.flow;
  c.tnvpf.group_flow.feature_maps = 8;
  c.tnvpf.group_flow.res_blocks = 1;
  c.tnvpf.frame_flow = c.tnvpf.group_flow;
  c.tnvpf.frame_flow.cols = 2;
  c.tnvpf.d_h = 32;
  if (mode == Mode::train_tnvpf) {
    c.model_type = kTnvpfModel;
    c.train.batch_size = 16;
    c.train.epochs = 6;
    c.pretrain_epochs = 3;
    c.short_epochs = 3;
    c.video.group.separation = 1.0;
  } else {
    c.train.batch_size = 32;
    c.train.epochs = 10;
  }
  return c;
}

inline json to_json(const RunConfig& c, Mode mode) {
  return {{"mode", to_string(mode)},
          {"scale", c.scale},
          {"seed", c.seed},
          {"data", {{"train", c.train_data}, {"test", c.test_data}}},
          {"model", c.model},
          {"model_type", c.model_type},
          {"flow", flow::to_json(c.flow)},
          {"tnvpf", temporal::to_json(c.tnvpf)},
          {"train",
           {{"lr", c.train.adam.lr},
            {"momentum", c.train.adam.beta1},
            {"beta2", c.train.adam.beta2},
            {"eps", c.train.adam.eps},
            {"batch_size", c.train.batch_size},
            {"epochs", c.train.epochs},
            {"pretrain_epochs", c.pretrain_epochs},
            {"short_epochs", c.short_epochs},
            {"short_steps", c.short_steps}}},
          {"gen",
           {{"kind", c.gen_kind},
            {"train_count", c.gen_train},
            {"test_count", c.gen_test},
            {"count", c.gen_count},
            {"test_fraction", c.gen_test_fraction},
            {"video", synth::to_json(c.video)}}},
          {"inspect", {{"sample", c.sample}}},
          {"grad_check", {{"tol", c.grad_tol}, {"max_coords", c.grad_coords}}}};
}

inline std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

// Run manifests are accepted as configs: their "config" member is used.
// Relative paths resolve against the config file's directory.
inline RunConfig run_config_from_json(json j, Mode mode, const fs::path& base_dir = {}) {
  try {
    if (j.contains("config") && j.value("format", "") == "nvpf-run-manifest") j = j.at("config");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (j.contains("mode") && j.at("mode").get<std::string>() != to_string(mode))
      throw ConfigError("config is for mode '" + j.at("mode").get<std::string>() + "', not '" + to_string(mode) + "'");
    const std::string scale = j.value("scale", "desk");
    RunConfig c;
    if (scale == "paper") c = paper_defaults(mode);
    else if (scale == "desk") c = desk_defaults(mode);
    else throw ConfigError("scale must be 'paper' or 'desk'");
    c.seed = j.value("seed", c.seed);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.train_data = resolve_path(d.value("train", c.train_data), base_dir);
      c.test_data = resolve_path(d.value("test", c.test_data), base_dir);
    }
    c.model = resolve_path(j.value("model", c.model), base_dir);
    c.model_type = j.value("model_type", c.model_type);
    if (j.contains("flow")) c.flow = flow::flow_config_from_json(j.at("flow"), c.flow);
    if (j.contains("tnvpf")) c.tnvpf = temporal::tnvpf_config_from_json(j.at("tnvpf"), c.tnvpf);
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.adam.lr = t.value("lr", c.train.adam.lr);
      c.train.adam.beta1 = t.value("momentum", c.train.adam.beta1);
      c.train.adam.beta2 = t.value("beta2", c.train.adam.beta2);
      c.train.adam.eps = t.value("eps", c.train.adam.eps);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.pretrain_epochs = t.value("pretrain_epochs", c.pretrain_epochs);
      c.short_epochs = t.value("short_epochs", c.short_epochs);
      c.short_steps = t.value("short_steps", c.short_steps);
    }
    if (j.contains("gen")) {
      const auto& g = j.at("gen");
      c.gen_kind = g.value("kind", c.gen_kind);
      c.gen_train = g.value("train_count", c.gen_train);
      c.gen_test = g.value("test_count", c.gen_test);
      c.gen_count = g.value("count", c.gen_count);
      c.gen_test_fraction = g.value("test_fraction", c.gen_test_fraction);
      if (g.contains("video")) c.video = synth::video_gen_config_from_json(g.at("video"), c.video);
      if (c.gen_kind != "groups" && c.gen_kind != "videos")
        throw ConfigError("gen.kind must be 'groups' or 'videos'");
    }
    if (j.contains("inspect")) c.sample = j.at("inspect").value("sample", c.sample);
    if (j.contains("grad_check")) {
      c.grad_tol = j.at("grad_check").value("tol", c.grad_tol);
      c.grad_coords = j.at("grad_check").value("max_coords", c.grad_coords);
    }
    c.train.validate();
    c.video.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline RunConfig load_run_config(const fs::path& path, Mode mode) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return run_config_from_json(j, mode, fs::absolute(path).parent_path());
}

// ---- models behind checkpoints ---------------------------------------------

inline json model_config_json(const RunConfig& c) {
  if (c.model_type == kNvpfModel) return {{"flow", flow::to_json(c.flow)}};
  if (c.model_type == kConcatModel) return {{"rows", c.flow.rows}, {"cols", c.flow.cols}};
  if (c.model_type == kTnvpfModel || c.model_type == kFrameBaselineModel)
    return {{"tnvpf", temporal::to_json(c.tnvpf)}};
  throw ConfigError("unknown model_type '" + c.model_type + "'");
}

// One of the four model families, rebuilt from a model_config_json blob.
struct AnyModel {
  std::string type;
  std::optional<flow::FlowModel> nvpf;
  std::optional<ConcatBaseline> concat;
  std::optional<temporal::TnvpfModel> tnvpf;
  std::optional<temporal::FrameMajorityBaseline> frame;

  static AnyModel build(const std::string& type, const json& cfg, std::uint64_t seed) {
    AnyModel m;
    m.type = type;
    try {
      if (type == kNvpfModel) m.nvpf.emplace(flow::flow_config_from_json(cfg.at("flow")), seed);
      else if (type == kConcatModel)
        m.concat.emplace(cfg.at("rows").get<std::size_t>(), cfg.at("cols").get<std::size_t>(), seed);
      else if (type == kTnvpfModel) m.tnvpf.emplace(temporal::tnvpf_config_from_json(cfg.at("tnvpf")), seed);
      else if (type == kFrameBaselineModel)
        m.frame.emplace(temporal::tnvpf_config_from_json(cfg.at("tnvpf")), seed);
      else throw ConfigError("unknown model_type '" + type + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model config: ") + e.what());
    }
    return m;
  }

  bool video_level() const { return tnvpf || frame; }

  ParamList parameters() const {
    if (nvpf) return nvpf->parameters();
    if (concat) return concat->parameters();
    if (tnvpf) return tnvpf->parameters();
    return frame->parameters();
  }

  std::size_t rows() const { return rows_; }
  std::size_t n_max() const { return cols_; }
  std::size_t rows_ = 0, cols_ = 0;
};

inline AnyModel build_model(const std::string& type, const json& cfg, std::uint64_t seed) {
  auto m = AnyModel::build(type, cfg, seed);
  if (m.nvpf) {
    m.rows_ = m.nvpf->config().rows;
    m.cols_ = m.nvpf->config().cols;
  } else if (m.concat) {
    m.rows_ = cfg.at("rows").get<std::size_t>();
    m.cols_ = cfg.at("cols").get<std::size_t>();
  } else {
    const auto& g = m.tnvpf ? m.tnvpf->config().group_flow : m.frame->group_flow.config();
    m.rows_ = g.rows;
    m.cols_ = g.cols;
  }
  return m;
}

inline AnyModel load_model(const fs::path& dir) {
  const auto ck = load_checkpoint(dir);
  auto m = build_model(ck.kind, ck.config, 0);
  load_into(m.parameters(), ck);
  return m;
}

// ---- data ------------------------------------------------------------------

inline std::vector<flow::LabeledGroup> load_groups(const std::string& path, std::size_t rows, std::size_t n_max) {
  if (path.empty()) throw ConfigError("no dataset path given");
  std::vector<flow::LabeledGroup> out;
  for (const auto& rec : synth::read_dataset(path))
    for (auto& lg : synth::scene_groups(rec, n_max)) {
      if (lg.group.S.dim(0) != rows)
        throw ConfigError("dataset features have dimension " + std::to_string(lg.group.S.dim(0)) +
                          ", model expects " + std::to_string(rows));
      out.push_back(std::move(lg));
    }
  if (out.empty()) throw DomainError("dataset " + path + " holds no groups");
  return out;
}

inline std::vector<temporal::FrameSequence> load_sequences(const std::string& path, std::size_t rows,
                                                           std::size_t n_max) {
  if (path.empty()) throw ConfigError("no dataset path given");
  auto seqs = sequences_from_records(synth::read_dataset(path), n_max);
  for (const auto& s : seqs)
    for (const auto& f : s.frames)
      for (const auto& g : f.groups)
        if (g.S.dim(0) != rows)
          throw ConfigError("dataset features have dimension " + std::to_string(g.S.dim(0)) + ", model expects " +
                            std::to_string(rows));
  if (seqs.empty()) throw DomainError("dataset " + path + " holds no videos");
  return seqs;
}

inline json evaluate_json(const AnyModel& m, const std::string& path) {
  if (m.video_level()) {
    const auto seqs = load_sequences(path, m.rows(), m.n_max());
    const auto ev = m.tnvpf ? evaluate_videos(*m.tnvpf, seqs) : evaluate_videos(*m.frame, seqs);
    return {{"video", to_json(ev.video)}, {"frame", to_json(ev.frame)}};
  }
  const auto groups = load_groups(path, m.rows(), m.n_max());
  return {{"group", to_json(m.nvpf ? evaluate_nvpf(*m.nvpf, groups) : evaluate_concat(*m.concat, groups))}};
}

// ---- run -------------------------------------------------------------------

struct RunOutput {
  std::vector<std::string> files;  // relative to the output directory
  json summary;
};

namespace detail {

inline ParamList snapshot_params(const ParamList& live, const Snapshot& snap) {
  ParamList out;
  for (std::size_t i = 0; i < live.size(); ++i)
    out.push_back({live[i].name, Tensor(live[i].tensor.shape(), snap[i])});
  return out;
}

inline void write_json(const fs::path& p, const json& j) { write_file(p, j.dump(2) + "\n"); }

inline RunOutput run_gen_data(const RunConfig& c, const fs::path& out) {
  std::vector<synth::SceneRecord> train, test;
  if (c.gen_kind == "groups") {
    train = synth::group_dataset_records(c.gen_train, c.video.group, synth::derive_seed(c.seed, 0));
    test = synth::group_dataset_records(c.gen_test, c.video.group, synth::derive_seed(c.seed, 1));
    for (auto& r : test) r.video_id += static_cast<std::int64_t>(c.gen_train);
  } else if (c.gen_test_fraction > 0.0) {
    const auto all = synth::gen_video_dataset(c.gen_count, c.video, c.seed);
    std::vector<std::int64_t> ids;
    for (const auto& r : all) ids.push_back(r.video_id);
    const auto split = synth::split_by_video(ids, c.gen_test_fraction, synth::derive_seed(c.seed, 2));
    const std::set<std::int64_t> test_ids(split.test.begin(), split.test.end());
    for (const auto& r : all) (test_ids.count(r.video_id) ? test : train).push_back(r);
  } else {
    train = synth::gen_video_dataset(c.gen_train, c.video, synth::derive_seed(c.seed, 0));
    test = synth::gen_video_dataset(c.gen_test, c.video, synth::derive_seed(c.seed, 1),
                                    static_cast<std::int64_t>(c.gen_train));
  }
  synth::write_dataset(out / "train.jsonl", train);
  synth::write_dataset(out / "test.jsonl", test);
  return {{"train.jsonl", "test.jsonl"}, {{"train_records", train.size()}, {"test_records", test.size()}}};
}

inline RunOutput finish_training(const RunConfig& c, const fs::path& out, const AnyModel& m,
                                 const TrainResult& r) {
  const json mcfg = model_config_json(c);
  const auto params = m.parameters();
  save_checkpoint(out / "checkpoint_final", c.model_type, mcfg, params);
  save_checkpoint(out / "checkpoint_best", c.model_type, mcfg, snapshot_params(params, r.best));
  write_loss_curve(out / "loss_curve.txt", r.losses);
  json report = {{"model_type", c.model_type},
                 {"steps", r.losses.size()},
                 {"best_epoch", r.best_epoch},
                 {"final_loss", r.losses.empty() ? json() : json(r.losses.back())},
                 {"train", evaluate_json(m, c.train_data)}};
  if (!c.test_data.empty()) report["test"] = evaluate_json(m, c.test_data);
  write_json(out / "report.json", report);
  return {{"checkpoint_final", "checkpoint_best", "loss_curve.txt", "report.json"}, report};
}

inline RunOutput run_train_nvpf(const RunConfig& c, const fs::path& out) {
  if (c.model_type != kNvpfModel && c.model_type != kConcatModel)
    throw ConfigError("train-nvpf trains model_type 'nvpf' or 'concat'");
  auto m = build_model(c.model_type, model_config_json(c), c.seed);
  const auto data = load_groups(c.train_data, c.flow.rows, c.flow.cols);
  TrainConfig tc = c.train;
  tc.seed = synth::derive_seed(c.seed, 1);
  const auto r = m.nvpf ? train_nvpf(*m.nvpf, data, tc) : train_concat_baseline(*m.concat, data, tc);
  return finish_training(c, out, m, r);
}

inline RunOutput run_train_tnvpf(const RunConfig& c, const fs::path& out) {
  if (c.model_type != kTnvpfModel && c.model_type != kFrameBaselineModel)
    throw ConfigError("train-tnvpf trains model_type 'tnvpf' or 'frame-baseline'");
  auto m = build_model(c.model_type, model_config_json(c), c.seed);
  const auto data = load_sequences(c.train_data, c.tnvpf.group_flow.rows, c.tnvpf.group_flow.cols);
  TnvpfSchedule s;
  s.train = c.train;
  s.train.seed = synth::derive_seed(c.seed, 1);
  s.pretrain_epochs = c.pretrain_epochs;
  s.short_epochs = c.short_epochs;
  s.short_steps = c.short_steps;
  const auto r = m.tnvpf ? train_tnvpf(*m.tnvpf, data, s) : train_frame_baseline(*m.frame, data, s.train, s.pretrain_epochs);
  return finish_training(c, out, m, r);
}

inline RunOutput run_eval(const RunConfig& c, const fs::path& out) {
  if (c.model.empty()) throw ConfigError("eval needs a model checkpoint");
  if (c.test_data.empty()) throw ConfigError("eval needs data.test");
  const auto m = load_model(c.model);
  const json report = {{"model_type", m.type}, {"test", evaluate_json(m, c.test_data)}};
  write_json(out / "report.json", report);
  return {{"report.json"}, report};
}

inline RunOutput run_grad_check(const RunConfig& c, const fs::path& out) {
  auto m = c.model.empty() ? build_model(c.model_type, model_config_json(c), c.seed) : load_model(c.model);
  const std::string data = c.train_data.empty() ? c.test_data : c.train_data;
  std::function<Tensor()> loss;
  std::vector<flow::LabeledGroup> groups;
  std::vector<temporal::FrameSequence> seqs;
  if (m.video_level()) {
    seqs = load_sequences(data, m.rows(), m.n_max());
    seqs.resize(1);
    if (m.tnvpf) loss = [&] { return sequence_batch_loss(seqs, *m.tnvpf); };
    else loss = [&] { return frame_batch_loss(seqs[0].frames, *m.frame); };
  } else {
    groups = load_groups(data, m.rows(), m.n_max());
    groups.resize(std::min<std::size_t>(groups.size(), 4));
    if (m.nvpf) loss = [&] { return nvpf_objective(groups, *m.nvpf); };
    else loss = [&] { return concat_loss(groups, *m.concat); };
  }
  const double err = grad_check_params(loss, tensors_of(m.parameters()), 1e-6, c.grad_coords, c.seed);
  const json report = {{"model_type", m.type},
                       {"max_rel_error", err},
                       {"tol", c.grad_tol},
                       {"pass", err <= c.grad_tol}};
  write_json(out / "grad_check.json", report);
  return {{"grad_check.json"}, report};
}

inline RunOutput run_inspect(const RunConfig& c, const fs::path& out) {
  const auto m = c.model.empty() ? build_model(c.model_type, model_config_json(c), c.seed) : load_model(c.model);
  const std::string data = c.test_data.empty() ? c.train_data : c.test_data;
  std::string trace;
  if (m.video_level()) {
    const auto seqs = load_sequences(data, m.rows(), m.n_max());
    if (c.sample >= seqs.size()) throw ConfigError("inspect.sample is out of range");
    trace = m.tnvpf ? inspect_video(seqs[c.sample], *m.tnvpf) : inspect_video(seqs[c.sample], *m.frame);
  } else {
    const auto groups = load_groups(data, m.rows(), m.n_max());
    if (c.sample >= groups.size()) throw ConfigError("inspect.sample is out of range");
    trace = m.nvpf ? inspect_group(groups[c.sample].group, *m.nvpf)
                   : inspect_group(groups[c.sample].group, *m.concat);
  }
  write_file(out / "trace.txt", trace);
  return {{"trace.txt"}, {{"trace", trace}}};
}

}  // namespace detail

// Runs one mode into `out`. Writes run_manifest.json (deterministic) and
// timing.json (wall clock, excluded from reproducibility checks).
inline RunOutput execute(Mode mode, const RunConfig& c, const fs::path& out) {
  if (out.empty()) throw IoError("output directory is empty");
  fs::create_directories(out);
  const auto t0 = std::chrono::steady_clock::now();
  RunOutput res;
  switch (mode) {
    case Mode::gen_data: res = detail::run_gen_data(c, out); break;
    case Mode::train_nvpf: res = detail::run_train_nvpf(c, out); break;
    case Mode::train_tnvpf: res = detail::run_train_tnvpf(c, out); break;
    case Mode::eval: res = detail::run_eval(c, out); break;
    case Mode::grad_check: res = detail::run_grad_check(c, out); break;
    case Mode::inspect: res = detail::run_inspect(c, out); break;
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json inputs = json::object();
  for (const auto& p : {c.train_data, c.test_data})
    if (!p.empty() && fs::is_regular_file(p)) inputs[p] = {{"crc32", blob::crc32_of(read_file(p))}};
  detail::write_json(out / "run_manifest.json", {{"format", "nvpf-run-manifest"},
                                                 {"version", 1},
                                                 {"mode", to_string(mode)},
                                                 {"seed", c.seed},
                                                 {"config", to_json(c, mode)},
                                                 {"inputs", inputs},
                                                 {"outputs", res.files}});
  detail::write_json(out / "timing.json", {{"mode", to_string(mode)}, {"wall_seconds", seconds}});
  return res;
}

// 0 success, 2 configuration error, 3 numeric divergence, 1 anything else.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DivergenceError*>(&e)) return 3;
  return 1;
}

}  // namespace nvpf::harness
