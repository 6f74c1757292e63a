#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvpf/core/labels.hpp"
#include "nvpf/flow/flow.hpp"
#include "nvpf/grouping/grouping.hpp"

namespace nvpf::synth {

// ---- AU annotation rule ----------------------------------------------------

struct AuPattern {
  FaceEmotion emotion;
  std::vector<int> aus;
};

inline const std::vector<AuPattern>& au_table() {
  static const std::vector<AuPattern> table = {
      {FaceEmotion::happy, {12, 25}},          {FaceEmotion::sad, {4, 15}},
      {FaceEmotion::fearful, {1, 4, 20, 25}},  {FaceEmotion::angry, {4, 7, 24}},
      {FaceEmotion::surprised, {1, 2, 25, 26}}, {FaceEmotion::disgusted, {9, 10, 17}},
      {FaceEmotion::awed, {1, 2, 5, 25}},      {FaceEmotion::neutral, {}}};
  return table;
}

// Category whose full pattern is contained in `aus`; the largest pattern wins,
// equal sizes resolve in table order. No match gives Neutral.
inline FaceEmotion au_to_emotion(const std::set<int>& aus) {
  FaceEmotion best = FaceEmotion::neutral;
  std::size_t best_size = 0;
  for (const auto& p : au_table()) {
    if (p.aus.empty()) continue;
    const bool match = std::all_of(p.aus.begin(), p.aus.end(), [&](int a) { return aus.count(a) > 0; });
    if (match && p.aus.size() > best_size) {
      best = p.emotion;
      best_size = p.aus.size();
    }
  }
  return best;
}

// Majority valence of the member faces; ties go to neutral.
inline GroupClass group_label_from_faces(const std::vector<FaceEmotion>& faces) {
  std::array<std::size_t, kNumClasses> votes{};
  for (auto f : faces) ++votes[index_of(valence_of(f))];
  const auto top = *std::max_element(votes.begin(), votes.end());
  if (std::count(votes.begin(), votes.end(), top) > 1) return GroupClass::neutral;
  return class_from_index(argmax_index(votes));
}

// ---- seeding ---------------------------------------------------------------

// splitmix64 finalizer; used to give every sample its own stream.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// ---- group samples ---------------------------------------------------------

struct GroupGenConfig {
  std::size_t feature_dim = 8;  // M
  std::size_t n_max = 4;
  std::size_t min_members = 4;
  std::size_t max_members = 4;
  double separation = 3.0;
  double noise_std = 1.0;
  // Low-resolution faces: small boxes whose features are much noisier.
  double corrupted_rate = 0.1;
  double corrupted_std = 4.0;

  void validate() const {
    if (feature_dim < kNumClasses) throw ConfigError("synth: feature_dim must be at least 3");
    if (n_max == 0 || min_members == 0 || min_members > max_members || max_members > n_max)
      throw ConfigError("synth: need 1 <= min_members <= max_members <= n_max");
    if (!(separation >= 0.0) || !(noise_std >= 0.0) || !(corrupted_std >= 0.0))
      throw ConfigError("synth: separation and noise must be non-negative");
    if (!(corrupted_rate >= 0.0 && corrupted_rate <= 1.0))
      throw ConfigError("synth: corrupted_rate must lie in [0, 1]");
  }
};

// Class means: separation / sqrt(2 n_c) on rows r with r % 3 == c, where n_c
// is the number of such rows. Every pair of means is `separation` apart.
inline std::vector<double> class_mean(GroupClass c, std::size_t M, double separation) {
  const std::size_t ci = index_of(c);
  std::size_t n_c = 0;
  for (std::size_t r = 0; r < M; ++r) n_c += (r % kNumClasses == ci);
  std::vector<double> mu(M, 0.0);
  for (std::size_t r = 0; r < M; ++r)
    if (r % kNumClasses == ci) mu[r] = separation / std::sqrt(2.0 * static_cast<double>(n_c));
  return mu;
}

struct GroupSample {
  std::vector<grouping::FaceBox> faces;
  grouping::GroupedFeature group;
  GroupClass label = GroupClass::neutral;
};

inline std::vector<FaceEmotion> faces_with_valence(GroupClass c) {
  std::vector<FaceEmotion> out;
  for (auto e : kAllFaceEmotions)
    if (valence_of(e) == c) out.push_back(e);
  return out;
}

// N faces around (cx, cy) whose features come from the class cluster.
inline std::vector<grouping::FaceBox> gen_faces(GroupClass c, std::size_t N, const GroupGenConfig& cfg,
                                                std::mt19937_64& rng, double cx, double cy) {
  const auto mu = class_mean(c, cfg.feature_dim, cfg.separation);
  const auto emotions = faces_with_valence(c);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0), jitter(-120.0, 120.0);
  std::uniform_int_distribution<std::size_t> pick(0, emotions.size() - 1);
  std::vector<grouping::FaceBox> faces;
  for (std::size_t i = 0; i < N; ++i) {
    const bool corrupted = unit(rng) < cfg.corrupted_rate;
    const double sd = corrupted ? cfg.corrupted_std : cfg.noise_std;
    std::vector<double> f(cfg.feature_dim);
    for (std::size_t r = 0; r < f.size(); ++r) f[r] = mu[r] + sd * noise(rng);
    const double side = corrupted ? 40.0 + 40.0 * unit(rng) : 100.0 + 60.0 * unit(rng);
    const double x = cx + jitter(rng), y = cy + jitter(rng);
    faces.push_back({x, y, side, side * (0.9 + 0.2 * unit(rng)), Tensor::vector(std::move(f)),
                     emotions[pick(rng)]});
  }
  return faces;
}

inline GroupSample gen_group_sample(GroupClass c, std::size_t N, const GroupGenConfig& cfg,
                                    std::uint64_t seed, double cx = 500.0, double cy = 500.0) {
  cfg.validate();
  if (N == 0 || N > cfg.n_max) throw ConfigError("synth: group size must lie in [1, n_max]");
  std::mt19937_64 rng(seed);
  GroupSample s;
  s.faces = gen_faces(c, N, cfg, rng, cx, cy);
  s.group = grouping::stack_group(s.faces, cfg.n_max);
  std::vector<FaceEmotion> labels;
  for (const auto& f : s.faces) labels.push_back(*f.face_label);
  s.label = group_label_from_faces(labels);
  return s;
}

inline GroupSample gen_group_sample(GroupClass c, std::size_t N, std::size_t M, double separation,
                                    std::uint64_t seed) {
  GroupGenConfig cfg;
  cfg.feature_dim = M;
  cfg.n_max = std::max(N, cfg.n_max);
  cfg.min_members = cfg.max_members = N;
  cfg.separation = separation;
  return gen_group_sample(c, N, cfg, seed);
}

// n samples with classes cycling positive, negative, neutral.
inline std::vector<flow::LabeledGroup> gen_group_dataset(std::size_t n, const GroupGenConfig& cfg,
                                                         std::uint64_t seed) {
  cfg.validate();
  std::vector<flow::LabeledGroup> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    const std::size_t span = cfg.max_members - cfg.min_members + 1;
    const std::size_t N = cfg.min_members + static_cast<std::size_t>(s % span);
    auto g = gen_group_sample(class_from_index(i % kNumClasses), N, cfg, s);
    g.group.group_id = static_cast<int>(i);
    out.push_back({std::move(g.group), g.label});
  }
  return out;
}

// ---- scenes and videos -----------------------------------------------------

struct GroupRegion {
  std::vector<std::size_t> members;  // indices into SceneRecord::faces
  GroupClass label = GroupClass::neutral;
};

struct SceneRecord {
  std::int64_t frame_id = 0;
  std::vector<grouping::FaceBox> faces;
  std::vector<GroupRegion> groups;
  GroupClass frame_label = GroupClass::neutral;
  std::int64_t video_id = 0;
  GroupClass video_label = GroupClass::neutral;

  void validate() const {
    std::vector<int> owner(faces.size(), 0);
    for (const auto& g : groups)
      for (auto m : g.members) {
        if (m >= faces.size()) throw DomainError("scene: group member out of range");
        ++owner[m];
      }
    for (int o : owner)
      if (o != 1) throw DomainError("scene: every face must belong to exactly one group");
  }
};

struct VideoGenConfig {
  GroupGenConfig group;
  std::size_t frames = 5;
  std::size_t groups_per_frame = 2;
  double flip_prob = 0.1;
  double group_spacing = 800.0;  // pixels between group centers

  void validate() const {
    group.validate();
    if (frames == 0) throw ConfigError("synth: a video needs at least one frame");
    if (groups_per_frame == 0) throw ConfigError("synth: groups_per_frame must be positive");
    if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("synth: flip_prob must lie in [0, 1]");
  }
};

// Frames whose content shows the video class; each frame label independently
// flips to a uniformly chosen other class with probability flip_prob.
inline std::vector<SceneRecord> gen_video(GroupClass c, const VideoGenConfig& cfg, std::uint64_t seed,
                                          std::int64_t video_id = 0) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> other(1, kNumClasses - 1);
  const std::size_t span = cfg.group.max_members - cfg.group.min_members + 1;
  std::vector<SceneRecord> out;
  for (std::size_t t = 0; t < cfg.frames; ++t) {
    SceneRecord rec;
    rec.frame_id = static_cast<std::int64_t>(t);
    rec.video_id = video_id;
    rec.video_label = c;
    rec.frame_label = c;
    if (unit(rng) < cfg.flip_prob)
      rec.frame_label = class_from_index((index_of(c) + other(rng)) % kNumClasses);
    for (std::size_t g = 0; g < cfg.groups_per_frame; ++g) {
      const std::size_t N = cfg.group.min_members + static_cast<std::size_t>(rng() % span);
      const double cx = 300.0 + cfg.group_spacing * static_cast<double>(g);
      auto faces = gen_faces(c, N, cfg.group, rng, cx, 500.0);
      GroupRegion region;
      std::vector<FaceEmotion> labels;
      for (auto& f : faces) {
        region.members.push_back(rec.faces.size());
        labels.push_back(*f.face_label);
        rec.faces.push_back(std::move(f));
      }
      region.label = group_label_from_faces(labels);
      rec.groups.push_back(std::move(region));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline std::vector<SceneRecord> gen_video(GroupClass c, std::size_t T, std::size_t groups_per_frame,
                                          std::uint64_t seed) {
  VideoGenConfig cfg;
  cfg.frames = T;
  cfg.groups_per_frame = groups_per_frame;
  return gen_video(c, cfg, seed);
}

// n videos with classes cycling positive, negative, neutral; video ids start
// at first_id.
inline std::vector<SceneRecord> gen_video_dataset(std::size_t n, const VideoGenConfig& cfg,
                                                  std::uint64_t seed, std::int64_t first_id = 0) {
  std::vector<SceneRecord> out;
  for (std::size_t v = 0; v < n; ++v) {
    auto frames = gen_video(class_from_index(v % kNumClasses), cfg, derive_seed(seed, v),
                            first_id + static_cast<std::int64_t>(v));
    for (auto& f : frames) out.push_back(std::move(f));
  }
  return out;
}

// Scenes holding one group each, so group-level data shares the file format.
inline std::vector<SceneRecord> group_dataset_records(std::size_t n, const GroupGenConfig& cfg,
                                                      std::uint64_t seed) {
  std::vector<SceneRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    const std::size_t span = cfg.max_members - cfg.min_members + 1;
    const std::size_t N = cfg.min_members + static_cast<std::size_t>(s % span);
    auto g = gen_group_sample(class_from_index(i % kNumClasses), N, cfg, s);
    SceneRecord rec;
    rec.frame_id = 0;
    rec.video_id = static_cast<std::int64_t>(i);
    rec.faces = std::move(g.faces);
    GroupRegion region{{}, g.label};
    for (std::size_t k = 0; k < rec.faces.size(); ++k) region.members.push_back(k);
    rec.groups.push_back(std::move(region));
    rec.frame_label = rec.video_label = g.label;
    out.push_back(std::move(rec));
  }
  return out;
}

// Stacks every annotated group of a scene.
inline std::vector<flow::LabeledGroup> scene_groups(const SceneRecord& rec, std::size_t n_max) {
  std::vector<flow::LabeledGroup> out;
  for (std::size_t g = 0; g < rec.groups.size(); ++g) {
    std::vector<grouping::FaceBox> members;
    for (auto m : rec.groups[g].members) members.push_back(rec.faces.at(m));
    auto stacked = grouping::stack_group(members, n_max, static_cast<int>(g));
    for (auto& m : stacked.members) m = rec.groups[g].members[m];
    out.push_back({std::move(stacked), rec.groups[g].label});
  }
  return out;
}

struct Video {
  std::int64_t video_id = 0;
  GroupClass label = GroupClass::neutral;
  std::vector<SceneRecord> frames;  // ordered by frame_id
};

// Groups records by video id (ascending), frames sorted by frame id.
inline std::vector<Video> collect_videos(const std::vector<SceneRecord>& records) {
  std::map<std::int64_t, Video> by_id;
  for (const auto& r : records) {
    auto& v = by_id[r.video_id];
    if (!v.frames.empty() && v.label != r.video_label)
      throw DomainError("video " + std::to_string(r.video_id) + " has inconsistent labels");
    v.video_id = r.video_id;
    v.label = r.video_label;
    v.frames.push_back(r);
  }
  std::vector<Video> out;
  for (auto& [id, v] : by_id) {
    std::stable_sort(v.frames.begin(), v.frames.end(),
                     [](const SceneRecord& a, const SceneRecord& b) { return a.frame_id < b.frame_id; });
    out.push_back(std::move(v));
  }
  return out;
}

struct Split {
  std::vector<std::int64_t> train, test;
};

// Split by video id; floor(test_fraction * n) ids go to test.
inline Split split_by_video(std::vector<std::int64_t> ids, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("split: test_fraction must lie in [0, 1)");
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(ids.size()) + 1e-9));
  Split s;
  s.test.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// ---- file formats ----------------------------------------------------------

inline nlohmann::json to_json(const grouping::FaceBox& f) {
  nlohmann::json j = {{"center", {f.x, f.y}}, {"size", {f.w, f.h}}, {"feature", f.feature.values()}};
  j["face_label"] = f.face_label ? nlohmann::json(std::string(to_string(*f.face_label))) : nlohmann::json();
  return j;
}

inline nlohmann::json to_json(const SceneRecord& r) {
  nlohmann::json faces = nlohmann::json::array(), groups = nlohmann::json::array();
  for (const auto& f : r.faces) faces.push_back(to_json(f));
  for (const auto& g : r.groups)
    groups.push_back({{"members", g.members}, {"label", std::string(to_string(g.label))}});
  return {{"frame_id", r.frame_id},
          {"faces", faces},
          {"groups", groups},
          {"frame_label", std::string(to_string(r.frame_label))},
          {"video_id", r.video_id},
          {"video_label", std::string(to_string(r.video_label))}};
}

inline SceneRecord scene_from_json(const nlohmann::json& j) {
  SceneRecord r;
  r.frame_id = j.at("frame_id").get<std::int64_t>();
  r.video_id = j.at("video_id").get<std::int64_t>();
  r.frame_label = parse_group_class(j.at("frame_label").get<std::string>());
  r.video_label = parse_group_class(j.at("video_label").get<std::string>());
  for (const auto& f : j.at("faces")) {
    grouping::FaceBox b;
    const auto c = f.at("center").get<std::array<double, 2>>();
    const auto s = f.at("size").get<std::array<double, 2>>();
    b.x = c[0];
    b.y = c[1];
    b.w = s[0];
    b.h = s[1];
    b.feature = Tensor::vector(f.at("feature").get<std::vector<double>>());
    if (!f.at("face_label").is_null()) b.face_label = parse_face_emotion(f.at("face_label").get<std::string>());
    b.validate();
    r.faces.push_back(std::move(b));
  }
  for (const auto& g : j.at("groups"))
    r.groups.push_back({g.at("members").get<std::vector<std::size_t>>(),
                        parse_group_class(g.at("label").get<std::string>())});
  r.validate();
  return r;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<SceneRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<SceneRecord> parse_dataset(std::istream& in) {
  std::vector<SceneRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(scene_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(e.what(), n);
    } catch (const DomainError& e) {
      throw FormatError(e.what(), n);
    } catch (const ShapeError& e) {
      throw FormatError(e.what(), n);
    }
  }
  return out;
}

inline std::vector<SceneRecord> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_dataset(in);
}

// ---- generator config I/O --------------------------------------------------

inline nlohmann::json to_json(const GroupGenConfig& c) {
  return {{"feature_dim", c.feature_dim}, {"n_max", c.n_max},
          {"min_members", c.min_members}, {"max_members", c.max_members},
          {"separation", c.separation},   {"noise_std", c.noise_std},
          {"corrupted_rate", c.corrupted_rate}, {"corrupted_std", c.corrupted_std}};
}

inline GroupGenConfig group_gen_config_from_json(const nlohmann::json& j, GroupGenConfig c = {}) {
  try {
    c.feature_dim = j.value("feature_dim", c.feature_dim);
    c.n_max = j.value("n_max", c.n_max);
    c.min_members = j.value("min_members", c.min_members);
    c.max_members = j.value("max_members", c.max_members);
    c.separation = j.value("separation", c.separation);
    c.noise_std = j.value("noise_std", c.noise_std);
    c.corrupted_rate = j.value("corrupted_rate", c.corrupted_rate);
    c.corrupted_std = j.value("corrupted_std", c.corrupted_std);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  c.validate();
  return c;
}

inline nlohmann::json to_json(const VideoGenConfig& c) {
  return {{"group", to_json(c.group)}, {"frames", c.frames}, {"groups_per_frame", c.groups_per_frame},
          {"flip_prob", c.flip_prob}, {"group_spacing", c.group_spacing}};
}

inline VideoGenConfig video_gen_config_from_json(const nlohmann::json& j, VideoGenConfig c = {}) {
  try {
    if (j.contains("group")) c.group = group_gen_config_from_json(j.at("group"), c.group);
    c.frames = j.value("frames", c.frames);
    c.groups_per_frame = j.value("groups_per_frame", c.groups_per_frame);
    c.flip_prob = j.value("flip_prob", c.flip_prob);
    c.group_spacing = j.value("group_spacing", c.group_spacing);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("video config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace nvpf::synth
