#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <tuple>
#include <vector>

#include "nvpf/core/labels.hpp"
#include "nvpf/core/tensor.hpp"

namespace nvpf::grouping {

inline constexpr int kDefaultK = 10;
inline constexpr std::size_t kDefaultNMax = 8;
inline constexpr int kMaxLloydIterations = 100;

struct FaceBox {
  double x = 0.0, y = 0.0;  // center, pixels
  double w = 1.0, h = 1.0;  // size, pixels
  Tensor feature;
  std::optional<FaceEmotion> face_label;

  double area() const { return w * h; }
  void validate() const {
    if (!(w > 0.0) || !(h > 0.0)) throw DomainError("face box needs positive width and height");
    if (feature.rank() != 1) throw ShapeError("face feature must be a vector");
  }
};

struct GroupedFeature {
  Tensor S;                      // M x N_max, padded columns are zero
  std::vector<bool> mask;        // valid columns
  int group_id = 0;
  std::vector<std::size_t> members;  // source index of each valid column

  std::size_t feature_dim() const { return S.dim(0); }
  std::size_t n_max() const { return S.dim(1); }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
  }
  // Per-cell 0/1 map with the shape of S.
  Tensor valid_map() const {
    std::vector<double> v(S.numel());
    for (std::size_t r = 0; r < S.dim(0); ++r)
      for (std::size_t c = 0; c < S.dim(1); ++c) v[r * S.dim(1) + c] = mask[c] ? 1.0 : 0.0;
    return Tensor(S.shape(), std::move(v));
  }
};

struct ClusterResult {
  std::vector<int> assignment;  // per input box
  std::size_t requested_k = 0;
  std::size_t effective_k = 0;
  bool k_clamped = false;
  int iterations = 0;
  std::vector<double> sse_history;  // within-cluster SSE after each assignment step
};

namespace detail {

struct Point {
  double x, y;
};

inline double dist2(const Point& a, const Point& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

}  // namespace detail

// Lloyd's algorithm on box centers with seeded k-means++ seeding. Boxes are
// put in canonical (x, y) order first so the result does not depend on the
// input order. Cluster ids are numbered by first appearance in that order.
inline ClusterResult cluster_faces_detailed(const std::vector<FaceBox>& boxes, int K = kDefaultK,
                                            std::uint64_t seed = 0) {
  if (K < 1) throw ConfigError("cluster_faces: K must be at least 1");
  if (boxes.empty()) throw DomainError("cluster_faces: no boxes");
  const std::size_t n = boxes.size();
  ClusterResult res;
  res.requested_k = static_cast<std::size_t>(K);
  std::size_t k = res.requested_k;
  if (k > n) {
    k = n;
    res.k_clamped = true;
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(boxes[a].x, boxes[a].y) < std::tie(boxes[b].x, boxes[b].y);
  });
  std::vector<detail::Point> pts(n);
  for (std::size_t i = 0; i < n; ++i) pts[i] = {boxes[order[i]].x, boxes[order[i]].y};

  // k-means++ seeding.
  std::mt19937_64 rng(seed);
  std::vector<detail::Point> centers;
  centers.push_back(pts[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) d2[i] = std::min(d2[i], detail::dist2(pts[i], c));
      total += d2[i];
    }
    if (total <= 0.0) break;  // fewer distinct centers than k
    double u = std::uniform_real_distribution<double>(0.0, total)(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      if (u < d2[i]) {
        pick = i;
        break;
      }
      u -= d2[i];
    }
    while (d2[pick] <= 0.0) pick = (pick + n - 1) % n;
    centers.push_back(pts[pick]);
  }

  std::vector<std::size_t> assign(n, 0), prev;
  for (int it = 0; it < kMaxLloydIterations; ++it) {
    double sse = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = detail::dist2(pts[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c) {
        const double d = detail::dist2(pts[i], centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      assign[i] = best;
      sse += bd;
    }
    res.sse_history.push_back(sse);
    res.iterations = it + 1;
    if (assign == prev) break;
    prev = assign;

    // Update step; empty clusters are dropped.
    std::vector<double> sx(centers.size(), 0.0), sy(centers.size(), 0.0);
    std::vector<std::size_t> cnt(centers.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      sx[assign[i]] += pts[i].x;
      sy[assign[i]] += pts[i].y;
      ++cnt[assign[i]];
    }
    std::vector<detail::Point> next;
    std::vector<std::size_t> remap(centers.size(), 0);
    for (std::size_t c = 0; c < centers.size(); ++c) {
      if (cnt[c] == 0) continue;
      remap[c] = next.size();
      next.push_back({sx[c] / static_cast<double>(cnt[c]), sy[c] / static_cast<double>(cnt[c])});
    }
    if (next.size() != centers.size())
      for (auto& a : prev) a = remap[a];
    centers = std::move(next);
  }

  std::vector<int> relabel(centers.size(), -1);
  int next_id = 0;
  res.assignment.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (relabel[assign[i]] < 0) relabel[assign[i]] = next_id++;
    res.assignment[order[i]] = relabel[assign[i]];
  }
  res.effective_k = static_cast<std::size_t>(next_id);
  return res;
}

inline std::vector<int> cluster_faces(const std::vector<FaceBox>& boxes, int K = kDefaultK,
                                      std::uint64_t seed = 0) {
  return cluster_faces_detailed(boxes, K, seed).assignment;
}

// S = G(x_1, ..., x_N): columns in ascending (x, y) order, truncated to the
// N_max largest boxes, zero-padded and masked up to N_max.
inline GroupedFeature stack_group(const std::vector<FaceBox>& members,
                                  std::size_t n_max = kDefaultNMax, int group_id = 0) {
  if (n_max < 1) throw ConfigError("stack_group: N_max must be at least 1");
  if (members.empty()) throw DomainError("stack_group: empty group");
  for (const auto& m : members) m.validate();
  const std::size_t M = members[0].feature.numel();
  for (const auto& m : members)
    if (m.feature.numel() != M)
      throw ShapeError("stack_group: feature lengths " + std::to_string(M) + " and " +
                       std::to_string(m.feature.numel()) + " differ");

  const auto feat_less = [&](std::size_t a, std::size_t b) {
    const auto fa = members[a].feature.data(), fb = members[b].feature.data();
    return std::lexicographical_compare(fa.begin(), fa.end(), fb.begin(), fb.end());
  };
  const auto pos_less = [&](std::size_t a, std::size_t b) {
    const auto& A = members[a];
    const auto& B = members[b];
    if (A.x != B.x) return A.x < B.x;
    if (A.y != B.y) return A.y < B.y;
    return feat_less(a, b);
  };

  std::vector<std::size_t> idx(members.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (idx.size() > n_max) {
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (members[a].area() != members[b].area()) return members[a].area() > members[b].area();
      return pos_less(a, b);
    });
    idx.resize(n_max);
  }
  std::stable_sort(idx.begin(), idx.end(), pos_less);

  GroupedFeature g;
  g.group_id = group_id;
  g.members = idx;
  g.mask.assign(n_max, false);
  std::vector<double> s(M * n_max, 0.0);
  for (std::size_t col = 0; col < idx.size(); ++col) {
    g.mask[col] = true;
    const auto f = members[idx[col]].feature.data();
    for (std::size_t r = 0; r < M; ++r) s[r * n_max + col] = f[r];
  }
  g.S = Tensor({M, n_max}, std::move(s));
  return g;
}

// Clusters a frame's boxes and stacks every cluster. Member indices refer to
// positions in `boxes`.
inline std::vector<GroupedFeature> group_frame(const std::vector<FaceBox>& boxes, int K,
                                               std::size_t n_max, std::uint64_t seed) {
  const auto res = cluster_faces_detailed(boxes, K, seed);
  std::vector<GroupedFeature> out;
  for (int c = 0; c < static_cast<int>(res.effective_k); ++c) {
    std::vector<FaceBox> members;
    std::vector<std::size_t> source;
    for (std::size_t i = 0; i < boxes.size(); ++i)
      if (res.assignment[i] == c) {
        members.push_back(boxes[i]);
        source.push_back(i);
      }
    auto g = stack_group(members, n_max, c);
    for (auto& m : g.members) m = source[m];
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace nvpf::grouping
