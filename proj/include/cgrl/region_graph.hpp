#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cgrl/autodiff.hpp"

namespace cgrl {

// Axis-aligned box: top-left corner, width, height, in scene units.
struct Box {
  double x = 0.0, y = 0.0, w = 0.0, h = 0.0;
  double area() const { return w * h; }
  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  bool operator==(const Box&) const = default;
};

struct RegionProposal {
  Box box;
  std::vector<double> feature;
  std::optional<int> cls;  // ground-truth object class, detections only
};

inline void check_box(const Box& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw DataError("invalid box: width and height must be positive");
  }
}

inline double iou(const Box& a, const Box& b) {
  check_box(a);
  check_box(b);
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

// Directional spatial feature of neighbour j seen from i:
// center offsets normalized by the source box, log size ratios, and IoU.
inline std::array<double, 5> spatial_feature(const Box& a, const Box& b) {
  return {(b.cx() - a.cx()) / a.w, (b.cy() - a.cy()) / a.h, std::log(b.w / a.w),
          std::log(b.h / a.h), iou(a, b)};
}

inline std::array<double, 5> self_spatial_feature() { return {0.0, 0.0, 0.0, 0.0, 1.0}; }

// Undirected IoU-thresholded region graph. Each stored edge carries both
// directional spatial features.
struct SpatialGraph {
  struct Edge {
    int i, j;
    std::array<double, 5> s_ij;
    std::array<double, 5> s_ji;
  };
  std::size_t n = 0;
  std::vector<Edge> edges;

  std::vector<std::pair<int, std::array<double, 5>>> neighbours(int i) const {
    std::vector<std::pair<int, std::array<double, 5>>> out;
    for (const Edge& e : edges) {
      if (e.i == i) out.emplace_back(e.j, e.s_ij);
      if (e.j == i) out.emplace_back(e.i, e.s_ji);
    }
    return out;
  }
};

inline SpatialGraph link_regions(std::span<const RegionProposal> regions, double tau = 0.5) {
  if (regions.empty()) throw DataError("link_regions: at least one region required");
  SpatialGraph g;
  g.n = regions.size();
  for (std::size_t i = 0; i < regions.size(); ++i) {
    for (std::size_t j = i + 1; j < regions.size(); ++j) {
      if (iou(regions[i].box, regions[j].box) >= tau) {
        g.edges.push_back({static_cast<int>(i), static_cast<int>(j),
                           spatial_feature(regions[i].box, regions[j].box),
                           spatial_feature(regions[j].box, regions[i].box)});
      }
    }
  }
  return g;
}

// Region GCN: affine + relu over (feature_i, s_ij, feature_j).
struct RegionGcnParams {
  Parameter *w = nullptr, *b = nullptr;
  int feature_dim = 0;
};

inline RegionGcnParams make_region_gcn(ParamStore& store, const std::string& prefix, int d_r,
                                       Rng& rng) {
  RegionGcnParams p;
  p.feature_dim = d_r;
  const int in_dim = 2 * d_r + 5;
  p.w = &store.add(prefix + "/w",
                   random_matrix(static_cast<std::size_t>(d_r),
                                 static_cast<std::size_t>(in_dim), rng,
                                 1.0 / std::sqrt(static_cast<double>(in_dim))));
  p.b = &store.add(prefix + "/b", Tensor::zeros({static_cast<std::size_t>(d_r)}));
  return p;
}

// Re-encode proposals over the spatial graph. Every region keeps a self term
// E(r_i, s_ii, r_i) unless self_term is disabled, in which case isolated
// regions come out as zero vectors (the strict sum-over-neighbours variant).
inline std::vector<Var> augment_regions(Tape& tape, const std::vector<Var>& features,
                                        const SpatialGraph& graph, const RegionGcnParams& p,
                                        bool self_term = true) {
  if (features.size() != graph.n) {
    throw ShapeError("augment_regions: feature count " + std::to_string(features.size()) +
                     " does not match graph size " + std::to_string(graph.n));
  }
  auto encode_pair = [&](Var a, const std::array<double, 5>& s, Var b) {
    Var spatial = tape.constant(Tensor::vec({s[0], s[1], s[2], s[3], s[4]}));
    return affine_relu(tape, *p.w, *p.b, concat({a, spatial, b}));
  };
  std::vector<Var> out;
  out.reserve(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) {
    std::optional<Var> acc;
    if (self_term) {
      acc = encode_pair(features[i], self_spatial_feature(), features[i]);
    }
    for (const auto& [j, s] : graph.neighbours(static_cast<int>(i))) {
      Var term = encode_pair(features[i], s, features[static_cast<std::size_t>(j)]);
      acc = acc ? add(*acc, term) : term;
    }
    if (!acc) {
      acc = tape.constant(Tensor::zeros({static_cast<std::size_t>(p.feature_dim)}));
    }
    out.push_back(*acc);
  }
  return out;
}

}  // namespace cgrl
