#pragma once

#include <vector>

#include "themegen/eigen_types.hpp"

namespace themegen {

struct DbscanConfig {
  double epsilon = 0.13;  // neighbourhood radius (Euclidean, inclusive)
  int min_points = 2;     // neighbourhood size (including the point itself)
};

inline constexpr int kNoise = -1;

struct DbscanResult {
  std::vector<int> labels;  // kNoise or a cluster id in creation order
  int cluster_count = 0;

  std::vector<int> members(int cluster) const;
  std::vector<int> cluster_sizes() const;
};

// Density clustering over row vectors: core points have at least min_points
// neighbours within epsilon (themselves included); clusters grow from core
// points in index order, so labels are deterministic.  Border points join the
// first cluster that reaches them.
DbscanResult dbscan(const Matd& points, const DbscanConfig& cfg);

}  // namespace themegen
