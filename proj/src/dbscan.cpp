#include "themegen/dbscan.hpp"

#include <deque>

#include "themegen/errors.hpp"

namespace themegen {

std::vector<int> DbscanResult::members(int cluster) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == cluster) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<int> DbscanResult::cluster_sizes() const {
  std::vector<int> sizes(cluster_count, 0);
  for (int label : labels) {
    if (label >= 0) ++sizes[label];
  }
  return sizes;
}

DbscanResult dbscan(const Matd& points, const DbscanConfig& cfg) {
  if (cfg.epsilon < 0) throw ConfigError("epsilon must be non-negative");
  if (cfg.min_points < 1) throw ConfigError("min_points must be >= 1");

  const int n = static_cast<int>(points.rows());
  const double eps2 = cfg.epsilon * cfg.epsilon;

  auto neighbours = [&](int i) {
    std::vector<int> out;
    for (int j = 0; j < n; ++j) {
      if ((points.row(i) - points.row(j)).squaredNorm() <= eps2) out.push_back(j);
    }
    return out;
  };

  constexpr int kUnvisited = -2;
  DbscanResult result;
  result.labels.assign(n, kUnvisited);

  for (int i = 0; i < n; ++i) {
    if (result.labels[i] != kUnvisited) continue;
    std::vector<int> seed = neighbours(i);
    if (static_cast<int>(seed.size()) < cfg.min_points) {
      result.labels[i] = kNoise;
      continue;
    }
    const int cluster = result.cluster_count++;
    result.labels[i] = cluster;
    std::deque<int> queue(seed.begin(), seed.end());
    while (!queue.empty()) {
      const int j = queue.front();
      queue.pop_front();
      if (result.labels[j] == kNoise) result.labels[j] = cluster;  // border point
      if (result.labels[j] != kUnvisited) continue;
      result.labels[j] = cluster;
      std::vector<int> reach = neighbours(j);
      if (static_cast<int>(reach.size()) >= cfg.min_points) {
        queue.insert(queue.end(), reach.begin(), reach.end());
      }
    }
  }
  return result;
}

}  // namespace themegen
