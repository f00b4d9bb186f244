#include "ndp/cluster.hpp"

#include "ndp/spatial.hpp"

#include <deque>

namespace ndp {

std::vector<std::size_t> ClusterAssignment::sizes() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_clusters), 0);
  for (int id : cluster_id)
    if (id != kNoise) ++out[static_cast<std::size_t>(id)];
  return out;
}

std::vector<std::vector<std::size_t>> ClusterAssignment::members() const {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(num_clusters));
  for (std::size_t i = 0; i < cluster_id.size(); ++i)
    if (cluster_id[i] != kNoise) out[static_cast<std::size_t>(cluster_id[i])].push_back(i);
  return out;
}

ClusterAssignment dbscan(std::span<const Point3> points, double eps, std::size_t min_pts) {
  if (!(eps > 0.0)) throw ContractError("dbscan: eps must be positive");
  if (min_pts < 1) throw ContractError("dbscan: min_pts must be >= 1");

  constexpr int kUnvisited = -2;
  ClusterAssignment out;
  out.cluster_id.assign(points.size(), kUnvisited);
  if (points.empty()) return out;

  const GridIndex index(points, eps);
  std::deque<std::size_t> frontier;

  for (std::size_t i = 0; i < points.size(); ++i) {
    if (out.cluster_id[i] != kUnvisited) continue;
    auto seeds = index.radius_query(points[i], eps);
    if (seeds.size() < min_pts) {
      out.cluster_id[i] = ClusterAssignment::kNoise;
      continue;
    }
    const int cluster = out.num_clusters++;
    out.cluster_id[i] = cluster;
    frontier.assign(seeds.begin(), seeds.end());
    while (!frontier.empty()) {
      const std::size_t j = frontier.front();
      frontier.pop_front();
      if (out.cluster_id[j] == ClusterAssignment::kNoise) {
        out.cluster_id[j] = cluster;  // border point
        continue;
      }
      if (out.cluster_id[j] != kUnvisited) continue;
      out.cluster_id[j] = cluster;
      auto reach = index.radius_query(points[j], eps);
      if (reach.size() >= min_pts) frontier.insert(frontier.end(), reach.begin(), reach.end());
    }
  }
  return out;
}

int largest_cluster(const ClusterAssignment& assign) {
  const auto sizes = assign.sizes();
  int best = -1;
  std::size_t best_size = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    if (sizes[c] > best_size) {
      best = static_cast<int>(c);
      best_size = sizes[c];
    }
  }
  if (best < 0) throw NoClusterError();
  return best;
}

}  // namespace ndp
