// DBSCAN density clustering with a deterministic ascending-index scan.
#pragma once

#include "ndp/core.hpp"

#include <span>
#include <vector>

namespace ndp {

class NoClusterError : public ContractError {
 public:
  NoClusterError() : ContractError("no cluster: every point is noise") {}
};

struct ClusterAssignment {
  static constexpr int kNoise = -1;

  std::vector<int> cluster_id;  // per point, kNoise or [0, num_clusters)
  int num_clusters = 0;

  std::vector<std::size_t> sizes() const;
  std::vector<std::vector<std::size_t>> members() const;
};

/// Core point: at least min_pts points (self included) within eps, inclusive.
/// Clusters are numbered in order of their lowest-index core point; a border
/// point joins the first cluster whose expansion reaches it.
ClusterAssignment dbscan(std::span<const Point3> points, double eps, std::size_t min_pts);

/// Id of the largest cluster; ties go to the smallest id. Throws NoClusterError.
int largest_cluster(const ClusterAssignment& assign);

}  // namespace ndp
