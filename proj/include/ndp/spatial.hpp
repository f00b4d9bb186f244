// Uniform grid hash over 3D points for fixed-radius neighbor queries.
#pragma once

#include "ndp/core.hpp"

#include <cmath>
#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

namespace ndp {

class GridIndex {
 public:
  /// Indexes `points` (kept by reference; must outlive the index). cell_size > 0.
  GridIndex(std::span<const Point3> points, double cell_size);

  /// Indices j with |p_j - query| <= radius, ascending. radius must be <= cell_size
  /// for single-ring lookups; larger radii scan more rings.
  std::vector<std::size_t> radius_query(const Point3& query, double radius) const;

  /// Same as radius_query but only counts.
  std::size_t radius_count(const Point3& query, double radius) const;

  /// Calls visit(j) for every j within radius, in no particular order.
  template <typename Visit>
  void for_each_within(const Point3& query, double radius, Visit&& visit) const {
    const double r2 = radius * radius;
    for_each_candidate(query, radius, [&](std::size_t j) {
      if (squared_distance(points_[j], query) <= r2) visit(j);
    });
  }

  /// Batched form of for_each_within over every indexed point: for each occupied
  /// cell, visit(members, candidates) where candidates is a superset of the
  /// neighbors within `radius` of any member. Callers still filter by distance.
  template <typename Visit>
  void for_each_cell(double radius, Visit&& visit) const {
    std::vector<std::size_t> candidates;
    for (const auto& [key, members] : cells_) {
      candidates.clear();
      for_each_candidate(points_[members.front()], radius, [&](std::size_t j) { candidates.push_back(j); });
      visit(members, candidates);
    }
  }

  std::size_t size() const { return points_.size(); }

 private:
  struct CellKey {
    std::int64_t x, y, z;
  };
  static std::uint64_t pack(const CellKey& k);
  CellKey cell_of(const Point3& p) const;

  // Neighbor windows are far narrower than 2^21 cells, so each bucket is visited once.
  template <typename Visit>
  void for_each_candidate(const Point3& query, double radius, Visit&& visit) const {
    const double span = std::ceil(radius / cell_size_);
    if (!(span < double(1 << 20))) throw ContractError("grid query radius too large for the cell size");
    const auto rings = static_cast<std::int64_t>(span);
    const CellKey c = cell_of(query);
    for (std::int64_t dx = -rings; dx <= rings; ++dx)
      for (std::int64_t dy = -rings; dy <= rings; ++dy)
        for (std::int64_t dz = -rings; dz <= rings; ++dz) {
          const auto it = cells_.find(pack({c.x + dx, c.y + dy, c.z + dz}));
          if (it == cells_.end()) continue;
          for (std::size_t j : it->second) visit(j);
        }
  }

  std::span<const Point3> points_;
  double cell_size_;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> cells_;
};

}  // namespace ndp
