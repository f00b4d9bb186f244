#include "ndp/spatial.hpp"

#include <algorithm>
#include <cmath>

namespace ndp {

GridIndex::GridIndex(std::span<const Point3> points, double cell_size) : points_(points), cell_size_(cell_size) {
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) throw ContractError("grid cell size must be positive");
  cells_.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) cells_[pack(cell_of(points[i]))].push_back(i);
}

std::uint64_t GridIndex::pack(const CellKey& k) {
  // 21 bits per axis, two's complement wrapped; collisions only merge buckets.
  constexpr std::uint64_t mask = (std::uint64_t{1} << 21) - 1;
  return (static_cast<std::uint64_t>(k.x) & mask) | ((static_cast<std::uint64_t>(k.y) & mask) << 21) |
         ((static_cast<std::uint64_t>(k.z) & mask) << 42);
}

GridIndex::CellKey GridIndex::cell_of(const Point3& p) const {
  return {static_cast<std::int64_t>(std::floor(p.x / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.y / cell_size_)),
          static_cast<std::int64_t>(std::floor(p.z / cell_size_))};
}

std::vector<std::size_t> GridIndex::radius_query(const Point3& query, double radius) const {
  std::vector<std::size_t> out;
  for_each_within(query, radius, [&](std::size_t j) { out.push_back(j); });
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t GridIndex::radius_count(const Point3& query, double radius) const {
  std::size_t n = 0;
  for_each_within(query, radius, [&](std::size_t) { ++n; });
  return n;
}

}  // namespace ndp
