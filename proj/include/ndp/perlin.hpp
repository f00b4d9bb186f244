// 2D gradient noise and the Perlin Raise road-anomaly synthesis.
#pragma once

#include "ndp/core.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace ndp {

/// Lattice gradient noise. Gradients are unit vectors hashed from (seed, i, j),
/// so the field needs no stored table and any region can be evaluated.
struct PerlinField {
  double cell_size = 1.0;
  std::uint64_t seed = 0;
  double origin_u = 0.0;
  double origin_v = 0.0;

  /// Unit gradient at lattice node (i, j).
  std::pair<double, double> gradient(std::int64_t i, std::int64_t j) const;
};

/// Noise value in [-1, 1]; exactly 0 at lattice nodes.
double perlin2d(const PerlinField& field, double u, double v);

struct RaiseConfig {
  double r = 1.0;
  double alpha = 0.4;
  double rho = 0.3;
  double dbscan_eps = 0.5;
  std::size_t dbscan_min_pts = 3;
  std::uint64_t seed = 0;
  // <= 0 means r / 2.
  double cell_size = 0.0;
  // Label every DBSCAN cluster of the selected set as OOD, not just the raised one.
  bool label_all_clusters = false;

  void validate() const;
};

/// Patch radius range; a radius is drawn uniformly per raise.
struct RaiseSampler {
  double r_min = 0.75;
  double r_max = 1.5;
  double alpha = 0.4;
  double rho = 0.3;
  double dbscan_eps = 0.5;
  std::size_t dbscan_min_pts = 3;

  void validate() const;
  RaiseConfig sample(std::mt19937_64& rng) const;
};

struct RaiseReport {
  bool applied = false;
  std::size_t center_index = 0;
  Point3 center;
  std::size_t neighborhood_size = 0;
  std::size_t selected_size = 0;
  std::vector<std::size_t> cluster_sizes;
  std::size_t raised_count = 0;
  std::vector<std::size_t> raised_indices;  // ascending
  std::vector<float> delta_z;               // parallel to raised_indices
  std::vector<std::size_t> labeled_indices;  // ascending, superset of raised_indices
};

struct RaiseResult {
  PointCloud cloud;
  LabelMap labels;
  RaiseReport report;
};

/// Lifts a noise-selected road patch and relabels it as an auxiliary anomaly.
/// Throws ContractError when fewer than dbscan_min_pts road points exist.
RaiseResult perlin_raise(const PointCloud& cloud, const LabelMap& labels, const ClassSpec& spec,
                         const RaiseConfig& cfg);

/// Empirical quantile with linear interpolation between order statistics.
double linear_quantile(std::vector<double> values, double q);

}  // namespace ndp
