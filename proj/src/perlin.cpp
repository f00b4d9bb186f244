#include "ndp/perlin.hpp"

#include "ndp/cluster.hpp"
#include "ndp/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ndp {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

double lerp(double a, double b, double t) { return a + t * (b - a); }

}  // namespace

std::pair<double, double> PerlinField::gradient(std::int64_t i, std::int64_t j) const {
  const std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(i) * 0x632BE59BD9B4E019ull ^
                                                       static_cast<std::uint64_t>(j) * 0x85157AF5ull));
  const double angle = 2.0 * std::numbers::pi * (static_cast<double>(h >> 11) * 0x1.0p-53);
  return {std::cos(angle), std::sin(angle)};
}

double perlin2d(const PerlinField& field, double u, double v) {
  const double x = (u - field.origin_u) / field.cell_size;
  const double y = (v - field.origin_v) / field.cell_size;
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const auto i = static_cast<std::int64_t>(fx);
  const auto j = static_cast<std::int64_t>(fy);
  const double dx = x - fx;
  const double dy = y - fy;

  auto corner = [&](std::int64_t ci, std::int64_t cj, double ox, double oy) {
    const auto [gx, gy] = field.gradient(ci, cj);
    return gx * ox + gy * oy;
  };
  const double n00 = corner(i, j, dx, dy);
  const double n10 = corner(i + 1, j, dx - 1.0, dy);
  const double n01 = corner(i, j + 1, dx, dy - 1.0);
  const double n11 = corner(i + 1, j + 1, dx - 1.0, dy - 1.0);

  const double su = fade(dx);
  const double sv = fade(dy);
  // With unit gradients the raw value is bounded by sqrt(2)/2.
  const double raw = lerp(lerp(n00, n10, su), lerp(n01, n11, su), sv);
  return std::clamp(raw * std::numbers::sqrt2, -1.0, 1.0);
}

void RaiseConfig::validate() const {
  if (!(r > 0.0)) throw ContractError("raise: r must be positive");
  if (!(alpha >= 0.0)) throw ContractError("raise: alpha must be non-negative");
  if (!(rho > 0.0 && rho <= 1.0)) throw ContractError("raise: rho must lie in (0, 1]");
  if (!(dbscan_eps > 0.0)) throw ContractError("raise: dbscan eps must be positive");
  if (dbscan_min_pts < 1) throw ContractError("raise: dbscan min_pts must be >= 1");
}

void RaiseSampler::validate() const {
  if (!(r_min > 0.0 && r_max >= r_min)) throw ContractError("raise: need 0 < r_min <= r_max");
  RaiseConfig probe;
  probe.r = r_min;
  probe.alpha = alpha;
  probe.rho = rho;
  probe.dbscan_eps = dbscan_eps;
  probe.dbscan_min_pts = dbscan_min_pts;
  probe.validate();
}

RaiseConfig RaiseSampler::sample(std::mt19937_64& rng) const {
  RaiseConfig cfg;
  cfg.r = r_min == r_max ? r_min : std::uniform_real_distribution<double>(r_min, r_max)(rng);
  cfg.alpha = alpha;
  cfg.rho = rho;
  cfg.dbscan_eps = dbscan_eps;
  cfg.dbscan_min_pts = dbscan_min_pts;
  cfg.seed = rng();
  return cfg;
}

double linear_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

RaiseResult perlin_raise(const PointCloud& cloud, const LabelMap& labels, const ClassSpec& spec,
                         const RaiseConfig& cfg) {
  cfg.validate();
  labels.validate(cloud.size());

  std::vector<std::size_t> road;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.role[i] == Role::Inlier && labels.semantic[i] == spec.road_id) road.push_back(i);
  if (road.size() < cfg.dbscan_min_pts)
    throw ContractError("perlin_raise: only " + std::to_string(road.size()) + " road points");

  RaiseResult out{cloud, labels, {}};
  RaiseReport& report = out.report;

  std::mt19937_64 rng(cfg.seed);
  const std::size_t center = road[std::uniform_int_distribution<std::size_t>(0, road.size() - 1)(rng)];
  report.center_index = center;
  report.center = cloud.points[center];

  // Ball query restricted to road points: only road geometry is ever lifted.
  std::vector<Point3> road_points;
  road_points.reserve(road.size());
  for (std::size_t i : road) road_points.push_back(cloud.points[i]);
  const GridIndex index(road_points, cfg.r);
  std::vector<std::size_t> patch;
  for (std::size_t k : index.radius_query(report.center, cfg.r)) patch.push_back(road[k]);
  report.neighborhood_size = patch.size();

  PerlinField field;
  field.cell_size = cfg.cell_size > 0.0 ? cfg.cell_size : cfg.r / 2.0;
  field.seed = rng();
  std::uniform_real_distribution<double> offset(0.0, field.cell_size);
  field.origin_u = report.center.x + offset(rng);
  field.origin_v = report.center.y + offset(rng);

  std::vector<double> noise(patch.size());
  for (std::size_t k = 0; k < patch.size(); ++k)
    noise[k] = perlin2d(field, cloud.points[patch[k]].x, cloud.points[patch[k]].y);

  std::vector<std::size_t> selected;  // positions into patch
  if (cfg.rho >= 1.0) {
    for (std::size_t k = 0; k < patch.size(); ++k) selected.push_back(k);
  } else {
    const double threshold = linear_quantile(noise, 1.0 - cfg.rho);
    for (std::size_t k = 0; k < patch.size(); ++k)
      if (noise[k] > threshold) selected.push_back(k);
  }
  report.selected_size = selected.size();
  if (selected.empty()) return out;

  double lo = noise[selected.front()];
  double hi = lo;
  for (std::size_t k : selected) {
    lo = std::min(lo, noise[k]);
    hi = std::max(hi, noise[k]);
  }
  auto gain = [&](std::size_t k) { return hi > lo ? (noise[k] - lo) / (hi - lo) : 1.0; };

  std::vector<Point3> selected_points;
  selected_points.reserve(selected.size());
  for (std::size_t k : selected) selected_points.push_back(cloud.points[patch[k]]);
  const ClusterAssignment clusters = dbscan(selected_points, cfg.dbscan_eps, cfg.dbscan_min_pts);
  report.cluster_sizes = clusters.sizes();
  if (clusters.num_clusters == 0) return out;
  const int keep = largest_cluster(clusters);

  for (std::size_t s = 0; s < selected.size(); ++s) {
    const int id = clusters.cluster_id[s];
    if (id == ClusterAssignment::kNoise) continue;
    const std::size_t point = patch[selected[s]];
    if (id == keep) {
      // Round in float32 but keep the stored lift inside [0, alpha] exactly.
      const float z0 = cloud.points[point].z;
      float z1 = static_cast<float>(double(z0) + cfg.alpha * gain(selected[s]));
      while (double(z1) - double(z0) > cfg.alpha) z1 = std::nextafter(z1, -std::numeric_limits<float>::infinity());
      while (z1 < z0) z1 = std::nextafter(z1, std::numeric_limits<float>::infinity());
      out.cloud.points[point].z = z1;
      report.raised_indices.push_back(point);
      report.delta_z.push_back(static_cast<float>(double(z1) - double(z0)));
    }
    if (id == keep || cfg.label_all_clusters) {
      out.labels.set(point, spec.aux_ood_id, spec);
      report.labeled_indices.push_back(point);
    }
  }
  report.raised_count = report.raised_indices.size();
  report.applied = true;
  return out;
}

}  // namespace ndp
