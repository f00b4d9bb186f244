// Deterministic long-tailed synthetic street scenes and held-out primitive anomalies.
#pragma once

#include "ndp/core.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace ndp {

enum class AnomalyShape : std::uint8_t { Box, Hemisphere, Ramp };

const char* to_string(AnomalyShape shape);
AnomalyShape parse_anomaly_shape(const std::string& name);

struct AnomalyKind {
  AnomalyShape shape = AnomalyShape::Box;
  double size_min = 0.4;  // box edge, hemisphere radius, ramp length (meters)
  double size_max = 0.9;
};

struct SceneConfig {
  std::uint64_t seed = 0;
  double extent = 10.0;  // half-width of the square scene
  std::map<std::uint16_t, std::size_t> class_budget;
  double road_noise_sigma = 0.02;
  std::vector<AnomalyKind> eval_anomaly_kinds;
  // Surface sampling density of injected anomalies; <= 0 means "match the road".
  double anomaly_density = 0.0;

  void validate(const ClassSpec& spec) const;

  /// Default long-tail profile: road 45%, vegetation 30%, building 15%,
  /// sidewalk 8%, person / bicycle / void clutter share the rest.
  static SceneConfig long_tail(std::size_t total_points, std::uint64_t seed);
};

/// Road band, sidewalks, buildings, vegetation, tail-class objects and void clutter.
/// Every budgeted class receives exactly its budgeted point count.
Scan generate_scene(const SceneConfig& config, const ClassSpec& spec);

/// Road-area density (points per square meter) implied by a config.
double road_density(const SceneConfig& config, const ClassSpec& spec);

struct InjectedAnomaly {
  AnomalyShape shape;
  double size;
  Point3 base;           // footprint center on the road
  Point3 aabb_min, aabb_max;
  std::uint16_t instance;
  std::size_t first_point;
  std::size_t point_count;
};

struct InjectionResult {
  Scan scan;
  std::vector<InjectedAnomaly> anomalies;
};

/// Appends `count` primitive-shaped surface clusters standing on road points,
/// labeled REAL_OOD with fresh instance ids. Existing points are untouched.
/// Throws ContractError when the scan has no road points.
InjectionResult inject_eval_anomaly(const Scan& scan, const ClassSpec& spec, const SceneConfig& config,
                                    std::uint64_t seed, std::size_t count = 1);

}  // namespace ndp
