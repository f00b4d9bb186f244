#include "ndp/scenegen.hpp"

#include "ndp/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace ndp {
namespace {

constexpr double kRoadHalfWidth = 0.45;  // fractions of the extent
constexpr double kSidewalkOuter = 0.60;
constexpr double kBuildingInner = 0.65;
constexpr float kSidewalkHeight = 0.12f;

// The nominal class ids of the synthetic default spec.
constexpr std::uint16_t kSidewalk = 48;
constexpr std::uint16_t kBuilding = 50;
constexpr std::uint16_t kVegetation = 70;
constexpr std::uint16_t kPerson = 30;
constexpr std::uint16_t kBicycle = 11;

struct Footprint {
  double x0, x1, y0, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

class SceneBuilder {
 public:
  SceneBuilder(const SceneConfig& cfg, const ClassSpec& spec) : cfg_(cfg), spec_(spec), rng_(cfg.seed) {
    scan_.cloud.intensity.emplace();
  }

  Scan finish() { return std::move(scan_); }

  double uniform(double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng_); }
  double gaussian(double sigma) { return sigma > 0.0 ? std::normal_distribution<double>(0.0, sigma)(rng_) : 0.0; }
  int coin() { return std::uniform_int_distribution<int>(0, 1)(rng_); }

  void add(double x, double y, double z, std::uint16_t sem, std::uint16_t inst, float reflectance) {
    scan_.cloud.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)}, reflectance);
    scan_.labels.push_back(sem, inst, spec_);
  }

  std::uint16_t next_instance() { return ++instance_; }

  void road(std::size_t n) {
    const double e = cfg_.extent;
    for (std::size_t i = 0; i < n; ++i)
      add(uniform(-e, e), uniform(-kRoadHalfWidth * e, kRoadHalfWidth * e), gaussian(cfg_.road_noise_sigma),
          spec_.road_id, 0, 0.2f);
  }

  void sidewalk(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto [x, y] = sidewalk_xy();
      add(x, y, kSidewalkHeight + gaussian(cfg_.road_noise_sigma), kSidewalk, 0, 0.3f);
    }
  }

  std::pair<double, double> sidewalk_xy() {
    const double e = cfg_.extent;
    const double side = coin() ? 1.0 : -1.0;
    return {uniform(-e, e), side * uniform(kRoadHalfWidth * e, kSidewalkOuter * e)};
  }

  void buildings(std::size_t n) {
    const double e = cfg_.extent;
    const auto parts = split(n, 600);
    for (std::size_t b = 0; b < parts.size(); ++b) {
      const double width = uniform(3.0, 6.0);
      const double depth = uniform(2.0, std::max(2.5, (1.0 - kBuildingInner) * e));
      const double height = uniform(4.0, 8.0);
      const double side = (b % 2 == 0) ? 1.0 : -1.0;
      const double cx = uniform(-e + width / 2, e - width / 2);
      const double y_near = side * kBuildingInner * e;
      const double y_far = y_near + side * depth;
      Footprint fp{cx - width / 2, cx + width / 2, std::min(y_near, y_far), std::max(y_near, y_far)};
      footprints_.push_back(fp);
      const std::uint16_t inst = next_instance();
      const double wall_x = width * height, wall_y = depth * height, roof = width * depth;
      const double total = 2 * wall_x + 2 * wall_y + roof;
      for (std::size_t i = 0; i < parts[b]; ++i) {
        double pick = uniform(0.0, total);
        double x, y, z;
        if (pick < 2 * wall_x) {
          x = uniform(fp.x0, fp.x1);
          y = pick < wall_x ? fp.y0 : fp.y1;
          z = uniform(0.0, height);
        } else if ((pick -= 2 * wall_x) < 2 * wall_y) {
          x = pick < wall_y ? fp.x0 : fp.x1;
          y = uniform(fp.y0, fp.y1);
          z = uniform(0.0, height);
        } else {
          x = uniform(fp.x0, fp.x1);
          y = uniform(fp.y0, fp.y1);
          z = height;
        }
        add(x, y, z, kBuilding, inst, 0.5f);
      }
    }
  }

  void vegetation(std::size_t n) {
    const double e = cfg_.extent;
    for (std::size_t count : split(n, 400)) {
      double cx = 0, cy = 0;
      for (int attempt = 0; attempt < 64; ++attempt) {
        const double side = coin() ? 1.0 : -1.0;
        cx = uniform(-e, e);
        cy = side * uniform(kSidewalkOuter * e, e);
        if (!inside_building(cx, cy)) break;
      }
      const double rx = uniform(0.8, 2.0), ry = uniform(0.8, 2.0), rz = uniform(0.8, 1.8);
      const double cz = rz + uniform(0.0, 1.5);
      const std::uint16_t inst = next_instance();
      for (std::size_t i = 0; i < count; ++i) {
        // Canopy volume samples, denser toward the surface.
        const double zc = uniform(-1.0, 1.0);
        const double phi = uniform(0.0, 2.0 * std::numbers::pi);
        const double s = std::sqrt(1.0 - zc * zc);
        const double shell = std::cbrt(uniform(0.3, 1.0));
        add(cx + rx * shell * s * std::cos(phi), cy + ry * shell * s * std::sin(phi),
            std::max(0.0, cz + rz * shell * zc), kVegetation, inst, 0.4f);
      }
    }
  }

  // Upright cylinder standing on the sidewalk (people, bins, poles).
  void cylinders(std::uint16_t sem, std::size_t n, std::size_t per_object, double radius, double height,
                 float reflectance) {
    for (std::size_t count : split(n, per_object)) {
      const auto [cx, cy] = sidewalk_xy();
      const std::uint16_t inst = next_instance();
      for (std::size_t i = 0; i < count; ++i) {
        const double phi = uniform(0.0, 2.0 * std::numbers::pi);
        const double rr = radius * std::sqrt(uniform(0.6, 1.0));
        add(cx + rr * std::cos(phi), cy + rr * std::sin(phi), kSidewalkHeight + uniform(0.0, height), sem, inst,
            reflectance);
      }
    }
  }

  void bicycles(std::size_t n) {
    for (std::size_t count : split(n, 60)) {
      const auto [cx, cy] = sidewalk_xy();
      const std::uint16_t inst = next_instance();
      for (std::size_t i = 0; i < count; ++i) {
        // Two wheels plus a frame bar.
        const int part = std::uniform_int_distribution<int>(0, 2)(rng_);
        double x, z;
        if (part < 2) {
          const double phi = uniform(0.0, 2.0 * std::numbers::pi);
          x = (part == 0 ? -0.55 : 0.55) + 0.33 * std::cos(phi);
          z = 0.35 + 0.33 * std::sin(phi);
        } else {
          x = uniform(-0.55, 0.55);
          z = uniform(0.35, 1.0);
        }
        add(cx + x, cy + uniform(-0.05, 0.05), kSidewalkHeight + z, kBicycle, inst, 0.6f);
      }
    }
  }

  bool inside_building(double x, double y) const {
    return std::any_of(footprints_.begin(), footprints_.end(), [&](const Footprint& f) { return f.contains(x, y); });
  }

 private:
  // Splits n points across objects of roughly `per_object` points each.
  static std::vector<std::size_t> split(std::size_t n, std::size_t per_object) {
    if (n == 0) return {};
    const std::size_t objects = std::max<std::size_t>(1, (n + per_object - 1) / per_object);
    std::vector<std::size_t> out(objects, n / objects);
    for (std::size_t i = 0; i < n % objects; ++i) ++out[i];
    return out;
  }

  const SceneConfig& cfg_;
  const ClassSpec& spec_;
  std::mt19937_64 rng_;
  Scan scan_;
  std::uint16_t instance_ = 0;
  std::vector<Footprint> footprints_;
};

}  // namespace

const char* to_string(AnomalyShape shape) {
  switch (shape) {
    case AnomalyShape::Box: return "box";
    case AnomalyShape::Hemisphere: return "hemisphere";
    case AnomalyShape::Ramp: return "ramp";
  }
  return "?";
}

AnomalyShape parse_anomaly_shape(const std::string& name) {
  if (name == "box") return AnomalyShape::Box;
  if (name == "hemisphere") return AnomalyShape::Hemisphere;
  if (name == "ramp") return AnomalyShape::Ramp;
  throw ContractError("unknown anomaly shape '" + name + "'");
}

void SceneConfig::validate(const ClassSpec& spec) const {
  if (!(extent > 1.0)) throw ContractError("scene extent must exceed 1 m");
  if (!(road_noise_sigma >= 0.0)) throw ContractError("road noise sigma must be non-negative");
  if (!class_budget.contains(spec.road_id)) throw ContractError("scene budget must include the road class");
  for (const auto& [id, count] : class_budget) {
    if (count == 0) throw ContractError("class budgets must be positive");
    if (spec.role_of(id) != Role::Inlier && id != spec.void_id)
      throw ContractError("scene budget names class " + std::to_string(id) + " which is neither inlier nor void");
  }
  for (const auto& kind : eval_anomaly_kinds)
    if (!(kind.size_min > 0.0 && kind.size_max >= kind.size_min))
      throw ContractError("anomaly size range must satisfy 0 < min <= max");
}

SceneConfig SceneConfig::long_tail(std::size_t total_points, std::uint64_t seed) {
  SceneConfig cfg;
  cfg.seed = seed;
  auto share = [&](double f) { return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * total_points))); };
  cfg.class_budget = {{40, share(0.45)},  {70, share(0.30)},  {50, share(0.15)}, {48, share(0.08)},
                      {30, share(0.005)}, {11, share(0.005)}, {0, share(0.01)}};
  cfg.eval_anomaly_kinds = {{AnomalyShape::Box, 0.4, 0.9},
                            {AnomalyShape::Hemisphere, 0.3, 0.6},
                            {AnomalyShape::Ramp, 0.6, 1.2}};
  return cfg;
}

double road_density(const SceneConfig& config, const ClassSpec& spec) {
  const auto it = config.class_budget.find(spec.road_id);
  const double n = it == config.class_budget.end() ? 0.0 : static_cast<double>(it->second);
  return n / (2.0 * config.extent * 2.0 * kRoadHalfWidth * config.extent);
}

Scan generate_scene(const SceneConfig& config, const ClassSpec& spec) {
  config.validate(spec);
  SceneBuilder b(config, spec);
  // Buildings first: vegetation placement avoids their footprints.
  for (const auto& [id, count] : config.class_budget) {
    if (id == kBuilding) b.buildings(count);
  }
  for (const auto& [id, count] : config.class_budget) {
    if (id == spec.road_id) b.road(count);
    else if (id == kSidewalk) b.sidewalk(count);
    else if (id == kVegetation) b.vegetation(count);
    else if (id == kPerson) b.cylinders(id, count, 60, 0.25, 1.7, 0.6f);
    else if (id == kBicycle) b.bicycles(count);
    else if (id == spec.void_id) b.cylinders(id, count, 40, 0.3, 1.0, 0.7f);
    else if (id != kBuilding) b.cylinders(id, count, 80, 0.5, 1.2, 0.5f);
  }
  return b.finish();
}

namespace {

struct Frame {
  double cx, cy, z0, cos_yaw, sin_yaw;
  Point3 to_world(double u, double v, double h) const {
    return {static_cast<float>(cx + u * cos_yaw - v * sin_yaw), static_cast<float>(cy + u * sin_yaw + v * cos_yaw),
            static_cast<float>(z0 + h)};
  }
};

void sample_primitive(AnomalyShape shape, double s, const Frame& f, std::size_t n, std::mt19937_64& rng,
                      std::vector<Point3>& out) {
  auto u01 = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };
  for (std::size_t i = 0; i < n; ++i) {
    switch (shape) {
      case AnomalyShape::Box: {
        // Top face plus four side faces, equal areas.
        const int face = std::uniform_int_distribution<int>(0, 4)(rng);
        const double a = (u01() - 0.5) * s, b = u01() * s;
        switch (face) {
          case 0: out.push_back(f.to_world(a, (u01() - 0.5) * s, s)); break;
          case 1: out.push_back(f.to_world(a, -s / 2, b)); break;
          case 2: out.push_back(f.to_world(a, s / 2, b)); break;
          case 3: out.push_back(f.to_world(-s / 2, a, b)); break;
          default: out.push_back(f.to_world(s / 2, a, b)); break;
        }
        break;
      }
      case AnomalyShape::Hemisphere: {
        // Uniform height on a sphere gives uniform surface area.
        const double h = u01() * s;
        const double phi = 2.0 * std::numbers::pi * u01();
        const double ring = std::sqrt(std::max(0.0, s * s - h * h));
        out.push_back(f.to_world(ring * std::cos(phi), ring * std::sin(phi), h));
        break;
      }
      case AnomalyShape::Ramp: {
        // Wedge: length s along u, width s, rising to s/2 at u = +s/2.
        const double top = s * std::hypot(1.0, 0.5), back = s * 0.5, side = 0.25 * s;
        const double pick = u01() * (top + back + 2 * side);
        const double v = (u01() - 0.5) * s;
        if (pick < top) {
          const double t = u01();
          out.push_back(f.to_world((t - 0.5) * s, v, t * s / 2));
        } else if (pick < top + back) {
          out.push_back(f.to_world(s / 2, v, u01() * s / 2));
        } else {
          // Triangle sample under the slope.
          double t = u01(), h = u01();
          if (h > t) std::swap(t, h);
          out.push_back(f.to_world((t - 0.5) * s, pick < top + back + side ? -s / 2 : s / 2, h * s / 2));
        }
        break;
      }
    }
  }
}

double primitive_area(AnomalyShape shape, double s) {
  switch (shape) {
    case AnomalyShape::Box: return 5.0 * s * s;
    case AnomalyShape::Hemisphere: return 2.0 * std::numbers::pi * s * s;
    case AnomalyShape::Ramp: return s * s * (std::hypot(1.0, 0.5) + 0.5 + 0.5);
  }
  return 0.0;
}

// Horizontal half-diagonal of the primitive footprint.
double footprint_radius(AnomalyShape shape, double s) {
  return shape == AnomalyShape::Hemisphere ? s : s * std::numbers::sqrt2 / 2.0;
}

}  // namespace

InjectionResult inject_eval_anomaly(const Scan& scan, const ClassSpec& spec, const SceneConfig& config,
                                    std::uint64_t seed, std::size_t count) {
  scan.labels.validate(scan.cloud.size());
  InjectionResult out{scan, {}};
  if (count == 0) return out;

  std::vector<std::size_t> road;
  std::vector<Point3> road_flat;
  for (std::size_t i = 0; i < scan.labels.size(); ++i) {
    if (scan.labels.role[i] == Role::Inlier && scan.labels.semantic[i] == spec.road_id) {
      road.push_back(i);
      road_flat.push_back({scan.cloud.points[i].x, scan.cloud.points[i].y, 0.0f});
    }
  }
  if (road.empty()) throw ContractError("inject_eval_anomaly: scan has no road points");
  if (config.eval_anomaly_kinds.empty()) throw ContractError("inject_eval_anomaly: no anomaly kinds configured");

  const GridIndex road_index(road_flat, 0.5);
  const double density = config.anomaly_density > 0.0 ? config.anomaly_density : road_density(config, spec);

  std::uint16_t next_instance = 0;
  for (auto inst : scan.labels.instance) next_instance = std::max(next_instance, inst);

  std::mt19937_64 rng(seed);
  auto u01 = [&] { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); };

  for (std::size_t a = 0; a < count; ++a) {
    const auto& kind =
        config.eval_anomaly_kinds[std::uniform_int_distribution<std::size_t>(0, config.eval_anomaly_kinds.size() - 1)(rng)];
    const double size = kind.size_min + u01() * (kind.size_max - kind.size_min);
    const double reach = footprint_radius(kind.shape, size);

    // Resample until road surrounds the whole footprint, so the primitive never
    // intrudes into buildings or sidewalk structures.
    Point3 base{};
    for (int attempt = 0; attempt < 256; ++attempt) {
      base = scan.cloud.points[road[std::uniform_int_distribution<std::size_t>(0, road.size() - 1)(rng)]];
      bool supported = true;
      for (int k = 0; k < 8 && supported; ++k) {
        const double ang = k * std::numbers::pi / 4.0;
        const Point3 probe{static_cast<float>(base.x + reach * std::cos(ang)),
                           static_cast<float>(base.y + reach * std::sin(ang)), 0.0f};
        supported = road_index.radius_count(probe, 0.5) > 0;
      }
      if (supported) break;
    }

    const double yaw = 2.0 * std::numbers::pi * u01();
    const Frame frame{base.x, base.y, 0.0, std::cos(yaw), std::sin(yaw)};
    const auto n = std::max<std::size_t>(8, static_cast<std::size_t>(std::lround(density * primitive_area(kind.shape, size))));

    std::vector<Point3> pts;
    sample_primitive(kind.shape, size, frame, n, rng, pts);

    InjectedAnomaly rec{kind.shape, size, {base.x, base.y, 0.0f}, {}, {}, ++next_instance, out.scan.cloud.size(), n};
    rec.aabb_min = {static_cast<float>(base.x - reach), static_cast<float>(base.y - reach), 0.0f};
    rec.aabb_max = {static_cast<float>(base.x + reach), static_cast<float>(base.y + reach), static_cast<float>(size)};
    for (const auto& p : pts) {
      out.scan.cloud.push_back(p, 0.5f);
      out.scan.labels.push_back(spec.ood_id, rec.instance, spec);
    }
    out.anomalies.push_back(rec);
  }
  return out;
}

}  // namespace ndp
