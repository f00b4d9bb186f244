#include "ndp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace ndp {

std::vector<double> normalize_scores(std::span<const double> scores) {
  std::vector<double> out(scores.size(), 0.0);
  if (scores.empty()) return out;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
  const double span = *hi - *lo;
  if (!(span > 0.0)) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::clamp((scores[i] - *lo) / span, 0.0, 1.0);
  return out;
}

std::array<std::uint8_t, 3> score_color(double t) {
  t = std::isfinite(t) ? std::clamp(t, 0.0, 1.0) : 0.0;
  const auto c = [](double v) { return static_cast<std::uint8_t>(std::lround(255.0 * v)); };
  // blue -> green -> red through the middle of the ramp
  const double g = 1.0 - std::abs(2.0 * t - 1.0);
  return {c(t), c(g), c(1.0 - t)};
}

MapExport export_score_map(const ScoreField& scores, const PointCloud& cloud, const std::filesystem::path& prefix,
                           std::size_t resolution) {
  if (scores.size() != cloud.size()) throw ContractError("export-map: score count does not match point count");
  if (resolution == 0) throw ContractError("export-map: resolution must be positive");
  scores.validate();

  MapExport out;
  out.raster = prefix;
  out.raster += ".ppm";
  out.cloud = prefix;
  out.cloud += ".ply";
  out.width = out.height = resolution;

  const auto norm = normalize_scores(scores.scores);

  double min_x = 0, min_y = 0, side = 1;
  if (!cloud.empty()) {
    double max_x = -std::numeric_limits<double>::infinity(), max_y = max_x;
    min_x = min_y = std::numeric_limits<double>::infinity();
    for (const auto& p : cloud.points) {
      min_x = std::min(min_x, double(p.x));
      max_x = std::max(max_x, double(p.x));
      min_y = std::min(min_y, double(p.y));
      max_y = std::max(max_y, double(p.y));
    }
    side = std::max({max_x - min_x, max_y - min_y, 1e-9});
  }

  std::vector<double> cell(resolution * resolution, -1.0);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto px = std::min<std::size_t>(resolution - 1, static_cast<std::size_t>((p.x - min_x) / side * resolution));
    const auto py = std::min<std::size_t>(resolution - 1, static_cast<std::size_t>((p.y - min_y) / side * resolution));
    // row 0 is the top of the image, i.e. the largest y
    double& c = cell[(resolution - 1 - py) * resolution + px];
    c = std::max(c, norm[i]);
  }

  std::vector<std::uint8_t> ppm;
  const std::string header = "P6\n" + std::to_string(resolution) + " " + std::to_string(resolution) + "\n255\n";
  ppm.assign(header.begin(), header.end());
  for (double v : cell) {
    const auto rgb = v < 0.0 ? std::array<std::uint8_t, 3>{0, 0, 0} : score_color(v);
    ppm.insert(ppm.end(), rgb.begin(), rgb.end());
  }
  write_file_bytes(out.raster, ppm);

  std::ostringstream ply;
  ply << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty float x\nproperty float y\nproperty float z\nproperty float score\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto rgb = score_color(norm[i]);
    ply << format_double(p.x) << ' ' << format_double(p.y) << ' ' << format_double(p.z) << ' '
        << format_double(scores.scores[i]) << ' ' << int(rgb[0]) << ' ' << int(rgb[1]) << ' ' << int(rgb[2]) << '\n';
  }
  const std::string text = ply.str();
  write_file_bytes(out.cloud, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return out;
}

}  // namespace ndp
