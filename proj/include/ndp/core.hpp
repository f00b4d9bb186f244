// Domain types and KITTI-convention binary I/O shared by every module.
#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndp {

/// Malformed on-disk content (bad size, bad magic, truncated record).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A path could not be opened, read or written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition.
class ContractError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct Point3 {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;

  friend bool operator==(const Point3&, const Point3&) = default;
};

inline double squared_distance(const Point3& a, const Point3& b) {
  const double dx = double(a.x) - double(b.x);
  const double dy = double(a.y) - double(b.y);
  const double dz = double(a.z) - double(b.z);
  return dx * dx + dy * dy + dz * dz;
}

struct PointCloud {
  std::vector<Point3> points;
  // Per-point reflectance in [0,1]; absent for synthetic clouds that never had one.
  std::optional<std::vector<float>> intensity;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }

  /// Throws ContractError on non-finite coordinates or an intensity length mismatch.
  void validate() const;
  void push_back(const Point3& p, float reflectance = 0.0f);

  friend bool operator==(const PointCloud&, const PointCloud&) = default;
};

enum class Role : std::uint8_t { Inlier, Void, AuxOod, RealOod, Ignore };

const char* to_string(Role role);

/// Label semantics. Role is a pure function of the semantic id under a spec.
struct ClassSpec {
  std::vector<std::uint16_t> inlier_classes;
  std::uint16_t road_id = 40;
  std::uint16_t void_id = 0;
  std::uint16_t ignore_id = 1;
  std::uint16_t ood_id = 2;
  // Perlin-raised training anomalies; kept apart from ood_id so that a
  // saved-and-reloaded label file still separates AUX_OOD from REAL_OOD.
  std::uint16_t aux_ood_id = 3;
  bool extended = true;

  std::size_t num_classes() const { return inlier_classes.size(); }
  std::size_t logit_width() const { return extended ? 2 * num_classes() : num_classes(); }

  Role role_of(std::uint16_t semantic) const;
  bool is_known(std::uint16_t semantic) const;
  /// Channel index of an inlier class id, or -1.
  int class_index(std::uint16_t semantic) const;

  void validate() const;

  /// road, sidewalk, building, vegetation, person, bicycle.
  static ClassSpec synthetic_default();

  friend bool operator==(const ClassSpec&, const ClassSpec&) = default;
};

struct LabelMap {
  std::vector<std::uint16_t> semantic;
  std::vector<std::uint16_t> instance;
  std::vector<Role> role;
  // Ids not covered by the ClassSpec that were folded into void_id on load.
  std::size_t remapped_unknown = 0;

  std::size_t size() const { return semantic.size(); }

  void push_back(std::uint16_t sem, std::uint16_t inst, const ClassSpec& spec);
  void set(std::size_t i, std::uint16_t sem, const ClassSpec& spec);
  void validate(std::size_t expected_count) const;

  static LabelMap from_words(std::span<const std::uint32_t> words, const ClassSpec& spec);
  std::vector<std::uint32_t> to_words() const;

  friend bool operator==(const LabelMap& a, const LabelMap& b) {
    return a.semantic == b.semantic && a.instance == b.instance && a.role == b.role;
  }
};

/// Per-point logits of width K (standard) or 2K (first K = y+, last K = y-).
struct LogitField {
  Matrix values;
  std::size_t num_classes = 0;
  bool extended = false;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t width() const { return extended ? 2 * num_classes : num_classes; }
  void validate() const;
};

/// Larger score means more OOD.
struct ScoreField {
  std::vector<double> scores;

  std::size_t size() const { return scores.size(); }
  void validate() const;
};

/// Scene = one scan with its annotation.
struct Scan {
  PointCloud cloud;
  LabelMap labels;
};

PointCloud load_point_cloud(const std::filesystem::path& path);
void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud);

LabelMap load_labels(const std::filesystem::path& path, const ClassSpec& spec);
void save_labels(const std::filesystem::path& path, const LabelMap& labels);

ScoreField load_scores(const std::filesystem::path& path);
void save_scores(const std::filesystem::path& path, const ScoreField& scores);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

namespace detail {

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void append_f32(std::vector<std::uint8_t>& out, float v);
std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset);
float read_f32(std::span<const std::uint8_t> bytes, std::size_t offset);

}  // namespace detail

}  // namespace ndp
