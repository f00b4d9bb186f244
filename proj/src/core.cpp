#include "ndp/core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

namespace ndp {

namespace detail {

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFFu));
}

void append_f32(std::vector<std::uint8_t>& out, float v) {
  append_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t read_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw FormatError("truncated record");
  return std::uint32_t(bytes[offset]) | (std::uint32_t(bytes[offset + 1]) << 8) |
         (std::uint32_t(bytes[offset + 2]) << 16) | (std::uint32_t(bytes[offset + 3]) << 24);
}

float read_f32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  return std::bit_cast<float>(read_u32(bytes, offset));
}

}  // namespace detail

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------

void PointCloud::validate() const {
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
      throw ContractError("point cloud contains a non-finite coordinate");
  }
  if (intensity && intensity->size() != points.size())
    throw ContractError("intensity length does not match point count");
}

void PointCloud::push_back(const Point3& p, float reflectance) {
  points.push_back(p);
  if (intensity) intensity->push_back(reflectance);
}

const char* to_string(Role role) {
  switch (role) {
    case Role::Inlier: return "INLIER";
    case Role::Void: return "VOID";
    case Role::AuxOod: return "AUX_OOD";
    case Role::RealOod: return "REAL_OOD";
    case Role::Ignore: return "IGNORE";
  }
  return "?";
}

Role ClassSpec::role_of(std::uint16_t semantic) const {
  if (semantic == ood_id) return Role::RealOod;
  if (semantic == aux_ood_id) return Role::AuxOod;
  if (semantic == ignore_id) return Role::Ignore;
  if (semantic == void_id) return Role::Void;
  if (class_index(semantic) >= 0) return Role::Inlier;
  return Role::Void;
}

bool ClassSpec::is_known(std::uint16_t semantic) const {
  return semantic == ood_id || semantic == aux_ood_id || semantic == ignore_id || semantic == void_id ||
         class_index(semantic) >= 0;
}

int ClassSpec::class_index(std::uint16_t semantic) const {
  const auto it = std::find(inlier_classes.begin(), inlier_classes.end(), semantic);
  return it == inlier_classes.end() ? -1 : static_cast<int>(it - inlier_classes.begin());
}

void ClassSpec::validate() const {
  if (inlier_classes.size() < 2) throw ContractError("class spec needs at least two inlier classes");
  std::set<std::uint16_t> seen(inlier_classes.begin(), inlier_classes.end());
  if (seen.size() != inlier_classes.size()) throw ContractError("duplicate inlier class id");
  for (std::uint16_t special : {void_id, ignore_id, ood_id, aux_ood_id}) {
    if (!seen.insert(special).second) throw ContractError("class spec ids are not mutually disjoint");
  }
  if (class_index(road_id) < 0) throw ContractError("road id must be an inlier class");
}

ClassSpec ClassSpec::synthetic_default() {
  ClassSpec spec;
  spec.inlier_classes = {40, 48, 50, 70, 30, 11};
  return spec;
}

void LabelMap::push_back(std::uint16_t sem, std::uint16_t inst, const ClassSpec& spec) {
  semantic.push_back(sem);
  instance.push_back(inst);
  role.push_back(spec.role_of(sem));
}

void LabelMap::set(std::size_t i, std::uint16_t sem, const ClassSpec& spec) {
  semantic.at(i) = sem;
  role.at(i) = spec.role_of(sem);
}

void LabelMap::validate(std::size_t expected_count) const {
  if (semantic.size() != expected_count || instance.size() != expected_count || role.size() != expected_count)
    throw ContractError("label map length does not match point count");
}

LabelMap LabelMap::from_words(std::span<const std::uint32_t> words, const ClassSpec& spec) {
  LabelMap labels;
  labels.semantic.reserve(words.size());
  labels.instance.reserve(words.size());
  labels.role.reserve(words.size());
  for (std::uint32_t w : words) {
    auto sem = static_cast<std::uint16_t>(w & 0xFFFFu);
    const auto inst = static_cast<std::uint16_t>(w >> 16);
    if (!spec.is_known(sem)) {
      sem = spec.void_id;
      ++labels.remapped_unknown;
    }
    labels.push_back(sem, inst, spec);
  }
  return labels;
}

std::vector<std::uint32_t> LabelMap::to_words() const {
  std::vector<std::uint32_t> words(semantic.size());
  for (std::size_t i = 0; i < words.size(); ++i)
    words[i] = std::uint32_t(semantic[i]) | (std::uint32_t(instance[i]) << 16);
  return words;
}

void LogitField::validate() const {
  if (num_classes < 2) throw ContractError("logit field needs K >= 2");
  if (static_cast<std::size_t>(values.cols()) != width())
    throw ContractError("logit width " + std::to_string(values.cols()) + " does not match expected " +
                        std::to_string(width()));
  if (!values.allFinite()) throw ContractError("logit field contains NaN or Inf");
}

void ScoreField::validate() const {
  for (double s : scores)
    if (!std::isfinite(s)) throw ContractError("score field contains a non-finite value");
}

// ---------------------------------------------------------------------------

PointCloud load_point_cloud(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 16 != 0)
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 16");
  PointCloud cloud;
  const std::size_t n = bytes.size() / 16;
  cloud.points.resize(n);
  cloud.intensity.emplace(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t o = 16 * i;
    cloud.points[i] = {detail::read_f32(bytes, o), detail::read_f32(bytes, o + 4), detail::read_f32(bytes, o + 8)};
    (*cloud.intensity)[i] = detail::read_f32(bytes, o + 12);
  }
  return cloud;
}

void save_point_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(16 * cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    detail::append_f32(bytes, p.x);
    detail::append_f32(bytes, p.y);
    detail::append_f32(bytes, p.z);
    detail::append_f32(bytes, cloud.intensity ? (*cloud.intensity)[i] : 0.0f);
  }
  write_file_bytes(path, bytes);
}

LabelMap load_labels(const std::filesystem::path& path, const ClassSpec& spec) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0)
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  std::vector<std::uint32_t> words(bytes.size() / 4);
  for (std::size_t i = 0; i < words.size(); ++i) words[i] = detail::read_u32(bytes, 4 * i);
  return LabelMap::from_words(words, spec);
}

void save_labels(const std::filesystem::path& path, const LabelMap& labels) {
  labels.validate(labels.size());
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * labels.size());
  for (std::uint32_t w : labels.to_words()) detail::append_u32(bytes, w);
  write_file_bytes(path, bytes);
}

ScoreField load_scores(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() % 4 != 0)
    throw FormatError(path.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of 4");
  ScoreField field;
  field.scores.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < field.scores.size(); ++i) field.scores[i] = detail::read_f32(bytes, 4 * i);
  return field;
}

void save_scores(const std::filesystem::path& path, const ScoreField& scores) {
  scores.validate();
  std::vector<std::uint8_t> bytes;
  bytes.reserve(4 * scores.size());
  for (double s : scores.scores) detail::append_f32(bytes, static_cast<float>(s));
  write_file_bytes(path, bytes);
}

}  // namespace ndp
