#include "ndp/core.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>

namespace fs = std::filesystem;
using namespace ndp;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "ndp_unit";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> le_floats(std::initializer_list<float> values) {
  std::vector<std::uint8_t> out;
  for (float f : values) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(u >> (8 * k)));
  }
  return out;
}

}  // namespace

TEST(PointCloudIo, DecodesTwoPointFile) {
  const auto path = scratch("two.bin");
  write_file_bytes(path, le_floats({1, 2, 3, 0.5f, 4, 5, 6, 0.0f}));
  ASSERT_EQ(fs::file_size(path), 32u);
  const auto c = load_point_cloud(path);
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.points[0].x, 1.0f);
  EXPECT_EQ(c.points[0].z, 3.0f);
  EXPECT_EQ((*c.intensity)[0], 0.5f);
  EXPECT_EQ(c.points[1].y, 5.0f);
  EXPECT_EQ((*c.intensity)[1], 0.0f);
}

TEST(PointCloudIo, EmptyFileGivesEmptyCloud) {
  const auto path = scratch("empty.bin");
  write_file_bytes(path, {});
  EXPECT_EQ(load_point_cloud(path).size(), 0u);
}

TEST(PointCloudIo, TruncatedFileIsFormatError) {
  const auto path = scratch("trunc.bin");
  write_file_bytes(path, std::vector<std::uint8_t>(20, 0));
  EXPECT_THROW(load_point_cloud(path), FormatError);
  EXPECT_THROW(load_point_cloud(scratch("missing.bin")), IoError);
}

TEST(PointCloudIo, RoundTripIsBitExact) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-100.f, 100.f);
  PointCloud c;
  c.intensity.emplace();
  for (int i = 0; i < 1000; ++i) {
    c.points.push_back({u(rng), u(rng), u(rng)});
    c.intensity->push_back(std::abs(u(rng)) / 100.f);
  }
  const auto path = scratch("rt.bin");
  save_point_cloud(path, c);
  const auto bytes = read_file_bytes(path);
  save_point_cloud(scratch("rt2.bin"), load_point_cloud(path));
  EXPECT_EQ(bytes, read_file_bytes(scratch("rt2.bin")));
  EXPECT_EQ(load_point_cloud(path), c);
}

TEST(PointCloud, RejectsNonFinite) {
  PointCloud c;
  c.push_back({0, 0, std::numeric_limits<float>::quiet_NaN()});
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Labels, WordSplitsIntoSemanticAndInstance) {
  const auto spec = ClassSpec::synthetic_default();
  ClassSpec s = spec;
  s.inlier_classes.push_back(9);
  const std::uint32_t w[] = {0x00010009u};
  const auto l = LabelMap::from_words(w, s);
  EXPECT_EQ(l.semantic[0], 9);
  EXPECT_EQ(l.instance[0], 1);
  EXPECT_EQ(l.role[0], Role::Inlier);
}

TEST(Labels, RolesFollowClassSpec) {
  const auto spec = ClassSpec::synthetic_default();
  const std::uint32_t w[] = {spec.void_id, spec.ignore_id, spec.ood_id, spec.aux_ood_id, 40, 12345};
  const auto l = LabelMap::from_words(w, spec);
  EXPECT_EQ(l.role[0], Role::Void);
  EXPECT_EQ(l.role[1], Role::Ignore);
  EXPECT_EQ(l.role[2], Role::RealOod);
  EXPECT_EQ(l.role[3], Role::AuxOod);
  EXPECT_EQ(l.role[4], Role::Inlier);
  // Unknown ids fold into void and are counted.
  EXPECT_EQ(l.role[5], Role::Void);
  EXPECT_EQ(l.semantic[5], spec.void_id);
  EXPECT_EQ(l.remapped_unknown, 1u);
}

TEST(Labels, RoundTripIsBitExact) {
  const auto spec = ClassSpec::synthetic_default();
  std::vector<std::uint16_t> ids = spec.inlier_classes;
  ids.insert(ids.end(), {spec.void_id, spec.ignore_id, spec.ood_id, spec.aux_ood_id});
  std::mt19937_64 rng(2);
  LabelMap l;
  for (int i = 0; i < 500; ++i) l.push_back(ids[rng() % ids.size()], static_cast<std::uint16_t>(rng()), spec);
  const auto path = scratch("rt.label");
  save_labels(path, l);
  const auto back = load_labels(path, spec);
  EXPECT_EQ(back, l);
  EXPECT_EQ(back.to_words(), l.to_words());
  EXPECT_EQ(fs::file_size(path), 4u * 500u);
}

TEST(Labels, LabelFileLayoutIsLittleEndian) {
  const auto spec = ClassSpec::synthetic_default();
  LabelMap l;
  l.push_back(40, 0x0102, spec);
  const auto path = scratch("le.label");
  save_labels(path, l);
  const std::vector<std::uint8_t> expect = {40, 0, 0x02, 0x01};
  EXPECT_EQ(read_file_bytes(path), expect);
}

TEST(Scores, RoundTripAndLength) {
  ScoreField s;
  for (int i = 0; i < 37; ++i) s.scores.push_back(static_cast<float>(i) * 0.25f - 3.0f);
  const auto path = scratch("s.score");
  save_scores(path, s);
  EXPECT_EQ(fs::file_size(path), 4u * 37u);
  EXPECT_EQ(load_scores(path).scores, s.scores);
}

TEST(Scores, TwoPointHexLayout) {
  // 1.0f = 0x3f800000, -2.0f = 0xc0000000, written little-endian.
  ScoreField s{{1.0, -2.0}};
  const auto path = scratch("hex.score");
  save_scores(path, s);
  const std::vector<std::uint8_t> expect = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
  EXPECT_EQ(read_file_bytes(path), expect);
}

TEST(ClassSpecTest, ValidatesDisjointIds) {
  auto spec = ClassSpec::synthetic_default();
  EXPECT_NO_THROW(spec.validate());
  EXPECT_EQ(spec.logit_width(), 12u);
  spec.ood_id = spec.void_id;
  EXPECT_THROW(spec.validate(), ContractError);
  spec = ClassSpec::synthetic_default();
  spec.inlier_classes = {40};
  EXPECT_THROW(spec.validate(), ContractError);
}

TEST(LogitFieldTest, WidthMustMatch) {
  LogitField f;
  f.num_classes = 3;
  f.extended = true;
  f.values = Matrix::Zero(4, 5);
  EXPECT_THROW(f.validate(), ContractError);
  f.values = Matrix::Zero(4, 6);
  EXPECT_NO_THROW(f.validate());
}
