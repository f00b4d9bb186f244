#include "ndp/pipeline.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <set>

namespace fs = std::filesystem;
using namespace ndp;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / "ndp_unit" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.scene = SceneConfig::long_tail(3000, 5);
  cfg.train_scenes = 10;
  cfg.test_scenes = 4;
  cfg.train.epochs = 2;
  cfg.train.lr = 1e-2;
  return cfg;
}

}  // namespace

TEST(Config, SerializeParseRoundTrip) {
  auto cfg = tiny_config();
  cfg.set("loss.std_orientation", "swapped");
  cfg.set("train.method", "energy");
  cfg.set("scene.anomaly_kinds", "box:0.5:0.7,ramp:1:1.5");
  const auto text = cfg.serialize();
  const auto back = PipelineConfig::parse(text);
  EXPECT_EQ(back.serialize(), text);
  EXPECT_EQ(back.train.method, ScoreMethod{ScoreKind::Energy});
  EXPECT_EQ(back.scene.eval_anomaly_kinds.size(), 2u);
}

TEST(Config, EveryKeyAppearsOnce) {
  const auto text = PipelineConfig{}.serialize();
  std::set<std::string> seen;
  for (const auto& k : PipelineConfig::keys()) {
    EXPECT_TRUE(seen.insert(k).second);
    EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
  }
}

TEST(Config, RejectsUnknownAndMalformed) {
  EXPECT_THROW(PipelineConfig::parse("train.lrr = 1\n"), ContractError);
  EXPECT_THROW(PipelineConfig::parse("train.lr = fast\n"), ContractError);
  EXPECT_THROW(PipelineConfig::parse("train.epochs = -1\n"), ContractError);
  EXPECT_THROW(PipelineConfig::parse("no equals sign\n"), ContractError);
  EXPECT_THROW(PipelineConfig::parse("eval.iou_threshold = 0.3\n"), ContractError);
  EXPECT_THROW(PipelineConfig::parse("raise.rho = 1.5\n"), ContractError);
  EXPECT_NO_THROW(PipelineConfig::parse("# comment\n\ntrain.lr = 0.001\n"));
}

TEST(Provenance, HashTracksConfig) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
  const auto dir = fresh_dir("prov");
  auto cfg = tiny_config();
  write_provenance(dir / "artifact.bin", "synth", cfg, 7);
  const auto prov = read_report(dir / "artifact.bin.prov");
  EXPECT_EQ(prov.at("prov.seed"), "7");
  EXPECT_EQ(prov.at("prov.config_hash"), fnv1a_hex(cfg.serialize()));
  // The sidecar carries the whole config, so the config can be rebuilt from it.
  std::string text;
  for (const auto& [k, v] : prov)
    if (k.rfind("prov.", 0) != 0) text += k + " = " + v + "\n";
  EXPECT_EQ(PipelineConfig::parse(text).serialize(), cfg.serialize());
}

TEST(Dataset, WriteLoadRoundTrip) {
  const auto cfg = tiny_config();
  const auto scans = synthesize(cfg, 3, 9, 1);
  const auto dir = fresh_dir("ds");
  write_dataset(dir, scans);
  const auto entries = list_dataset(dir);
  ASSERT_EQ(entries.size(), 3u);
  EXPECT_EQ(entries[0].stem, "000000");
  const auto back = load_dataset(dir, cfg.spec);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].cloud.points, scans[i].cloud.points);
    EXPECT_EQ(back[i].labels, scans[i].labels);
  }
}

TEST(Evaluate, NeedsAGammaSource) {
  EvalInputs in;
  EXPECT_THROW(evaluate_dataset(in, tiny_config()), UsageError);
}

TEST(Pipeline, TenSceneSmokeRun) {
  auto cfg = tiny_config();
  const auto out = fresh_dir("run");
  const auto a = run_pipeline(cfg, out);
  const auto report = read_report(a.report);
  for (const auto& k : report_schema()) EXPECT_TRUE(report.count(k)) << k;
  for (const char* k : {"point.auroc", "point.fpr95", "point.ap", "object.sq", "object.rq", "object.pq",
                        "object.recallq", "object.uq"}) {
    const double v = std::stod(report.at(k));
    EXPECT_GE(v, 0.0) << k;
    EXPECT_LE(v, 1.0) << k;
  }
  EXPECT_EQ(report.at("run.scans"), "4");
  for (const auto& p : {a.train_dir, a.test_dir, a.model, a.score_dir, a.report}) {
    auto prov = p;
    prov += ".prov";
    EXPECT_TRUE(fs::exists(prov)) << prov;
  }
}

TEST(ExportMap, NormalizationEndpoints) {
  const std::vector<double> s = {2.0, 4.0, 3.0};
  EXPECT_EQ(normalize_scores(s), (std::vector<double>{0.0, 1.0, 0.5}));
  EXPECT_EQ(normalize_scores(std::vector<double>(3, 7.0)), std::vector<double>(3, 0.0));
}

TEST(ExportMap, RasterHeaderAndConstantColor) {
  const auto dir = fresh_dir("map");
  PointCloud c;
  ScoreField s;
  for (int i = 0; i < 100; ++i) {
    c.push_back({float(i % 10), float(i / 10), 0.f});
    s.scores.push_back(5.0);
  }
  const auto m = export_score_map(s, c, dir / "map", 32);
  const auto bytes = read_file_bytes(m.raster);
  const std::string header = "P6\n32 32\n255\n";
  ASSERT_GE(bytes.size(), header.size());
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + std::ptrdiff_t(header.size())), header);
  EXPECT_EQ(bytes.size(), header.size() + 32u * 32u * 3u);
  // Constant scores: every occupied pixel has the same color; empty ones stay black.
  std::set<std::array<std::uint8_t, 3>> colors;
  for (std::size_t o = header.size(); o < bytes.size(); o += 3) {
    const std::array<std::uint8_t, 3> rgb = {bytes[o], bytes[o + 1], bytes[o + 2]};
    if (rgb != std::array<std::uint8_t, 3>{0, 0, 0}) colors.insert(rgb);
  }
  EXPECT_EQ(colors.size(), 1u);

  const auto ply = read_file_bytes(m.cloud);
  const std::string text(ply.begin(), ply.end());
  EXPECT_NE(text.find("element vertex 100"), std::string::npos);
}

TEST(ExportMap, LengthMismatchIsContractError) {
  PointCloud c;
  c.push_back({0, 0, 0});
  EXPECT_THROW(export_score_map(ScoreField{}, c, fresh_dir("bad") / "m", 8), ContractError);
}
