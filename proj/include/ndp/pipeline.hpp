// End-to-end stages behind the `ndp` command line tool: flat key = value
// pipeline config, dataset directories, provenance sidecars.
#pragma once

#include "ndp/core.hpp"
#include "ndp/metrics.hpp"
#include "ndp/perlin.hpp"
#include "ndp/scenegen.hpp"
#include "ndp/trainer.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <optional>
#include <string>
#include <vector>

namespace ndp {

/// Usage-level mistakes (bad flag combinations); the CLI maps these to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string version_string();

struct PipelineConfig {
  ClassSpec spec = ClassSpec::synthetic_default();
  SceneConfig scene = SceneConfig::long_tail(8000, 0);
  std::size_t train_scenes = 50;
  std::size_t test_scenes = 20;
  std::size_t anomalies_per_scene = 1;
  TrainConfig train;
  EvalConfig eval;
  // > 0: derive gamma as the threshold reaching this TPR on the calibration split.
  double gamma_from_tpr = 0.95;

  void validate() const;

  /// Rejects unknown keys and malformed values with ContractError.
  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::filesystem::path& path);
  void set(const std::string& key, const std::string& value);

  /// Canonical form: every key, sorted, one `key = value` per line.
  std::string serialize() const;
  static const std::vector<std::string>& keys();
};

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

/// Writes `<artifact>.prov` with the command, config hash, seed, version and the
/// canonical config, enough to regenerate the artifact.
void write_provenance(const std::filesystem::path& artifact, const std::string& command,
                      const PipelineConfig& cfg, std::uint64_t seed);

struct DatasetEntry {
  std::string stem;  // zero-padded scan index
  std::filesystem::path cloud;
  std::filesystem::path labels;
};

std::vector<DatasetEntry> list_dataset(const std::filesystem::path& dir);
std::vector<Scan> load_dataset(const std::filesystem::path& dir, const ClassSpec& spec);

/// `count` scenes seeded from `seed`; `anomalies` primitive anomalies per scene.
std::vector<Scan> synthesize(const PipelineConfig& cfg, std::size_t count, std::uint64_t seed, std::size_t anomalies);
void write_dataset(const std::filesystem::path& dir, const std::vector<Scan>& scans);

/// Scores every scan of a dataset directory into `<out>/<stem>.score`.
void score_dataset(const Model& model, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir);

struct EvalInputs {
  std::filesystem::path data_dir;
  std::filesystem::path score_dir;
  std::optional<double> gamma;
  std::optional<double> gamma_from_tpr;
  // Calibration split for gamma_from_tpr; the evaluated split itself when empty.
  std::filesystem::path calib_data_dir;
  std::filesystem::path calib_score_dir;
};

/// Point metrics pooled over all scans, object metrics from pooled matches.
/// VOID and IGNORE points are excluded; REAL_OOD and AUX_OOD points are positives.
Report evaluate_dataset(const EvalInputs& in, const PipelineConfig& cfg);

struct PipelineArtifacts {
  std::filesystem::path train_dir, test_dir, model, score_dir, report;
};

/// synth (train + test) -> train -> score -> eval, all under `out_dir`.
PipelineArtifacts run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Score map export.

struct MapExport {
  std::filesystem::path raster;  // binary PPM, top-down
  std::filesystem::path cloud;   // ASCII PLY with per-point colors
  std::size_t width = 0, height = 0;
};

/// Linear min-max normalization clamped to [0, 1]; constant input maps to 0.
std::vector<double> normalize_scores(std::span<const double> scores);

/// Blue (0) to red (1) ramp.
std::array<std::uint8_t, 3> score_color(double t);

MapExport export_score_map(const ScoreField& scores, const PointCloud& cloud, const std::filesystem::path& prefix,
                           std::size_t resolution);

}  // namespace ndp
