// Pointwise toy backbone and the optimization loop that ties Perlin Raise,
// scoring, NDP and the losses together.
#pragma once

#include "ndp/core.hpp"
#include "ndp/losses.hpp"
#include "ndp/ndp.hpp"
#include "ndp/perlin.hpp"
#include "ndp/scoring.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ndp {

inline constexpr std::size_t kNumFeatures = 6;
inline constexpr double kFeatureRadius = 0.5;
inline constexpr double kGroundRadius = 1.0;

/// Per point: height z, lateral offset |y|, horizontal range, neighbor count
/// within 0.5 m (self included), height variance of that neighborhood, and
/// height above the lowest point within 1 m. M x 6.
Matrix extract_features(const PointCloud& cloud);

/// Two-layer perceptron over standardized features.
struct ToyBackbone {
  Vector feature_mean;   // kNumFeatures
  Vector feature_scale;  // kNumFeatures, divides (x - mean)
  Matrix w1;             // kNumFeatures x H
  Vector b1;             // H
  Matrix w2;             // H x C
  Vector b2;             // C

  std::size_t hidden() const { return static_cast<std::size_t>(w1.cols()); }
  std::size_t output_width() const { return static_cast<std::size_t>(w2.cols()); }
  void validate() const;
  std::vector<std::span<double>> blocks();  // trainable: w1, b1, w2, b2
};

ToyBackbone init_backbone(std::size_t hidden, std::size_t output_width, std::uint64_t seed);

struct BackboneTape {
  Matrix input;   // standardized features
  Matrix hidden;  // post-ReLU
};

Matrix backbone_forward(const ToyBackbone& net, const Matrix& features, BackboneTape* tape = nullptr);

struct BackboneGrads {
  Matrix w1;
  Vector b1;
  Matrix w2;
  Vector b2;
  std::vector<std::span<double>> blocks();
};

BackboneGrads backbone_backward(const ToyBackbone& net, const BackboneTape& tape, const Matrix& grad_logits);

LogitField to_logit_field(Matrix values, const ClassSpec& spec);

/// Adam over a fixed list of parameter blocks.
class Adam {
 public:
  Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads);
  std::uint64_t steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct TrainConfig {
  double lr = 2e-4;
  std::size_t epochs = 10;
  std::size_t batch_scans = 1;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t raise_per_scan = 1;
  std::size_t raise_attempts = 8;  // retries when DBSCAN finds no cluster
  RaiseSampler raise;
  LossConfig loss;
  ScoreMethod method{ScoreKind::ExtendedEnergy};
  bool use_ndp = true;
  bool freeze_ndp_head = false;  // keep W_s at its zero initialization
  std::size_t hidden = 32;
  std::size_t latent_dim = kDefaultLatentDim;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double total = 0.0;
  double ce = 0.0;
  double std_term = 0.0;
  double soe_term = 0.0;
  double bias = 0.0;
  std::size_t scans = 0;
  std::size_t skipped = 0;
  std::size_t raised_points = 0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::vector<std::string> notes;
};

struct Model {
  ClassSpec spec;
  ScoreMethod method{ScoreKind::ExtendedEnergy};
  bool use_ndp = true;
  ToyBackbone backbone;
  NdpParams ndp;  // b lives here even when use_ndp is false

  LogitField logits(const PointCloud& cloud) const;
  ScoreField score(const PointCloud& cloud) const;
};

struct TrainResult {
  Model model;
  TrainLog log;
};

/// Deterministic under cfg.seed. Scans without road points are skipped and noted.
TrainResult train(const std::vector<Scan>& scenes, const ClassSpec& spec, const TrainConfig& cfg);

std::vector<std::uint8_t> serialize_model(const Model& model);
Model deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

}  // namespace ndp
