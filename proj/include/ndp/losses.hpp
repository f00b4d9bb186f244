// Training objective: closed-set cross-entropy, the binary score objective on
// Perlin-raised auxiliaries, soft outlier exposure on void points, and their sum.
#pragma once

#include "ndp/core.hpp"
#include "ndp/ndp.hpp"
#include "ndp/scoring.hpp"

#include <optional>
#include <span>
#include <vector>

namespace ndp {

enum class StdOrientation : std::uint8_t {
  // ID scores pushed low and auxiliary scores high, agreeing with "score > gamma => OOD".
  Consistent,
  // Targets exchanged: ID pushed toward sigma -> 1, auxiliary toward 0.
  Swapped,
};

struct LossConfig {
  double beta = 0.9;
  double ood_weight = 10000.0;
  StdOrientation std_orientation = StdOrientation::Consistent;
  // Cross-entropy softmax over y+ only instead of all 2K channels.
  bool ce_positive_only = false;

  void validate() const;
};

double sigmoid(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

struct CeResult {
  double value = 0.0;
  Matrix grad;  // same shape as the logits
};

/// Mean over INLIER points of -log softmax(f)[target]. Throws ContractError for an
/// inlier point whose semantic id is not an inlier class.
CeResult ce_loss(const LogitField& logits, const LabelMap& labels, const ClassSpec& spec, bool positive_only = false);

struct BinaryLossResult {
  double value = 0.0;
  std::vector<double> grad_in;
  std::vector<double> grad_out;  // aux (std) or void (soe) scores
  double grad_b = 0.0;
};

/// mean_in l_in(S + b) + ood_weight * mean_aux l_aux(S + b). Empty subsets contribute 0.
BinaryLossResult std_loss(std::span<const double> scores_in, std::span<const double> scores_aux, double b,
                          StdOrientation orientation = StdOrientation::Consistent, double ood_weight = 1.0);

/// mean_in sigma(S + b) + ood_weight * mean_void max(0, beta - sigma(S + b)).
BinaryLossResult soe_loss(std::span<const double> scores_in, std::span<const double> scores_void, double b,
                          double beta, double ood_weight = 1.0);

struct TotalLossResult {
  double total = 0.0;
  double ce = 0.0;
  double std_term = 0.0;
  double soe_term = 0.0;
  Matrix logit_grads;
  std::optional<NdpParams> ndp_grads;  // set when NDP params were supplied
  double grad_b = 0.0;
  ScoreField scores;  // final per-point scores used by the binary terms
};

/// L_CE + L_STD + L_SOE. L_STD is active only when the scan has AUX_OOD points and
/// L_SOE only when it has VOID points. When `params` is null the static score is used
/// (weight 1) and `b` is taken from `bias`; otherwise params->b is the bias.
TotalLossResult total_loss(const LogitField& logits, const LabelMap& labels, const ClassSpec& spec,
                           ScoreMethod method, const NdpParams* params, double bias, const LossConfig& cfg);

}  // namespace ndp
