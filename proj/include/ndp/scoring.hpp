// Static OOD scores, their gradients, NDP reweighting and the threshold classifier.
#pragma once

#include "ndp/core.hpp"

#include <span>
#include <string>
#include <vector>

namespace ndp {

struct NdpParams;

enum class ScoreKind : std::uint8_t { Entropy, Energy, ExtendedEnergy, MaxLogit };

struct ScoreMethod {
  ScoreKind kind = ScoreKind::ExtendedEnergy;

  bool requires_extended() const { return kind == ScoreKind::ExtendedEnergy; }
  std::string name() const;  // entropy | energy | ee | maxlogit
  static ScoreMethod parse(const std::string& name);

  friend bool operator==(const ScoreMethod&, const ScoreMethod&) = default;
};

double log_sum_exp(std::span<const double> v);

/// Shannon entropy (nats) of softmax(logits).
double entropy_score(std::span<const double> logits);
/// -logsumexp(logits).
double energy_score(std::span<const double> logits);
/// logsumexp(all 2K) - logsumexp(first K). Throws ContractError on odd width.
double extended_energy_score(std::span<const double> logits);
double maxlogit_score(std::span<const double> logits);

/// Score of one full logit row. Non-extended methods read only the y+ channels.
double score_row(ScoreMethod method, std::span<const double> row, std::size_t num_classes);

/// d score / d row, written into `grad` (same width as row, y- entries zero for
/// methods that ignore them). Returns the score.
double score_row_grad(ScoreMethod method, std::span<const double> row, std::size_t num_classes,
                      std::span<double> grad);

/// Throws ContractError when the method cannot read this field.
void check_method(ScoreMethod method, const LogitField& logits);

ScoreField static_scores(const LogitField& logits, ScoreMethod method);

/// Static score times the NDP weight, per point.
ScoreField ndp_score(const LogitField& logits, ScoreMethod method, const NdpParams& params);

enum class Decision : std::uint8_t { Id, Ood };

/// OOD iff score > gamma.
std::vector<Decision> classify(const ScoreField& scores, double gamma);

}  // namespace ndp
