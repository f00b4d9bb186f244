#include "ndp/scoring.hpp"

#include "ndp/ndp.hpp"

#include <algorithm>
#include <cmath>

namespace ndp {

std::string ScoreMethod::name() const {
  switch (kind) {
    case ScoreKind::Entropy: return "entropy";
    case ScoreKind::Energy: return "energy";
    case ScoreKind::ExtendedEnergy: return "ee";
    case ScoreKind::MaxLogit: return "maxlogit";
  }
  return "?";
}

ScoreMethod ScoreMethod::parse(const std::string& name) {
  if (name == "entropy") return {ScoreKind::Entropy};
  if (name == "energy") return {ScoreKind::Energy};
  if (name == "ee" || name == "extended_energy") return {ScoreKind::ExtendedEnergy};
  if (name == "maxlogit") return {ScoreKind::MaxLogit};
  throw ContractError("unknown score method '" + name + "'");
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - m);
  return m + std::log(sum);
}

double entropy_score(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  double h = 0.0;
  for (double x : logits) {
    const double log_p = x - lse;
    h -= std::exp(log_p) * log_p;
  }
  return std::max(h, 0.0);
}

double energy_score(std::span<const double> logits) { return -log_sum_exp(logits); }

double extended_energy_score(std::span<const double> logits) {
  if (logits.size() % 2 != 0 || logits.empty()) throw ContractError("extended energy needs 2K channels");
  const auto pos = logits.first(logits.size() / 2);
  const auto neg = logits.last(logits.size() / 2);
  // log(1 + Z-/Z+) computed as softplus(lse- - lse+) to keep precision for tiny ratios.
  const double diff = log_sum_exp(neg) - log_sum_exp(pos);
  return diff > 0.0 ? diff + std::log1p(std::exp(-diff)) : std::log1p(std::exp(diff));
}

double maxlogit_score(std::span<const double> logits) {
  return -*std::max_element(logits.begin(), logits.end());
}

double score_row(ScoreMethod method, std::span<const double> row, std::size_t num_classes) {
  const auto pos = row.first(num_classes);
  switch (method.kind) {
    case ScoreKind::Entropy: return entropy_score(pos);
    case ScoreKind::Energy: return energy_score(pos);
    case ScoreKind::ExtendedEnergy: return extended_energy_score(row);
    case ScoreKind::MaxLogit: return maxlogit_score(pos);
  }
  return 0.0;
}

double score_row_grad(ScoreMethod method, std::span<const double> row, std::size_t num_classes,
                      std::span<double> grad) {
  std::fill(grad.begin(), grad.end(), 0.0);
  const auto pos = row.first(num_classes);
  switch (method.kind) {
    case ScoreKind::Entropy: {
      const double lse = log_sum_exp(pos);
      const double h = entropy_score(pos);
      for (std::size_t i = 0; i < num_classes; ++i) {
        const double log_p = pos[i] - lse;
        grad[i] = -std::exp(log_p) * (log_p + h);
      }
      return h;
    }
    case ScoreKind::Energy: {
      const double lse = log_sum_exp(pos);
      for (std::size_t i = 0; i < num_classes; ++i) grad[i] = -std::exp(pos[i] - lse);
      return -lse;
    }
    case ScoreKind::ExtendedEnergy: {
      const double lse_all = log_sum_exp(row);
      const double lse_pos = log_sum_exp(pos);
      // d/df+ = q - p = p (Z+/Z - 1) = -p * Z-/Z, written without cancellation.
      const double neg_share = -std::expm1(lse_pos - lse_all);
      for (std::size_t i = 0; i < num_classes; ++i) grad[i] = -std::exp(pos[i] - lse_pos) * neg_share;
      for (std::size_t i = num_classes; i < row.size(); ++i) grad[i] = std::exp(row[i] - lse_all);
      return extended_energy_score(row);
    }
    case ScoreKind::MaxLogit: {
      const auto it = std::max_element(pos.begin(), pos.end());
      grad[static_cast<std::size_t>(it - pos.begin())] = -1.0;
      return -*it;
    }
  }
  return 0.0;
}

void check_method(ScoreMethod method, const LogitField& logits) {
  logits.validate();
  if (method.requires_extended() && !logits.extended)
    throw ContractError("extended energy requires a 2K-channel logit field");
}

ScoreField static_scores(const LogitField& logits, ScoreMethod method) {
  check_method(method, logits);
  ScoreField out;
  out.scores.resize(logits.rows());
  const auto width = static_cast<std::size_t>(logits.values.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const std::span<const double> row(logits.values.row(static_cast<Eigen::Index>(i)).data(), width);
    out.scores[i] = score_row(method, row, logits.num_classes);
  }
  return out;
}

ScoreField ndp_score(const LogitField& logits, ScoreMethod method, const NdpParams& params) {
  ScoreField out = static_scores(logits, method);
  const Vector w = ndp_weight_only(logits, params);
  for (std::size_t i = 0; i < out.size(); ++i) out.scores[i] *= w[static_cast<Eigen::Index>(i)];
  return out;
}

std::vector<Decision> classify(const ScoreField& scores, double gamma) {
  if (std::isnan(gamma)) throw ContractError("classify: gamma is NaN");
  std::vector<Decision> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores.scores[i] > gamma ? Decision::Ood : Decision::Id;
  return out;
}

}  // namespace ndp
