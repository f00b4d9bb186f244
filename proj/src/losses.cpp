#include "ndp/losses.hpp"

#include <cmath>

namespace ndp {

void LossConfig::validate() const {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractError("loss: beta must lie in [0, 1]");
  if (!(ood_weight > 0.0)) throw ContractError("loss: ood_weight must be positive");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

CeResult ce_loss(const LogitField& logits, const LabelMap& labels, const ClassSpec& spec, bool positive_only) {
  logits.validate();
  labels.validate(logits.rows());
  const auto width = logits.values.cols();
  const auto used = positive_only ? static_cast<Eigen::Index>(logits.num_classes) : width;

  CeResult out{0.0, Matrix::Zero(logits.values.rows(), width)};
  std::size_t count = 0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels.role[i] == Role::Inlier) ++count;
  if (count == 0) return out;
  const double inv = 1.0 / static_cast<double>(count);

  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels.role[i] != Role::Inlier) continue;
    const int target = spec.class_index(labels.semantic[i]);
    if (target < 0)
      throw ContractError("ce_loss: inlier point with non-inlier class " + std::to_string(labels.semantic[i]));
    const auto r = static_cast<Eigen::Index>(i);
    const std::span<const double> row(logits.values.row(r).data(), static_cast<std::size_t>(used));
    const double lse = log_sum_exp(row);
    out.value += (lse - row[static_cast<std::size_t>(target)]) * inv;
    for (Eigen::Index c = 0; c < used; ++c) out.grad(r, c) = std::exp(row[static_cast<std::size_t>(c)] - lse) * inv;
    out.grad(r, target) -= inv;
  }
  return out;
}

BinaryLossResult std_loss(std::span<const double> scores_in, std::span<const double> scores_aux, double b,
                          StdOrientation orientation, double ood_weight) {
  BinaryLossResult out;
  out.grad_in.assign(scores_in.size(), 0.0);
  out.grad_out.assign(scores_aux.size(), 0.0);
  // Consistent: ID term -log(1 - sigma(x)) = softplus(x); aux term -log sigma(x) = softplus(-x).
  const double in_sign = orientation == StdOrientation::Consistent ? 1.0 : -1.0;

  if (!scores_in.empty()) {
    const double inv = 1.0 / static_cast<double>(scores_in.size());
    for (std::size_t i = 0; i < scores_in.size(); ++i) {
      const double x = in_sign * (scores_in[i] + b);
      out.value += softplus(x) * inv;
      out.grad_in[i] = in_sign * sigmoid(x) * inv;
      out.grad_b += out.grad_in[i];
    }
  }
  if (!scores_aux.empty()) {
    const double inv = ood_weight / static_cast<double>(scores_aux.size());
    for (std::size_t i = 0; i < scores_aux.size(); ++i) {
      const double x = -in_sign * (scores_aux[i] + b);
      out.value += softplus(x) * inv;
      out.grad_out[i] = -in_sign * sigmoid(x) * inv;
      out.grad_b += out.grad_out[i];
    }
  }
  return out;
}

BinaryLossResult soe_loss(std::span<const double> scores_in, std::span<const double> scores_void, double b,
                          double beta, double ood_weight) {
  BinaryLossResult out;
  out.grad_in.assign(scores_in.size(), 0.0);
  out.grad_out.assign(scores_void.size(), 0.0);

  if (!scores_in.empty()) {
    const double inv = 1.0 / static_cast<double>(scores_in.size());
    for (std::size_t i = 0; i < scores_in.size(); ++i) {
      const double s = sigmoid(scores_in[i] + b);
      out.value += s * inv;
      out.grad_in[i] = s * (1.0 - s) * inv;
      out.grad_b += out.grad_in[i];
    }
  }
  if (!scores_void.empty()) {
    const double inv = ood_weight / static_cast<double>(scores_void.size());
    for (std::size_t i = 0; i < scores_void.size(); ++i) {
      const double s = sigmoid(scores_void[i] + b);
      const double gap = beta - s;
      if (gap > 0.0) {
        out.value += gap * inv;
        out.grad_out[i] = -s * (1.0 - s) * inv;
        out.grad_b += out.grad_out[i];
      }
    }
  }
  return out;
}

TotalLossResult total_loss(const LogitField& logits, const LabelMap& labels, const ClassSpec& spec,
                           ScoreMethod method, const NdpParams* params, double bias, const LossConfig& cfg) {
  cfg.validate();
  check_method(method, logits);
  labels.validate(logits.rows());
  const std::size_t m = logits.rows();
  const auto width = static_cast<std::size_t>(logits.values.cols());

  TotalLossResult out;
  CeResult ce = ce_loss(logits, labels, spec, cfg.ce_positive_only);
  out.ce = ce.value;
  out.logit_grads = std::move(ce.grad);

  // Static scores and their row gradients.
  std::vector<double> base(m);
  Matrix base_grad(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(width));
  for (std::size_t i = 0; i < m; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    base[i] = score_row_grad(method, {logits.values.row(r).data(), width}, logits.num_classes,
                             {base_grad.row(r).data(), width});
  }

  std::optional<NdpForward> fwd;
  if (params) fwd = ndp_weight(logits, *params);
  const double b = params ? params->b : bias;

  out.scores.scores.resize(m);
  for (std::size_t i = 0; i < m; ++i)
    out.scores.scores[i] = fwd ? base[i] * fwd->weights[static_cast<Eigen::Index>(i)] : base[i];

  std::vector<std::size_t> in_idx, aux_idx, void_idx;
  for (std::size_t i = 0; i < m; ++i) {
    switch (labels.role[i]) {
      case Role::Inlier: in_idx.push_back(i); break;
      case Role::AuxOod: aux_idx.push_back(i); break;
      case Role::Void: void_idx.push_back(i); break;
      default: break;
    }
  }
  auto gather = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> v(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) v[k] = out.scores.scores[idx[k]];
    return v;
  };
  const auto s_in = gather(in_idx);

  std::vector<double> grad_score(m, 0.0);
  if (!aux_idx.empty()) {
    const auto r = std_loss(s_in, gather(aux_idx), b, cfg.std_orientation, cfg.ood_weight);
    out.std_term = r.value;
    out.grad_b += r.grad_b;
    for (std::size_t k = 0; k < in_idx.size(); ++k) grad_score[in_idx[k]] += r.grad_in[k];
    for (std::size_t k = 0; k < aux_idx.size(); ++k) grad_score[aux_idx[k]] += r.grad_out[k];
  }
  if (!void_idx.empty()) {
    const auto r = soe_loss(s_in, gather(void_idx), b, cfg.beta, cfg.ood_weight);
    out.soe_term = r.value;
    out.grad_b += r.grad_b;
    for (std::size_t k = 0; k < in_idx.size(); ++k) grad_score[in_idx[k]] += r.grad_in[k];
    for (std::size_t k = 0; k < void_idx.size(); ++k) grad_score[void_idx[k]] += r.grad_out[k];
  }
  out.total = out.ce + out.std_term + out.soe_term;

  // Chain rule through S = S_method * w.
  std::vector<double> grad_w(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (grad_score[i] == 0.0) continue;
    const double w = fwd ? fwd->weights[static_cast<Eigen::Index>(i)] : 1.0;
    out.logit_grads.row(static_cast<Eigen::Index>(i)) += (grad_score[i] * w) * base_grad.row(static_cast<Eigen::Index>(i));
    grad_w[i] = grad_score[i] * base[i];
  }
  if (fwd) {
    NdpBackward back = ndp_backward(fwd->tape, grad_w);
    out.logit_grads += back.logit_grads;
    back.param_grads.b = out.grad_b;
    out.ndp_grads = std::move(back.param_grads);
  }
  return out;
}

}  // namespace ndp
