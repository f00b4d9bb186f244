// Finite-difference check of the NDP weight gradients, shared by the unit and
// acceptance suites.
#pragma once

#include "ndp/ndp.hpp"

#include "oracles.hpp"

#include <random>

namespace fdcheck {

struct Instance {
  ndp::LogitField logits;
  ndp::NdpParams params;
  std::vector<double> grad_w;
};

// Random instance whose pre-activations all keep a margin from the ReLU kink,
// where finite differences are meaningless.
inline Instance random_instance(std::mt19937_64& rng, std::size_t c, std::size_t d, std::size_t m) {
  std::normal_distribution<double> n;
  for (;;) {
    Instance in;
    in.params = ndp::init_params(c, d, rng());
    for (Eigen::Index i = 0; i < in.params.w_s.size(); ++i) in.params.w_s[i] = n(rng);
    in.logits.num_classes = c / 2;
    in.logits.extended = true;
    in.logits.values.resize(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(c));
    for (Eigen::Index i = 0; i < in.logits.values.size(); ++i) in.logits.values.data()[i] = 2.0 * n(rng);
    in.grad_w.resize(m);
    for (auto& g : in.grad_w) g = n(rng);
    const auto fwd = ndp::ndp_weight(in.logits, in.params);
    bool clear = true;
    for (Eigen::Index i = 0; i < fwd.tape.pre_activation.size(); ++i) clear &= std::abs(fwd.tape.pre_activation[i]) > 1e-2;
    if (clear) return in;
  }
}

// Max relative error between ndp_backward and central differences of
// L = sum_i grad_w[i] * w[i], over every parameter entry and every logit.
inline double max_rel_error(Instance& in, double h = 1e-4) {
  auto loss = [&] {
    const ndp::Vector w = ndp::ndp_weight_only(in.logits, in.params);
    double l = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) l += in.grad_w[static_cast<std::size_t>(i)] * w[i];
    return l;
  };
  const auto fwd = ndp::ndp_weight(in.logits, in.params);
  const auto back = ndp::ndp_backward(fwd.tape, in.grad_w);
  double worst = 0.0;
  auto params = in.params.blocks();
  const auto grads = back.param_grads.blocks();
  for (std::size_t b = 0; b + 1 < params.size(); ++b)  // b, the loss bias, is not an NDP input
    for (std::size_t k = 0; k < params[b].size(); ++k)
      worst = std::max(worst, oracle::rel_err(grads[b][k], oracle::central_diff(params[b][k], h, loss)));
  for (Eigen::Index k = 0; k < in.logits.values.size(); ++k)
    worst = std::max(worst, oracle::rel_err(back.logit_grads.data()[k],
                                            oracle::central_diff(in.logits.values.data()[k], h, loss)));
  return worst;
}

}  // namespace fdcheck
