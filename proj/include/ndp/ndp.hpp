// Neural Distribution Prior: a learned prior table queried by single-head
// cross-attention, producing a per-point multiplicative weight w >= 1.
//
// Per point with logits f (width C):
//   e = W_p^T f                         latent embedding, d wide
//   a = softmax((W_q^T e) . (psi W_k)_j / sqrt(d))   over the C prior rows
//   z = sum_j a_j (psi W_v)_j
//   w = ReLU(W_s^T [e; z]) + 1
#pragma once

#include "ndp/core.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace ndp {

struct NdpParams {
  Matrix w_p;   // C x d
  Matrix psi;   // C x d, one prior row per logit channel
  Matrix w_q;   // d x d
  Matrix w_k;   // d x d
  Matrix w_v;   // d x d
  Vector w_s;   // 2d, weight head over [e; z]
  double b = 0.0;  // shared bias of the score-to-probability losses

  // Bumped on every in-place update; tapes recorded at an older version are stale.
  std::uint64_t version = 0;

  std::size_t logit_width() const { return static_cast<std::size_t>(w_p.rows()); }
  std::size_t latent_dim() const { return static_cast<std::size_t>(w_p.cols()); }

  /// Zero-valued parameters with matching shapes (gradient accumulator).
  NdpParams zeros_like() const;
  void validate() const;
  /// Parameter blocks in checkpoint order: W_p, psi, W_q, W_k, W_v, W_s, b.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
};

inline constexpr std::size_t kDefaultLatentDim = 16;

/// Glorot-uniform projections and prior table, zero weight head, b = 0.
NdpParams init_params(std::size_t logit_width, std::size_t latent_dim = kDefaultLatentDim, std::uint64_t seed = 0);

/// Forward intermediates for one call of ndp_weight.
struct NdpTape {
  const NdpParams* params = nullptr;
  std::uint64_t version = 0;
  Matrix logits;     // M x C
  Matrix embed;      // M x d
  Matrix query;      // M x d
  Matrix keys;       // C x d
  Matrix values;     // C x d
  Matrix attention;  // M x C, rows sum to 1
  Matrix context;    // M x d
  Vector pre_activation;  // M
};

struct NdpForward {
  Vector weights;  // M, all >= 1
  NdpTape tape;
};

NdpForward ndp_weight(const LogitField& logits, const NdpParams& params);

/// Weights without recording a tape (scoring path).
Vector ndp_weight_only(const LogitField& logits, const NdpParams& params);

struct NdpBackward {
  NdpParams param_grads;  // b gradient is left at zero
  Matrix logit_grads;     // M x C
};

/// Exact gradients of sum_i grad_w[i] * w[i]. ReLU'(0) = 0.
/// Throws ContractError if the parameters changed since the forward pass.
NdpBackward ndp_backward(const NdpTape& tape, std::span<const double> grad_w);

/// Versioned little-endian container: magic, version, C, d, then float32
/// row-major W_p, psi, W_q, W_k, W_v, W_s, b.
std::vector<std::uint8_t> serialize_params(const NdpParams& params);
/// Parses a container starting at `offset`; advances offset past it.
NdpParams deserialize_params(std::span<const std::uint8_t> bytes, std::size_t& offset);

void save_params(const std::filesystem::path& path, const NdpParams& params);
NdpParams load_params(const std::filesystem::path& path);

}  // namespace ndp
