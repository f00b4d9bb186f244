#include "ndp/ndp.hpp"

#include <cmath>
#include <random>

namespace ndp {
namespace {

constexpr std::uint32_t kParamsMagic = 0x5044444Eu;  // "NDDP" little-endian
constexpr std::uint32_t kParamsVersion = 1;

void glorot(Matrix& m, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

void check_input(const LogitField& logits, const NdpParams& params) {
  logits.validate();
  if (static_cast<std::size_t>(logits.values.cols()) != params.logit_width())
    throw ContractError("ndp: logit width " + std::to_string(logits.values.cols()) + " but params expect " +
                        std::to_string(params.logit_width()));
}

void row_softmax(Matrix& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace

NdpParams NdpParams::zeros_like() const {
  NdpParams z;
  z.w_p = Matrix::Zero(w_p.rows(), w_p.cols());
  z.psi = Matrix::Zero(psi.rows(), psi.cols());
  z.w_q = Matrix::Zero(w_q.rows(), w_q.cols());
  z.w_k = Matrix::Zero(w_k.rows(), w_k.cols());
  z.w_v = Matrix::Zero(w_v.rows(), w_v.cols());
  z.w_s = Vector::Zero(w_s.size());
  return z;
}

void NdpParams::validate() const {
  const auto c = w_p.rows();
  const auto d = w_p.cols();
  if (c < 2 || d < 1) throw ContractError("ndp params: need C >= 2 and d >= 1");
  if (psi.rows() != c || psi.cols() != d) throw ContractError("ndp params: prior table must be C x d");
  for (const Matrix* m : {&w_q, &w_k, &w_v})
    if (m->rows() != d || m->cols() != d) throw ContractError("ndp params: attention projections must be d x d");
  if (w_s.size() != 2 * d) throw ContractError("ndp params: weight head must have 2d entries");
  for (auto block : blocks())
    for (double v : block)
      if (!std::isfinite(v)) throw ContractError("ndp params: non-finite entry");
}

std::vector<std::span<double>> NdpParams::blocks() {
  return {{w_p.data(), static_cast<std::size_t>(w_p.size())}, {psi.data(), static_cast<std::size_t>(psi.size())},
          {w_q.data(), static_cast<std::size_t>(w_q.size())}, {w_k.data(), static_cast<std::size_t>(w_k.size())},
          {w_v.data(), static_cast<std::size_t>(w_v.size())}, {w_s.data(), static_cast<std::size_t>(w_s.size())},
          {&b, 1}};
}

std::vector<std::span<const double>> NdpParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (auto s : const_cast<NdpParams*>(this)->blocks()) out.emplace_back(s.data(), s.size());
  return out;
}

NdpParams init_params(std::size_t logit_width, std::size_t latent_dim, std::uint64_t seed) {
  if (logit_width < 2) throw ContractError("init_params: C must be >= 2");
  if (latent_dim < 1) throw ContractError("init_params: d must be >= 1");
  const auto c = static_cast<Eigen::Index>(logit_width);
  const auto d = static_cast<Eigen::Index>(latent_dim);
  std::mt19937_64 rng(seed);
  NdpParams p;
  p.w_p.resize(c, d);
  p.psi.resize(c, d);
  p.w_q.resize(d, d);
  p.w_k.resize(d, d);
  p.w_v.resize(d, d);
  for (Matrix* m : {&p.w_p, &p.psi, &p.w_q, &p.w_k, &p.w_v}) glorot(*m, rng);
  p.w_s = Vector::Zero(2 * d);
  p.b = 0.0;
  return p;
}

NdpForward ndp_weight(const LogitField& logits, const NdpParams& params) {
  check_input(logits, params);
  const auto d = params.w_p.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  NdpForward out;
  NdpTape& t = out.tape;
  t.params = &params;
  t.version = params.version;
  t.logits = logits.values;
  t.embed = t.logits * params.w_p;
  t.query = t.embed * params.w_q;
  t.keys = params.psi * params.w_k;
  t.values = params.psi * params.w_v;
  t.attention = (t.query * t.keys.transpose()) * scale;
  row_softmax(t.attention);
  t.context = t.attention * t.values;
  t.pre_activation = t.embed * params.w_s.head(d) + t.context * params.w_s.tail(d);

  out.weights.resize(t.pre_activation.size());
  for (Eigen::Index i = 0; i < out.weights.size(); ++i) {
    const double u = t.pre_activation[i];
    out.weights[i] = (u > 0.0 ? u : 0.0) + 1.0;
  }
  return out;
}

Vector ndp_weight_only(const LogitField& logits, const NdpParams& params) {
  return ndp_weight(logits, params).weights;
}

NdpBackward ndp_backward(const NdpTape& tape, std::span<const double> grad_w) {
  if (tape.params == nullptr) throw ContractError("ndp_backward: empty tape");
  if (tape.params->version != tape.version)
    throw ContractError("ndp_backward: stale tape (parameters were updated after the forward pass)");
  const NdpParams& p = *tape.params;
  const auto m = tape.logits.rows();
  if (static_cast<Eigen::Index>(grad_w.size()) != m) throw ContractError("ndp_backward: grad_w length mismatch");
  const auto d = p.w_p.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  NdpBackward out{p.zeros_like(), Matrix::Zero(m, p.w_p.rows())};
  NdpParams& g = out.param_grads;

  Vector g_pre(m);
  for (Eigen::Index i = 0; i < m; ++i) g_pre[i] = tape.pre_activation[i] > 0.0 ? grad_w[static_cast<std::size_t>(i)] : 0.0;

  // Weight head.
  g.w_s.head(d) = tape.embed.transpose() * g_pre;
  g.w_s.tail(d) = tape.context.transpose() * g_pre;
  Matrix g_embed = g_pre * p.w_s.head(d).transpose();
  const Matrix g_context = g_pre * p.w_s.tail(d).transpose();

  // z = A V
  const Matrix g_attn = g_context * tape.values.transpose();
  const Matrix g_values = tape.attention.transpose() * g_context;

  // Row softmax: dS = A * (dA - rowsum(A * dA)).
  Matrix g_logit_scores = tape.attention.cwiseProduct(g_attn);
  const Vector row_dot = g_logit_scores.rowwise().sum();
  g_logit_scores -= tape.attention.cwiseProduct(row_dot.replicate(1, tape.attention.cols()));
  g_logit_scores *= scale;

  // S = Q K^T
  const Matrix g_query = g_logit_scores * tape.keys;
  const Matrix g_keys = g_logit_scores.transpose() * tape.query;

  // Q = E W_q
  g.w_q = tape.embed.transpose() * g_query;
  g_embed += g_query * p.w_q.transpose();

  // K = psi W_k, V = psi W_v
  g.w_k = p.psi.transpose() * g_keys;
  g.w_v = p.psi.transpose() * g_values;
  g.psi = g_keys * p.w_k.transpose() + g_values * p.w_v.transpose();

  // E = F W_p
  g.w_p = tape.logits.transpose() * g_embed;
  out.logit_grads = g_embed * p.w_p.transpose();
  return out;
}

std::vector<std::uint8_t> serialize_params(const NdpParams& params) {
  params.validate();
  std::vector<std::uint8_t> out;
  detail::append_u32(out, kParamsMagic);
  detail::append_u32(out, kParamsVersion);
  detail::append_u32(out, static_cast<std::uint32_t>(params.logit_width()));
  detail::append_u32(out, static_cast<std::uint32_t>(params.latent_dim()));
  for (auto block : params.blocks())
    for (double v : block) detail::append_f32(out, static_cast<float>(v));
  return out;
}

NdpParams deserialize_params(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  if (detail::read_u32(bytes, offset) != kParamsMagic) throw FormatError("ndp params: bad magic");
  const std::uint32_t version = detail::read_u32(bytes, offset + 4);
  if (version != kParamsVersion) throw FormatError("ndp params: unsupported version " + std::to_string(version));
  const std::uint32_t c = detail::read_u32(bytes, offset + 8);
  const std::uint32_t d = detail::read_u32(bytes, offset + 12);
  if (c < 2 || d < 1 || c > 65536 || d > 65536) throw FormatError("ndp params: implausible dimensions");
  offset += 16;
  NdpParams p;
  p.w_p.resize(c, d);
  p.psi.resize(c, d);
  p.w_q.resize(d, d);
  p.w_k.resize(d, d);
  p.w_v.resize(d, d);
  p.w_s.resize(2 * static_cast<Eigen::Index>(d));
  for (auto block : p.blocks()) {
    for (double& v : block) {
      v = detail::read_f32(bytes, offset);
      offset += 4;
    }
  }
  p.validate();
  return p;
}

void save_params(const std::filesystem::path& path, const NdpParams& params) {
  write_file_bytes(path, serialize_params(params));
}

NdpParams load_params(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::size_t offset = 0;
  NdpParams p = deserialize_params(bytes, offset);
  if (offset != bytes.size()) throw FormatError("ndp params: trailing bytes");
  return p;
}

}  // namespace ndp
