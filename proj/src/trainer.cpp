#include "ndp/trainer.hpp"

#include "ndp/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ndp {
namespace {

constexpr std::uint32_t kModelMagic = 0x4D50444Eu;  // "NDPM"
constexpr std::uint32_t kModelVersion = 1;

void glorot(Matrix& m, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  std::uniform_real_distribution<double> dist(-a, a);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
}

template <typename T>
std::span<double> span_of(T& m) {
  return {m.data(), static_cast<std::size_t>(m.size())};
}

std::size_t road_count(const Scan& scan, const ClassSpec& spec) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < scan.labels.size(); ++i)
    n += scan.labels.role[i] == Role::Inlier && scan.labels.semantic[i] == spec.road_id;
  return n;
}

bool has_road(const Scan& scan, const ClassSpec& spec) {
  for (std::size_t i = 0; i < scan.labels.size(); ++i)
    if (scan.labels.role[i] == Role::Inlier && scan.labels.semantic[i] == spec.road_id) return true;
  return false;
}

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw ContractError(std::string("training produced a non-finite ") + what);
}

}  // namespace

Matrix extract_features(const PointCloud& cloud) {
  if (cloud.empty()) throw ContractError("extract_features: empty cloud");
  const auto n = static_cast<Eigen::Index>(cloud.size());
  Matrix f(n, static_cast<Eigen::Index>(kNumFeatures));
  const GridIndex index(cloud.points, kFeatureRadius);
  const GridIndex coarse(cloud.points, kGroundRadius);
  const double r2 = kFeatureRadius * kFeatureRadius;
  const double g2 = kGroundRadius * kGroundRadius;

  index.for_each_cell(kFeatureRadius, [&](const std::vector<std::size_t>& members, const std::vector<std::size_t>& cand) {
    for (std::size_t i : members) {
      const Point3& p = cloud.points[i];
      // Shifted sums keep the variance well conditioned.
      double count = 0.0, sum = 0.0, sq = 0.0;
      for (std::size_t j : cand) {
        if (squared_distance(cloud.points[j], p) > r2) continue;
        const double dz = double(cloud.points[j].z) - double(p.z);
        count += 1.0;
        sum += dz;
        sq += dz * dz;
      }
      const double mean = sum / count;
      const auto r = static_cast<Eigen::Index>(i);
      f(r, 0) = p.z;
      f(r, 1) = std::abs(double(p.y));
      f(r, 2) = std::hypot(double(p.x), double(p.y));
      f(r, 3) = count;
      f(r, 4) = std::max(0.0, sq / count - mean * mean);
    }
  });
  coarse.for_each_cell(kGroundRadius, [&](const std::vector<std::size_t>& members, const std::vector<std::size_t>& cand) {
    for (std::size_t i : members) {
      const Point3& p = cloud.points[i];
      double ground = p.z;
      for (std::size_t j : cand)
        if (squared_distance(cloud.points[j], p) <= g2) ground = std::min(ground, double(cloud.points[j].z));
      f(static_cast<Eigen::Index>(i), 5) = double(p.z) - ground;
    }
  });
  return f;
}

void ToyBackbone::validate() const {
  if (feature_mean.size() != static_cast<Eigen::Index>(kNumFeatures) || feature_scale.size() != feature_mean.size())
    throw ContractError("backbone: feature normalization width mismatch");
  if (w1.rows() != static_cast<Eigen::Index>(kNumFeatures) || b1.size() != w1.cols() || w2.rows() != w1.cols() ||
      b2.size() != w2.cols())
    throw ContractError("backbone: inconsistent layer shapes");
  if (!w1.allFinite() || !b1.allFinite() || !w2.allFinite() || !b2.allFinite() || !feature_mean.allFinite() ||
      !feature_scale.allFinite())
    throw ContractError("backbone: non-finite weight");
}

std::vector<std::span<double>> ToyBackbone::blocks() { return {span_of(w1), span_of(b1), span_of(w2), span_of(b2)}; }

std::vector<std::span<double>> BackboneGrads::blocks() { return {span_of(w1), span_of(b1), span_of(w2), span_of(b2)}; }

ToyBackbone init_backbone(std::size_t hidden, std::size_t output_width, std::uint64_t seed) {
  if (hidden < 1 || output_width < 2) throw ContractError("init_backbone: bad dimensions");
  std::mt19937_64 rng(seed);
  ToyBackbone net;
  net.feature_mean = Vector::Zero(kNumFeatures);
  net.feature_scale = Vector::Ones(kNumFeatures);
  net.w1.resize(static_cast<Eigen::Index>(kNumFeatures), static_cast<Eigen::Index>(hidden));
  net.w2.resize(static_cast<Eigen::Index>(hidden), static_cast<Eigen::Index>(output_width));
  glorot(net.w1, rng);
  glorot(net.w2, rng);
  net.b1 = Vector::Zero(static_cast<Eigen::Index>(hidden));
  net.b2 = Vector::Zero(static_cast<Eigen::Index>(output_width));
  return net;
}

Matrix backbone_forward(const ToyBackbone& net, const Matrix& features, BackboneTape* tape) {
  if (features.cols() != net.w1.rows()) throw ContractError("backbone: feature width mismatch");
  Matrix x = (features.rowwise() - net.feature_mean.transpose()).array().rowwise() /
             net.feature_scale.transpose().array();
  Matrix h = ((x * net.w1).rowwise() + net.b1.transpose()).cwiseMax(0.0);
  Matrix out = (h * net.w2).rowwise() + net.b2.transpose();
  if (tape) {
    tape->input = std::move(x);
    tape->hidden = std::move(h);
  }
  return out;
}

BackboneGrads backbone_backward(const ToyBackbone& net, const BackboneTape& tape, const Matrix& grad_logits) {
  BackboneGrads g;
  g.w2 = tape.hidden.transpose() * grad_logits;
  g.b2 = grad_logits.colwise().sum().transpose();
  Matrix gh = grad_logits * net.w2.transpose();
  gh = gh.cwiseProduct((tape.hidden.array() > 0.0).cast<double>().matrix());
  g.w1 = tape.input.transpose() * gh;
  g.b1 = gh.colwise().sum().transpose();
  return g;
}

LogitField to_logit_field(Matrix values, const ClassSpec& spec) {
  LogitField f;
  f.values = std::move(values);
  f.num_classes = spec.num_classes();
  f.extended = spec.extended;
  return f;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(const std::vector<std::span<double>>& params, const std::vector<std::span<double>>& grads) {
  if (params.size() != grads.size()) throw ContractError("adam: parameter/gradient block count mismatch");
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw ContractError("adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto p = params[b];
    auto g = grads[b];
    if (p.size() != g.size() || p.size() != m_[b].size()) throw ContractError("adam: block size mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m_[b][i] = beta1_ * m_[b][i] + (1.0 - beta1_) * g[i];
      v_[b][i] = beta2_ * v_[b][i] + (1.0 - beta2_) * g[i] * g[i];
      p[i] -= lr_ * (m_[b][i] / c1) / (std::sqrt(v_[b][i] / c2) + eps_);
    }
  }
}

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw ContractError("train: lr must be non-negative");
  if (epochs < 1) throw ContractError("train: epochs must be >= 1");
  if (batch_scans < 1) throw ContractError("train: batch_scans must be >= 1");
  if (hidden < 1 || latent_dim < 1) throw ContractError("train: hidden and latent dims must be >= 1");
  raise.validate();
  loss.validate();
}

LogitField Model::logits(const PointCloud& cloud) const {
  return to_logit_field(backbone_forward(backbone, extract_features(cloud)), spec);
}

ScoreField Model::score(const PointCloud& cloud) const {
  const LogitField f = logits(cloud);
  return use_ndp ? ndp_score(f, method, ndp) : static_scores(f, method);
}

TrainResult train(const std::vector<Scan>& scenes, const ClassSpec& spec, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (scenes.empty()) throw ContractError("train: empty dataset");
  if (cfg.method.requires_extended() && !spec.extended)
    throw ContractError("train: extended energy needs an extended class spec");

  // Independent streams so that toggling NDP never shifts the backbone's randomness.
  std::mt19937_64 seeder(cfg.seed);
  const std::uint64_t backbone_seed = seeder();
  const std::uint64_t ndp_seed = seeder();
  std::mt19937_64 shuffle_rng(seeder());
  std::mt19937_64 raise_rng(seeder());

  TrainResult result;
  Model& model = result.model;
  model.spec = spec;
  model.method = cfg.method;
  model.use_ndp = cfg.use_ndp;
  model.backbone = init_backbone(cfg.hidden, spec.logit_width(), backbone_seed);
  model.ndp = init_params(spec.logit_width(), cfg.latent_dim, ndp_seed);
  if (cfg.use_ndp && !cfg.freeze_ndp_head) {
    // The zero head sits on the ReLU kink where no gradient flows; start it off the kink.
    std::mt19937_64 head_rng(ndp_seed ^ 0x5eedULL);
    Matrix head(model.ndp.w_s.size(), 1);
    glorot(head, head_rng);
    model.ndp.w_s = head.col(0);
  }

  std::vector<std::size_t> usable;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    scenes[s].labels.validate(scenes[s].cloud.size());
    if (has_road(scenes[s], spec)) usable.push_back(s);
    else result.log.notes.push_back("scan " + std::to_string(s) + " skipped: no road points");
  }

  // Feature standardization from the unaugmented training scans.
  {
    Vector sum = Vector::Zero(kNumFeatures), sq = Vector::Zero(kNumFeatures);
    double count = 0.0;
    for (std::size_t s : usable) {
      const Matrix f = extract_features(scenes[s].cloud);
      sum += f.colwise().sum().transpose();
      sq += f.array().square().matrix().colwise().sum().transpose();
      count += static_cast<double>(f.rows());
    }
    if (count > 0.0) {
      model.backbone.feature_mean = sum / count;
      for (Eigen::Index k = 0; k < sum.size(); ++k) {
        const double var = sq[k] / count - model.backbone.feature_mean[k] * model.backbone.feature_mean[k];
        model.backbone.feature_scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
      }
    }
  }

  // Data-dependent orientation of the head. Under ReLU'(0) = 0 an auxiliary point
  // with u <= 0 sends nothing to W_s, and the inlier term alone then drives every
  // u below zero for good. u is linear in W_s, so flipping its sign moves the
  // probed auxiliary points onto the active side.
  if (cfg.use_ndp && !cfg.freeze_ndp_head && !usable.empty()) {
    std::mt19937_64 probe_rng(ndp_seed ^ 0x9b0beULL);
    double aux_u = 0.0;
    for (std::size_t k = 0; k < std::min<std::size_t>(4, usable.size()); ++k) {
      const Scan& scan = scenes[usable[k]];
      const RaiseConfig rc = cfg.raise.sample(probe_rng);
      if (road_count(scan, spec) < rc.dbscan_min_pts) continue;
      const RaiseResult raised = perlin_raise(scan.cloud, scan.labels, spec, rc);
      if (raised.report.raised_indices.empty()) continue;
      const LogitField logits = model.logits(raised.cloud);
      const Vector u = ndp_weight(logits, model.ndp).tape.pre_activation;
      for (std::size_t i : raised.report.raised_indices) aux_u += u[Eigen::Index(i)];
    }
    if (aux_u < 0.0) model.ndp.w_s = -model.ndp.w_s;
  }

  Adam adam(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  std::vector<std::span<double>> params = model.backbone.blocks();
  if (cfg.use_ndp) {
    auto nb = model.ndp.blocks();
    for (std::size_t k = 0; k < nb.size(); ++k)
      if (!(cfg.freeze_ndp_head && k == 5)) params.push_back(nb[k]);
  } else {
    params.push_back({&model.ndp.b, 1});
  }

  // Gradient accumulators mirroring `params`.
  BackboneGrads acc_bb{Matrix::Zero(model.backbone.w1.rows(), model.backbone.w1.cols()),
                       Vector::Zero(model.backbone.b1.size()),
                       Matrix::Zero(model.backbone.w2.rows(), model.backbone.w2.cols()),
                       Vector::Zero(model.backbone.b2.size())};
  NdpParams acc_ndp = model.ndp.zeros_like();
  std::vector<std::span<double>> grads = acc_bb.blocks();
  if (cfg.use_ndp) {
    auto nb = acc_ndp.blocks();
    for (std::size_t k = 0; k < nb.size(); ++k)
      if (!(cfg.freeze_ndp_head && k == 5)) grads.push_back(nb[k]);
  } else {
    grads.push_back({&acc_ndp.b, 1});
  }
  auto zero_grads = [&] {
    for (auto g : grads) std::fill(g.begin(), g.end(), 0.0);
  };

  std::vector<std::size_t> order = usable;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochLog log;
    log.epoch = epoch + 1;
    log.skipped = scenes.size() - usable.size();
    std::size_t in_batch = 0;
    zero_grads();

    for (std::size_t s : order) {
      Scan scan = scenes[s];
      for (std::size_t r = 0; r < cfg.raise_per_scan; ++r) {
        for (std::size_t attempt = 0; attempt < cfg.raise_attempts; ++attempt) {
          const RaiseConfig rc = cfg.raise.sample(raise_rng);
          if (road_count(scan, spec) < rc.dbscan_min_pts) break;
          RaiseResult raised = perlin_raise(scan.cloud, scan.labels, spec, rc);
          if (!raised.report.applied) continue;
          log.raised_points += raised.report.raised_count;
          scan.cloud = std::move(raised.cloud);
          scan.labels = std::move(raised.labels);
          break;
        }
      }

      BackboneTape tape;
      const LogitField logits = to_logit_field(backbone_forward(model.backbone, extract_features(scan.cloud), &tape), spec);
      const TotalLossResult loss = total_loss(logits, scan.labels, spec, cfg.method, cfg.use_ndp ? &model.ndp : nullptr,
                                              model.ndp.b, cfg.loss);
      if (!std::isfinite(loss.total)) throw ContractError("training produced a non-finite loss");
      const BackboneGrads g = backbone_backward(model.backbone, tape, loss.logit_grads);

      acc_bb.w1 += g.w1;
      acc_bb.b1 += g.b1;
      acc_bb.w2 += g.w2;
      acc_bb.b2 += g.b2;
      if (cfg.use_ndp) {
        const NdpParams& ng = *loss.ndp_grads;
        acc_ndp.w_p += ng.w_p;
        acc_ndp.psi += ng.psi;
        acc_ndp.w_q += ng.w_q;
        acc_ndp.w_k += ng.w_k;
        acc_ndp.w_v += ng.w_v;
        acc_ndp.w_s += ng.w_s;
      }
      acc_ndp.b += loss.grad_b;

      log.total += loss.total;
      log.ce += loss.ce;
      log.std_term += loss.std_term;
      log.soe_term += loss.soe_term;
      ++log.scans;

      if (++in_batch == cfg.batch_scans) {
        if (cfg.batch_scans > 1)
          for (auto gb : grads)
            for (double& v : gb) v /= static_cast<double>(cfg.batch_scans);
        adam.step(params, grads);
        ++model.ndp.version;
        for (auto p : params) require_finite(p, "parameter");
        zero_grads();
        in_batch = 0;
      }
    }
    if (in_batch > 0) {
      for (auto gb : grads)
        for (double& v : gb) v /= static_cast<double>(in_batch);
      adam.step(params, grads);
      ++model.ndp.version;
      for (auto p : params) require_finite(p, "parameter");
    }

    if (log.scans > 0) {
      const double n = static_cast<double>(log.scans);
      log.total /= n;
      log.ce /= n;
      log.std_term /= n;
      log.soe_term /= n;
    }
    log.bias = model.ndp.b;
    result.log.epochs.push_back(log);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

void put_matrix(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double v : values) detail::append_f32(out, static_cast<float>(v));
}

template <typename T>
void get_matrix(std::span<const std::uint8_t> bytes, std::size_t& offset, T& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = detail::read_f32(bytes, offset);
    offset += 4;
  }
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const Model& model) {
  model.backbone.validate();
  std::vector<std::uint8_t> out;
  detail::append_u32(out, kModelMagic);
  detail::append_u32(out, kModelVersion);
  const ClassSpec& s = model.spec;
  detail::append_u32(out, static_cast<std::uint32_t>(s.inlier_classes.size()));
  for (auto id : s.inlier_classes) detail::append_u32(out, id);
  for (auto id : {s.road_id, s.void_id, s.ignore_id, s.ood_id, s.aux_ood_id}) detail::append_u32(out, id);
  detail::append_u32(out, s.extended ? 1u : 0u);
  detail::append_u32(out, static_cast<std::uint32_t>(model.method.kind));
  detail::append_u32(out, model.use_ndp ? 1u : 0u);

  const ToyBackbone& net = model.backbone;
  detail::append_u32(out, static_cast<std::uint32_t>(net.hidden()));
  detail::append_u32(out, static_cast<std::uint32_t>(net.output_width()));
  for (const auto* v : {&net.feature_mean, &net.feature_scale, &net.b1, &net.b2})
    put_matrix(out, {v->data(), static_cast<std::size_t>(v->size())});
  for (const auto* m : {&net.w1, &net.w2}) put_matrix(out, {m->data(), static_cast<std::size_t>(m->size())});

  const auto ndp_bytes = serialize_params(model.ndp);
  out.insert(out.end(), ndp_bytes.begin(), ndp_bytes.end());
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes) {
  std::size_t o = 0;
  auto u32 = [&] {
    const std::uint32_t v = detail::read_u32(bytes, o);
    o += 4;
    return v;
  };
  if (u32() != kModelMagic) throw FormatError("model: bad magic");
  if (const auto v = u32(); v != kModelVersion) throw FormatError("model: unsupported version " + std::to_string(v));
  Model model;
  const std::uint32_t k = u32();
  if (k < 2 || k > 4096) throw FormatError("model: implausible class count");
  for (std::uint32_t i = 0; i < k; ++i) model.spec.inlier_classes.push_back(static_cast<std::uint16_t>(u32()));
  model.spec.road_id = static_cast<std::uint16_t>(u32());
  model.spec.void_id = static_cast<std::uint16_t>(u32());
  model.spec.ignore_id = static_cast<std::uint16_t>(u32());
  model.spec.ood_id = static_cast<std::uint16_t>(u32());
  model.spec.aux_ood_id = static_cast<std::uint16_t>(u32());
  model.spec.extended = u32() != 0;
  const std::uint32_t kind = u32();
  if (kind > static_cast<std::uint32_t>(ScoreKind::MaxLogit)) throw FormatError("model: unknown score method");
  model.method.kind = static_cast<ScoreKind>(kind);
  model.use_ndp = u32() != 0;

  const std::uint32_t hidden = u32();
  const std::uint32_t width = u32();
  if (hidden < 1 || hidden > 65536 || width != model.spec.logit_width()) throw FormatError("model: bad backbone shape");
  ToyBackbone& net = model.backbone;
  net.feature_mean.resize(kNumFeatures);
  net.feature_scale.resize(kNumFeatures);
  net.b1.resize(hidden);
  net.b2.resize(width);
  net.w1.resize(static_cast<Eigen::Index>(kNumFeatures), hidden);
  net.w2.resize(hidden, width);
  get_matrix(bytes, o, net.feature_mean);
  get_matrix(bytes, o, net.feature_scale);
  get_matrix(bytes, o, net.b1);
  get_matrix(bytes, o, net.b2);
  get_matrix(bytes, o, net.w1);
  get_matrix(bytes, o, net.w2);
  net.validate();

  model.ndp = deserialize_params(bytes, o);
  if (model.ndp.logit_width() != width) throw FormatError("model: NDP width does not match the backbone");
  if (o != bytes.size()) throw FormatError("model: trailing bytes");
  model.spec.validate();
  return model;
}

void save_model(const std::filesystem::path& path, const Model& model) {
  write_file_bytes(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

}  // namespace ndp
