#include "ndp/losses.hpp"

#include "loss_fd.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace ndp;

namespace {

struct CeCase {
  ClassSpec spec;
  LogitField logits;
  LabelMap labels;
};

CeCase ce_case(std::uint64_t seed, std::size_t m) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  CeCase c;
  c.spec = ClassSpec::synthetic_default();
  c.logits.num_classes = c.spec.num_classes();
  c.logits.extended = true;
  c.logits.values.resize(Eigen::Index(m), Eigen::Index(c.spec.logit_width()));
  for (Eigen::Index i = 0; i < c.logits.values.size(); ++i) c.logits.values.data()[i] = 2.0 * n(rng);
  for (std::size_t i = 0; i < m; ++i)
    c.labels.push_back(i % 4 == 3 ? c.spec.void_id : c.spec.inlier_classes[rng() % c.spec.num_classes()], 0, c.spec);
  return c;
}

}  // namespace

TEST(CeLoss, OneHotScaledIsNearZero) {
  auto c = ce_case(1, 3);
  c.logits.values.setZero();
  for (std::size_t i = 0; i < 3; ++i)
    if (c.labels.role[i] == Role::Inlier)
      c.logits.values(Eigen::Index(i), c.spec.class_index(c.labels.semantic[i])) = 100.0;
  EXPECT_LT(ce_loss(c.logits, c.labels, c.spec).value, 1e-10);
}

TEST(CeLoss, UniformIsLogWidth) {
  auto c = ce_case(2, 8);
  c.logits.values.setConstant(0.3);
  EXPECT_NEAR(ce_loss(c.logits, c.labels, c.spec).value, std::log(12.0), 1e-12);
  EXPECT_NEAR(ce_loss(c.logits, c.labels, c.spec, true).value, std::log(6.0), 1e-12);
}

TEST(CeLoss, GradientMatchesFiniteDifferences) {
  for (bool positive_only : {false, true}) {
    auto c = ce_case(3, 9);
    const auto r = ce_loss(c.logits, c.labels, c.spec, positive_only);
    for (Eigen::Index k = 0; k < c.logits.values.size(); ++k) {
      const double fd = oracle::central_diff(c.logits.values.data()[k], 1e-6,
                                             [&] { return ce_loss(c.logits, c.labels, c.spec, positive_only).value; });
      EXPECT_LT(oracle::rel_err(r.grad.data()[k], fd, 1e-6), 1e-5);
    }
  }
}

TEST(CeLoss, InlierRoleWithForeignClassIsRejected) {
  auto c = ce_case(4, 2);
  c.labels.semantic[0] = 99;  // role still says inlier
  EXPECT_THROW(ce_loss(c.logits, c.labels, c.spec), ContractError);
}

TEST(StdLoss, MidpointIsTwoLnTwo) {
  const std::vector<double> in = {0.5}, aux = {0.5};
  EXPECT_NEAR(std_loss(in, aux, -0.5).value, 2.0 * std::numbers::ln2, 1e-12);
  EXPECT_NEAR(std_loss(in, aux, -0.5, StdOrientation::Swapped).value, 2.0 * std::numbers::ln2, 1e-12);
}

TEST(StdLoss, Limits) {
  const std::vector<double> in = {-1e3}, aux = {1e3};
  EXPECT_LT(std_loss(in, aux, 0.0).value, 1e-300);
  EXPECT_GT(std_loss(in, aux, 0.0, StdOrientation::Swapped).value, 1e3);
}

TEST(StdLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 2.0);
  for (auto o : {StdOrientation::Consistent, StdOrientation::Swapped}) {
    std::vector<double> in(6), aux(4);
    for (auto& x : in) x = n(rng);
    for (auto& x : aux) x = n(rng);
    double b = n(rng);
    const auto r = std_loss(in, aux, b, o, 7.0);
    auto f = [&] { return std_loss(in, aux, b, o, 7.0).value; };
    for (std::size_t i = 0; i < in.size(); ++i)
      EXPECT_LT(oracle::rel_err(r.grad_in[i], oracle::central_diff(in[i], 1e-6, f)), 1e-6);
    for (std::size_t i = 0; i < aux.size(); ++i)
      EXPECT_LT(oracle::rel_err(r.grad_out[i], oracle::central_diff(aux[i], 1e-6, f)), 1e-6);
    EXPECT_LT(oracle::rel_err(r.grad_b, oracle::central_diff(b, 1e-6, f)), 1e-6);
  }
}

TEST(SoeLoss, HingeInactiveAboveBeta) {
  const std::vector<double> in, v = {3.0, 5.0, 2.5};  // sigma >= 0.924 > 0.9
  const auto r = soe_loss(in, v, 0.0, 0.9);
  EXPECT_EQ(r.value, 0.0);
  for (double g : r.grad_out) EXPECT_EQ(g, 0.0);
}

TEST(SoeLoss, SingleIdAtZeroIsHalf) {
  const std::vector<double> in = {0.0}, v;
  EXPECT_DOUBLE_EQ(soe_loss(in, v, 0.0, 0.9).value, 0.5);
}

TEST(SoeLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> in(5), v(5);
  for (auto& x : in) x = n(rng);
  for (auto& x : v) x = n(rng);
  double b = 0.1;
  for (double x : v) ASSERT_GT(std::abs(sigmoid(x + b) - 0.9), 1e-3);
  const auto r = soe_loss(in, v, b, 0.9, 4.0);
  auto f = [&] { return soe_loss(in, v, b, 0.9, 4.0).value; };
  for (std::size_t i = 0; i < in.size(); ++i)
    EXPECT_LT(oracle::rel_err(r.grad_in[i], oracle::central_diff(in[i], 1e-6, f)), 1e-6);
  for (std::size_t i = 0; i < v.size(); ++i)
    EXPECT_LT(oracle::rel_err(r.grad_out[i], oracle::central_diff(v[i], 1e-6, f)), 1e-6);
  EXPECT_LT(oracle::rel_err(r.grad_b, oracle::central_diff(b, 1e-6, f)), 1e-6);
}

TEST(TotalLoss, NoAuxNoVoidEqualsCe) {
  auto c = ce_case(7, 12);
  for (std::size_t i = 0; i < c.labels.size(); ++i)
    if (c.labels.role[i] != Role::Inlier) c.labels.set(i, 40, c.spec);
  const auto params = init_params(c.spec.logit_width(), 16, 1);
  const auto r = total_loss(c.logits, c.labels, c.spec, ScoreMethod{}, &params, 0.0, LossConfig{});
  const auto ce = ce_loss(c.logits, c.labels, c.spec);
  EXPECT_EQ(r.total, ce.value);
  EXPECT_EQ(r.std_term, 0.0);
  EXPECT_EQ(r.soe_term, 0.0);
}

TEST(TotalLoss, OodWeightScalesAuxTermLinearly) {
  std::vector<double> in = {0.2, -0.4}, aux = {0.3};
  const double one = std_loss({}, aux, 0.1, StdOrientation::Consistent, 1.0).value;
  const double w = std_loss({}, aux, 0.1, StdOrientation::Consistent, 10000.0).value;
  const double two = std_loss({}, aux, 0.1, StdOrientation::Consistent, 20000.0).value;
  EXPECT_DOUBLE_EQ(w, 10000.0 * one);
  EXPECT_DOUBLE_EQ(two, 2.0 * w);
  const double id = std_loss(in, {}, 0.1).value;
  EXPECT_DOUBLE_EQ(std_loss(in, aux, 0.1, StdOrientation::Consistent, 20000.0).value - id, 2.0 * w);
}

TEST(TotalLoss, EndToEndGradientThroughNdpEe) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = lossfd::make_toy(seed);
    EXPECT_LT(lossfd::max_rel_error(t), 1e-3) << "seed " << seed;
    auto p = lossfd::make_toy(seed, StdOrientation::Swapped);
    EXPECT_LT(lossfd::max_rel_error(p), 1e-3) << "seed " << seed;
  }
}

TEST(TotalLoss, StaticPathUsesBias) {
  auto t = lossfd::make_toy(3);
  const auto a = total_loss(t.logits, t.labels, t.spec, ScoreMethod{}, nullptr, 0.7, t.cfg);
  EXPECT_FALSE(a.ndp_grads.has_value());
  const auto s = static_scores(t.logits, ScoreMethod{});
  EXPECT_EQ(a.scores.scores, s.scores);
  double b = 0.7;
  auto f = [&] { return total_loss(t.logits, t.labels, t.spec, ScoreMethod{}, nullptr, b, t.cfg).total; };
  EXPECT_LT(oracle::rel_err(a.grad_b, oracle::central_diff(b, 1e-6, f)), 1e-6);
}
