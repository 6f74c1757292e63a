#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "nvpf/core/grad_check.hpp"
#include "nvpf/flow/flow.hpp"

using namespace nvpf;
using namespace nvpf::flow;

namespace {

FlowConfig toy(std::size_t rows, std::size_t cols, std::size_t units, FlowInit init) {
  FlowConfig c;
  c.rows = rows;
  c.cols = cols;
  c.units = units;
  c.feature_maps = 4;
  c.init = init;
  return c;
}

// log|det J| of f at x, J assembled column by column from central differences.
double fd_log_abs_det(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                      double eps = 1e-6) {
  NoGradGuard guard;
  const std::size_t n = x.numel();
  Eigen::MatrixXd J(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    auto plus = x.values(), minus = x.values();
    plus[j] += eps;
    minus[j] -= eps;
    const auto yp = f(Tensor(x.shape(), plus)).values();
    const auto ym = f(Tensor(x.shape(), minus)).values();
    for (std::size_t i = 0; i < n; ++i) J(i, j) = (yp[i] - ym[i]) / (2 * eps);
  }
  return std::log(std::abs(J.determinant()));
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::vector<bool> all_cols(std::size_t n) { return std::vector<bool>(n, true); }

// Multivariate normal log-density with an explicit covariance matrix.
double mvn_log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& cov) {
  const auto d = static_cast<double>(x.size());
  const Eigen::VectorXd diff = x - mu;
  return -0.5 * d * std::log(2 * std::numbers::pi) - 0.5 * std::log(cov.determinant()) -
         0.5 * diff.dot(cov.inverse() * diff);
}

grouping::GroupedFeature as_group(Tensor S, std::vector<bool> mask) {
  grouping::GroupedFeature g;
  g.S = std::move(S);
  g.mask = std::move(mask);
  return g;
}

}  // namespace

TEST(Coupling, IdentityInitIsIdentity) {
  FlowModel m(toy(3, 4, 1, FlowInit::identity), 1);
  std::mt19937_64 rng(2);
  const auto S = normal_tensor({3, 4}, 1.0, rng);
  const auto out = coupling_forward(S, m.units()[0]);
  EXPECT_EQ(out.Y.values(), S.values());
  EXPECT_EQ(out.log_det.item(), 0.0);
  EXPECT_EQ(coupling_inverse(S, m.units()[0]).values(), S.values());
}

TEST(Coupling, HeldCellsUnchanged) {
  FlowModel m(toy(2, 3, 1, FlowInit::random), 3);
  std::mt19937_64 rng(4);
  const auto S = normal_tensor({2, 3}, 1.0, rng);
  const auto& unit = m.units()[0];
  const auto Y = coupling_forward(S, unit).Y;
  for (std::size_t k = 0; k < S.numel(); ++k)
    if (unit.mask[k] == 1.0) EXPECT_EQ(Y[k], S[k]);
}

TEST(Coupling, LogDetMatchesFiniteDifferenceJacobian) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    FlowModel m(toy(2, 2, 1, FlowInit::random), seed);
    std::mt19937_64 rng(seed + 50);
    const auto S = normal_tensor({2, 2}, 1.0, rng);
    const auto& unit = m.units()[0];
    const double analytic = coupling_forward(S, unit).log_det.item();
    const double fd = fd_log_abs_det([&](const Tensor& x) { return coupling_forward(x, unit).Y; }, S);
    EXPECT_LE(rel_err(analytic, fd), 1e-4) << "seed " << seed;
  }
}

TEST(Coupling, RoundTrip) {
  FlowModel m(toy(3, 3, 2, FlowInit::random), 7);
  std::mt19937_64 rng(8);
  for (const auto& unit : m.units()) {
    const auto S = normal_tensor({3, 3}, 2.0, rng);
    EXPECT_LE(max_abs_diff(coupling_inverse(coupling_forward(S, unit).Y, unit), S), 1e-9);
    const auto Y = normal_tensor({3, 3}, 2.0, rng);
    EXPECT_LE(max_abs_diff(coupling_forward(coupling_inverse(Y, unit), unit).Y, Y), 1e-9);
  }
}

TEST(Coupling, ShapeMismatch) {
  FlowModel m(toy(2, 2, 1, FlowInit::random), 7);
  EXPECT_THROW(coupling_forward(Tensor::zeros({2, 3}), m.units()[0]), ShapeError);
}

TEST(Flow, IdentityCompositionIsIdentity) {
  FlowModel m(toy(4, 3, 10, FlowInit::identity), 1);
  std::mt19937_64 rng(2);
  const auto S = normal_tensor({4, 3}, 1.0, rng);
  const auto h = flow_forward(S, all_cols(3), m);
  EXPECT_EQ(h.H.values(), S.values());
  EXPECT_EQ(h.log_det.item(), 0.0);
}

TEST(Flow, TenUnitLogDetMatchesFiniteDifference) {
  FlowModel m(toy(2, 2, 10, FlowInit::random), 11);
  std::mt19937_64 rng(12);
  const auto S = normal_tensor({2, 2}, 1.0, rng);
  const double analytic = flow_forward(S, all_cols(2), m).log_det.item();
  const double fd = fd_log_abs_det([&](const Tensor& x) { return flow_forward(x, all_cols(2), m).H; }, S);
  EXPECT_LE(rel_err(analytic, fd), 1e-3);
}

TEST(Flow, MasksAlternate) {
  FlowModel m(toy(4, 2, 6, FlowInit::identity), 1);
  const auto& u = m.units();
  for (std::size_t k = 0; k + 1 < u.size(); ++k)
    for (std::size_t i = 0; i < u[k].mask.numel(); ++i) {
      // cells updated by unit k (b = 0) are held by unit k + 1 (b = 1)
      EXPECT_EQ(u[k].mask[i] + u[k + 1].mask[i], 1.0);
    }
  // unit 0 holds the top half of the rows
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(u[0].mask[i], i < 4 ? 1.0 : 0.0);
}

TEST(Flow, InverseRoundTrip) {
  FlowModel m(toy(3, 4, 6, FlowInit::random), 13);
  std::mt19937_64 rng(14);
  const auto S = normal_tensor({3, 4}, 1.0, rng);
  const std::vector<bool> mask = {true, true, true, false};
  auto Sm = S.values();
  for (std::size_t r = 0; r < 3; ++r) Sm[r * 4 + 3] = 0.0;
  const Tensor S0({3, 4}, Sm);
  EXPECT_LE(max_abs_diff(flow_inverse(flow_forward(S0, mask, m).H, mask, m), S0), 1e-9);
}

TEST(FlowProperty, ExactJacobianOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const std::size_t rows = 1 + seed % 3, cols = 1 + (seed / 3) % 3;
    if (rows * cols < 2) continue;
    FlowModel m(toy(rows, cols, 4, FlowInit::random), seed);
    std::mt19937_64 rng(seed + 1000);
    const auto S = normal_tensor({rows, cols}, 1.0, rng);
    const double analytic = flow_forward(S, all_cols(cols), m).log_det.item();
    const double fd =
        fd_log_abs_det([&](const Tensor& x) { return flow_forward(x, all_cols(cols), m).H; }, S);
    EXPECT_LE(rel_err(analytic, fd), 1e-3) << rows << "x" << cols << " seed " << seed;
  }
}

TEST(FlowProperty, InvertibilityOverSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FlowModel m(toy(3, 3, 3, FlowInit::random), seed);
    std::mt19937_64 rng(seed + 2000);
    const auto S = normal_tensor({3, 3}, 1.5, rng);
    for (const auto& unit : m.units())
      EXPECT_LE(max_abs_diff(coupling_inverse(coupling_forward(S, unit).Y, unit), S), 1e-9);
  }
}

TEST(FlowProperty, LogDetIsSumOfUnitLogDets) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FlowModel m(toy(2, 3, 5, FlowInit::random), seed);
    std::mt19937_64 rng(seed);
    const auto h = flow_forward(normal_tensor({2, 3}, 1.0, rng), all_cols(3), m);
    double total = 0.0;
    for (double d : h.unit_log_dets) total += d;
    EXPECT_EQ(h.log_det.item(), total);
  }
}

TEST(FlowProperty, PaddedColumnsDoNotAffectLikelihood) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    FlowModel m(toy(3, 4, 4, FlowInit::random), seed);
    std::mt19937_64 rng(seed + 3);
    const std::vector<bool> mask = {true, true, false, false};
    auto a = normal_tensor({3, 4}, 1.0, rng).values();
    auto b = a;
    for (std::size_t r = 0; r < 3; ++r) b[r * 4 + 2] += 5.0, b[r * 4 + 3] -= 7.0;
    const auto ha = flow_forward(Tensor({3, 4}, a), mask, m);
    const auto hb = flow_forward(Tensor({3, 4}, b), mask, m);
    for (auto c : kAllClasses)
      EXPECT_EQ(class_log_likelihood(ha, c, m).item(), class_log_likelihood(hb, c, m).item());
  }
}

TEST(Likelihood, PeakDensity) {
  FlowModel m(toy(3, 2, 2, FlowInit::identity), 0);
  const auto& mu = m.priors()[index_of(GroupClass::negative)].mean;
  const auto h = flow_forward(mu, all_cols(2), m);
  EXPECT_NEAR(class_log_likelihood(h, GroupClass::negative, m).item(),
              -3.0 * std::log(2 * std::numbers::pi), 1e-12);
  // one padded column halves the cell count
  const auto h1 = flow_forward(mu, {true, false}, m);
  EXPECT_NEAR(class_log_likelihood(h1, GroupClass::negative, m).item(),
              -1.5 * std::log(2 * std::numbers::pi), 1e-12);
}

TEST(Likelihood, ShiftBySigmaLowersByHalf) {
  FlowModel m(toy(2, 2, 1, FlowInit::identity), 0);
  auto mu = m.priors()[0].mean.values();
  const double base = class_log_likelihood(flow_forward(Tensor({2, 2}, mu), all_cols(2), m),
                                           GroupClass::positive, m).item();
  mu[3] += 1.0;
  const double moved = class_log_likelihood(flow_forward(Tensor({2, 2}, mu), all_cols(2), m),
                                            GroupClass::positive, m).item();
  EXPECT_NEAR(base - moved, 0.5, 1e-12);
}

TEST(Likelihood, MatchesDirectDensityFormula) {
  FlowModel m(toy(1, 3, 1, FlowInit::identity), 0);
  const Tensor mu = Tensor::matrix(1, 3, {0.5, -1.0, 2.0});
  const Tensor sd = Tensor::matrix(1, 3, {0.7, 1.3, 2.1});
  m.set_prior(GroupClass::neutral, {mu, sd});
  const Tensor x = Tensor::matrix(1, 3, {1.1, 0.2, -0.4});
  Eigen::VectorXd xv(3), mv(3);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(3, 3);
  for (int i = 0; i < 3; ++i) xv(i) = x[i], mv(i) = mu[i], cov(i, i) = sd[i] * sd[i];
  const double got = class_log_likelihood(flow_forward(x, all_cols(3), m), GroupClass::neutral, m).item();
  EXPECT_NEAR(got, mvn_log_density(xv, mv, cov), 1e-12);
}

TEST(Likelihood, InvalidPrior) {
  FlowModel m(toy(1, 2, 1, FlowInit::identity), 0);
  EXPECT_THROW(m.set_prior(GroupClass::neutral, {Tensor::zeros({1, 2}), Tensor::zeros({1, 2})}), DomainError);
  EXPECT_THROW(m.set_prior(GroupClass::neutral, {Tensor::zeros({2, 2}), Tensor::full({2, 2}, 1.0)}), ShapeError);
  EXPECT_THROW(class_from_index(3), DomainError);
}

TEST(NvpfLoss, IdentityAtPriorMean) {
  FlowModel m(toy(3, 2, 2, FlowInit::identity), 0);
  std::vector<LabeledGroup> batch;
  for (auto c : kAllClasses) batch.push_back({as_group(m.priors()[index_of(c)].mean, all_cols(2)), c});
  EXPECT_NEAR(nvpf_loss(batch, m).item(), 3.0 * std::log(2 * std::numbers::pi), 1e-12);
  EXPECT_THROW(nvpf_loss(std::span<const LabeledGroup>{}, m), DomainError);
}

TEST(NvpfLoss, GradCheck) {
  FlowModel m(toy(2, 2, 2, FlowInit::random), 5);
  std::mt19937_64 rng(6);
  std::vector<LabeledGroup> batch = {{as_group(normal_tensor({2, 2}, 1.0, rng), all_cols(2)), GroupClass::negative},
                                     {as_group(normal_tensor({2, 2}, 1.0, rng), {true, false}), GroupClass::neutral}};
  const auto loss = [&] { return nvpf_loss(batch, m); };
  EXPECT_LE(grad_check_params(loss, tensors_of(m.parameters()), 1e-6, 200, 1), 1e-4);
}

TEST(NvpfLoss, GradientStepDecreasesLoss) {
  FlowModel m(toy(2, 2, 2, FlowInit::random), 9);
  std::mt19937_64 rng(10);
  std::vector<LabeledGroup> batch;
  for (int i = 0; i < 4; ++i)
    batch.push_back({as_group(normal_tensor({2, 2}, 1.0, rng), all_cols(2)), class_from_index(i % 3)});
  const auto params = tensors_of(m.parameters());
  for (auto p : params) p.zero_grad();
  const auto loss = nvpf_loss(batch, m);
  backward(loss);
  for (auto p : params) {
    auto g = p.grad();
    auto v = p.mutable_data();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= 1e-3 * g[i];
  }
  EXPECT_LT(nvpf_loss(batch, m).item(), loss.item());
}

TEST(Classify, NearestPriorMean) {
  FlowModel m(toy(2, 2, 3, FlowInit::identity), 0);
  m.set_prior(GroupClass::positive, {Tensor::full({2, 2}, 3.0), Tensor::full({2, 2}, 1.0)});
  m.set_prior(GroupClass::negative, {Tensor::full({2, 2}, -3.0), Tensor::full({2, 2}, 1.0)});
  m.set_prior(GroupClass::neutral, {Tensor::zeros({2, 2}), Tensor::full({2, 2}, 1.0)});
  EXPECT_EQ(classify_group(as_group(Tensor::full({2, 2}, 3.0), all_cols(2)), m).label, GroupClass::positive);
  EXPECT_EQ(classify_group(as_group(Tensor::zeros({2, 2}), all_cols(2)), m).label, GroupClass::neutral);
}

TEST(Classify, TiesGoToEarlierClass) {
  FlowModel m(toy(1, 2, 1, FlowInit::identity), 0);
  for (auto c : kAllClasses) m.set_prior(c, {Tensor::zeros({1, 2}), Tensor::full({1, 2}, 1.0)});
  EXPECT_EQ(classify_group(as_group(Tensor::zeros({1, 2}), all_cols(2)), m).label, GroupClass::positive);
}

TEST(Classify, AgreesWithDirectDensityOracle) {
  FlowModel m(toy(3, 2, 1, FlowInit::identity), 0);
  std::mt19937_64 rng(15);
  int agree = 0;
  for (int i = 0; i < 200; ++i) {
    const auto S = normal_tensor({3, 2}, 3.0, rng);
    std::array<double, 3> ll{};
    for (std::size_t c = 0; c < 3; ++c) {
      Eigen::VectorXd xv(6), mv(6);
      for (int k = 0; k < 6; ++k) xv(k) = S[k], mv(k) = m.priors()[c].mean[k];
      ll[c] = mvn_log_density(xv, mv, Eigen::MatrixXd::Identity(6, 6));
    }
    agree += classify_group(as_group(S, all_cols(2)), m).label == class_from_index(argmax_index(ll));
  }
  EXPECT_EQ(agree, 200);
}

TEST(Classify, SoftmaxHeadSelectable) {
  auto cfg = toy(2, 2, 1, FlowInit::identity);
  cfg.classifier = Classifier::softmax;
  FlowModel m(cfg, 3);
  ASSERT_TRUE(m.head().has_value());
  const auto g = as_group(Tensor::full({2, 2}, 1.0), all_cols(2));
  const auto r = classify_group(g, m);
  const auto z = head_logits(flow_forward(g, m), m);
  EXPECT_EQ(index_of(r.label), argmax_index(z.values()));
  FlowModel plain(toy(2, 2, 1, FlowInit::identity), 3);
  EXPECT_THROW(classify_group(g, plain, Classifier::softmax), ConfigError);
}

TEST(FlowConfigIo, RoundTripAndErrors) {
  auto c = toy(5, 3, 7, FlowInit::random);
  c.classifier = Classifier::softmax;
  EXPECT_EQ(to_json(flow_config_from_json(to_json(c))), to_json(c));
  auto j = to_json(c);
  j["units"] = 0;
  EXPECT_THROW(flow_config_from_json(j), ConfigError);
  j = to_json(c);
  j["init"] = "magic";
  EXPECT_THROW(flow_config_from_json(j), ConfigError);
  j = to_json(c);
  j["rows"] = "five";
  EXPECT_THROW(flow_config_from_json(j), ConfigError);
}

TEST(FlowDefaults, MatchPublishedArchitecture) {
  const FlowConfig c;
  EXPECT_EQ(c.units, 10u);
  EXPECT_EQ(c.feature_maps, 32u);
  EXPECT_EQ(c.res_blocks, 2u);
  FlowModel m(toy(2, 2, 1, FlowInit::identity), 0);
  EXPECT_EQ(m.units()[0].scale_net.in_w.shape(), (Shape{3, 3, 2, 4}));
}
