#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "ssmflow/oracle.hpp"
#include "reference.hpp"

using namespace ssmflow;
using namespace ssmflow::oracle;
using ad::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

using namespace ssmflow::reference;

struct Instance {
  VectorXd theta;
  double dt, obs_var, x0;
  models::ObservationSeries obs;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> normal;
  Instance in;
  in.theta = vec({0.05 + 2.0 * u(rng), 10.0 * (u(rng) - 0.5), 0.2 + 2.0 * u(rng)});
  in.dt = 0.05 + 0.5 * u(rng);
  in.obs_var = 0.1 + 2.0 * u(rng);
  in.x0 = 10.0 * (u(rng) - 0.5);
  const Index N = 1 + static_cast<Index>(10.0 * u(rng)) % 10;
  in.obs = models::ObservationSeries::empty(N, 1, in.dt);
  for (Index i = 0; i <= N; ++i)
    if (u(rng) < 0.7) in.obs.set(i, vec({in.theta[1] + 3.0 * normal(rng)}));
  return in;
}

}  // namespace

TEST(ForwardFilter, MatchesGenericKalmanFilter) {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Instance in = random_instance(rng);
    const double ff = ff_marginal_loglik(in.theta, in.obs, in.dt, in.obs_var, in.x0);
    const double kf = kalman_loglik(ou_as_linear(in.theta, in.dt, in.obs_var), VectorXd::Constant(1, in.x0),
                                    MatrixXd::Zero(1, 1), in.obs);
    worst = std::max(worst, std::abs(ff - kf));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(ForwardFilter, MatchesDenseGaussian) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance in = random_instance(rng);
    const double ff = ff_marginal_loglik(in.theta, in.obs, in.dt, in.obs_var, in.x0);
    EXPECT_NEAR(ff, dense_loglik(in.theta, in.dt, in.obs_var, in.x0, in.obs), 1e-9);
  }
}

TEST(ForwardFilter, SingleObservationClosedForm) {
  const VectorXd theta = vec({0.2, 5.0, 1.0});
  auto obs = models::ObservationSeries::empty(1, 1, 0.1);
  obs.set(1, vec({19.5}));
  const auto m = models::ou_exact_moments(theta, 20.0, 0.1);
  const double expect = -0.5 * std::log(2.0 * std::numbers::pi * (m.var + 1.0)) -
                        0.5 * (19.5 - m.mean) * (19.5 - m.mean) / (m.var + 1.0);
  EXPECT_NEAR(ff_marginal_loglik(theta, obs, 0.1, 1.0, 20.0), expect, 1e-13);
}

TEST(ForwardFilter, NoObservationStepsLeaveLoglikUnchanged) {
  const VectorXd theta = vec({0.7, 1.0, 0.5});
  FilterState s = ff_init(2.0, 0.0, 0.3, 2.4);
  s = ff_step(s, theta, 0.2, 0.3, 1.7);
  const double before = s.loglik;
  for (int i = 0; i < 5; ++i) {
    s = ff_step(s, theta, 0.2, 0.3, std::nullopt);
    EXPECT_EQ(s.loglik, before);
  }
  auto none = models::ObservationSeries::empty(8, 1, 0.2);
  EXPECT_EQ(ff_marginal_loglik(theta, none, 0.2, 0.3, 2.0), 0.0);
}

TEST(ForwardFilter, InvalidInputsRaise) {
  const VectorXd theta = vec({0.2, 5.0, 1.0});
  EXPECT_THROW(ff_init(0.0, -1.0, 1.0, std::nullopt), InvalidVariance);
  EXPECT_THROW(ff_init(0.0, 0.0, 0.0, 1.0), InvalidVariance);
  const FilterState s = ff_init(0.0, 0.0, 1.0, std::nullopt);
  EXPECT_THROW(ff_step(s, vec({-0.2, 5.0, 1.0}), 0.1, 1.0, 1.0), InvalidParameter);
  EXPECT_NO_THROW(ff_step(s, theta, 0.1, 1.0, 1.0));
}

TEST(ForwardFilter, MonteCarloLikelihoodAtThreeSteps) {
  const VectorXd theta = vec({0.5, 2.0, 1.5});
  const double dt = 0.3, obs_var = 0.8, x0 = 1.0;
  auto obs = models::ObservationSeries::empty(3, 1, dt);
  obs.set(1, vec({1.4}));
  obs.set(2, vec({2.9}));
  obs.set(3, vec({1.1}));
  const double exact = ff_marginal_loglik(theta, obs, dt, obs_var, x0);

  std::mt19937_64 rng(2024);
  const int M = 1000000;
  double sum = 0.0, sumsq = 0.0;
  for (int s = 0; s < M; ++s) {
    double x = x0, ll = 0.0;
    for (Index i = 1; i <= 3; ++i) {
      x = models::ou_exact_step(theta, x, dt, rng);
      ll += ad::gaussian_logpdf(obs.values(i, 0), x, obs_var);
    }
    const double w = std::exp(ll);
    sum += w;
    sumsq += w * w;
  }
  const double mean = sum / M;
  const double se = std::sqrt((sumsq / M - mean * mean) / M);
  EXPECT_LT(std::abs(mean - std::exp(exact)), 3.0 * se);
}

TEST(Rwmh, RecoversStandardNormal) {
  RwmhOptions opt;
  opt.iterations = 60000;
  opt.burn_in = 10000;
  opt.seed = 3;
  const MHChain c = rwmh([](const VectorXd& v) { return -0.5 * v.squaredNorm(); }, vec({3.0, -3.0}),
                         vec({0.1, 0.1}), opt);
  ASSERT_EQ(c.samples.rows(), 50000);
  EXPECT_EQ(c.proposals, 50000);
  for (Index j = 0; j < 2; ++j) {
    const VectorXd col = c.samples.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / (col.size() - 1));
    EXPECT_NEAR(m, 0.0, 0.1);
    EXPECT_NEAR(sd, 1.0, 0.1);
  }
  EXPECT_GT(c.acceptance_rate(), 0.15);
  EXPECT_LT(c.acceptance_rate(), 0.45);
}

TEST(Rwmh, EmptyDataGivesPrior) {
  models::ModelSpec ou = models::builtin_ou();
  ou.steps = 20;
  const auto obs = models::ObservationSeries::empty(20, 1, ou.dt);
  RwmhOptions opt;
  opt.seed = 5;
  const MHChain c = rwmh_posterior(ou, obs, opt);
  for (Index j = 0; j < 3; ++j) {
    const VectorXd col = c.samples.col(j);
    const double m = col.mean();
    const double sd = std::sqrt((col.array() - m).square().sum() / (col.size() - 1));
    EXPECT_NEAR(m, ou.prior.mean[j], 0.25 * ou.prior.sd[j]);
    EXPECT_NEAR(sd / ou.prior.sd[j], 1.0, 0.25);
  }
}

TEST(Rwmh, DeterministicUnderSeed) {
  RwmhOptions opt;
  opt.iterations = 3000;
  opt.burn_in = 1000;
  opt.seed = 9;
  auto target = [](const VectorXd& v) { return -0.5 * v.squaredNorm() - v[0] * v[1] * 0.3; };
  const MHChain a = rwmh(target, vec({0.0, 0.0}), vec({1.0, 1.0}), opt);
  const MHChain b = rwmh(target, vec({0.0, 0.0}), vec({1.0, 1.0}), opt);
  EXPECT_TRUE(a.samples == b.samples);
  EXPECT_EQ(a.accepted, b.accepted);
  opt.seed = 10;
  const MHChain c = rwmh(target, vec({0.0, 0.0}), vec({1.0, 1.0}), opt);
  EXPECT_FALSE(a.samples == c.samples);
}

TEST(Rwmh, StuckChainRaises) {
  RwmhOptions opt;
  opt.iterations = 500;
  opt.burn_in = 100;
  const VectorXd start = vec({0.0});
  auto spike = [&](const VectorXd& v) { return v == start ? 0.0 : -std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(rwmh(spike, start, vec({1.0}), opt), StuckChain);
}

TEST(Rwmh, RejectsBadOptions) {
  RwmhOptions opt;
  opt.iterations = 100;
  opt.burn_in = 100;
  auto target = [](const VectorXd& v) { return -0.5 * v.squaredNorm(); };
  EXPECT_THROW(rwmh(target, vec({0.0}), vec({1.0}), opt), InvalidArgument);
  opt.iterations = 200;
  EXPECT_THROW(rwmh(target, vec({0.0}), vec({1.0, 1.0}), opt), InvalidArgument);
  auto zero = [](const VectorXd&) { return -std::numeric_limits<double>::infinity(); };
  EXPECT_THROW(rwmh(zero, vec({0.0}), vec({1.0}), opt), InvalidArgument);
}

TEST(Rwmh, OracleRejectsNonOuModels) {
  const models::ModelSpec sir = models::builtin_sir();
  const auto obs = models::boarding_school_data(sir);
  EXPECT_THROW(rwmh_posterior(sir, obs, RwmhOptions{}), InvalidArgument);
}
