#pragma once

// Exact inference for the OU model: the forward filter gives log p(y | theta)
// in closed form and a random-walk Metropolis-Hastings chain samples
// p(vartheta | y). Used as ground truth for the variational fit.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>

#include "ssmflow/autodiff.hpp"
#include "ssmflow/error.hpp"
#include "ssmflow/models.hpp"

namespace ssmflow::oracle {

using ad::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Gaussian filtering distribution N(mean, var) of x_i given y_0..y_i.
struct FilterState {
  double mean = 0.0;
  double var = 0.0;
  double loglik = 0.0;
};

namespace detail {

inline FilterState update(double prior_mean, double prior_var, double obs_var, double y, double loglik) {
  const double s = prior_var + obs_var;
  if (!(s > 0.0)) throw InvalidVariance("forecast variance must be positive");
  const double gain = prior_var / s;
  return {prior_mean + gain * (y - prior_mean), prior_var - gain * prior_var,
          loglik + ad::gaussian_logpdf(y, prior_mean, s)};
}

}  // namespace detail

inline FilterState ff_init(double a, double c, double obs_var, std::optional<double> y0) {
  if (c < 0.0) throw InvalidVariance("initial variance must be >= 0");
  if (!(obs_var > 0.0)) throw InvalidVariance("observation variance must be positive");
  if (!y0) return {a, c, 0.0};
  return detail::update(a, c, obs_var, *y0, 0.0);
}

// Prior moments of x_{i+1} given y_0..y_i.
inline std::pair<double, double> ff_predict(const FilterState& s, const VectorXd& theta, double dt) {
  const models::GaussianMoments m = models::ou_exact_moments(theta, s.mean, dt);
  const double decay2 = std::exp(-2.0 * theta[0] * dt);
  return {m.mean, m.var + s.var * decay2};
}

inline FilterState ff_step(const FilterState& s, const VectorXd& theta, double dt, double obs_var,
                           std::optional<double> y_next) {
  const auto [mean, var] = ff_predict(s, theta, dt);
  if (!y_next) return {mean, var, s.loglik};
  if (!(obs_var > 0.0)) throw InvalidVariance("observation variance must be positive");
  return detail::update(mean, var, obs_var, *y_next, s.loglik);
}

// log p(y_S | theta) with x_0 fixed (zero initial variance).
inline double ff_marginal_loglik(const VectorXd& theta, const models::ObservationSeries& obs, double dt,
                                 double obs_var, double x0) {
  if (obs.obs_dim() != 1) throw InvalidArgument("forward filter is univariate");
  auto y = [&](Index i) -> std::optional<double> {
    if (!obs.has(i)) return std::nullopt;
    return obs.values(i, 0);
  };
  FilterState s = ff_init(x0, 0.0, obs_var, y(0));
  for (Index i = 1; i <= obs.steps(); ++i) s = ff_step(s, theta, dt, obs_var, y(i));
  return s.loglik;
}

// ---------------------------------------------------------------------------
// Random-walk Metropolis-Hastings.

struct MHChain {
  MatrixXd samples;  // post-burn-in draws, one row each
  Index accepted = 0;
  Index proposals = 0;
  VectorXd scale;  // frozen proposal sds
  std::uint64_t seed = 0;

  double acceptance_rate() const {
    return proposals > 0 ? static_cast<double>(accepted) / static_cast<double>(proposals) : 0.0;
  }
};

struct RwmhOptions {
  Index iterations = 60000;  // total, including burn-in
  Index burn_in = 10000;
  std::uint64_t seed = 1;
  double target_acceptance = 0.25;
  Index adapt_every = 100;
};

using LogDensity = std::function<double(const VectorXd&)>;

// Gaussian random-walk proposals with diagonal scales. During burn-in the
// common multiplier is adjusted every `adapt_every` iterations toward the
// target acceptance rate, and halfway through the per-dimension shape is reset
// to the empirical sd of the chain so far; after burn-in nothing changes.
inline MHChain rwmh(const LogDensity& log_target, const VectorXd& init, const VectorXd& init_scale,
                    const RwmhOptions& opt) {
  if (opt.iterations <= opt.burn_in) throw InvalidArgument("iterations must exceed burn-in");
  if (init.size() != init_scale.size()) throw InvalidArgument("init and scale sizes differ");
  const Index d = init.size();
  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto safe = [&](const VectorXd& v) {
    try {
      const double lp = log_target(v);
      return std::isnan(lp) ? -std::numeric_limits<double>::infinity() : lp;
    } catch (const NumericError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };

  VectorXd shape = init_scale;
  double mult = 1.0;
  VectorXd x = init;
  double lp = safe(x);
  if (!std::isfinite(lp)) throw InvalidArgument("RWMH initial point has zero target density");

  MHChain chain;
  chain.seed = opt.seed;
  chain.samples.resize(opt.iterations - opt.burn_in, d);
  const Index shape_from = opt.burn_in / 4;
  const Index shape_at = opt.burn_in / 2;
  VectorXd sum = VectorXd::Zero(d), sumsq = VectorXd::Zero(d);
  Index window_acc = 0;
  for (Index it = 0; it < opt.iterations; ++it) {
    VectorXd prop(d);
    for (Index c = 0; c < d; ++c) prop[c] = x[c] + mult * shape[c] * normal(rng);
    const double lp_prop = safe(prop);
    const bool accept = std::log(unif(rng)) < lp_prop - lp;
    if (accept) {
      x = prop;
      lp = lp_prop;
    }
    if (it < opt.burn_in) {
      window_acc += accept ? 1 : 0;
      if (it >= shape_from && it < shape_at) {
        sum += x;
        sumsq += x.cwiseProduct(x);
      }
      if (it + 1 == shape_at && shape_at > shape_from) {
        const double n = static_cast<double>(shape_at - shape_from);
        const VectorXd var = sumsq / n - (sum / n).cwiseProduct(sum / n);
        for (Index c = 0; c < d; ++c)
          if (var[c] > 1e-20) shape[c] = 2.38 / std::sqrt(static_cast<double>(d)) * std::sqrt(var[c]);
        mult = 1.0;
      }
      if ((it + 1) % opt.adapt_every == 0) {
        const double rate = static_cast<double>(window_acc) / static_cast<double>(opt.adapt_every);
        mult *= std::exp(2.0 * (rate - opt.target_acceptance));
        window_acc = 0;
      }
    } else {
      ++chain.proposals;
      chain.accepted += accept ? 1 : 0;
      chain.samples.row(it - opt.burn_in) = x.transpose();
    }
  }
  chain.scale = mult * shape;
  if (chain.accepted == 0) throw StuckChain("no proposal accepted after burn-in");
  return chain;
}

// p(vartheta | y) for the OU model under its Gaussian prior on vartheta.
inline double ou_log_posterior(const models::ModelSpec& ou, const models::ObservationSeries& obs,
                               const VectorXd& vartheta) {
  const VectorXd theta = models::natural_params(ou, vartheta);
  return models::prior_logpdf(ou, vartheta) + ff_marginal_loglik(theta, obs, ou.dt, ou.noise.variance, ou.x0[0]);
}

inline MHChain rwmh_posterior(const models::ModelSpec& ou, const models::ObservationSeries& obs,
                              const RwmhOptions& opt, std::optional<VectorXd> init = std::nullopt) {
  if (!models::is_ou(ou) || ou.noise.sd_param) throw InvalidArgument("the exact oracle supports the OU model only");
  const VectorXd start = init.value_or(ou.prior.mean);
  return rwmh([&](const VectorXd& v) { return ou_log_posterior(ou, obs, v); }, start,
              VectorXd::Constant(start.size(), 0.1), opt);
}

}  // namespace ssmflow::oracle
