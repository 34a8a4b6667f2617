#pragma once

// State-space models obtained by Euler-Maruyama discretisation of an SDE
//
//   dX = alpha(X, theta) dt + sqrt(beta(X, theta)) dW,   Y = F'X + eps,
//
// observed on a regular grid t_i = i * dt, i = 0..N, with a fixed x_0.
// Drift and diffusion are written once as templates over the scalar type so
// the same code evaluates on doubles (simulation, exact densities) and on
// autodiff graph columns (ELBO).

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssmflow/autodiff.hpp"
#include "ssmflow/error.hpp"

namespace ssmflow::models {

using ad::Expr;
using ad::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Parameter transforms: the unconstrained vector (vartheta) maps to the
// natural parameters theta componentwise by identity or exp.

enum class Transform { identity, log };

template <class T>
T to_natural(Transform t, const T& v) {
  using std::exp;
  return t == Transform::log ? exp(v) : v;
}

inline double to_unconstrained(Transform t, double theta) {
  if (t == Transform::log) {
    if (!(theta > 0.0)) throw InvalidParameter("log-transformed parameter must be positive");
    return std::log(theta);
  }
  return theta;
}

// ---------------------------------------------------------------------------

class Dynamics {
 public:
  virtual ~Dynamics() = default;
  // out: length p
  virtual void drift(std::span<const double> x, std::span<const double> theta, std::span<double> out) const = 0;
  virtual void drift(std::span<const Expr> x, std::span<const Expr> theta, std::span<Expr> out) const = 0;
  // out: p x p, row-major
  virtual void diffusion(std::span<const double> x, std::span<const double> theta,
                         std::span<double> out) const = 0;
  virtual void diffusion(std::span<const Expr> x, std::span<const Expr> theta, std::span<Expr> out) const = 0;

  // Extra log-likelihood depending on theta alone (auxiliary data). Absent
  // for the diffusion models; used by path-free sanity models.
  virtual bool has_param_loglik() const { return false; }
  virtual double param_loglik(std::span<const double>) const { return 0.0; }
  virtual Expr param_loglik(std::span<const Expr>) const { return {}; }
};

// Forwards both virtual overload sets to `drift_t<T>` / `diffusion_t<T>`
// templates on the derived type.
template <class Derived>
class DynamicsBase : public Dynamics {
 public:
  void drift(std::span<const double> x, std::span<const double> th, std::span<double> out) const override {
    self().template drift_t<double>(x, th, out);
  }
  void drift(std::span<const Expr> x, std::span<const Expr> th, std::span<Expr> out) const override {
    self().template drift_t<Expr>(x, th, out);
  }
  void diffusion(std::span<const double> x, std::span<const double> th, std::span<double> out) const override {
    self().template diffusion_t<double>(x, th, out);
  }
  void diffusion(std::span<const Expr> x, std::span<const Expr> th, std::span<Expr> out) const override {
    self().template diffusion_t<Expr>(x, th, out);
  }

 private:
  const Derived& self() const { return static_cast<const Derived&>(*this); }
};

// dX = th1 (th2 - X) dt + th3 dW
class OuDynamics final : public DynamicsBase<OuDynamics> {
 public:
  template <class T>
  void drift_t(std::span<const T> x, std::span<const T> th, std::span<T> out) const {
    out[0] = th[0] * (th[1] - x[0]);
  }
  template <class T>
  void diffusion_t(std::span<const T>, std::span<const T> th, std::span<T> out) const {
    out[0] = th[2] * th[2];
  }
};

// Chemical-Langevin SIR on (S, I) with infection rate th1, removal rate th2.
class SirDynamics final : public DynamicsBase<SirDynamics> {
 public:
  template <class T>
  void drift_t(std::span<const T> x, std::span<const T> th, std::span<T> out) const {
    const T infection = th[0] * x[0] * x[1];
    out[0] = -infection;
    out[1] = infection - th[1] * x[1];
  }
  template <class T>
  void diffusion_t(std::span<const T> x, std::span<const T> th, std::span<T> out) const {
    const T infection = th[0] * x[0] * x[1];
    out[0] = infection;
    out[1] = -infection;
    out[2] = -infection;
    out[3] = infection + th[1] * x[1];
  }
};

struct GaussianPrior {
  VectorXd mean;
  VectorXd sd;
};

// Observation variance is either a known constant or the square of a
// designated natural-scale parameter.
struct ObservationNoise {
  double variance = 1.0;
  std::optional<Index> sd_param;
};

struct ModelSpec {
  std::string name;
  Index state_dim = 1;
  Index obs_dim = 1;
  std::shared_ptr<const Dynamics> dynamics;
  MatrixXd obs_matrix;  // F: state_dim x obs_dim
  ObservationNoise noise;
  double dt = 0.1;
  Index steps = 1;  // N; the grid has N + 1 points
  VectorXd x0;
  GaussianPrior prior;
  std::vector<Transform> transforms;
  std::vector<std::string> param_names;
  bool positive = false;

  Index param_dim() const { return static_cast<Index>(transforms.size()); }

  void validate() const {
    if (!dynamics) throw InvalidArgument("model has no dynamics");
    if (state_dim < 1 || obs_dim < 1) throw InvalidArgument("model dimensions must be positive");
    if (!(dt > 0.0)) throw InvalidArgument("dt must be positive");
    if (steps < 0) throw InvalidArgument("grid size must be non-negative");
    if (obs_matrix.rows() != state_dim || obs_matrix.cols() != obs_dim)
      throw InvalidArgument("observation matrix must be state_dim x obs_dim");
    if (x0.size() != state_dim) throw InvalidArgument("x0 has wrong dimension");
    const Index d = param_dim();
    if (d < 1 || prior.mean.size() != d || prior.sd.size() != d || static_cast<Index>(param_names.size()) != d)
      throw InvalidArgument("prior/transform/name dimensions disagree");
    for (Index i = 0; i < d; ++i)
      if (!(prior.sd[i] > 0.0)) throw InvalidArgument("prior sd must be positive");
    if (noise.sd_param && (*noise.sd_param < 0 || *noise.sd_param >= d))
      throw InvalidArgument("observation sd parameter index out of range");
    if (!noise.sd_param && noise.variance < 0.0) throw InvalidVariance("observation variance must be >= 0");
  }
};

// ---------------------------------------------------------------------------

struct LatentPath {
  double dt = 0.1;
  MatrixXd states;  // (N + 1) x p

  Index steps() const { return states.rows() - 1; }
  double time(Index i) const { return static_cast<double>(i) * dt; }
};

struct ObservationSeries {
  double dt = 0.1;
  MatrixXd values;            // (N + 1) x p0; zero where absent
  std::vector<bool> present;  // per grid index

  static ObservationSeries empty(Index steps, Index obs_dim, double dt) {
    ObservationSeries s;
    s.dt = dt;
    s.values = MatrixXd::Zero(steps + 1, obs_dim);
    s.present.assign(static_cast<std::size_t>(steps + 1), false);
    return s;
  }

  Index steps() const { return values.rows() - 1; }
  Index obs_dim() const { return values.cols(); }
  bool has(Index i) const { return present[static_cast<std::size_t>(i)]; }

  std::vector<Index> observed_indices() const {
    std::vector<Index> out;
    for (Index i = 0; i < values.rows(); ++i)
      if (has(i)) out.push_back(i);
    return out;
  }

  void set(Index i, const VectorXd& y) {
    values.row(i) = y.transpose();
    present[static_cast<std::size_t>(i)] = true;
  }
  void erase(Index i) {
    values.row(i).setZero();
    present[static_cast<std::size_t>(i)] = false;
  }
};

// ---------------------------------------------------------------------------
// Built-in models.

inline ModelSpec builtin_ou() {
  ModelSpec m;
  m.name = "ou";
  m.state_dim = 1;
  m.obs_dim = 1;
  m.dynamics = std::make_shared<OuDynamics>();
  m.obs_matrix = MatrixXd::Ones(1, 1);
  m.noise.variance = 1.0;
  m.dt = 0.1;
  m.steps = 200;
  m.x0 = VectorXd::Constant(1, 20.0);
  m.prior = {VectorXd::Zero(3), VectorXd::Constant(3, 10.0)};
  m.transforms = {Transform::log, Transform::identity, Transform::log};
  m.param_names = {"theta1", "theta2", "theta3"};
  return m;
}

inline ModelSpec builtin_sir() {
  ModelSpec m;
  m.name = "sir";
  m.state_dim = 2;
  m.obs_dim = 1;
  m.dynamics = std::make_shared<SirDynamics>();
  m.obs_matrix.resize(2, 1);
  m.obs_matrix << 0.0, 1.0;
  m.noise.sd_param = 2;
  m.dt = 0.1;
  m.steps = 140;
  m.x0.resize(2);
  m.x0 << 762.0, 1.0;
  m.prior = {VectorXd::Zero(3), VectorXd::Constant(3, 10.0)};
  m.transforms = {Transform::log, Transform::log, Transform::log};
  m.param_names = {"theta1", "theta2", "sigma"};
  m.positive = true;
  return m;
}

// Daily number of boys confined to bed, days 1..14 of the 1978 boarding-school
// influenza outbreak (763 boys, one initial case).
inline constexpr std::array<double, 14> kBoardingSchoolCounts = {3,   8,   28,  76, 222, 293, 257,
                                                                 237, 192, 126, 70, 28,  12,  5};

inline ObservationSeries boarding_school_data(const ModelSpec& sir) {
  const Index stride = static_cast<Index>(std::lround(1.0 / sir.dt));
  ObservationSeries obs = ObservationSeries::empty(sir.steps, 1, sir.dt);
  for (std::size_t d = 0; d < kBoardingSchoolCounts.size(); ++d) {
    const Index i = static_cast<Index>(d + 1) * stride;
    if (i <= sir.steps) obs.set(i, VectorXd::Constant(1, kBoardingSchoolCounts[d]));
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Parameter vector helpers.

template <class T>
std::vector<T> natural_params(const ModelSpec& spec, std::span<const T> vartheta) {
  std::vector<T> out;
  out.reserve(vartheta.size());
  for (std::size_t i = 0; i < vartheta.size(); ++i) out.push_back(to_natural(spec.transforms[i], vartheta[i]));
  return out;
}

inline VectorXd natural_params(const ModelSpec& spec, const VectorXd& vartheta) {
  if (vartheta.size() != spec.param_dim()) throw InvalidArgument("parameter vector has wrong dimension");
  VectorXd out(vartheta.size());
  for (Index i = 0; i < vartheta.size(); ++i) out[i] = to_natural(spec.transforms[static_cast<std::size_t>(i)], vartheta[i]);
  return out;
}

inline VectorXd unconstrained_params(const ModelSpec& spec, const VectorXd& theta) {
  if (theta.size() != spec.param_dim()) throw InvalidArgument("parameter vector has wrong dimension");
  VectorXd out(theta.size());
  for (Index i = 0; i < theta.size(); ++i)
    out[i] = to_unconstrained(spec.transforms[static_cast<std::size_t>(i)], theta[i]);
  return out;
}

inline double prior_logpdf(const ModelSpec& spec, const VectorXd& vartheta) {
  double lp = 0.0;
  for (Index i = 0; i < vartheta.size(); ++i)
    lp += ad::gaussian_logpdf(vartheta[i], spec.prior.mean[i], ad::square(spec.prior.sd[i]));
  return lp;
}

inline double obs_variance(const ModelSpec& spec, std::span<const double> theta) {
  const double v =
      spec.noise.sd_param ? ad::square(theta[static_cast<std::size_t>(*spec.noise.sd_param)]) : spec.noise.variance;
  if (!(v > 0.0)) throw InvalidVariance("observation variance must be positive");
  return v;
}

// ---------------------------------------------------------------------------
// Densities on doubles. theta is on the natural scale.

// Log-density of a zero-mean Gaussian with covariance given through an
// unrolled Cholesky factorisation; shared by the double and graph paths.
template <class T>
T mvn_logpdf_unrolled(std::span<const T> diff, std::span<const T> cov, std::size_t p) {
  using ad::square;
  using std::log;
  using std::sqrt;
  std::vector<T> L(p * p);
  for (std::size_t j = 0; j < p; ++j) {
    T s = cov[j * p + j];
    for (std::size_t k = 0; k < j; ++k) s = s - square(L[j * p + k]);
    L[j * p + j] = sqrt(s);
    for (std::size_t i = j + 1; i < p; ++i) {
      T t = cov[i * p + j];
      for (std::size_t k = 0; k < j; ++k) t = t - L[i * p + k] * L[j * p + k];
      L[i * p + j] = t / L[j * p + j];
    }
  }
  T quad{};
  T logdet{};
  std::vector<T> u(p);
  for (std::size_t i = 0; i < p; ++i) {
    T t = diff[i];
    for (std::size_t k = 0; k < i; ++k) t = t - L[i * p + k] * u[k];
    u[i] = t / L[i * p + i];
    quad = i == 0 ? square(u[i]) : quad + square(u[i]);
    logdet = i == 0 ? log(L[i * p + i]) : logdet + log(L[i * p + i]);
  }
  return -0.5 * quad - logdet - 0.5 * static_cast<double>(p) * ad::kLog2Pi;
}

inline double em_transition_logpdf(const ModelSpec& spec, const VectorXd& x_prev, const VectorXd& x_next,
                                   const VectorXd& theta, std::size_t grid_index = 0) {
  const Index p = spec.state_dim;
  VectorXd drift(p);
  MatrixXd beta(p, p);
  spec.dynamics->drift(std::span<const double>(x_prev.data(), p), std::span<const double>(theta.data(), theta.size()),
                       std::span<double>(drift.data(), p));
  ad::RowMatrix b(p, p);
  spec.dynamics->diffusion(std::span<const double>(x_prev.data(), p),
                           std::span<const double>(theta.data(), theta.size()), std::span<double>(b.data(), p * p));
  beta = b;
  MatrixXd cov = beta * spec.dt;
  Eigen::LLT<MatrixXd> llt(cov);
  bool ok = llt.info() == Eigen::Success && cov.allFinite();
  if (!ok) {
    cov += 1e-8 * MatrixXd::Identity(p, p);
    llt.compute(cov);
    ok = llt.info() == Eigen::Success && cov.allFinite();
  }
  if (!ok)
    throw DegenerateDiffusion(grid_index, "diffusion matrix is not positive definite at grid index " +
                                              std::to_string(grid_index));
  const VectorXd diff = x_next - x_prev - drift * spec.dt;
  const VectorXd u = llt.matrixL().solve(diff);
  const double logdet = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * u.squaredNorm() - logdet - 0.5 * static_cast<double>(p) * ad::kLog2Pi;
}

inline double obs_logpdf(const ModelSpec& spec, const VectorXd& x, const VectorXd& y, const VectorXd& theta) {
  if (!y.allFinite()) throw InvalidArgument("observation must be finite");
  const double var = obs_variance(spec, std::span<const double>(theta.data(), theta.size()));
  const VectorXd mean = spec.obs_matrix.transpose() * x;
  double lp = 0.0;
  for (Index o = 0; o < y.size(); ++o) lp += ad::gaussian_logpdf(y[o], mean[o], var);
  return lp;
}

// log p(vartheta) + sum_i log p(x_i | x_{i-1}) + sum_{j in S} log p(y_j | x_j).
// x_0 is fixed, so it carries no density term.
inline double joint_logpdf(const ModelSpec& spec, const LatentPath& path, const ObservationSeries& obs,
                           const VectorXd& vartheta) {
  if (path.states.rows() != spec.steps + 1 || path.states.cols() != spec.state_dim)
    throw InvalidArgument("latent path does not match the model grid");
  if (obs.values.rows() != spec.steps + 1 || obs.values.cols() != spec.obs_dim)
    throw InvalidArgument("observation series does not match the model grid");
  const VectorXd theta = natural_params(spec, vartheta);
  double lp = prior_logpdf(spec, vartheta);
  if (spec.dynamics->has_param_loglik())
    lp += spec.dynamics->param_loglik(std::span<const double>(theta.data(), theta.size()));
  for (Index i = 1; i <= spec.steps; ++i)
    lp += em_transition_logpdf(spec, path.states.row(i - 1).transpose(), path.states.row(i).transpose(), theta,
                               static_cast<std::size_t>(i));
  for (Index j = 0; j <= spec.steps; ++j)
    if (obs.has(j)) lp += obs_logpdf(spec, path.states.row(j).transpose(), obs.values.row(j).transpose(), theta);
  return lp;
}

// ---------------------------------------------------------------------------
// Exact OU transition.

struct GaussianMoments {
  double mean = 0.0;
  double var = 0.0;
};

inline GaussianMoments ou_exact_moments(const VectorXd& theta, double x, double dt) {
  if (!(theta[0] > 0.0)) throw InvalidParameter("OU mean-reversion rate must be positive");
  const double decay = std::exp(-theta[0] * dt);
  return {x * decay + theta[1] * (1.0 - decay),
          ad::square(theta[2]) / (2.0 * theta[0]) * -std::expm1(-2.0 * theta[0] * dt)};
}

template <class Rng>
double ou_exact_step(const VectorXd& theta, double x, double dt, Rng& rng) {
  const GaussianMoments m = ou_exact_moments(theta, x, dt);
  std::normal_distribution<double> normal;
  return m.mean + std::sqrt(m.var) * normal(rng);
}

inline double ou_exact_transition_logpdf(const VectorXd& theta, double x, double x_next, double dt) {
  const GaussianMoments m = ou_exact_moments(theta, x, dt);
  return ad::gaussian_logpdf(x_next, m.mean, m.var);
}

// ---------------------------------------------------------------------------
// Simulation.

enum class Scheme { exact_ou, euler_maruyama };

inline bool is_ou(const ModelSpec& spec) { return dynamic_cast<const OuDynamics*>(spec.dynamics.get()) != nullptr; }

struct Simulation {
  LatentPath path;
  ObservationSeries obs;
};

inline Simulation simulate(const ModelSpec& spec, const VectorXd& theta, Scheme scheme, Index obs_stride,
                           std::uint64_t seed) {
  spec.validate();
  if (obs_stride < 1) throw InvalidArgument("observation stride must be >= 1");
  if (theta.size() != spec.param_dim()) throw InvalidArgument("parameter vector has wrong dimension");
  if (scheme == Scheme::exact_ou && !is_ou(spec)) throw InvalidArgument("exact scheme requires the OU model");
  const Index p = spec.state_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;

  Simulation sim;
  sim.path.dt = spec.dt;
  sim.path.states.resize(spec.steps + 1, p);
  sim.path.states.row(0) = spec.x0.transpose();
  const std::span<const double> th(theta.data(), theta.size());

  VectorXd drift(p);
  ad::RowMatrix beta(p, p);
  for (Index i = 1; i <= spec.steps; ++i) {
    const VectorXd prev = sim.path.states.row(i - 1).transpose();
    if (scheme == Scheme::exact_ou) {
      sim.path.states(i, 0) = ou_exact_step(theta, prev[0], spec.dt, rng);
      continue;
    }
    spec.dynamics->drift(std::span<const double>(prev.data(), p), th, std::span<double>(drift.data(), p));
    spec.dynamics->diffusion(std::span<const double>(prev.data(), p), th, std::span<double>(beta.data(), p * p));
    MatrixXd cov = MatrixXd(beta) * spec.dt;
    Eigen::LLT<MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      cov += 1e-8 * MatrixXd::Identity(p, p);
      llt.compute(cov);
      if (llt.info() != Eigen::Success)
        throw DegenerateDiffusion(static_cast<std::size_t>(i), "diffusion matrix is not positive definite at grid index " + std::to_string(i));
    }
    const MatrixXd L = llt.matrixL();
    bool accepted = false;
    for (int attempt = 0; attempt < 100 && !accepted; ++attempt) {
      VectorXd xi(p);
      for (Index c = 0; c < p; ++c) xi[c] = normal(rng);
      const VectorXd next = prev + drift * spec.dt + L * xi;
      if (spec.positive && (next.array() <= 0.0).any()) continue;
      sim.path.states.row(i) = next.transpose();
      accepted = true;
    }
    if (!accepted)
      throw SimulationFailure("state left the positive orthant at grid index " + std::to_string(i) +
                              " after 100 attempts");
  }

  sim.obs = ObservationSeries::empty(spec.steps, spec.obs_dim, spec.dt);
  // a known variance of exactly zero yields noise-free observations
  const double var = spec.noise.sd_param ? obs_variance(spec, th) : spec.noise.variance;
  const double sd = std::sqrt(var);
  for (Index i = 0; i <= spec.steps; i += obs_stride) {
    VectorXd y = spec.obs_matrix.transpose() * sim.path.states.row(i).transpose();
    for (Index o = 0; o < y.size(); ++o) y[o] += sd * normal(rng);
    sim.obs.set(i, y);
  }
  return sim;
}

// ---------------------------------------------------------------------------
// Graph form of the log joint, batched over samples.
//
// vartheta: n x d. x: (n * N) x p with row l * N + (i - 1) holding sample l at
// grid index i (i = 1..N). Returns n x 1 per-sample log p(vartheta, x, y).

struct LogJointGraph {
  Expr total;        // n x 1
  Expr prior;        // n x 1
  Expr transitions;  // n x 1, invalid when N = 0
  Expr observations; // n x 1, invalid when nothing is observed
};

inline LogJointGraph log_joint_graph(ad::Graph& g, const ModelSpec& spec, const ObservationSeries& obs,
                                     Expr vartheta, Expr x, Index samples) {
  const Index d = spec.param_dim();
  const Index p = spec.state_dim;
  const Index N = spec.steps;
  const Index R = samples * N;
  LogJointGraph out;

  std::vector<Expr> vt(static_cast<std::size_t>(d));
  std::vector<Expr> th(static_cast<std::size_t>(d));
  for (Index c = 0; c < d; ++c) {
    vt[static_cast<std::size_t>(c)] = ad::col(vartheta, c);
    th[static_cast<std::size_t>(c)] = to_natural(spec.transforms[static_cast<std::size_t>(c)], vt[static_cast<std::size_t>(c)]);
  }

  Expr prior;
  for (Index c = 0; c < d; ++c) {
    Expr t = ad::gaussian_logpdf(vt[static_cast<std::size_t>(c)], spec.prior.mean[c], ad::square(spec.prior.sd[c]));
    prior = c == 0 ? t : prior + t;
  }
  out.prior = prior;
  Expr total = prior;

  if (spec.dynamics->has_param_loglik()) total = total + spec.dynamics->param_loglik(th);

  // per-row natural parameters
  std::vector<Expr> th_rows(static_cast<std::size_t>(d));
  if (N > 0) {
    Expr th_mat = g.concat_cols(th);
    std::vector<Index> sample_of_row(static_cast<std::size_t>(R));
    for (Index r = 0; r < R; ++r) sample_of_row[static_cast<std::size_t>(r)] = r / N;
    Expr rows = g.gather_rows(th_mat, std::move(sample_of_row), 1);
    for (Index c = 0; c < d; ++c) th_rows[static_cast<std::size_t>(c)] = ad::col(rows, c);

    // previous state: shifted rows plus the fixed x0 at i = 1
    std::vector<Index> prev(static_cast<std::size_t>(R));
    MatrixXd x0_rows = MatrixXd::Zero(R, p);
    for (Index r = 0; r < R; ++r) {
      const Index i = r % N + 1;
      prev[static_cast<std::size_t>(r)] = i == 1 ? -1 : r - 1;
      if (i == 1) x0_rows.row(r) = spec.x0.transpose();
    }
    Expr x_prev = g.gather_rows(x, std::move(prev), 1) + g.constant(std::move(x0_rows));

    std::vector<Expr> xp(static_cast<std::size_t>(p)), xn(static_cast<std::size_t>(p));
    for (Index c = 0; c < p; ++c) {
      xp[static_cast<std::size_t>(c)] = ad::col(x_prev, c);
      xn[static_cast<std::size_t>(c)] = ad::col(x, c);
    }
    std::vector<Expr> drift(static_cast<std::size_t>(p));
    std::vector<Expr> beta(static_cast<std::size_t>(p * p));
    spec.dynamics->drift(xp, th_rows, drift);
    spec.dynamics->diffusion(xp, th_rows, beta);
    Expr trans;
    if (p == 1) {
      trans = ad::gaussian_logpdf(xn[0], xp[0] + drift[0] * spec.dt, beta[0] * spec.dt);
    } else {
      std::vector<Expr> diff(static_cast<std::size_t>(p));
      std::vector<Expr> cov(static_cast<std::size_t>(p * p));
      for (Index c = 0; c < p; ++c)
        diff[static_cast<std::size_t>(c)] = xn[static_cast<std::size_t>(c)] - xp[static_cast<std::size_t>(c)] -
                                            drift[static_cast<std::size_t>(c)] * spec.dt;
      for (std::size_t k = 0; k < cov.size(); ++k) cov[k] = beta[k] * spec.dt;
      trans = mvn_logpdf_unrolled<Expr>(diff, cov, static_cast<std::size_t>(p));
    }
    out.transitions = g.segment_sum(trans, N);
    total = total + out.transitions;
  }

  // observations at grid indices >= 1 live on path rows
  std::vector<Index> obs_idx;
  for (Index i = 1; i <= N; ++i)
    if (obs.has(i)) obs_idx.push_back(i);
  const Index M = static_cast<Index>(obs_idx.size());
  Expr obs_total;
  if (M > 0) {
    std::vector<Index> src(static_cast<std::size_t>(samples * M));
    MatrixXd y(samples * M, spec.obs_dim);
    for (Index l = 0; l < samples; ++l)
      for (Index j = 0; j < M; ++j) {
        src[static_cast<std::size_t>(l * M + j)] = l * N + obs_idx[static_cast<std::size_t>(j)] - 1;
        y.row(l * M + j) = obs.values.row(obs_idx[static_cast<std::size_t>(j)]);
      }
    Expr xo = g.gather_rows(x, std::move(src), 1);
    Expr var;
    if (spec.noise.sd_param) {
      std::vector<Index> sample_of_row(static_cast<std::size_t>(samples * M));
      for (Index r = 0; r < samples * M; ++r) sample_of_row[static_cast<std::size_t>(r)] = r / M;
      var = ad::square(g.gather_rows(th[static_cast<std::size_t>(*spec.noise.sd_param)], std::move(sample_of_row), 1));
    } else {
      var = g.constant(spec.noise.variance);
    }
    Expr ll;
    for (Index o = 0; o < spec.obs_dim; ++o) {
      Expr mean;
      for (Index c = 0; c < p; ++c) {
        const double f = spec.obs_matrix(c, o);
        if (f == 0.0) continue;
        Expr term = f == 1.0 ? ad::col(xo, c) : ad::col(xo, c) * f;
        mean = mean.valid() ? mean + term : term;
      }
      if (!mean.valid()) mean = g.constant(0.0);
      Expr t = ad::gaussian_logpdf(g.constant(MatrixXd(y.col(o))), mean, var);
      ll = ll.valid() ? ll + t : t;
    }
    obs_total = g.segment_sum(ll, M);
  }
  if (obs.has(0)) {
    const VectorXd mean0 = spec.obs_matrix.transpose() * spec.x0;
    Expr var0 = spec.noise.sd_param ? ad::square(th[static_cast<std::size_t>(*spec.noise.sd_param)])
                                    : g.constant(spec.noise.variance);
    for (Index o = 0; o < spec.obs_dim; ++o) {
      Expr t = ad::gaussian_logpdf(g.constant(obs.values(0, o)), g.constant(mean0[o]), var0);
      obs_total = obs_total.valid() ? obs_total + t : t;
    }
  }
  if (obs_total.valid()) {
    out.observations = obs_total;
    total = total + obs_total;
  }
  out.total = total;
  return out;
}

}  // namespace ssmflow::models
