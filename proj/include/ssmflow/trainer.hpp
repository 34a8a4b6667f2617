#pragma once

// Stochastic-gradient ELBO maximisation for the flow posterior.
//
// Each iteration draws n independent base-noise vectors, pushes them through
// q(vartheta) and q(x | vartheta), and averages
//
//   log p(vartheta) - alpha log q(vartheta) + log p(x, y | vartheta) - log q(x | vartheta)
//
// over the draws. The reparameterised gradient comes from one backward pass
// and feeds Adam. alpha > 1 (tempering) flattens q(vartheta) early on and is
// decayed linearly to 1.

#include <Eigen/Dense>
#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "ssmflow/autodiff.hpp"
#include "ssmflow/error.hpp"
#include "ssmflow/flows.hpp"
#include "ssmflow/models.hpp"

namespace ssmflow::train {

using ad::Expr;
using ad::Graph;
using ad::Index;
using ad::ParameterStore;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct TrainConfig {
  Index samples = 50;  // n
  Index layers = 5;    // m
  Index k = 10;
  Index hidden = 20;
  Index depth = 5;
  Index global_layers = 5;
  double learning_rate = 1e-3;
  Index iterations = 20000;
  double alpha0 = 4.0;
  double temper_fraction = 0.25;  // horizon as a fraction of the budget
  Index convergence_window = 500;
  double convergence_threshold = 0.01;  // <= 0 disables early stopping
  // Gradients whose norm exceeds clip_factor times the median norm of the
  // previous clip_window steps are rescaled to that bound (0 disables).
  double clip_factor = 10.0;
  Index clip_window = 100;
  std::uint64_t seed = 1;
  // Degenerate q(vartheta): parameters pinned at this value, prior and
  // q(vartheta) terms dropped, only the path flow is trained.
  std::optional<VectorXd> fixed_vartheta;

  void validate() const {
    if (samples < 1) throw InvalidArgument("n must be >= 1");
    if (layers < 1 || k < 1 || hidden < 1 || depth < 1 || global_layers < 1)
      throw InvalidArgument("flow sizes must be >= 1");
    if (!(learning_rate > 0.0)) throw InvalidArgument("learning rate must be positive");
    if (iterations < 0) throw InvalidArgument("iteration budget must be >= 0");
    if (!(alpha0 >= 1.0)) throw InvalidArgument("alpha0 must be >= 1");
    if (temper_fraction < 0.0 || temper_fraction > 1.0) throw InvalidArgument("temper fraction must lie in [0, 1]");
    if (convergence_window < 1) throw InvalidArgument("convergence window must be >= 1");
    if (!(clip_factor >= 0.0)) throw InvalidArgument("clip factor must be >= 0");
    if (clip_window < 1) throw InvalidArgument("clip window must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Tempering.

inline Index tempering_horizon(const TrainConfig& cfg) {
  return static_cast<Index>(std::llround(cfg.temper_fraction * static_cast<double>(cfg.iterations)));
}

// Linear decay from alpha0 at iteration 0 to exactly 1 at the horizon.
inline double temper_alpha(Index iter, const TrainConfig& cfg) {
  if (iter < 0) throw InvalidArgument("iteration must be >= 0");
  const Index horizon = tempering_horizon(cfg);
  if (iter >= horizon) return 1.0;
  const double frac = static_cast<double>(iter) / static_cast<double>(horizon);
  return cfg.alpha0 + (1.0 - cfg.alpha0) * frac;
}

// ---------------------------------------------------------------------------
// Adam (minimisation form).

struct AdamState {
  VectorXd m;
  VectorXd v;
  std::int64_t t = 0;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline void adam_step(VectorXd& params, const VectorXd& grad, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
  if (grad.size() != params.size()) throw InvalidArgument("adam_step: gradient size mismatch");
  if (state.m.size() != params.size()) {
    state.m = VectorXd::Zero(params.size());
    state.v = VectorXd::Zero(params.size());
    state.t = 0;
  }
  ++state.t;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.eps);
}

// Norm clipping against the running median. Paths near an absorbing boundary
// occasionally give gradients many orders of magnitude above typical; one such
// step would otherwise dominate Adam's second moment for thousands of steps.
class GradientClipper {
 public:
  GradientClipper(double factor, Index window) : factor_(factor), window_(static_cast<std::size_t>(window)) {}

  // Returns true if `grad` was rescaled.
  bool apply(VectorXd& grad) {
    const double norm = grad.norm();
    bool clipped = false;
    if (factor_ > 0.0 && !recent_.empty()) {
      scratch_.assign(recent_.begin(), recent_.end());
      auto mid = scratch_.begin() + static_cast<std::ptrdiff_t>(scratch_.size() / 2);
      std::nth_element(scratch_.begin(), mid, scratch_.end());
      const double bound = factor_ * *mid;
      if (norm > bound && bound > 0.0) {
        grad *= bound / norm;
        clipped = true;
      }
    }
    recent_.push_back(norm);
    if (recent_.size() > window_) recent_.pop_front();
    return clipped;
  }

 private:
  double factor_;
  std::size_t window_;
  std::deque<double> recent_;
  std::vector<double> scratch_;
};

// ---------------------------------------------------------------------------
// The variational posterior: flows plus their parameters.

struct VariationalPosterior {
  models::ModelSpec model;
  TrainConfig config;
  ParameterStore store;
  flows::GlobalFlow global;
  std::optional<flows::LocalIAFStack> local;
  flows::FeatureSet features;

  bool fixed_theta() const { return config.fixed_vartheta.has_value(); }
  bool has_path() const { return local.has_value(); }
};

// Mean/sd of each state dimension along one Euler-Maruyama path at the
// prior-median parameters. Returns nothing if that simulation fails.
inline std::optional<std::pair<VectorXd, VectorXd>> pilot_moments(const models::ModelSpec& model,
                                                                  std::uint64_t seed) {
  if (model.steps < 1) return std::nullopt;
  try {
    const VectorXd theta = models::natural_params(model, model.prior.mean);
    const auto sim = models::simulate(model, theta, models::Scheme::euler_maruyama, model.steps + 1, seed);
    const MatrixXd x = sim.path.states.bottomRows(model.steps);
    if (!x.allFinite()) return std::nullopt;
    VectorXd mean = x.colwise().mean().transpose();
    VectorXd sd = ((x.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt().transpose();
    return std::make_pair(mean, sd);
  } catch (const NumericError&) {
    return std::nullopt;
  }
}

// Output affine start values: pilot path moments where the pilot works,
// otherwise observed-data moments for observed dimensions and x0 elsewhere.
inline std::pair<VectorXd, VectorXd> output_affine_init(const models::ModelSpec& model,
                                                        const models::ObservationSeries& obs, std::uint64_t seed) {
  const Index p = model.state_dim;
  VectorXd mean = model.x0;
  VectorXd sd = model.x0.cwiseAbs().cwiseMax(1.0) * 0.5;
  if (auto pilot = pilot_moments(model, seed)) {
    mean = pilot->first;
    sd = pilot->second;
  } else {
    const auto idx = obs.observed_indices();
    for (Index c = 0; c < p; ++c) {
      Index o = -1;
      for (Index j = 0; j < model.obs_dim; ++j)
        if (model.obs_matrix(c, j) == 1.0 && (model.obs_matrix.row(c).array() != 0.0).count() == 1) o = j;
      if (o < 0 || idx.empty()) continue;
      double m = 0.0;
      for (Index i : idx) m += obs.values(i, o);
      m /= static_cast<double>(idx.size());
      double v = 0.0;
      for (Index i : idx) v += ad::square(obs.values(i, o) - m);
      mean[c] = m;
      sd[c] = std::sqrt(v / static_cast<double>(idx.size()));
    }
  }
  for (Index c = 0; c < p; ++c) {
    if (!(sd[c] > 1e-3)) sd[c] = 1.0;
    if (model.positive) {
      // keep mean - 3 sd above zero: states pushed deep into the flat end of
      // the softplus make near-singular diffusions and unusable gradients
      sd[c] = std::min(sd[c], std::max(mean[c], 1e-3) / 3.0);
      // pre-softplus units
      mean[c] = mean[c] > 30.0 ? mean[c] : std::log(std::expm1(std::max(mean[c], 1e-3)));
    }
  }
  return {mean, sd};
}

inline VariationalPosterior make_posterior(const models::ModelSpec& model, const models::ObservationSeries& obs,
                                           const TrainConfig& cfg) {
  model.validate();
  cfg.validate();
  if (obs.steps() != model.steps || obs.obs_dim() != model.obs_dim)
    throw InvalidArgument("observations do not match the model grid");
  if (cfg.fixed_vartheta && cfg.fixed_vartheta->size() != model.param_dim())
    throw InvalidArgument("fixed parameter vector has wrong dimension");
  VariationalPosterior vp;
  vp.model = model;
  vp.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  vp.global = flows::GlobalFlow::create(vp.store, "theta_flow", model.param_dim(), rng, cfg.global_layers,
                                        cfg.hidden, cfg.depth);
  vp.global.initialize(vp.store, rng);
  if (model.steps > 0) {
    flows::LocalFlowConfig lc;
    lc.layers = cfg.layers;
    lc.k = cfg.k;
    lc.hidden = cfg.hidden;
    lc.depth = cfg.depth;
    lc.output = model.positive ? flows::OutputTransform::softplus : flows::OutputTransform::identity;
    vp.local = flows::LocalIAFStack::create(vp.store, "path_flow", model.state_dim, model.obs_dim,
                                            model.param_dim(), lc);
    const auto [shift, scale] = output_affine_init(model, obs, cfg.seed);
    vp.local->initialize(vp.store, rng, shift, scale);
    vp.features = flows::FeatureSet::build(obs, cfg.k);
  }
  return vp;
}

// ---------------------------------------------------------------------------
// Batched ELBO graph.

// The Monte Carlo ELBO as a graph. The n samples are processed in chunks of
// at most `chunk` samples through one reusable graph per chunk size, forward
// and backward back to back, so the working set stays cache-resident; this
// is markedly faster than one n-sample batch. Noise is held at full size, so
// results do not depend on the chunking beyond summation order.
class ElboGraph {
 public:
  static constexpr Index kDefaultChunk = 5;

  ElboGraph(const VariationalPosterior& vp, const models::ObservationSeries& obs, Index samples,
            Index chunk = kDefaultChunk)
      : vp_(vp), samples_(samples), chunk_(std::min(chunk, samples)) {
    if (samples < 1) throw InvalidArgument("ELBO needs at least one sample");
    if (chunk < 1) throw InvalidArgument("ELBO chunk must be >= 1");
    z_theta_ = MatrixXd::Zero(samples, vp.model.param_dim());
    if (vp.has_path()) z_x_ = MatrixXd::Zero(samples * vp.model.steps, vp.model.state_dim);
    per_sample_ = MatrixXd::Zero(samples, 1);
    full_ = std::make_unique<Chunk>();
    build(*full_, obs, chunk_);
    if (samples % chunk_ != 0) {
      tail_ = std::make_unique<Chunk>();
      build(*tail_, obs, samples % chunk_);
    }
  }

  Index samples() const { return samples_; }

  // Standard-normal noise; rows are samples (paths are N consecutive rows).
  MatrixXd& z_theta() { return z_theta_; }
  MatrixXd& z_x() { return z_x_; }

  template <class Rng>
  void draw(Rng& rng) {
    std::normal_distribution<double> normal;
    for (Index c = 0; c < z_theta_.cols(); ++c)
      for (Index r = 0; r < z_theta_.rows(); ++r) z_theta_(r, c) = normal(rng);
    for (Index c = 0; c < z_x_.cols(); ++c)
      for (Index r = 0; r < z_x_.rows(); ++r) z_x_(r, c) = normal(rng);
  }

  // Fresh noise for one sample only.
  template <class Rng>
  void redraw(Index sample, Rng& rng) {
    std::normal_distribution<double> normal;
    for (Index c = 0; c < z_theta_.cols(); ++c) z_theta_(sample, c) = normal(rng);
    const Index N = vp_.model.steps;
    for (Index c = 0; c < z_x_.cols(); ++c)
      for (Index r = sample * N; r < (sample + 1) * N; ++r) z_x_(r, c) = normal(rng);
  }

  void set_alpha(double a) { alpha_ = a; }

  // ELBO estimate under the current noise; fills `grad` (d ELBO / d phi)
  // when given.
  double evaluate(VectorXd* grad = nullptr) {
    const Index N = vp_.model.steps;
    double total = 0.0;
    if (grad != nullptr) grad->setZero(vp_.store.size());
    for (Index first = 0; first < samples_; first += chunk_) {
      const Index count = std::min(chunk_, samples_ - first);
      Chunk& c = count == chunk_ ? *full_ : *tail_;
      c.g.bind(c.z_theta, z_theta_.middleRows(first, count));
      if (c.z_x.valid()) c.g.bind(c.z_x, z_x_.middleRows(first * N, count * N));
      c.g.bind(c.alpha, MatrixXd::Constant(1, 1, alpha_));
      total += c.g.forward(c.root, vp_.store)(0, 0);
      per_sample_.middleRows(first, count) = c.g.value(c.per_sample);
      if (grad != nullptr) *grad += c.g.backward(c.root);
    }
    return total;
  }

  const MatrixXd& per_sample_values() const { return per_sample_; }

 private:
  struct Chunk {
    Graph g;
    Expr z_theta, z_x, alpha, per_sample, root;
  };

  void build(Chunk& c, const models::ObservationSeries& obs, Index count) {
    const auto& m = vp_.model;
    Graph& g = c.g;
    g.set_nan_check(false);
    c.z_theta = g.input("z_theta", count, m.param_dim());
    c.alpha = g.input("alpha", 1, 1);
    Expr vartheta;
    Expr log_q_theta;
    if (vp_.fixed_theta()) {
      vartheta = g.constant(MatrixXd(vp_.config.fixed_vartheta->transpose().replicate(count, 1)));
    } else {
      flows::GlobalGraph gg = vp_.global.build(g, c.z_theta);
      vartheta = gg.vartheta;
      log_q_theta = gg.log_q;
    }
    Expr x;
    Expr log_q_x;
    if (vp_.has_path()) {
      c.z_x = g.input("z_x", count * m.steps, m.state_dim);
      flows::LocalGraph lg = vp_.local->build(g, c.z_x, vartheta, vp_.features, count);
      x = lg.x;
      log_q_x = lg.log_q;
    }
    models::LogJointGraph lj = models::log_joint_graph(g, m, obs, vartheta, x, count);
    Expr e = vp_.fixed_theta() ? lj.total - lj.prior : lj.total;
    if (log_q_theta.valid()) e = e - c.alpha * log_q_theta;
    if (log_q_x.valid()) e = e - log_q_x;
    if (e.rows() != count) e = e + g.constant(MatrixXd::Zero(count, 1));
    c.per_sample = e;
    c.root = ad::sum(e) * (1.0 / static_cast<double>(samples_));
  }

  const VariationalPosterior& vp_;
  Index samples_;
  Index chunk_;
  double alpha_ = 1.0;
  MatrixXd z_theta_, z_x_, per_sample_;
  std::unique_ptr<Chunk> full_, tail_;
};

struct ElboEstimate {
  double value = 0.0;
  VectorXd gradient;
  VectorXd per_sample;
};

// One forward/backward with fresh noise. Non-finite samples are re-drawn up
// to five times before the estimate fails.
template <class Rng>
ElboEstimate elbo_estimate(ElboGraph& eg, double alpha, Rng& rng, Index iteration = 0) {
  if (!(alpha >= 1.0)) throw InvalidArgument("alpha must be >= 1");
  eg.draw(rng);
  eg.set_alpha(alpha);
  constexpr int kMaxRetries = 5;
  for (int attempt = 0;; ++attempt) {
    VectorXd grad;
    const double value = eg.evaluate(&grad);
    const MatrixXd& ps = eg.per_sample_values();
    std::vector<Index> bad;
    for (Index l = 0; l < ps.rows(); ++l)
      if (!std::isfinite(ps(l, 0))) bad.push_back(l);
    if (bad.empty() && grad.allFinite()) return {value, std::move(grad), ps.col(0)};
    if (attempt == kMaxRetries)
      throw TrainingFailure(static_cast<std::size_t>(iteration),
                            "non-finite ELBO sample at iteration " + std::to_string(iteration) + " (" +
                                std::to_string(bad.size()) + " of " + std::to_string(ps.rows()) +
                                " samples) after " + std::to_string(kMaxRetries) + " re-draws");
    if (bad.empty()) {
      eg.draw(rng);
    } else {
      for (Index l : bad) eg.redraw(l, rng);
    }
  }
}

template <class Rng>
ElboEstimate elbo_estimate(const VariationalPosterior& vp, const models::ObservationSeries& obs, Index n,
                           double alpha, Rng& rng) {
  ElboGraph eg(vp, obs, n);
  return elbo_estimate(eg, alpha, rng);
}

// ---------------------------------------------------------------------------
// Training.

struct TrainReport {
  std::vector<double> trace;
  std::vector<double> alpha;
  Index iterations = 0;
  bool stopped_early = false;
  Index clipped = 0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  VectorXd final_params;
};

inline bool windowed_converged(const std::vector<double>& trace, Index window, double threshold) {
  const auto n = static_cast<Index>(trace.size());
  if (threshold <= 0.0 || n < 2 * window) return false;
  double prev = 0.0, last = 0.0;
  for (Index i = n - 2 * window; i < n - window; ++i) prev += trace[static_cast<std::size_t>(i)];
  for (Index i = n - window; i < n; ++i) last += trace[static_cast<std::size_t>(i)];
  return (last - prev) / static_cast<double>(window) < threshold;
}

// Slope, in nats per 100 iterations, of the moving-average-smoothed trace
// over its final `fraction`.
inline double convergence_slope(const std::vector<double>& trace, double fraction = 0.1) {
  const auto n = static_cast<Index>(trace.size());
  const Index tail = std::max<Index>(2, static_cast<Index>(std::llround(fraction * static_cast<double>(n))));
  if (n < tail || tail < 2) return 0.0;
  const Index smooth = std::max<Index>(1, tail / 10);
  std::vector<double> s;
  for (Index i = n - tail; i < n; ++i) {
    double acc = 0.0;
    Index cnt = 0;
    for (Index j = std::max<Index>(0, i - smooth + 1); j <= i; ++j, ++cnt) acc += trace[static_cast<std::size_t>(j)];
    s.push_back(acc / static_cast<double>(cnt));
  }
  const auto m = static_cast<double>(s.size());
  const double tbar = (m - 1.0) / 2.0;
  double ybar = 0.0;
  for (double v : s) ybar += v;
  ybar /= m;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    num += (static_cast<double>(i) - tbar) * (s[i] - ybar);
    den += ad::square(static_cast<double>(i) - tbar);
  }
  return 100.0 * num / den;
}

using ProgressFn = std::function<void(Index iter, double elbo, double alpha)>;

inline TrainReport train(VariationalPosterior& vp, const models::ObservationSeries& obs,
                         const ProgressFn& progress = nullptr) {
  const TrainConfig& cfg = vp.config;
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  if (cfg.iterations > 0) {
    ElboGraph eg(vp, obs, cfg.samples);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    AdamState adam;
    GradientClipper clipper(cfg.clip_factor, cfg.clip_window);
    const Index horizon = tempering_horizon(cfg);
    for (Index it = 0; it < cfg.iterations; ++it) {
      const double alpha = vp.fixed_theta() ? 1.0 : temper_alpha(it, cfg);
      ElboEstimate est = elbo_estimate(eg, alpha, rng, it);
      est.gradient = -est.gradient;
      if (clipper.apply(est.gradient)) ++report.clipped;
      adam_step(vp.store.values(), est.gradient, adam, cfg.learning_rate);
      report.trace.push_back(est.value);
      report.alpha.push_back(alpha);
      if (progress) progress(it, est.value, alpha);
      const Index done = it + 1;
      if (done >= horizon && done % cfg.convergence_window == 0 &&
          windowed_converged(report.trace, cfg.convergence_window, cfg.convergence_threshold)) {
        report.stopped_early = done < cfg.iterations;
        break;
      }
    }
  }
  report.iterations = static_cast<Index>(report.trace.size());
  report.final_params = vp.store.values();
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Posterior sampling.

struct PosteriorSamples {
  MatrixXd vartheta;  // count x d
  MatrixXd theta;     // natural scale
  VectorXd log_q_theta;
  std::vector<MatrixXd> paths;  // (N + 1) x p each, including x0
  VectorXd log_q_x;
};

inline PosteriorSamples sample_theta(const VariationalPosterior& vp, Index count, std::uint64_t seed) {
  PosteriorSamples out;
  const Index d = vp.model.param_dim();
  out.vartheta.resize(count, d);
  out.theta.resize(count, d);
  out.log_q_theta = VectorXd::Zero(count);
  if (count == 0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  if (vp.fixed_theta()) {
    out.vartheta = vp.config.fixed_vartheta->transpose().replicate(count, 1);
  } else {
    MatrixXd z(count, d);
    for (Index r = 0; r < count; ++r)
      for (Index c = 0; c < d; ++c) z(r, c) = normal(rng);
    auto draw = flows::global_sample(vp.global, vp.store, z);
    out.vartheta = draw.vartheta;
    out.log_q_theta = draw.log_q;
  }
  for (Index r = 0; r < count; ++r) out.theta.row(r) = models::natural_params(vp.model, out.vartheta.row(r).transpose()).transpose();
  return out;
}

// Joint draws of (vartheta, path).
inline PosteriorSamples posterior_sample(const VariationalPosterior& vp, Index count, std::uint64_t seed) {
  PosteriorSamples out = sample_theta(vp, count, seed);
  if (count == 0 || !vp.has_path()) return out;
  const Index N = vp.model.steps;
  const Index p = vp.model.state_dim;
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dULL);
  std::normal_distribution<double> normal;
  MatrixXd z(count * N, p);
  for (Index c = 0; c < p; ++c)
    for (Index r = 0; r < count * N; ++r) z(r, c) = normal(rng);
  auto draw = flows::local_sample(*vp.local, vp.store, z, out.vartheta, vp.features);
  out.log_q_x = draw.log_q;
  for (Index l = 0; l < count; ++l) {
    MatrixXd path(N + 1, p);
    path.row(0) = vp.model.x0.transpose();
    path.bottomRows(N) = draw.x.middleRows(l * N, N);
    out.paths.push_back(std::move(path));
  }
  return out;
}

// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"n", c.samples},
                   {"m", c.layers},
                   {"k", c.k},
                   {"hidden", c.hidden},
                   {"depth", c.depth},
                   {"global_layers", c.global_layers},
                   {"lr", c.learning_rate},
                   {"iters", c.iterations},
                   {"alpha0", c.alpha0},
                   {"temper_fraction", c.temper_fraction},
                   {"convergence_window", c.convergence_window},
                   {"convergence_threshold", c.convergence_threshold},
                   {"seed", c.seed}};
  if (c.fixed_vartheta) j["fixed_vartheta"] = std::vector<double>(c.fixed_vartheta->begin(), c.fixed_vartheta->end());
  return j;
}

inline nlohmann::json to_json(const TrainReport& r) {
  return {{"iterations", r.iterations},
          {"stopped_early", r.stopped_early},
          {"seed", r.seed},
          {"elbo_trace", r.trace},
          {"alpha_trace", r.alpha}};
}

}  // namespace ssmflow::train
