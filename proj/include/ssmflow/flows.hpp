#pragma once

// Variational family q(vartheta) q(x | vartheta).
//
// q(vartheta): stacked masked autoregressive layers over the parameter vector,
// each with its own random variable ordering, followed by a per-dimension
// affine map.
//
// q(x | vartheta): m local autoregressive layers over the latent path. Layer j
// updates every grid time at once with the gated step
//
//   z^j_i = z^{j-1}_i * sigma^j_i + mu^j_i * (1 - sigma^j_i)
//
// where (mu, sigma) come from a conditioner that sees the k previous values of
// z^{j-1}, the matching k observation features and vartheta. Even layers run
// on the time-reversed sequence, so they look at the k following points. The
// final z^m goes through a learnable per-dimension affine map and then h
// (identity or softplus).

#include <Eigen/Dense>
#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "ssmflow/autodiff.hpp"
#include "ssmflow/error.hpp"
#include "ssmflow/models.hpp"

namespace ssmflow::flows {

using ad::Expr;
using ad::Graph;
using ad::Index;
using ad::ParameterStore;
using ad::ParamSlice;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kSigmaBiasInit = 2.0;

// ---------------------------------------------------------------------------
// Ordering bookkeeping.

// Position of path index i (1..N) in the time-reversed sequence.
inline Index reverse_index(Index i, Index steps) { return steps + 1 - i; }

inline std::vector<Index> reversal_permutation(Index steps) {
  std::vector<Index> perm(static_cast<std::size_t>(steps));
  for (Index i = 1; i <= steps; ++i) perm[static_cast<std::size_t>(i - 1)] = reverse_index(i, steps);
  return perm;
}

// Source time of window slot s (0..k-1) for the value at time i. In forward
// order slot s covers time i - k + s; reversed layers take the same window in
// reversed coordinates, which maps back to time i + k - s.
inline Index window_source(Index i, Index slot, Index k, Index steps, bool reversed) {
  if (!reversed) return i - k + slot;
  const Index src_rev = reverse_index(i, steps) - k + slot;
  return reverse_index(src_rev, steps);
}

// ---------------------------------------------------------------------------
// Observation features.

struct FeatureScaling {
  VectorXd center;
  VectorXd scale;

  static FeatureScaling identity(Index obs_dim) {
    return {VectorXd::Zero(obs_dim), VectorXd::Ones(obs_dim)};
  }

  // Standardise by the mean/sd of the observed values.
  static FeatureScaling from(const models::ObservationSeries& obs) {
    FeatureScaling s = identity(obs.obs_dim());
    const auto idx = obs.observed_indices();
    if (idx.empty()) return s;
    for (Index o = 0; o < obs.obs_dim(); ++o) {
      double mean = 0.0;
      for (Index i : idx) mean += obs.values(i, o);
      mean /= static_cast<double>(idx.size());
      double var = 0.0;
      for (Index i : idx) var += ad::square(obs.values(i, o) - mean);
      var /= static_cast<double>(idx.size());
      s.center[o] = mean;
      s.scale[o] = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    return s;
  }
};

// Row i (grid index 0..N) holds k slots of (value_1..value_p0, presence_1..presence_p0)
// for the k source times of the window at i. Padding and missing values are 0.
struct FeatureWindows {
  Index k = 0;
  Index obs_dim = 0;
  bool reversed = false;
  MatrixXd features;  // (N + 1) x (k * 2 * obs_dim)

  Index slot_width() const { return 2 * obs_dim; }
  double value(Index i, Index slot, Index o = 0) const { return features(i, slot * slot_width() + o); }
  double presence(Index i, Index slot, Index o = 0) const {
    return features(i, slot * slot_width() + obs_dim + o);
  }
};

inline FeatureWindows build_feature_windows(const models::ObservationSeries& obs, Index k, bool reversed = false,
                                            const FeatureScaling* scaling = nullptr) {
  if (k < 1) throw InvalidArgument("receptive field k must be >= 1");
  const Index N = obs.steps();
  const Index p0 = obs.obs_dim();
  const FeatureScaling id = FeatureScaling::identity(p0);
  const FeatureScaling& sc = scaling ? *scaling : id;
  FeatureWindows fw;
  fw.k = k;
  fw.obs_dim = p0;
  fw.reversed = reversed;
  fw.features = MatrixXd::Zero(N + 1, k * 2 * p0);
  for (Index i = 0; i <= N; ++i)
    for (Index s = 0; s < k; ++s) {
      const Index src = window_source(i, s, k, N, reversed);
      if (src < 0 || src > N || !obs.has(src)) continue;
      for (Index o = 0; o < p0; ++o) {
        fw.features(i, s * 2 * p0 + o) = (obs.values(src, o) - sc.center[o]) / sc.scale[o];
        fw.features(i, s * 2 * p0 + p0 + o) = 1.0;
      }
    }
  return fw;
}

// Forward and reversed windows for one dataset.
struct FeatureSet {
  FeatureWindows forward;
  FeatureWindows reversed;

  static FeatureSet build(const models::ObservationSeries& obs, Index k) {
    const FeatureScaling sc = FeatureScaling::from(obs);
    return {build_feature_windows(obs, k, false, &sc), build_feature_windows(obs, k, true, &sc)};
  }
  const FeatureWindows& get(bool rev) const { return rev ? reversed : forward; }
};

// ---------------------------------------------------------------------------
// Conditioner: `depth` relu layers of `hidden` units, then a linear mu head
// and a sigmoid sigma head. Optional masks make it autoregressive.

struct Heads {
  Expr mu;
  Expr sigma;
};

struct ConditionerNet {
  Index input_dim = 0;
  Index output_dim = 0;
  Index hidden = 20;
  Index depth = 5;
  std::vector<ParamSlice> weights;
  std::vector<ParamSlice> biases;
  ParamSlice mu_weight, mu_bias, sigma_weight, sigma_bias;
  std::vector<MatrixXd> masks;  // one per hidden layer, empty when unmasked
  MatrixXd head_mask;

  static ConditionerNet create(ParameterStore& store, const std::string& prefix, Index input_dim, Index output_dim,
                               Index hidden = 20, Index depth = 5) {
    if (input_dim < 1 || output_dim < 1 || hidden < 1 || depth < 1)
      throw InvalidArgument("conditioner dimensions must be positive");
    ConditionerNet net;
    net.input_dim = input_dim;
    net.output_dim = output_dim;
    net.hidden = hidden;
    net.depth = depth;
    Index in = input_dim;
    for (Index l = 0; l < depth; ++l) {
      net.weights.push_back(store.add(prefix + ".W" + std::to_string(l), hidden, in));
      net.biases.push_back(store.add(prefix + ".b" + std::to_string(l), 1, hidden));
      in = hidden;
    }
    net.mu_weight = store.add(prefix + ".mu.W", output_dim, hidden);
    net.mu_bias = store.add(prefix + ".mu.b", 1, output_dim);
    net.sigma_weight = store.add(prefix + ".sigma.W", output_dim, hidden);
    net.sigma_bias = store.add(prefix + ".sigma.b", 1, output_dim);
    return net;
  }

  // He-normal hidden weights, zero heads, sigma bias +2: mu = 0 and
  // sigma = sigmoid(2) everywhere at initialisation.
  template <class Rng>
  void initialize(ParameterStore& store, Rng& rng, double sigma_bias_init = kSigmaBiasInit) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      auto w = store.view(weights[l]);
      std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(w.cols())));
      for (Index r = 0; r < w.rows(); ++r)
        for (Index c = 0; c < w.cols(); ++c) w(r, c) = normal(rng);
      store.view(biases[l]).setZero();
    }
    store.view(mu_weight).setZero();
    store.view(mu_bias).setZero();
    store.view(sigma_weight).setZero();
    store.view(sigma_bias).setConstant(sigma_bias_init);
  }

  Heads build(Graph& g, Expr input) const {
    if (input.cols() != input_dim) throw InvalidArgument("conditioner input has wrong width");
    Expr h = input;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      const MatrixXd* mask = masks.empty() ? nullptr : &masks[l];
      h = g.affine_relu(h, g.parameter(weights[l]), g.parameter(biases[l]), mask);
    }
    const MatrixXd* hm = head_mask.size() > 0 ? &head_mask : nullptr;
    Heads out;
    out.mu = g.affine(h, g.parameter(mu_weight), g.parameter(mu_bias), hm);
    out.sigma = ad::sigmoid(g.affine(h, g.parameter(sigma_weight), g.parameter(sigma_bias), hm));
    return out;
  }
};

// Evaluates a conditioner on explicit input rows (one row per evaluation).
inline std::pair<MatrixXd, MatrixXd> conditioner_forward(const ConditionerNet& net, const ParameterStore& store,
                                                         const MatrixXd& inputs) {
  Graph g;
  Expr in = g.input("in", inputs.rows(), inputs.cols());
  Heads h = net.build(g, in);
  Expr both = g.concat_cols(std::vector<Expr>{h.mu, h.sigma});
  g.bind(in, inputs);
  const MatrixXd& v = g.forward(both, store);
  return {v.leftCols(net.output_dim), v.rightCols(net.output_dim)};
}

// Single evaluation from its parts: the z window (k x p, oldest first), the
// matching feature slots (k x 2p0) and vartheta.
inline std::pair<VectorXd, VectorXd> conditioner_forward(const ConditionerNet& net, const ParameterStore& store,
                                                         const MatrixXd& window, const MatrixXd& feats,
                                                         const VectorXd& vartheta) {
  MatrixXd row(1, net.input_dim);
  const ad::RowMatrix w = window;
  const ad::RowMatrix f = feats;
  if (w.size() + f.size() + vartheta.size() != net.input_dim)
    throw InvalidArgument("conditioner inputs do not match the input layout");
  Index at = 0;
  for (Index i = 0; i < w.size(); ++i) row(0, at++) = w.data()[i];
  for (Index i = 0; i < f.size(); ++i) row(0, at++) = f.data()[i];
  for (Index i = 0; i < vartheta.size(); ++i) row(0, at++) = vartheta[i];
  auto [mu, sigma] = conditioner_forward(net, store, row);
  return {mu.row(0).transpose(), sigma.row(0).transpose()};
}

// ---------------------------------------------------------------------------
// Local IAF stack for the latent path.

enum class OutputTransform { identity, softplus };

struct LocalFlowConfig {
  Index layers = 5;  // m
  Index k = 10;      // receptive field
  Index hidden = 20;
  Index depth = 5;
  OutputTransform output = OutputTransform::identity;
};

struct LocalGraph {
  Expr x;         // (n N) x p
  Expr log_q;     // n x 1
  Expr z_last;    // (n N) x p, before the output affine
  std::vector<Expr> sigmas;
};

class LocalIAFStack {
 public:
  static LocalIAFStack create(ParameterStore& store, const std::string& prefix, Index state_dim, Index obs_dim,
                              Index param_dim, const LocalFlowConfig& cfg) {
    if (cfg.layers < 1 || cfg.k < 1) throw InvalidArgument("local flow needs m >= 1 and k >= 1");
    LocalIAFStack s;
    s.cfg_ = cfg;
    s.state_dim_ = state_dim;
    s.obs_dim_ = obs_dim;
    s.param_dim_ = param_dim;
    const Index in = cfg.k * state_dim + cfg.k * 2 * obs_dim + param_dim;
    for (Index j = 0; j < cfg.layers; ++j)
      s.nets_.push_back(ConditionerNet::create(store, prefix + ".layer" + std::to_string(j), in, state_dim,
                                               cfg.hidden, cfg.depth));
    for (Index c = 0; c < state_dim; ++c) {
      s.shift_.push_back(store.add(prefix + ".out.shift" + std::to_string(c), 1, 1));
      s.log_scale_.push_back(store.add(prefix + ".out.log_scale" + std::to_string(c), 1, 1));
    }
    return s;
  }

  // `shift`/`scale` set the output affine per state dimension. For softplus
  // outputs the shift is taken in pre-softplus units.
  template <class Rng>
  void initialize(ParameterStore& store, Rng& rng, const VectorXd& shift, const VectorXd& scale) const {
    if (shift.size() != state_dim_ || scale.size() != state_dim_) throw InvalidArgument("output affine size mismatch");
    for (const auto& net : nets_) net.initialize(store, rng);
    for (Index c = 0; c < state_dim_; ++c) {
      if (!(scale[c] > 0.0)) throw InvalidArgument("output scale must be positive");
      store.view(shift_[static_cast<std::size_t>(c)])(0, 0) = shift[c];
      store.view(log_scale_[static_cast<std::size_t>(c)])(0, 0) = std::log(scale[c]);
    }
  }

  const LocalFlowConfig& config() const { return cfg_; }
  Index layers() const { return cfg_.layers; }
  Index k() const { return cfg_.k; }
  Index state_dim() const { return state_dim_; }
  Index obs_dim() const { return obs_dim_; }
  Index param_dim() const { return param_dim_; }
  const std::vector<ConditionerNet>& nets() const { return nets_; }
  // Layers are numbered from 0 here; layer 1, 3, ... (the even ones when
  // counting from 1) run on the reversed sequence.
  static bool reversed(Index layer) { return layer % 2 == 1; }

  // z0: (n N) x p base noise, vartheta: n x d.
  LocalGraph build(Graph& g, Expr z0, Expr vartheta, const FeatureSet& feats, Index samples) const {
    const Index N = feats.forward.features.rows() - 1;
    const Index p = state_dim_;
    const Index k = cfg_.k;
    const Index R = samples * N;
    if (N < 1) throw InvalidArgument("local flow needs at least one latent time");
    if (z0.rows() != R || z0.cols() != p) throw InvalidArgument("local flow noise has wrong shape");
    if (vartheta.rows() != samples || vartheta.cols() != param_dim_)
      throw InvalidArgument("local flow parameter input has wrong shape");
    if (feats.forward.k != k || feats.forward.obs_dim != obs_dim_) throw InvalidArgument("feature windows mismatch");

    std::vector<Index> sample_of_row(static_cast<std::size_t>(R));
    for (Index r = 0; r < R; ++r) sample_of_row[static_cast<std::size_t>(r)] = r / N;
    Expr theta_rows = g.gather_rows(vartheta, sample_of_row, 1);

    std::array<Expr, 2> feat_rows;
    std::array<std::vector<Index>, 2> window_index;
    for (int dir = 0; dir < 2; ++dir) {
      const FeatureWindows& fw = feats.get(dir == 1);
      MatrixXd f(R, fw.features.cols());
      for (Index r = 0; r < R; ++r) f.row(r) = fw.features.row(r % N + 1);
      feat_rows[static_cast<std::size_t>(dir)] = g.constant(std::move(f));
      auto& idx = window_index[static_cast<std::size_t>(dir)];
      idx.resize(static_cast<std::size_t>(R * k));
      for (Index r = 0; r < R; ++r) {
        const Index l = r / N;
        const Index i = r % N + 1;
        for (Index s = 0; s < k; ++s) {
          const Index src = window_source(i, s, k, N, dir == 1);
          idx[static_cast<std::size_t>(r * k + s)] = (src >= 1 && src <= N) ? l * N + src - 1 : -1;
        }
      }
    }

    LocalGraph out;
    Expr z = z0;
    Expr log_sigma_sum;
    for (Index j = 0; j < cfg_.layers; ++j) {
      const int dir = reversed(j) ? 1 : 0;
      Expr window = g.gather_rows(z, window_index[static_cast<std::size_t>(dir)], k);
      Expr input = g.concat_cols(std::vector<Expr>{window, feat_rows[static_cast<std::size_t>(dir)], theta_rows});
      Heads h = nets_[static_cast<std::size_t>(j)].build(g, input);
      out.sigmas.push_back(h.sigma);
      z = z * h.sigma + h.mu * (1.0 - h.sigma);
      Expr ls = ad::log(h.sigma);
      log_sigma_sum = log_sigma_sum.valid() ? log_sigma_sum + ls : ls;
    }
    out.z_last = z;

    // output affine and h, per state dimension
    std::vector<Expr> xs;
    Expr log_hprime;
    Expr log_scale_total;
    for (Index c = 0; c < p; ++c) {
      Expr shift = g.parameter(shift_[static_cast<std::size_t>(c)]);
      Expr log_scale = g.parameter(log_scale_[static_cast<std::size_t>(c)]);
      Expr u = ad::col(z, c) * ad::exp(log_scale) + shift;
      if (cfg_.output == OutputTransform::softplus) {
        xs.push_back(ad::softplus(u));
        Expr lh = ad::log(ad::sigmoid(u));
        log_hprime = log_hprime.valid() ? log_hprime + lh : lh;
      } else {
        xs.push_back(u);
      }
      log_scale_total = log_scale_total.valid() ? log_scale_total + log_scale : log_scale;
    }
    out.x = p == 1 ? xs[0] : g.concat_cols(xs);

    // log q = sum log N(z0) - sum log sigma - sum log h'(u) - N sum log scale
    Expr base = ad::gaussian_logpdf(z0, 0.0, 1.0);
    Expr per_row = ad::row_sum(base - log_sigma_sum);
    if (log_hprime.valid()) per_row = per_row - log_hprime;
    out.log_q = g.segment_sum(per_row, N) - log_scale_total * static_cast<double>(N);
    return out;
  }

  const std::vector<ParamSlice>& shift_slices() const { return shift_; }
  const std::vector<ParamSlice>& log_scale_slices() const { return log_scale_; }

 private:
  LocalFlowConfig cfg_;
  Index state_dim_ = 1;
  Index obs_dim_ = 1;
  Index param_dim_ = 1;
  std::vector<ConditionerNet> nets_;
  std::vector<ParamSlice> shift_;
  std::vector<ParamSlice> log_scale_;
};

// ---------------------------------------------------------------------------
// Global flow over vartheta.

struct GlobalGraph {
  Expr vartheta;  // n x d
  Expr log_q;     // n x 1
};

class GlobalFlow {
 public:
  template <class Rng>
  static GlobalFlow create(ParameterStore& store, const std::string& prefix, Index dim, Rng& rng, Index layers = 5,
                           Index hidden = 20, Index depth = 5) {
    if (dim < 1 || layers < 1) throw InvalidArgument("global flow needs dim >= 1 and layers >= 1");
    GlobalFlow f;
    f.dim_ = dim;
    const Index hidden_degrees = std::max<Index>(1, dim - 1);
    for (Index j = 0; j < layers; ++j) {
      std::vector<Index> order(static_cast<std::size_t>(dim));
      std::iota(order.begin(), order.end(), Index{0});
      std::shuffle(order.begin(), order.end(), rng);
      // degree of input component c = its position in the ordering + 1
      std::vector<Index> deg_in(static_cast<std::size_t>(dim));
      for (Index pos = 0; pos < dim; ++pos) deg_in[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = pos + 1;
      std::vector<Index> deg_hidden(static_cast<std::size_t>(hidden));
      for (Index h = 0; h < hidden; ++h) deg_hidden[static_cast<std::size_t>(h)] = 1 + h % hidden_degrees;

      ConditionerNet net = ConditionerNet::create(store, prefix + ".layer" + std::to_string(j), dim, dim, hidden, depth);
      MatrixXd first(hidden, dim);
      for (Index h = 0; h < hidden; ++h)
        for (Index c = 0; c < dim; ++c)
          first(h, c) = deg_hidden[static_cast<std::size_t>(h)] >= deg_in[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
      MatrixXd inner(hidden, hidden);
      for (Index a = 0; a < hidden; ++a)
        for (Index b = 0; b < hidden; ++b)
          inner(a, b) = deg_hidden[static_cast<std::size_t>(a)] >= deg_hidden[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
      net.masks.push_back(first);
      for (Index l = 1; l < depth; ++l) net.masks.push_back(inner);
      net.head_mask.resize(dim, hidden);
      for (Index c = 0; c < dim; ++c)
        for (Index h = 0; h < hidden; ++h)
          net.head_mask(c, h) = deg_in[static_cast<std::size_t>(c)] > deg_hidden[static_cast<std::size_t>(h)] ? 1.0 : 0.0;
      f.orders_.push_back(std::move(order));
      f.nets_.push_back(std::move(net));
    }
    f.shift_ = store.add(prefix + ".out.shift", 1, dim);
    f.log_scale_ = store.add(prefix + ".out.log_scale", 1, dim);
    return f;
  }

  // Near-identity start: the output scale undoes the sigmoid(2) contraction
  // of the layers, so vartheta = z0 exactly while the heads are zero.
  template <class Rng>
  void initialize(ParameterStore& store, Rng& rng) const {
    for (const auto& net : nets_) net.initialize(store, rng);
    store.view(shift_).setZero();
    store.view(log_scale_).setConstant(-static_cast<double>(nets_.size()) * std::log(ad::sigmoid(kSigmaBiasInit)));
  }

  Index dim() const { return dim_; }
  Index layers() const { return static_cast<Index>(nets_.size()); }
  const std::vector<Index>& order(Index layer) const { return orders_[static_cast<std::size_t>(layer)]; }
  const std::vector<ConditionerNet>& nets() const { return nets_; }
  const ParamSlice& shift_slice() const { return shift_; }
  const ParamSlice& log_scale_slice() const { return log_scale_; }

  GlobalGraph build(Graph& g, Expr z0) const {
    if (z0.cols() != dim_) throw InvalidArgument("global flow noise has wrong width");
    Expr z = z0;
    Expr log_sigma;
    for (const auto& net : nets_) {
      Heads h = net.build(g, z);
      z = z * h.sigma + h.mu * (1.0 - h.sigma);
      Expr ls = ad::log(h.sigma);
      log_sigma = log_sigma.valid() ? log_sigma + ls : ls;
    }
    Expr log_scale = g.parameter(log_scale_);
    Expr shift = g.parameter(shift_);
    std::vector<Expr> cols;
    for (Index c = 0; c < dim_; ++c)
      cols.push_back(ad::col(z, c) * ad::exp(ad::col(log_scale, c)) + ad::col(shift, c));
    GlobalGraph out;
    out.vartheta = dim_ == 1 ? cols[0] : g.concat_cols(cols);
    Expr base = ad::gaussian_logpdf(z0, 0.0, 1.0);
    out.log_q = ad::row_sum(base - log_sigma) - ad::sum(log_scale);
    return out;
  }

 private:
  Index dim_ = 1;
  std::vector<std::vector<Index>> orders_;
  std::vector<ConditionerNet> nets_;
  ParamSlice shift_;
  ParamSlice log_scale_;
};

// ---------------------------------------------------------------------------
// Value-level sampling wrappers.

struct GlobalDraw {
  MatrixXd vartheta;  // n x d
  VectorXd log_q;
};

inline GlobalDraw global_sample(const GlobalFlow& flow, const ParameterStore& store, const MatrixXd& z0) {
  if (z0.cols() != flow.dim()) throw InvalidArgument("global_sample: noise has wrong dimension");
  Graph g;
  Expr in = g.input("z0", z0.rows(), z0.cols());
  GlobalGraph gg = flow.build(g, in);
  Expr both = g.concat_cols(std::vector<Expr>{gg.vartheta, gg.log_q});
  g.bind(in, z0);
  const MatrixXd& v = g.forward(both, store);
  return {v.leftCols(flow.dim()), v.col(flow.dim())};
}

struct LocalDraw {
  MatrixXd x;  // (n N) x p
  VectorXd log_q;
};

inline LocalDraw local_sample(const LocalIAFStack& stack, const ParameterStore& store, const MatrixXd& z0,
                              const MatrixXd& vartheta, const FeatureSet& feats) {
  const Index samples = vartheta.rows();
  Graph g;
  Expr zin = g.input("z0", z0.rows(), z0.cols());
  Expr tin = g.input("vartheta", vartheta.rows(), vartheta.cols());
  LocalGraph lg = stack.build(g, zin, tin, feats, samples);
  std::vector<Expr> parts{lg.x};
  parts.insert(parts.end(), lg.sigmas.begin(), lg.sigmas.end());
  Expr all = g.concat_cols(parts);
  g.bind(zin, z0);
  g.bind(tin, vartheta);
  g.forward(all, store);
  for (Expr s : lg.sigmas) {
    const MatrixXd& v = g.value(s);
    if ((v.array() <= 0.0).any() || (v.array() >= 1.0).any())
      throw SaturationError("conditioner sigma saturated at 0 or 1");
  }
  g.forward(lg.log_q, store);
  return {g.value(lg.x), g.value(lg.log_q).col(0)};
}

// ---------------------------------------------------------------------------
// Weights on disk: raw little-endian doubles plus a JSON manifest.

inline void save_weights(const ParameterStore& store, const std::filesystem::path& bin,
                         const std::filesystem::path& manifest) {
  std::ofstream out(bin, std::ios::binary);
  if (!out) throw Error("cannot open " + bin.string() + " for writing");
  out.write(reinterpret_cast<const char*>(store.values().data()),
            static_cast<std::streamsize>(store.size() * static_cast<Index>(sizeof(double))));
  nlohmann::json m;
  m["dtype"] = "float64";
  m["count"] = store.size();
  m["binary"] = bin.filename().string();
  m["slices"] = nlohmann::json::array();
  for (const auto& s : store.slices())
    m["slices"].push_back({{"name", s.name}, {"offset", s.offset}, {"shape", {s.rows, s.cols}}});
  std::ofstream mf(manifest);
  if (!mf) throw Error("cannot open " + manifest.string() + " for writing");
  mf << m.dump(2) << '\n';
}

// Fills a store whose slices were created by the same flow constructors.
inline void load_weights(ParameterStore& store, const std::filesystem::path& bin,
                         const std::filesystem::path& manifest) {
  std::ifstream mf(manifest);
  if (!mf) throw Error("cannot open " + manifest.string());
  const nlohmann::json m = nlohmann::json::parse(mf);
  if (m.at("count").get<Index>() != store.size()) throw InvalidArgument("weight manifest size mismatch");
  for (const auto& s : m.at("slices")) {
    const ParamSlice& mine = store.slice(s.at("name").get<std::string>());
    if (mine.offset != s.at("offset").get<Index>() || mine.rows != s.at("shape")[0].get<Index>() ||
        mine.cols != s.at("shape")[1].get<Index>())
      throw InvalidArgument("weight manifest layout mismatch at " + mine.name);
  }
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error("cannot open " + bin.string());
  in.read(reinterpret_cast<char*>(store.values().data()),
          static_cast<std::streamsize>(store.size() * static_cast<Index>(sizeof(double))));
  if (!in) throw Error("weight file " + bin.string() + " is truncated");
}

}  // namespace ssmflow::flows
