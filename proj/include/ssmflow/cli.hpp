#pragma once

// Command implementations behind the `ssmflow` tool: simulate, fit, oracle,
// compare. Kept header-only so tests can drive them in-process; the binary in
// tools/ only parses flags and maps errors onto exit codes.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "ssmflow/csv.hpp"
#include "ssmflow/error.hpp"
#include "ssmflow/flows.hpp"
#include "ssmflow/models.hpp"
#include "ssmflow/oracle.hpp"
#include "ssmflow/trainer.hpp"

namespace ssmflow::cli {

namespace fs = std::filesystem;
using ad::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

class ConfigError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitIo = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

struct OracleSettings {
  Index iterations = 60000;  // including burn-in
  Index burn_in = 10000;
};

// Optional edits to the built-in model. `custom` requires a base model and
// takes everything else from here.
struct ModelOverrides {
  std::optional<Index> steps;
  std::optional<double> dt;
  std::optional<std::vector<double>> x0;
  std::optional<double> obs_var;
  std::optional<std::vector<double>> prior_mean;
  std::optional<std::vector<double>> prior_sd;
};

struct RunConfig {
  std::string model = "ou";  // ou | sir | custom
  std::string base;          // builtin the custom model starts from
  ModelOverrides overrides;
  std::string data;          // dataset CSV; empty = none
  std::string out = "out";
  std::uint64_t seed = 1;
  train::TrainConfig train;
  OracleSettings oracle;
  std::optional<std::vector<double>> theta;  // simulation truth, natural scale
  Index obs_stride = 0;                      // 0 = model default
  Index path_draws = 50;
  Index theta_draws = 5000;
  std::string fit_dir;
  std::string oracle_dir;
  Index bins = 30;
};

// ---------------------------------------------------------------------------
// Config <-> JSON. Unknown keys are rejected.

inline const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys{
      "model", "base", "steps", "dt", "x0", "obs_var", "prior_mean", "prior_sd", "data", "out", "seed",
      "n", "m", "k", "hidden", "depth", "global_layers", "lr", "iters", "alpha0", "temper_fraction",
      "convergence_window", "convergence_threshold", "clip_factor", "clip_window", "fixed_vartheta",
      "oracle_iters", "oracle_burn_in", "theta", "obs_stride", "path_draws", "theta_draws", "fit_dir", "oracle_dir", "bins"};
  return keys;
}

namespace detail {

template <class T>
void read_key(const json& j, const char* key, T& dst) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

template <class T>
void read_key(const json& j, const char* key, std::optional<T>& dst) {
  if (!j.contains(key)) return;
  T v{};
  read_key(j, key, v);
  dst = v;
}

inline std::vector<double> to_vector(const VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace detail

inline void apply_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!known_keys().contains(key)) throw ConfigError("unknown config key '" + key + "'");
  using detail::read_key;
  read_key(j, "model", c.model);
  read_key(j, "base", c.base);
  read_key(j, "steps", c.overrides.steps);
  read_key(j, "dt", c.overrides.dt);
  read_key(j, "x0", c.overrides.x0);
  read_key(j, "obs_var", c.overrides.obs_var);
  read_key(j, "prior_mean", c.overrides.prior_mean);
  read_key(j, "prior_sd", c.overrides.prior_sd);
  read_key(j, "data", c.data);
  read_key(j, "out", c.out);
  read_key(j, "seed", c.seed);
  read_key(j, "n", c.train.samples);
  read_key(j, "m", c.train.layers);
  read_key(j, "k", c.train.k);
  read_key(j, "hidden", c.train.hidden);
  read_key(j, "depth", c.train.depth);
  read_key(j, "global_layers", c.train.global_layers);
  read_key(j, "lr", c.train.learning_rate);
  read_key(j, "iters", c.train.iterations);
  read_key(j, "alpha0", c.train.alpha0);
  read_key(j, "temper_fraction", c.train.temper_fraction);
  read_key(j, "convergence_window", c.train.convergence_window);
  read_key(j, "convergence_threshold", c.train.convergence_threshold);
  read_key(j, "clip_factor", c.train.clip_factor);
  read_key(j, "clip_window", c.train.clip_window);
  if (j.contains("fixed_vartheta")) {
    std::vector<double> v;
    read_key(j, "fixed_vartheta", v);
    c.train.fixed_vartheta = Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
  }
  read_key(j, "oracle_iters", c.oracle.iterations);
  read_key(j, "oracle_burn_in", c.oracle.burn_in);
  read_key(j, "theta", c.theta);
  read_key(j, "obs_stride", c.obs_stride);
  read_key(j, "path_draws", c.path_draws);
  read_key(j, "theta_draws", c.theta_draws);
  read_key(j, "fit_dir", c.fit_dir);
  read_key(j, "oracle_dir", c.oracle_dir);
  read_key(j, "bins", c.bins);
}

inline json to_json(const RunConfig& c) {
  json j{{"model", c.model},
         {"data", c.data},
         {"out", c.out},
         {"seed", c.seed},
         {"n", c.train.samples},
         {"m", c.train.layers},
         {"k", c.train.k},
         {"hidden", c.train.hidden},
         {"depth", c.train.depth},
         {"global_layers", c.train.global_layers},
         {"lr", c.train.learning_rate},
         {"iters", c.train.iterations},
         {"alpha0", c.train.alpha0},
         {"temper_fraction", c.train.temper_fraction},
         {"convergence_window", c.train.convergence_window},
         {"convergence_threshold", c.train.convergence_threshold},
         {"clip_factor", c.train.clip_factor},
         {"clip_window", c.train.clip_window},
         {"oracle_iters", c.oracle.iterations},
         {"oracle_burn_in", c.oracle.burn_in},
         {"obs_stride", c.obs_stride},
         {"path_draws", c.path_draws},
         {"theta_draws", c.theta_draws},
         {"fit_dir", c.fit_dir},
         {"oracle_dir", c.oracle_dir},
         {"bins", c.bins}};
  if (!c.base.empty()) j["base"] = c.base;
  const auto& o = c.overrides;
  if (o.steps) j["steps"] = *o.steps;
  if (o.dt) j["dt"] = *o.dt;
  if (o.x0) j["x0"] = *o.x0;
  if (o.obs_var) j["obs_var"] = *o.obs_var;
  if (o.prior_mean) j["prior_mean"] = *o.prior_mean;
  if (o.prior_sd) j["prior_sd"] = *o.prior_sd;
  if (c.train.fixed_vartheta) j["fixed_vartheta"] = detail::to_vector(*c.train.fixed_vartheta);
  if (c.theta) j["theta"] = *c.theta;
  return j;
}

inline RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c;
  apply_json(c, j);
  return c;
}

// Seed precedence: explicit flag/config, then SSMFLOW_SEED, then 1.
inline std::uint64_t env_seed(std::uint64_t fallback = 1) {
  const char* s = std::getenv("SSMFLOW_SEED");
  if (s == nullptr || *s == '\0') return fallback;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (end == nullptr || *end != '\0') throw ConfigError("SSMFLOW_SEED must be a non-negative integer");
  return v;
}

// ---------------------------------------------------------------------------
// Model resolution.

inline models::ModelSpec builtin(const std::string& name) {
  if (name == "ou") return models::builtin_ou();
  if (name == "sir") return models::builtin_sir();
  throw ConfigError("unknown model '" + name + "' (expected ou, sir or custom)");
}

inline models::ModelSpec resolve_model(const RunConfig& c) {
  models::ModelSpec m;
  if (c.model == "custom") {
    if (c.base.empty()) throw ConfigError("model 'custom' needs a 'base' of ou or sir");
    m = builtin(c.base);
  } else {
    if (!c.base.empty()) throw ConfigError("'base' is only meaningful for model 'custom'");
    m = builtin(c.model);
  }
  const auto& o = c.overrides;
  auto vec = [](const std::vector<double>& v) { return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()))); };
  if (o.steps) m.steps = *o.steps;
  if (o.dt) m.dt = *o.dt;
  if (o.x0) m.x0 = vec(*o.x0);
  if (o.obs_var) {
    if (m.noise.sd_param) throw ConfigError("obs_var cannot be set for a model that infers the observation sd");
    m.noise.variance = *o.obs_var;
  }
  if (o.prior_mean) m.prior.mean = vec(*o.prior_mean);
  if (o.prior_sd) m.prior.sd = vec(*o.prior_sd);
  try {
    m.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return m;
}

inline Index default_stride(const models::ModelSpec& m) {
  return m.name == "sir" ? static_cast<Index>(std::llround(1.0 / m.dt)) : 1;
}

inline VectorXd default_truth(const models::ModelSpec& m) {
  VectorXd t(m.param_dim());
  if (models::is_ou(m)) {
    t << 0.2, 5.0, 1.0;
  } else {
    t = VectorXd::Zero(m.param_dim());
    if (m.param_dim() == 3) t << 0.0022, 0.45, 5.0;  // boarding-school scale
  }
  return t;
}

// Dataset for fitting: the configured CSV, else the embedded boarding-school
// data for the SIR model. N follows the data unless `steps` is set.
inline std::pair<models::ModelSpec, models::ObservationSeries> load_problem(const RunConfig& c) {
  models::ModelSpec m = resolve_model(c);
  if (c.data.empty()) {
    if (m.name != "sir") throw ConfigError("no dataset given (set 'data' or --data)");
    return {m, models::boarding_school_data(m)};
  }
  if (!fs::exists(c.data)) throw ConfigError("dataset " + c.data + " does not exist");
  auto obs = csv::read_dataset(c.data, m.obs_dim, m.dt, c.overrides.steps.value_or(-1));
  m.steps = obs.steps();
  return {m, obs};
}

// ---------------------------------------------------------------------------
// Sample summaries shared by oracle and compare.

struct Marginal {
  double mean = 0.0;
  double sd = 0.0;
};

inline std::vector<Marginal> marginals(const MatrixXd& samples) {
  std::vector<Marginal> out;
  const double n = static_cast<double>(samples.rows());
  for (Index c = 0; c < samples.cols(); ++c) {
    double m = 0.0;
    for (Index r = 0; r < samples.rows(); ++r) m += samples(r, c);
    m /= n;
    double v = 0.0;
    for (Index r = 0; r < samples.rows(); ++r) v += ad::square(samples(r, c) - m);
    out.push_back({m, samples.rows() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0});
  }
  return out;
}

struct ParamComparison {
  std::string name;
  Marginal vi, mh;
  double gap = 0.0;       // |mean_VI - mean_MH| / sd_MH
  double sd_ratio = 0.0;  // sd_VI / sd_MH
};

inline std::vector<ParamComparison> compare_samples(const MatrixXd& vi, const MatrixXd& mh,
                                                    const std::vector<std::string>& names) {
  if (vi.cols() != mh.cols()) throw InvalidArgument("parameter dimensions differ between the two sample sets");
  if (vi.rows() < 2 || mh.rows() < 2) throw InvalidArgument("need at least two samples per method");
  const auto a = marginals(vi);
  const auto b = marginals(mh);
  std::vector<ParamComparison> out;
  for (std::size_t c = 0; c < a.size(); ++c) {
    ParamComparison pc;
    pc.name = c < names.size() ? names[c] : "param" + std::to_string(c + 1);
    pc.vi = a[c];
    pc.mh = b[c];
    pc.gap = std::abs(a[c].mean - b[c].mean) / b[c].sd;
    pc.sd_ratio = a[c].sd / b[c].sd;
    out.push_back(pc);
  }
  return out;
}

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<Index> vi, mh;
};

// Shared equal-width bins over the pooled range; the last bin is closed.
inline Histogram histogram(const VectorXd& vi, const VectorXd& mh, Index bins) {
  if (bins < 1) throw InvalidArgument("bins must be >= 1");
  const double lo = std::min(vi.minCoeff(), mh.minCoeff());
  double hi = std::max(vi.maxCoeff(), mh.maxCoeff());
  if (!(hi > lo)) hi = lo + 1.0;
  Histogram h;
  for (Index b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins));
  h.vi.assign(static_cast<std::size_t>(bins), 0);
  h.mh.assign(static_cast<std::size_t>(bins), 0);
  auto fill = [&](const VectorXd& v, std::vector<Index>& counts) {
    for (Index i = 0; i < v.size(); ++i) {
      auto b = static_cast<Index>(std::floor((v[i] - lo) / (hi - lo) * static_cast<double>(bins)));
      counts[static_cast<std::size_t>(std::clamp<Index>(b, 0, bins - 1))] += 1;
    }
  };
  fill(vi, h.vi);
  fill(mh, h.mh);
  return h;
}

inline json summary_json(const std::vector<std::string>& names, const std::vector<Marginal>& m) {
  json j = json::array();
  for (std::size_t c = 0; c < m.size(); ++c) j.push_back({{"name", names[c]}, {"mean", m[c].mean}, {"sd", m[c].sd}});
  return j;
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// Commands. Each returns a small JSON summary (also useful for logging).

inline json cmd_simulate(const RunConfig& c) {
  const models::ModelSpec m = resolve_model(c);
  VectorXd theta = default_truth(m);
  if (c.theta) {
    if (static_cast<Index>(c.theta->size()) != m.param_dim()) throw ConfigError("theta has wrong dimension");
    theta = Eigen::Map<const VectorXd>(c.theta->data(), m.param_dim());
  }
  const Index stride = c.obs_stride > 0 ? c.obs_stride : default_stride(m);
  const auto scheme = models::is_ou(m) ? models::Scheme::exact_ou : models::Scheme::euler_maruyama;
  auto sim = models::simulate(m, theta, scheme, stride, c.seed);
  // x0 is known, so y0 carries no information; datasets start at t = stride
  sim.obs.erase(0);
  ensure_dir(c.out);
  csv::write_dataset(fs::path(c.out) / "data.csv", sim.obs);
  csv::write_path(fs::path(c.out) / "latent_truth.csv", sim.path);
  return {{"model", m.name},
          {"grid_rows", m.steps + 1},
          {"observations", static_cast<Index>(sim.obs.observed_indices().size())},
          {"theta", detail::to_vector(theta)},
          {"seed", c.seed}};
}

struct FitResult {
  train::VariationalPosterior vp;
  train::TrainReport report;
  json summary;
};

inline FitResult fit(const RunConfig& c, const train::ProgressFn& progress = nullptr) {
  auto [m, obs] = load_problem(c);
  train::TrainConfig tc = c.train;
  tc.seed = c.seed;
  try {
    tc.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  FitResult r{train::make_posterior(m, obs, tc), {}, {}};
  r.report = train::train(r.vp, obs, progress);

  const fs::path out(c.out);
  ensure_dir(out);
  flows::save_weights(r.vp.store, out / "weights.bin", out / "weights.json");

  const Index d = m.param_dim();
  const auto th = train::sample_theta(r.vp, c.theta_draws, c.seed + 1);
  {
    std::vector<std::string> header{"draw"};
    for (Index j = 0; j < d; ++j) header.push_back("theta" + std::to_string(j + 1));
    for (Index j = 0; j < d; ++j) header.push_back("vartheta" + std::to_string(j + 1));
    header.push_back("log_q");
    csv::Writer w(out / "theta_samples.csv", header);
    for (Index r2 = 0; r2 < th.theta.rows(); ++r2) {
      std::vector<double> row{static_cast<double>(r2)};
      for (Index j = 0; j < d; ++j) row.push_back(th.theta(r2, j));
      for (Index j = 0; j < d; ++j) row.push_back(th.vartheta(r2, j));
      row.push_back(th.log_q_theta[r2]);
      w.row(row);
    }
  }
  const auto ps = train::posterior_sample(r.vp, c.path_draws, c.seed + 2);
  {
    std::vector<std::string> header{"draw", "time"};
    for (Index j = 0; j < m.state_dim; ++j) header.push_back("x" + std::to_string(j + 1));
    csv::Writer w(out / "path_samples.csv", header);
    for (std::size_t l = 0; l < ps.paths.size(); ++l)
      for (Index i = 0; i < ps.paths[l].rows(); ++i) {
        std::vector<double> row{static_cast<double>(l), static_cast<double>(i) * m.dt};
        for (Index j = 0; j < m.state_dim; ++j) row.push_back(ps.paths[l](i, j));
        w.row(row);
      }
  }

  const auto marg = marginals(th.vartheta);
  const double slope = r.report.trace.size() >= 2 ? train::convergence_slope(r.report.trace) : 0.0;
  json report{{"config", to_json(c)},
              {"model", m.name},
              {"train", train::to_json(r.report)},
              {"final_elbo", r.report.trace.empty() ? json(nullptr) : json(r.report.trace.back())},
              {"convergence_slope", slope},
              {"vartheta_marginals", summary_json(m.param_names, marg)},
              {"weights", {{"binary", "weights.bin"}, {"manifest", "weights.json"}}}};
  const std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  report["metadata"] = {{"timestamp", stamp}, {"seconds", r.report.seconds}};
  write_json(out / "report.json", report);
  r.summary = {{"iterations", r.report.iterations},
               {"final_elbo", report["final_elbo"]},
               {"stopped_early", r.report.stopped_early},
               {"clipped_steps", r.report.clipped}};
  return r;
}

inline json cmd_fit(const RunConfig& c, const train::ProgressFn& progress = nullptr) { return fit(c, progress).summary; }

struct OracleResult {
  oracle::MHChain chain;
  MatrixXd theta;  // natural scale, one row per draw
  json summary;
};

inline OracleResult run_oracle(const RunConfig& c) {
  auto [m, obs] = load_problem(c);
  if (!models::is_ou(m)) throw ConfigError("the exact oracle supports the OU model only");
  oracle::RwmhOptions opt;
  opt.iterations = c.oracle.iterations;
  opt.burn_in = c.oracle.burn_in;
  opt.seed = c.seed;
  OracleResult r;
  r.chain = oracle::rwmh_posterior(m, obs, opt);
  const Index d = m.param_dim();
  r.theta.resize(r.chain.samples.rows(), d);
  for (Index i = 0; i < r.theta.rows(); ++i)
    r.theta.row(i) = models::natural_params(m, VectorXd(r.chain.samples.row(i).transpose())).transpose();

  const fs::path out(c.out);
  ensure_dir(out);
  {
    std::vector<std::string> header{"iter"};
    for (Index j = 0; j < d; ++j) header.push_back("theta" + std::to_string(j + 1));
    csv::Writer w(out / "chain.csv", header);
    for (Index i = 0; i < r.theta.rows(); ++i) {
      std::vector<double> row{static_cast<double>(i + opt.burn_in)};
      for (Index j = 0; j < d; ++j) row.push_back(r.theta(i, j));
      w.row(row);
    }
  }
  r.summary = {{"theta", summary_json(m.param_names, marginals(r.theta))},
               {"vartheta", summary_json(m.param_names, marginals(r.chain.samples))},
               {"acceptance_rate", r.chain.acceptance_rate()},
               {"accepted", r.chain.accepted},
               {"proposals", r.chain.proposals},
               {"proposal_scale", detail::to_vector(r.chain.scale)},
               {"seed", r.chain.seed},
               {"burn_in", opt.burn_in},
               {"draws", r.theta.rows()}};
  write_json(out / "oracle_summary.json", r.summary);
  return r;
}

inline json cmd_oracle(const RunConfig& c) { return run_oracle(c).summary; }

// Reads `fit_dir/theta_samples.csv` and `oracle_dir/chain.csv` and compares
// them per parameter on the unconstrained scale.
inline json cmd_compare(const RunConfig& c) {
  if (c.fit_dir.empty() || c.oracle_dir.empty()) throw ConfigError("compare needs fit_dir and oracle_dir");
  const models::ModelSpec m = resolve_model(c);
  const csv::Table fit_t = csv::read(fs::path(c.fit_dir) / "theta_samples.csv");
  const csv::Table mh_t = csv::read(fs::path(c.oracle_dir) / "chain.csv");
  auto count_prefix = [](const csv::Table& t, const std::string& prefix) {
    Index n = 0;
    while (t.column(prefix + std::to_string(n + 1)) >= 0) ++n;
    return n;
  };
  const Index d_fit = count_prefix(fit_t, "vartheta");
  const Index d_mh = count_prefix(mh_t, "theta");
  if (d_fit != d_mh) throw ConfigError("parameter dimension mismatch: fit has " + std::to_string(d_fit) +
                                       ", oracle has " + std::to_string(d_mh));
  if (d_fit != m.param_dim()) throw ConfigError("sample dimension does not match the configured model");
  const Index d = d_fit;
  MatrixXd vi(static_cast<Index>(fit_t.rows.size()), d), mh(static_cast<Index>(mh_t.rows.size()), d);
  for (Index j = 0; j < d; ++j) {
    const Index cf = fit_t.column("vartheta" + std::to_string(j + 1));
    const Index cm = mh_t.column("theta" + std::to_string(j + 1));
    for (Index r = 0; r < vi.rows(); ++r) vi(r, j) = fit_t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(cf)];
    for (Index r = 0; r < mh.rows(); ++r) mh(r, j) = mh_t.rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(cm)];
  }
  for (Index r = 0; r < mh.rows(); ++r)
    mh.row(r) = models::unconstrained_params(m, VectorXd(mh.row(r).transpose())).transpose();

  const auto cmp = compare_samples(vi, mh, m.param_names);
  const fs::path out(c.out);
  ensure_dir(out);
  json params = json::array();
  csv::Writer w(out / "marginals.csv", {"param", "bin_lo", "bin_hi", "vi_count", "mh_count"});
  for (Index j = 0; j < d; ++j) {
    const auto& pc = cmp[static_cast<std::size_t>(j)];
    params.push_back({{"name", pc.name},
                      {"vi_mean", pc.vi.mean},
                      {"vi_sd", pc.vi.sd},
                      {"mh_mean", pc.mh.mean},
                      {"mh_sd", pc.mh.sd},
                      {"standardised_gap", pc.gap},
                      {"sd_ratio", pc.sd_ratio}});
    const Histogram h = histogram(vi.col(j), mh.col(j), c.bins);
    for (std::size_t b = 0; b < h.vi.size(); ++b)
      w.row({static_cast<double>(j + 1), h.edges[b], h.edges[b + 1], static_cast<double>(h.vi[b]),
             static_cast<double>(h.mh[b])});
  }
  json result{{"scale", "vartheta"},
              {"params", params},
              {"vi_draws", vi.rows()},
              {"mh_draws", mh.rows()}};
  write_json(out / "comparison.json", result);
  return result;
}

}  // namespace ssmflow::cli
