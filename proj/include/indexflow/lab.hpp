#pragma once

// Experiment harness: TOML scenario configs, execution of the idealized,
// planted and empirical modes, dimension sweeps with hitting-time scaling
// fits, exponential-rate fits, and CSV/JSON artifact emission. All outputs
// are deterministic given the config and seed; files are written to a
// temporary name and renamed so failures never leave partial artifacts.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "indexflow/detail/toml.hpp"
#include "indexflow/empirical.hpp"
#include "indexflow/flow.hpp"
#include "indexflow/hermite.hpp"
#include "indexflow/rng.hpp"
#include "indexflow/spectral_loss.hpp"

namespace indexflow::lab {

using hermite::HermiteExpansion;
using loss::TargetSpec;
using nlohmann::json;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SweepError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Exit codes shared by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitDiverged = 2;
inline constexpr int kExitIo = 3;

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  try {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
      out << content;
      if (!out) throw IoError("write failed for '" + tmp.string() + "'");
    }
    fs::rename(tmp, target);
  } catch (const fs::filesystem_error& e) {
    throw IoError(std::string("filesystem error for '") + path + "': " + e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Rate fitting: least-squares slope of log|1 -/+ m_t| past from_time.
// ---------------------------------------------------------------------------

struct RateFit {
  double rate = 0.0;
  double r_squared = 0.0;
};

inline RateFit fit_rate(const flow::Trajectory& traj, const TargetSpec& target,
                        double from_time) {
  (void)target;
  if (traj.terminal_reason != flow::TerminalReason::converged)
    throw std::invalid_argument("fit_rate: trajectory did not converge");
  if (std::abs(std::abs(traj.terminal.m) - 1.0) > 1e-6)
    throw std::invalid_argument("fit_rate: terminal state is not at a pole");
  const double sign = traj.terminal.m >= 0.0 ? 1.0 : -1.0;

  std::vector<double> ts, logs;
  for (const auto& s : traj.samples) {
    if (s.t < from_time) continue;
    const double v = std::abs(1.0 - sign * s.m);
    if (v > 1e-15) {
      ts.push_back(s.t);
      logs.push_back(std::log(v));
    }
  }
  if (ts.size() < 10)
    throw std::invalid_argument("fit_rate: fewer than 10 usable samples beyond from_time");

  const double n = static_cast<double>(ts.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    sx += ts[i];
    sy += logs[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double dx = ts[i] - mx, dy = logs[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx <= 0.0) throw std::invalid_argument("fit_rate: degenerate time span");
  RateFit fit;
  fit.rate = -sxy / sxx;
  fit.r_squared = (syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
  return fit;
}

// ---------------------------------------------------------------------------
// Trajectory CSV: t,m,loss,a0..aK,u0..uK with 17 significant digits so that
// parsing reproduces the doubles bit-exactly.
// ---------------------------------------------------------------------------

inline void emit_csv(const flow::Trajectory& traj, const std::string& path) {
  if (traj.samples.empty()) throw std::invalid_argument("emit_csv: empty trajectory");
  const std::size_t K1 = traj.samples.front().a.size();
  std::ostringstream out;
  out << "t,m,loss";
  for (std::size_t k = 0; k < K1; ++k) out << ",a" << k;
  for (std::size_t k = 0; k < K1; ++k) out << ",u" << k;
  out << '\n';
  for (const auto& s : traj.samples) {
    out << detail::fmt17(s.t) << ',' << detail::fmt17(s.m) << ','
        << detail::fmt17(s.loss);
    for (double a : s.a) out << ',' << detail::fmt17(a);
    for (double u : s.u) out << ',' << detail::fmt17(u);
    out << '\n';
  }
  detail::atomic_write(path, out.str());
}

inline std::vector<flow::TrajectorySample> parse_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("parse_trajectory_csv: cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("parse_trajectory_csv: empty file");
  std::size_t columns = 1;
  for (char c : line) columns += (c == ',');
  if (columns < 5 || (columns - 3) % 2 != 0)
    throw IoError("parse_trajectory_csv: unexpected header layout");
  const std::size_t K1 = (columns - 3) / 2;
  std::vector<flow::TrajectorySample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> vals;
    vals.reserve(columns);
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) vals.push_back(std::strtod(field.c_str(), nullptr));
    if (vals.size() != columns) throw IoError("parse_trajectory_csv: bad row width");
    flow::TrajectorySample s;
    s.t = vals[0];
    s.m = vals[1];
    s.loss = vals[2];
    s.a.assign(vals.begin() + 3, vals.begin() + 3 + K1);
    s.u.assign(vals.begin() + 3 + K1, vals.end());
    samples.push_back(std::move(s));
  }
  return samples;
}

// ---------------------------------------------------------------------------
// Dimension sweep of the weak-recovery time tau_kappa.
// ---------------------------------------------------------------------------

struct SweepRow {
  int d = 0;
  int rep = 0;
  std::uint64_t seed = 0;
  double m0 = 0.0;
  bool censored = false;
  double tau = std::numeric_limits<double>::quiet_NaN();
  double terminal_m = 0.0;
  double terminal_l2_error = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;                  // sorted by (d, rep)
  std::vector<std::pair<int, double>> median_tau;  // per d, uncensored runs
  double exponent = 0.0;    // slope of log tau vs log d
  double half_width = 0.0;  // 1.96 * SE(slope)
  long censored_count = 0;
};

/// Runs reps trajectories per dimension with m0 pinned to 1/sqrt(d) (the
/// reduced dynamics see d only through m0) and fits the log-log slope of
/// the median hitting time of |m| = kappa. Repetition seeds are shared
/// across dimensions, so the d-independent initialization noise cancels
/// from the fit.
inline SweepResult sweep_tau(const TargetSpec& target, const std::vector<int>& d_list,
                             int reps, double kappa, double dt, double t_max,
                             std::uint64_t seed, int K = 16) {
  std::vector<int> ds(d_list);
  std::sort(ds.begin(), ds.end());
  ds.erase(std::unique(ds.begin(), ds.end()), ds.end());
  if (ds.size() < 3)
    throw std::invalid_argument("sweep_tau: need at least 3 distinct dimensions");
  if (ds.front() < 2) throw std::invalid_argument("sweep_tau: dimensions must be >= 2");
  if (reps < 1) throw std::invalid_argument("sweep_tau: need reps >= 1");
  if (!(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("sweep_tau: kappa must lie in (0, 1)");

  const long total = static_cast<long>(ds.size()) * reps;
  std::vector<SweepRow> rows(total);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long idx = 0; idx < total; ++idx) {
    const int di = static_cast<int>(idx / reps);
    const int rep = static_cast<int>(idx % reps);
    const int d = ds[di];
    flow::InitSpec init;
    init.d = d;
    init.K = K;
    init.seed = derive_seed(seed, static_cast<std::uint64_t>(rep));
    init.m0_override = 1.0 / std::sqrt(static_cast<double>(d));
    const flow::ReducedState state = flow::sample_init(init);

    flow::IntegrateOptions opt;
    opt.dt = dt;
    opt.t_max = t_max;
    opt.levels = {kappa};
    opt.record_stride = std::numeric_limits<long>::max() / 2;
    opt.dense_level = 2.0;  // terminal data only; no dense sampling
    const flow::Trajectory traj = flow::integrate_joint(state, target, opt);

    SweepRow row;
    row.d = d;
    row.rep = rep;
    row.seed = init.seed;
    row.m0 = state.m;
    const auto tau = flow::hitting_time(traj, kappa);
    row.censored = !tau.has_value();
    if (tau) row.tau = *tau;
    row.terminal_m = traj.terminal.m;
    row.terminal_l2_error = flow::effective_coeff_error(traj.terminal, target);
    rows[idx] = std::move(row);
  }

  SweepResult result;
  result.rows = std::move(rows);
  for (const auto& r : result.rows) result.censored_count += r.censored ? 1 : 0;
  if (2 * result.censored_count > total)
    throw SweepError("sweep_tau: more than half of the runs never crossed the level");

  std::vector<double> xs, ys;
  for (std::size_t di = 0; di < ds.size(); ++di) {
    std::vector<double> taus;
    for (int rep = 0; rep < reps; ++rep) {
      const auto& r = result.rows[di * reps + rep];
      if (!r.censored) taus.push_back(r.tau);
    }
    if (taus.empty())
      throw SweepError("sweep_tau: every run was censored at d = " + std::to_string(ds[di]));
    std::sort(taus.begin(), taus.end());
    const std::size_t n = taus.size();
    const double med = (n % 2 == 1) ? taus[n / 2] : 0.5 * (taus[n / 2 - 1] + taus[n / 2]);
    result.median_tau.emplace_back(ds[di], med);
    xs.push_back(std::log(static_cast<double>(ds[di])));
    ys.push_back(std::log(med));
  }

  const double n = static_cast<double>(xs.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  result.exponent = sxy / sxx;
  const double intercept = my - result.exponent * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (intercept + result.exponent * xs[i]);
    rss += r * r;
  }
  const double dof = std::max(1.0, n - 2.0);
  result.half_width = 1.96 * std::sqrt(rss / dof / sxx);
  return result;
}

// ---------------------------------------------------------------------------
// Scenario configuration.
// ---------------------------------------------------------------------------

struct ScenarioConfig {
  std::string name;
  std::string mode;
  std::uint64_t seed = 0;

  TargetSpec target;

  // init
  int d = 100;
  int K = 16;
  std::optional<double> m0;
  std::optional<std::vector<double>> a0;

  // integrate
  double dt = 1e-2;
  double t_max = 0.0;
  std::vector<double> levels{0.5};
  long record_stride = 1;
  double dense_level = 0.5;
  long dense_stride = 1;

  // train
  long n = 0;
  double lr = 5e-3;
  long steps = 20000;
  long record_every = 100;
  double mu = 0.0;
  double kernel_decay = 3.0;

  // sweep
  std::vector<int> d_values;
  int reps = 5;
  double kappa = 0.5;

  // output
  std::string csv_path;
  std::string summary_path;
};

namespace detail {

inline void check_known_keys(const toml::Table& t, const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : t.entries) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("config: unknown key '" + key + "'");
  }
}

}  // namespace detail

/// Parses and validates a scenario file for the given mode
/// (joint | planted | train | sweep). Throws ConfigError on any violation.
inline ScenarioConfig load_scenario(const std::string& path, const std::string& mode) {
  const toml::Table t = toml::parse_file(path);

  static const std::vector<std::string> allowed = {
      "schema", "name", "mode", "seed",
      "target.coeffs", "target.noise_var",
      "init.d", "init.K", "init.m0", "init.a0",
      "integrate.dt", "integrate.t_max", "integrate.levels",
      "integrate.record_stride", "integrate.dense_level", "integrate.dense_stride",
      "train.n", "train.lr", "train.steps", "train.record_every",
      "train.mu", "train.kernel_decay",
      "sweep.d_values", "sweep.reps", "sweep.kappa",
      "output.csv", "output.summary"};
  detail::check_known_keys(t, allowed);

  if (t.integer_or("schema", -1) != 1)
    throw ConfigError("config: schema = 1 is required");

  ScenarioConfig cfg;
  cfg.name = t.str("name");
  cfg.mode = mode;
  if (t.has("mode") && t.str("mode") != mode)
    throw ConfigError("config: mode '" + t.str("mode") + "' does not match subcommand '" + mode + "'");
  const long long seed = t.integer_or("seed", 0);
  if (seed < 0) throw ConfigError("config: seed must be nonnegative");
  cfg.seed = static_cast<std::uint64_t>(seed);

  if (!t.has("target.coeffs")) throw ConfigError("config: [target] coeffs is required");
  try {
    cfg.target = TargetSpec(HermiteExpansion(t.number_array("target.coeffs")),
                            t.number_or("target.noise_var", 0.0));
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: invalid target: ") + e.what());
  }

  cfg.d = static_cast<int>(t.integer_or("init.d", 100));
  cfg.K = static_cast<int>(t.integer_or("init.K", 16));
  if (cfg.d < 2) throw ConfigError("config: init.d must be >= 2");
  if (cfg.K < 1 || cfg.K > 64) throw ConfigError("config: init.K must lie in [1, 64]");
  if (t.has("init.m0")) {
    cfg.m0 = t.number("init.m0");
    if (!(std::abs(*cfg.m0) <= 1.0)) throw ConfigError("config: init.m0 must lie in [-1, 1]");
  }
  if (t.has("init.a0")) {
    cfg.a0 = t.number_array("init.a0");
    if (cfg.a0->size() != static_cast<std::size_t>(cfg.K) + 1)
      throw ConfigError("config: init.a0 must list K + 1 coefficients");
  }

  cfg.dt = t.number_or("integrate.dt", 1e-2);
  cfg.t_max = t.number_or("integrate.t_max", 0.0);
  if (t.has("integrate.levels")) cfg.levels = t.number_array("integrate.levels");
  for (double k : cfg.levels)
    if (!(k > 0.0 && k < 1.0)) throw ConfigError("config: hitting levels must lie in (0, 1)");
  cfg.record_stride = t.integer_or("integrate.record_stride", 1);
  cfg.dense_level = t.number_or("integrate.dense_level", 0.5);
  cfg.dense_stride = t.integer_or("integrate.dense_stride", 1);
  if (cfg.record_stride < 1 || cfg.dense_stride < 1)
    throw ConfigError("config: record strides must be >= 1");

  cfg.n = t.integer_or("train.n", 0);
  cfg.lr = t.number_or("train.lr", 5e-3);
  cfg.steps = t.integer_or("train.steps", 20000);
  cfg.record_every = t.integer_or("train.record_every", 100);
  cfg.mu = t.number_or("train.mu", 0.0);
  cfg.kernel_decay = t.number_or("train.kernel_decay", 3.0);

  if (t.has("sweep.d_values")) {
    for (double v : t.number_array("sweep.d_values")) {
      if (v < 2.0 || v != std::floor(v))
        throw ConfigError("config: sweep.d_values must be integers >= 2");
      cfg.d_values.push_back(static_cast<int>(v));
    }
  }
  cfg.reps = static_cast<int>(t.integer_or("sweep.reps", 5));
  cfg.kappa = t.number_or("sweep.kappa", 0.5);

  cfg.csv_path = t.str_or("output.csv", "");
  cfg.summary_path = t.str_or("output.summary", "");

  const bool needs_flow = (mode == "joint" || mode == "planted" || mode == "sweep");
  if (needs_flow) {
    if (!(cfg.dt > 0.0)) throw ConfigError("config: integrate.dt must be positive");
    if (!(cfg.t_max > cfg.dt))
      throw ConfigError("config: integrate.t_max must exceed integrate.dt");
  }
  if (mode == "train") {
    if (cfg.n < 1) throw ConfigError("config: train.n is required and must be >= 1");
    if (!(cfg.lr > 0.0)) throw ConfigError("config: train.lr must be positive");
    if (cfg.steps < 1) throw ConfigError("config: train.steps must be >= 1");
    if (cfg.record_every < 1) throw ConfigError("config: train.record_every must be >= 1");
    if (!(cfg.mu >= 0.0)) throw ConfigError("config: train.mu must be >= 0");
  }
  if (mode == "sweep") {
    std::vector<int> distinct(cfg.d_values);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (distinct.size() < 3)
      throw ConfigError("config: sweep.d_values needs >= 3 distinct dimensions");
    if (cfg.reps < 1) throw ConfigError("config: sweep.reps must be >= 1");
    if (!(cfg.kappa > 0.0 && cfg.kappa < 1.0))
      throw ConfigError("config: sweep.kappa must lie in (0, 1)");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Scenario execution.
// ---------------------------------------------------------------------------

struct RunResult {
  int exit_code = kExitOk;
  std::string message;
};

namespace detail {

inline std::optional<int> try_info_exponent(const TargetSpec& target) {
  try {
    return flow::info_exponent(target);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline json flow_summary(const ScenarioConfig& cfg, const flow::Trajectory& traj,
                         const TargetSpec& target) {
  json j;
  j["schema"] = 1;
  j["name"] = cfg.name;
  j["mode"] = cfg.mode;
  j["seed"] = cfg.seed;
  const auto s = try_info_exponent(target);
  if (s)
    j["s"] = *s;
  else
    j["s"] = nullptr;
  j["m0"] = traj.initial.m;
  j["d"] = cfg.d;
  j["K"] = traj.initial.a.degree();
  j["terminal"] = {
      {"t", traj.terminal.t},
      {"m", traj.terminal.m},
      {"reason", flow::to_string(traj.terminal_reason)},
      {"effective_coeff_error", flow::effective_coeff_error(traj.terminal, target)}};
  json hits = json::object();
  for (double level : cfg.levels) {
    const auto tau = flow::hitting_time(traj, level);
    if (tau)
      hits[json(level).dump()] = *tau;
    else
      hits[json(level).dump()] = nullptr;
  }
  j["hitting_times"] = hits;
  j["fitted_rate"] = nullptr;
  if (traj.terminal_reason == flow::TerminalReason::converged) {
    double from_time = 0.0;
    bool have_from = false;
    for (const auto& e : traj.events)
      if (!have_from || e.time > from_time) {
        from_time = e.time;
        have_from = true;
      }
    try {
      const RateFit fit = fit_rate(traj, target, from_time);
      j["fitted_rate"] = {{"rate", fit.rate},
                          {"r_squared", fit.r_squared},
                          {"from_time", from_time}};
    } catch (const std::exception&) {
    }
  }
  j["samples"] = traj.samples.size();
  return j;
}

inline RunResult run_flow_mode(const ScenarioConfig& cfg, bool planted) {
  flow::InitSpec init;
  init.d = cfg.d;
  init.K = cfg.K;
  init.seed = cfg.seed;
  init.m0_override = cfg.m0;
  init.a0_override = cfg.a0;

  flow::IntegrateOptions opt;
  opt.dt = cfg.dt;
  opt.t_max = cfg.t_max;
  opt.levels = cfg.levels;
  opt.record_stride = cfg.record_stride;
  opt.dense_level = cfg.dense_level;
  opt.dense_stride = cfg.dense_stride;

  flow::Trajectory traj;
  if (planted) {
    double m0;
    if (cfg.m0) {
      m0 = *cfg.m0;
    } else {
      flow::InitSpec sample = init;
      sample.a0_override.reset();
      m0 = flow::sample_init(sample).m;
    }
    traj = flow::integrate_planted(m0, cfg.target, opt);
  } else {
    traj = flow::integrate_joint(flow::sample_init(init), cfg.target, opt);
  }

  if (!cfg.csv_path.empty()) emit_csv(traj, cfg.csv_path);
  if (!cfg.summary_path.empty())
    atomic_write(cfg.summary_path, flow_summary(cfg, traj, cfg.target).dump(2) + "\n");

  if (traj.terminal_reason == flow::TerminalReason::diverged)
    return {kExitDiverged, "trajectory diverged at t = " + fmt17(traj.terminal.t)};
  return {kExitOk, ""};
}

// First |m| crossing of kappa along a training trace, in physical time
// lr * step, interpolated between records.
inline std::optional<double> trace_hitting_time(const std::vector<emp::TrainRecord>& recs,
                                                double kappa, double lr) {
  if (recs.empty()) return std::nullopt;
  if (std::abs(recs.front().m) >= kappa)
    return lr * static_cast<double>(recs.front().step);
  for (std::size_t i = 1; i < recs.size(); ++i) {
    const double prev = std::abs(recs[i - 1].m);
    const double cur = std::abs(recs[i].m);
    if (cur >= kappa) {
      const double t0 = lr * static_cast<double>(recs[i - 1].step);
      const double t1 = lr * static_cast<double>(recs[i].step);
      const double denom = cur - prev;
      const double frac = denom > 0.0 ? std::clamp((kappa - prev) / denom, 0.0, 1.0) : 1.0;
      return t0 + frac * (t1 - t0);
    }
  }
  return std::nullopt;
}

inline void emit_train_csv(const emp::TrainTrace& trace, const TargetSpec& target,
                           double lr, const std::string& path) {
  if (trace.records.empty()) throw std::invalid_argument("emit_train_csv: empty trace");
  const std::size_t K1 = trace.records.front().a.size();
  std::ostringstream out;
  out << "t,m,loss";
  for (std::size_t k = 0; k < K1; ++k) out << ",a" << k;
  for (std::size_t k = 0; k < K1; ++k) out << ",u" << k;
  out << '\n';
  for (const auto& r : trace.records) {
    out << fmt17(lr * static_cast<double>(r.step)) << ',' << fmt17(r.m) << ','
        << fmt17(r.loss);
    for (double a : r.a) out << ',' << fmt17(a);
    double pw = 1.0;
    for (std::size_t k = 0; k < K1; ++k) {
      out << ',' << fmt17(r.a[k] - target.a_star.coeff(k) * pw);
      pw *= r.m;
    }
    out << '\n';
  }
  atomic_write(path, out.str());
}

inline RunResult run_train_mode(const ScenarioConfig& cfg) {
  const emp::Dataset data =
      emp::generate_dataset(cfg.n, cfg.d, cfg.target, derive_seed(cfg.seed, 0));

  Rng rng(derive_seed(cfg.seed, 1));
  Eigen::VectorXd w(cfg.d);
  if (cfg.m0) {
    // Pin the initial correlation: w = m0 w* + sqrt(1 - m0^2) v, v _|_ w*.
    Eigen::VectorXd g(cfg.d);
    for (int j = 0; j < cfg.d; ++j) g[j] = rng.normal();
    Eigen::VectorXd v = g - data.w_star.dot(g) * data.w_star;
    v.normalize();
    w = *cfg.m0 * data.w_star + std::sqrt(1.0 - *cfg.m0 * *cfg.m0) * v;
    w.normalize();
  } else {
    for (int j = 0; j < cfg.d; ++j) w[j] = rng.normal();
    w.normalize();
  }
  std::vector<double> a;
  if (cfg.a0) {
    a = *cfg.a0;
  } else {
    a.resize(cfg.K + 1);
    a[0] = rng.uniform_sym();
    for (int k = 1; k <= cfg.K; ++k) a[k] = rng.uniform_sym() / static_cast<double>(k * k);
  }
  emp::TrainState init{std::move(w), HermiteExpansion(std::move(a)), 0};

  const emp::KernelSpec spec = emp::KernelSpec::power_decay(cfg.K, cfg.mu, cfg.kernel_decay);
  const emp::TrainTrace trace =
      emp::train_joint(data, spec, cfg.lr, cfg.steps, std::move(init), cfg.record_every);

  if (!cfg.csv_path.empty()) emit_train_csv(trace, cfg.target, cfg.lr, cfg.csv_path);

  if (!cfg.summary_path.empty()) {
    const auto& fin = trace.final_state;
    json j;
    j["schema"] = 1;
    j["name"] = cfg.name;
    j["mode"] = cfg.mode;
    j["seed"] = cfg.seed;
    const auto s = try_info_exponent(cfg.target);
    if (s)
      j["s"] = *s;
    else
      j["s"] = nullptr;
    j["m0"] = trace.records.front().m;
    j["n"] = cfg.n;
    j["d"] = cfg.d;
    j["K"] = cfg.K;
    j["lr"] = cfg.lr;
    j["steps"] = cfg.steps;
    const double final_m = fin.w.dot(data.w_star);
    flow::ReducedState fstate{final_m, fin.a, cfg.lr * static_cast<double>(fin.step_count)};
    j["terminal"] = {{"m", final_m},
                     {"loss", trace.records.back().loss},
                     {"status", trace.status == emp::TrainStatus::completed ? "completed" : "diverged"},
                     {"effective_coeff_error", flow::effective_coeff_error(fstate, cfg.target)}};
    json hits = json::object();
    for (double level : cfg.levels) {
      const auto tau = trace_hitting_time(trace.records, level, cfg.lr);
      if (tau)
        hits[json(level).dump()] = *tau;
      else
        hits[json(level).dump()] = nullptr;
    }
    j["hitting_times"] = hits;
    j["fitted_rate"] = nullptr;
    atomic_write(cfg.summary_path, j.dump(2) + "\n");
  }

  if (trace.status == emp::TrainStatus::diverged)
    return {kExitDiverged, "training diverged (loss exceeded 1e6x its initial value)"};
  return {kExitOk, ""};
}

inline RunResult run_sweep_mode(const ScenarioConfig& cfg) {
  const SweepResult res = sweep_tau(cfg.target, cfg.d_values, cfg.reps, cfg.kappa,
                                    cfg.dt, cfg.t_max, cfg.seed, cfg.K);
  if (!cfg.csv_path.empty()) {
    std::ostringstream out;
    out << "d,rep,seed,m0,tau,censored,terminal_m,terminal_l2_error\n";
    for (const auto& r : res.rows) {
      out << r.d << ',' << r.rep << ',' << r.seed << ',' << fmt17(r.m0) << ','
          << fmt17(r.tau) << ',' << (r.censored ? 1 : 0) << ','
          << fmt17(r.terminal_m) << ',' << fmt17(r.terminal_l2_error) << '\n';
    }
    atomic_write(cfg.csv_path, out.str());
  }
  if (!cfg.summary_path.empty()) {
    json j;
    j["schema"] = 1;
    j["name"] = cfg.name;
    j["mode"] = cfg.mode;
    j["seed"] = cfg.seed;
    const auto s = try_info_exponent(cfg.target);
    if (s)
      j["s"] = *s;
    else
      j["s"] = nullptr;
    j["kappa"] = cfg.kappa;
    j["reps"] = cfg.reps;
    j["exponent"] = res.exponent;
    j["half_width"] = res.half_width;
    j["censored"] = res.censored_count;
    json med = json::object();
    for (const auto& [d, tau] : res.median_tau) med[std::to_string(d)] = tau;
    j["median_tau"] = med;
    j["runs"] = res.rows.size();
    atomic_write(cfg.summary_path, j.dump(2) + "\n");
  }
  return {kExitOk, ""};
}

}  // namespace detail

/// Loads, validates and executes one scenario file. Exit codes: 0 ok,
/// 1 config error, 2 numerical divergence, 3 I/O failure. Config errors are
/// raised before any output file is touched.
inline RunResult run_scenario(const std::string& path, const std::string& mode) {
  ScenarioConfig cfg;
  try {
    cfg = load_scenario(path, mode);
  } catch (const ConfigError& e) {
    return {kExitConfig, e.what()};
  }
  try {
    if (mode == "joint") return detail::run_flow_mode(cfg, false);
    if (mode == "planted") return detail::run_flow_mode(cfg, true);
    if (mode == "train") return detail::run_train_mode(cfg);
    if (mode == "sweep") return detail::run_sweep_mode(cfg);
    return {kExitConfig, "unknown mode '" + mode + "'"};
  } catch (const IoError& e) {
    return {kExitIo, e.what()};
  } catch (const SweepError& e) {
    return {kExitDiverged, e.what()};
  } catch (const ConfigError& e) {
    return {kExitConfig, e.what()};
  } catch (const std::exception& e) {
    return {kExitConfig, e.what()};
  }
}

}  // namespace indexflow::lab
