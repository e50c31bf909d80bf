#pragma once

// Finite-sample side of the model: Gaussian dataset generation, the
// truncated Hermite RKHS with kernel K(x, y) = sum_k c_k h_k(x) h_k(y) and
// norm ||f||_H^2 = sum_k a_k^2 / c_k, and joint projected gradient descent
// over (w, a) on the empirical risk
//
//   L_n(w, a) = 1/(2n) sum_i ( f_a(<w, x_i>) - y_i )^2 + mu/2 ||f_a||_H^2.
//
// Gradients accumulate over fixed-size row chunks that are reduced in chunk
// order, so results are bit-stable no matter how many workers run the
// chunks.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "indexflow/hermite.hpp"
#include "indexflow/rng.hpp"
#include "indexflow/spectral_loss.hpp"

namespace indexflow::emp {

using hermite::HermiteExpansion;
using loss::TargetSpec;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Positive feature weights c_0..c_K of the truncated RKHS plus the ridge
/// strength mu.
struct KernelSpec {
  std::vector<double> c;
  double mu = 0.0;

  KernelSpec(std::vector<double> weights, double ridge)
      : c(std::move(weights)), mu(ridge) {
    if (c.empty()) throw std::invalid_argument("KernelSpec: empty weight list");
    for (double ck : c)
      if (!(ck > 0.0) || !std::isfinite(ck))
        throw std::invalid_argument("KernelSpec: weights must be positive and finite");
    if (!(mu >= 0.0) || !std::isfinite(mu))
      throw std::invalid_argument("KernelSpec: ridge strength must be >= 0");
  }

  /// Default decay c_k = (1 + k)^{-decay}; decay > 2 keeps sum k c_k finite.
  static KernelSpec power_decay(int K, double mu = 0.0, double decay = 3.0) {
    std::vector<double> c(K + 1);
    for (int k = 0; k <= K; ++k) c[k] = std::pow(1.0 + k, -decay);
    return KernelSpec(std::move(c), mu);
  }

  int degree() const { return static_cast<int>(c.size()) - 1; }
};

struct Dataset {
  RowMatrixXd inputs;      // n x d
  Eigen::VectorXd labels;  // n
  Eigen::VectorXd w_star;  // unit d-vector
  TargetSpec target;
  std::uint64_t seed = 0;

  long n() const { return inputs.rows(); }
  int d() const { return static_cast<int>(inputs.cols()); }
};

struct TrainState {
  Eigen::VectorXd w;
  HermiteExpansion a;
  long step_count = 0;
};

/// Draws w* uniformly on the sphere, x_i ~ N(0, I_d), eps_i ~ N(0, nv) and
/// labels y_i = phi*(<w*, x_i>) + eps_i.
inline Dataset generate_dataset(long n, int d, const TargetSpec& target,
                                std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("generate_dataset: need n >= 1");
  if (d < 2) throw std::invalid_argument("generate_dataset: need d >= 2");
  Rng rng(seed);
  Dataset data;
  data.target = target;
  data.seed = seed;
  data.w_star.resize(d);
  for (int j = 0; j < d; ++j) data.w_star[j] = rng.normal();
  data.w_star.normalize();
  data.inputs.resize(n, d);
  data.labels.resize(n);
  const double noise_sd = std::sqrt(target.noise_var);
  for (long i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) data.inputs(i, j) = rng.normal();
    Eigen::Map<const Eigen::VectorXd> x(&data.inputs(i, 0), d);
    double y = hermite::eval_expansion(target.a_star, x.dot(data.w_star));
    if (target.noise_var > 0.0) y += noise_sd * rng.normal();
    data.labels[i] = y;
  }
  return data;
}

/// K(x, y) = sum_{k<=K} c_k h_k(x) h_k(y).
inline double kernel_eval(const KernelSpec& spec, double x, double y) {
  const int K = spec.degree();
  std::vector<double> hx(K + 1), hy(K + 1);
  hermite::eval_basis_all(K, x, hx.data());
  hermite::eval_basis_all(K, y, hy.data());
  double s = 0.0;
  for (int k = 0; k <= K; ++k) s += spec.c[k] * hx[k] * hy[k];
  return s;
}

/// Truncated feature map phi_k(z) = sqrt(c_k) h_k(z).
inline std::vector<double> feature_map(const KernelSpec& spec, double z) {
  const int K = spec.degree();
  std::vector<double> h(K + 1);
  hermite::eval_basis_all(K, z, h.data());
  for (int k = 0; k <= K; ++k) h[k] = std::sqrt(spec.c[k]) * h[k];
  return h;
}

/// ||f||_H^2 = sum_k a_k^2 / c_k for f given in basis coordinates.
inline double rkhs_norm_sq(const HermiteExpansion& f, const KernelSpec& spec) {
  if (f.coeffs.size() != spec.c.size())
    throw std::invalid_argument("rkhs_norm_sq: coefficient/weight length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < spec.c.size(); ++k)
    s += f.coeffs[k] * f.coeffs[k] / spec.c[k];
  return s;
}

namespace detail {

struct PassResult {
  double sq_sum = 0.0;             // sum_i r_i^2
  std::vector<double> ga;          // sum_i r_i h_k(z_i)
  Eigen::VectorXd raw_w;           // sum_i r_i f'(z_i) x_i
};

// One fused pass over the rows: residuals, squared-error sum, and both raw
// gradient accumulators. Chunks are independent and reduced in fixed order.
// The basis recurrence runs on precomputed sqrt tables; per-row sqrt calls
// would dominate the whole pass.
inline PassResult fused_pass(const TrainState& state, const Dataset& data) {
  const long n = data.n();
  const int dim = data.d();
  const int K = state.a.degree();
  const auto& a = state.a.coeffs;

  constexpr long kChunk = 8192;
  const long nchunks = (n + kChunk - 1) / kChunk;

  std::vector<double> sqrtk(K + 2), inv_sqrtk(K + 2);
  for (int k = 0; k <= K + 1; ++k) {
    sqrtk[k] = std::sqrt(static_cast<double>(k));
    inv_sqrtk[k] = k > 0 ? 1.0 / sqrtk[k] : 0.0;
  }

  struct Partial {
    double sq = 0.0;
    std::vector<double> ga;
    Eigen::VectorXd rw;
  };
  std::vector<Partial> partials(nchunks);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long c = 0; c < nchunks; ++c) {
    Partial& p = partials[c];
    p.ga.assign(K + 1, 0.0);
    p.rw = Eigen::VectorXd::Zero(dim);
    std::vector<double> h(K + 1);
    const long lo = c * kChunk;
    const long hi = std::min(n, lo + kChunk);
    for (long i = lo; i < hi; ++i) {
      Eigen::Map<const Eigen::VectorXd> x(&data.inputs(i, 0), dim);
      const double z = x.dot(state.w);
      h[0] = 1.0;
      double f = a[0], fp = 0.0;
      if (K >= 1) {
        h[1] = z;
        f += a[1] * z;
        fp += a[1];  // sqrt(1) h_0
        for (int k = 1; k < K; ++k) {
          h[k + 1] = (z * h[k] - sqrtk[k] * h[k - 1]) * inv_sqrtk[k + 1];
          f += a[k + 1] * h[k + 1];
          fp += a[k + 1] * sqrtk[k + 1] * h[k];
        }
      }
      const double r = f - data.labels[i];
      p.sq += r * r;
      for (int k = 0; k <= K; ++k) p.ga[k] += r * h[k];
      p.rw.noalias() += (r * fp) * x;
    }
  }

  PassResult out;
  out.ga.assign(K + 1, 0.0);
  out.raw_w = Eigen::VectorXd::Zero(dim);
  for (long c = 0; c < nchunks; ++c) {
    out.sq_sum += partials[c].sq;
    for (int k = 0; k <= K; ++k) out.ga[k] += partials[c].ga[k];
    out.raw_w += partials[c].rw;
  }
  return out;
}

inline void check_dims(const TrainState& state, const Dataset& data,
                       const KernelSpec& spec, const char* who) {
  if (state.w.size() != data.inputs.cols())
    throw std::invalid_argument(std::string(who) + ": direction/input dimension mismatch");
  if (state.a.coeffs.size() != spec.c.size())
    throw std::invalid_argument(std::string(who) + ": coefficient/kernel length mismatch");
}

}  // namespace detail

inline double empirical_loss(const TrainState& state, const Dataset& data,
                             const KernelSpec& spec) {
  detail::check_dims(state, data, spec, "empirical_loss");
  const auto pass = detail::fused_pass(state, data);
  return pass.sq_sum / (2.0 * static_cast<double>(data.n())) +
         (spec.mu > 0.0 ? 0.5 * spec.mu * rkhs_norm_sq(state.a, spec) : 0.0);
}

struct Gradients {
  std::vector<double> grad_a;
  Eigen::VectorXd grad_w;  // tangential: <grad_w, w> = 0
  double loss = 0.0;
};

/// grad_a_k = (1/n) sum_i r_i h_k(z_i) + mu a_k / c_k;
/// grad_w   = projection of (1/n) sum_i r_i f'(z_i) x_i onto the tangent
/// space at w.
inline Gradients empirical_grads(const TrainState& state, const Dataset& data,
                                 const KernelSpec& spec) {
  detail::check_dims(state, data, spec, "empirical_grads");
  const double n = static_cast<double>(data.n());
  auto pass = detail::fused_pass(state, data);
  Gradients g;
  g.grad_a.resize(pass.ga.size());
  for (std::size_t k = 0; k < pass.ga.size(); ++k) {
    g.grad_a[k] = pass.ga[k] / n;
    if (spec.mu > 0.0) g.grad_a[k] += spec.mu * state.a.coeffs[k] / spec.c[k];
  }
  Eigen::VectorXd raw = pass.raw_w / n;
  g.grad_w = raw - state.w.dot(raw) * state.w;
  g.loss = pass.sq_sum / (2.0 * n) +
           (spec.mu > 0.0 ? 0.5 * spec.mu * rkhs_norm_sq(state.a, spec) : 0.0);
  return g;
}

struct TrainRecord {
  long step = 0;
  double m = 0.0;  // <w, w*>
  double loss = 0.0;
  std::vector<double> a;
};

enum class TrainStatus { completed, diverged };

struct TrainTrace {
  std::vector<TrainRecord> records;
  TrainState final_state;
  TrainStatus status = TrainStatus::completed;
  double initial_loss = 0.0;
  double max_norm_drift = 0.0;  // worst | ||w|| - 1 | seen after an update
};

/// Full-batch descent: a <- a - lr grad_a, w <- normalize(w - lr grad_w).
/// Records (step, m, loss, a) every `record_every` steps plus step 0 and the
/// final step; aborts with diverged status when the loss exceeds 1e6x its
/// initial value.
inline TrainTrace train_joint(const Dataset& data, const KernelSpec& spec,
                              double lr, long steps, TrainState init,
                              long record_every) {
  if (!(lr > 0.0)) throw std::invalid_argument("train_joint: lr must be positive");
  if (steps < 1) throw std::invalid_argument("train_joint: need steps >= 1");
  if (record_every < 1) throw std::invalid_argument("train_joint: record_every must be >= 1");
  detail::check_dims(init, data, spec, "train_joint");
  if (std::abs(init.w.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("train_joint: initial direction must be unit norm");

  TrainTrace trace;
  TrainState state = std::move(init);
  const int K = state.a.degree();

  for (long it = 0;; ++it) {
    const Gradients g = empirical_grads(state, data, spec);
    if (it == 0) trace.initial_loss = g.loss;
    if (it % record_every == 0 || it == steps) {
      TrainRecord rec;
      rec.step = it;
      rec.m = state.w.dot(data.w_star);
      rec.loss = g.loss;
      rec.a = state.a.coeffs;
      trace.records.push_back(std::move(rec));
    }
    // The 1e-12 floor keeps runs started at (or driven to) zero loss from
    // tripping the gate on round-off noise.
    if (!std::isfinite(g.loss) || g.loss > 1e6 * trace.initial_loss + 1e-12) {
      trace.status = TrainStatus::diverged;
      break;
    }
    if (it == steps) break;

    std::vector<double> a = state.a.coeffs;
    for (int k = 0; k <= K; ++k) a[k] -= lr * g.grad_a[k];
    state.a = HermiteExpansion(std::move(a));
    state.w -= lr * g.grad_w;
    state.w.normalize();
    state.step_count = it + 1;
    trace.max_norm_drift =
        std::max(trace.max_norm_drift, std::abs(state.w.norm() - 1.0));
  }

  trace.final_state = std::move(state);
  return trace;
}

inline double predict(const TrainState& state, const Eigen::VectorXd& x) {
  if (x.size() != state.w.size())
    throw std::invalid_argument("predict: input dimension mismatch");
  return hermite::eval_expansion(state.a, state.w.dot(x));
}

// ---------------------------------------------------------------------------
// Dataset import/export. Binary layout (little-endian):
//   magic "IXFD", u32 version, u64 n, u64 d, f64 noise_var,
//   row-major f64 inputs, f64 labels, f64 w_star.
// The link coefficients are not part of the format; loaded datasets carry
// only the noise variance of the original target.
// ---------------------------------------------------------------------------

static_assert(std::endian::native == std::endian::little,
              "dataset files are little-endian; big-endian hosts unsupported");

inline void save_dataset_binary(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset_binary: cannot open " + path);
  const char magic[4] = {'I', 'X', 'F', 'D'};
  const std::uint32_t version = 1;
  const std::uint64_t n = static_cast<std::uint64_t>(data.n());
  const std::uint64_t d = static_cast<std::uint64_t>(data.d());
  const double nv = data.target.noise_var;
  out.write(magic, 4);
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(&d), sizeof d);
  out.write(reinterpret_cast<const char*>(&nv), sizeof nv);
  out.write(reinterpret_cast<const char*>(data.inputs.data()),
            static_cast<std::streamsize>(sizeof(double) * n * d));
  out.write(reinterpret_cast<const char*>(data.labels.data()),
            static_cast<std::streamsize>(sizeof(double) * n));
  out.write(reinterpret_cast<const char*>(data.w_star.data()),
            static_cast<std::streamsize>(sizeof(double) * d));
  if (!out) throw std::runtime_error("save_dataset_binary: write failed for " + path);
}

inline Dataset load_dataset_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_dataset_binary: cannot open " + path);
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t n = 0, d = 0;
  double nv = 0.0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  in.read(reinterpret_cast<char*>(&d), sizeof d);
  in.read(reinterpret_cast<char*>(&nv), sizeof nv);
  if (!in || std::memcmp(magic, "IXFD", 4) != 0)
    throw std::runtime_error("load_dataset_binary: bad magic in " + path);
  if (version != 1)
    throw std::runtime_error("load_dataset_binary: unsupported version in " + path);
  Dataset data;
  data.target = TargetSpec(HermiteExpansion(std::vector<double>{0.0}), nv);
  data.inputs.resize(static_cast<long>(n), static_cast<long>(d));
  data.labels.resize(static_cast<long>(n));
  data.w_star.resize(static_cast<long>(d));
  in.read(reinterpret_cast<char*>(data.inputs.data()),
          static_cast<std::streamsize>(sizeof(double) * n * d));
  in.read(reinterpret_cast<char*>(data.labels.data()),
          static_cast<std::streamsize>(sizeof(double) * n));
  in.read(reinterpret_cast<char*>(data.w_star.data()),
          static_cast<std::streamsize>(sizeof(double) * d));
  if (!in) throw std::runtime_error("load_dataset_binary: truncated file " + path);
  return data;
}

namespace detail {

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// CSV alternative for small datasets:
///   line 1: IXFD,1,<n>,<d>,<noise_var>
///   line 2: w_star,<d values>
///   then n rows of d input values followed by the label.
inline void save_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_dataset_csv: cannot open " + path);
  out << "IXFD,1," << data.n() << ',' << data.d() << ','
      << detail::fmt17(data.target.noise_var) << '\n';
  out << "w_star";
  for (int j = 0; j < data.d(); ++j) out << ',' << detail::fmt17(data.w_star[j]);
  out << '\n';
  for (long i = 0; i < data.n(); ++i) {
    for (int j = 0; j < data.d(); ++j) {
      if (j) out << ',';
      out << detail::fmt17(data.inputs(i, j));
    }
    out << ',' << detail::fmt17(data.labels[i]) << '\n';
  }
  if (!out) throw std::runtime_error("save_dataset_csv: write failed for " + path);
}

inline Dataset load_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset_csv: cannot open " + path);
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::stringstream ss(line);
    while (std::getline(ss, cur, ',')) fields.push_back(cur);
    return fields;
  };
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset_csv: empty file " + path);
  auto head = split(line);
  if (head.size() != 5 || head[0] != "IXFD" || head[1] != "1")
    throw std::runtime_error("load_dataset_csv: bad header in " + path);
  const long n = std::stol(head[2]);
  const long d = std::stol(head[3]);
  const double nv = std::stod(head[4]);
  if (n < 1 || d < 2) throw std::runtime_error("load_dataset_csv: bad dimensions in " + path);
  if (!std::getline(in, line)) throw std::runtime_error("load_dataset_csv: missing w_star row");
  auto wrow = split(line);
  if (wrow.size() != static_cast<std::size_t>(d + 1) || wrow[0] != "w_star")
    throw std::runtime_error("load_dataset_csv: bad w_star row in " + path);
  Dataset data;
  data.target = TargetSpec(HermiteExpansion(std::vector<double>{0.0}), nv);
  data.w_star.resize(d);
  for (long j = 0; j < d; ++j) data.w_star[j] = std::stod(wrow[j + 1]);
  data.inputs.resize(n, d);
  data.labels.resize(n);
  for (long i = 0; i < n; ++i) {
    if (!std::getline(in, line))
      throw std::runtime_error("load_dataset_csv: truncated file " + path);
    auto row = split(line);
    if (row.size() != static_cast<std::size_t>(d + 1))
      throw std::runtime_error("load_dataset_csv: bad row width in " + path);
    for (long j = 0; j < d; ++j) data.inputs(i, j) = std::stod(row[j]);
    data.labels[i] = std::stod(row[d]);
  }
  return data;
}

}  // namespace indexflow::emp
