#pragma once

// Population loss of the Gaussian teacher-student model
//
//   Y = phi*(<w*, X>) + eps,   X ~ N(0, I_d),  f_w(x) = f(<w, x>),
//
// in spectral coordinates. With a, a* the Hermite coefficients of f, phi*
// and m = <w, w*>, the expected squared loss has the closed form
//
//   l(a, m) = 1/2 sum a_k^2 - sum a_k a*_k m^k + C*,
//   C*      = 1/2 sum (a*_k)^2 + 1/2 Var(eps),
//
// together with its analytic gradients and a Monte-Carlo oracle that
// estimates the expectation directly from sampled inputs.

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "indexflow/hermite.hpp"
#include "indexflow/rng.hpp"

namespace indexflow::loss {

using hermite::HermiteExpansion;

/// Planted link phi* (Hermite coefficients) plus the label noise variance.
struct TargetSpec {
  HermiteExpansion a_star;
  double noise_var = 0.0;

  TargetSpec() = default;
  TargetSpec(HermiteExpansion a, double nv) : a_star(std::move(a)), noise_var(nv) {
    if (!(noise_var >= 0.0) || !std::isfinite(noise_var))
      throw std::invalid_argument("TargetSpec: noise variance must be finite and >= 0");
  }
};

inline double residual_constant(const TargetSpec& t) {
  return 0.5 * hermite::l2_norm_sq(t.a_star) + 0.5 * t.noise_var;
}

/// l(a, m) per the closed spectral form above.
inline double closed_loss(const HermiteExpansion& a, const TargetSpec& t, double m) {
  if (!(std::abs(m) <= 1.0))
    throw std::domain_error("closed_loss: |m| must not exceed 1");
  double cross = 0.0;
  double pw = 1.0;
  const std::size_t kmax = std::min(a.coeffs.size(), t.a_star.coeffs.size());
  for (std::size_t k = 0; k < kmax; ++k) {
    cross += a.coeffs[k] * t.a_star.coeffs[k] * pw;
    pw *= m;
  }
  return 0.5 * hermite::l2_norm_sq(a) - cross + residual_constant(t);
}

/// Gradient of l in the coefficients: g_k = a_k - a*_k m^k.
inline std::vector<double> grad_coeffs(const HermiteExpansion& a,
                                       const TargetSpec& t, double m) {
  std::vector<double> g(a.coeffs.size());
  double pw = 1.0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = a.coeffs[k] - t.a_star.coeff(k) * pw;
    pw *= m;
  }
  return g;
}

/// Spherical drift of the correlation:
/// dm/dt = (1 - m^2) sum_{k>=1} k a_k a*_k m^{k-1}.
inline double drift_m(const HermiteExpansion& a, const TargetSpec& t, double m) {
  double s = 0.0;
  double pw = 1.0;  // m^{k-1}
  const std::size_t kmax = std::min(a.coeffs.size(), t.a_star.coeffs.size());
  for (std::size_t k = 1; k < kmax; ++k) {
    s += static_cast<double>(k) * a.coeffs[k] * t.a_star.coeffs[k] * pw;
    pw *= m;
  }
  return (1.0 - m * m) * s;
}

struct McEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of E[ (f(<w,X>) - Y)^2 / 2 ] from n fresh samples.
/// Returns the sample mean and its standard error; Gaussian noise
/// eps ~ N(0, noise_var) is drawn from the same stream.
inline McEstimate mc_loss(const HermiteExpansion& a, const Eigen::VectorXd& w,
                          const TargetSpec& t, const Eigen::VectorXd& w_star,
                          long n, std::uint64_t seed) {
  if (n < 1) throw std::domain_error("mc_loss: need n >= 1 samples");
  if (w.size() != w_star.size())
    throw std::invalid_argument("mc_loss: direction dimensions differ");
  if (std::abs(w.norm() - 1.0) > 1e-9 || std::abs(w_star.norm() - 1.0) > 1e-9)
    throw std::invalid_argument("mc_loss: directions must be unit vectors");

  Rng rng(seed);
  const Eigen::Index d = w.size();
  const double noise_sd = std::sqrt(t.noise_var);
  Eigen::VectorXd x(d);
  double mean = 0.0, m2 = 0.0;  // Welford
  for (long i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x[j] = rng.normal();
    double y = hermite::eval_expansion(t.a_star, w_star.dot(x));
    if (t.noise_var > 0.0) y += noise_sd * rng.normal();
    const double r = hermite::eval_expansion(a, w.dot(x)) - y;
    const double li = 0.5 * r * r;
    const double delta = li - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (li - mean);
  }
  McEstimate out;
  out.estimate = mean;
  out.std_error = (n > 1) ? std::sqrt(m2 / static_cast<double>(n - 1) /
                                      static_cast<double>(n))
                          : std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace indexflow::loss
