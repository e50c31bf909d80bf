#pragma once

// Orthonormal Hermite basis of L^2(gamma), gamma the standard Gaussian
// measure on R: h_k = He_k / sqrt(k!), so that <h_i, h_j> = delta_ij with
// h_0(z) = 1 and h_1(z) = z. Evaluation runs the normalized three-term
// recurrence
//
//   h_{k+1}(z) = ( z h_k(z) - sqrt(k) h_{k-1}(z) ) / sqrt(k+1),
//
// which keeps intermediates of moderate size instead of the k!-sized values
// of the raw recurrence. Quadrature rules come from the Golub-Welsch
// eigen-decomposition of the Jacobi matrix (zero diagonal, off-diagonal
// sqrt(k) in the probabilists' normalization).

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace indexflow::hermite {

/// Finite expansion f = sum_{k<=K} a_k h_k in the orthonormal Hermite basis.
struct HermiteExpansion {
  std::vector<double> coeffs;  // a_0 .. a_K

  HermiteExpansion() : coeffs{0.0} {}
  explicit HermiteExpansion(std::vector<double> c) : coeffs(std::move(c)) {
    if (coeffs.empty())
      throw std::invalid_argument("HermiteExpansion: coefficient list is empty");
    for (double a : coeffs)
      if (!std::isfinite(a))
        throw std::invalid_argument("HermiteExpansion: non-finite coefficient");
  }

  int degree() const { return static_cast<int>(coeffs.size()) - 1; }

  /// a_k, with coefficients beyond the stored range read as zero.
  double coeff(std::size_t k) const { return k < coeffs.size() ? coeffs[k] : 0.0; }
};

/// Negates odd-indexed coefficients; realizes f(-z) through h_k parity.
inline HermiteExpansion flip(const HermiteExpansion& f) {
  std::vector<double> c = f.coeffs;
  for (std::size_t k = 1; k < c.size(); k += 2) c[k] = -c[k];
  return HermiteExpansion(std::move(c));
}

/// Fills out[0..K] with h_0(z) .. h_K(z).
inline void eval_basis_all(int K, double z, double* out) {
  out[0] = 1.0;
  if (K == 0) return;
  out[1] = z;
  for (int k = 1; k < K; ++k)
    out[k + 1] = (z * out[k] - std::sqrt(static_cast<double>(k)) * out[k - 1]) /
                 std::sqrt(static_cast<double>(k + 1));
}

/// h_k(z) for the orthonormal basis.
inline double eval_basis(int k, double z) {
  if (k < 0) throw std::domain_error("eval_basis: negative degree");
  double prev = 1.0;  // h_0
  if (k == 0) return prev;
  double cur = z;  // h_1
  for (int j = 1; j < k; ++j) {
    const double next = (z * cur - std::sqrt(static_cast<double>(j)) * prev) /
                        std::sqrt(static_cast<double>(j + 1));
    prev = cur;
    cur = next;
  }
  return cur;
}

/// f(z) = sum a_k h_k(z), accumulated in one pass alongside the recurrence.
inline double eval_expansion(const HermiteExpansion& f, double z) {
  const auto& a = f.coeffs;
  double prev = 1.0;
  double acc = a[0];
  if (a.size() == 1) return acc;
  double cur = z;
  acc += a[1] * cur;
  for (std::size_t k = 1; k + 1 < a.size(); ++k) {
    const double next = (z * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
    acc += a[k + 1] * cur;
  }
  return acc;
}

/// f'(z) = sum_{k>=1} a_k sqrt(k) h_{k-1}(z), using h_k' = sqrt(k) h_{k-1}.
inline double eval_expansion_derivative(const HermiteExpansion& f, double z) {
  const auto& a = f.coeffs;
  double acc = 0.0;
  double prev = 1.0;  // h_0
  double cur = z;     // h_1
  for (std::size_t k = 1; k < a.size(); ++k) {
    acc += a[k] * std::sqrt(static_cast<double>(k)) * prev;  // prev = h_{k-1}
    const double next = (z * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  return acc;
}

/// Parseval: ||f||^2_{L^2_gamma} = sum a_k^2.
inline double l2_norm_sq(const HermiteExpansion& f) {
  double s = 0.0;
  for (double a : f.coeffs) s += a * a;
  return s;
}

/// Weighted Sobolev norm sum_k k^{2j} a_k^2, with the convention 0^0 = 1 so
/// j = 0 recovers l2_norm_sq.
inline double sobolev_norm_sq(const HermiteExpansion& f, int j) {
  if (j < 0) throw std::domain_error("sobolev_norm_sq: negative order");
  if (j == 0) return l2_norm_sq(f);
  double s = 0.0;
  for (std::size_t k = 1; k < f.coeffs.size(); ++k)
    s += std::pow(static_cast<double>(k), 2.0 * j) * f.coeffs[k] * f.coeffs[k];
  return s;
}

/// Gaussian smoothing operator T_m, diagonal in the Hermite basis:
/// T_m[h_k] = m^k h_k, so coefficients map to a_k m^k.
inline HermiteExpansion smooth(const HermiteExpansion& f, double m) {
  if (!(std::abs(m) <= 1.0))
    throw std::domain_error("smooth: |m| must not exceed 1");
  std::vector<double> c(f.coeffs.size());
  double pw = 1.0;
  for (std::size_t k = 0; k < c.size(); ++k) {
    c[k] = f.coeffs[k] * pw;
    pw *= m;
  }
  return HermiteExpansion(std::move(c));
}

/// Nodes and weights for integration against gamma; weights sum to one.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

namespace detail {

struct BasisProbe {
  double below = 1.0;   // h_{n-1}(x)
  double value = 0.0;   // h_n(x)
  double kernel = 1.0;  // sum_{k < n} h_k(x)^2
};

inline BasisProbe probe_basis(int n, double x) {
  BasisProbe p;
  if (n == 0) {
    p.below = 0.0;
    p.value = 1.0;
    p.kernel = 0.0;
    return p;
  }
  double prev = 1.0, cur = x;
  double kernel = 1.0;
  for (int k = 1; k < n; ++k) {
    kernel += cur * cur;
    const double next = (x * cur - std::sqrt(static_cast<double>(k)) * prev) /
                        std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
  }
  p.below = prev;
  p.value = cur;
  p.kernel = kernel;
  return p;
}

}  // namespace detail

/// Golub-Welsch rule with n nodes, exact on polynomials of degree <= 2n-1.
/// Nodes are eigenvalues of the Jacobi matrix polished by Newton steps on
/// h_n; weights come from the Christoffel function, 1 / sum_{k<n} h_k(x)^2,
/// which keeps them relatively accurate even at the extreme nodes where the
/// eigenvector-based weights lose all precision.
inline QuadratureRule gauss_hermite_rule(int n) {
  if (n < 1) throw std::domain_error("gauss_hermite_rule: need n >= 1 nodes");
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int i = 1; i < n; ++i) {
    const double b = std::sqrt(static_cast<double>(i));
    jacobi(i, i - 1) = b;
    jacobi(i - 1, i) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("gauss_hermite_rule: eigensolver failed");
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  const double root_n = std::sqrt(static_cast<double>(n));
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = es.eigenvalues()[i];
    for (int iter = 0; iter < 2; ++iter) {
      const auto p = detail::probe_basis(n, x);
      x -= p.value / (root_n * p.below);  // h_n' = sqrt(n) h_{n-1}
    }
    rule.nodes[i] = x;
    rule.weights[i] = 1.0 / detail::probe_basis(n, x).kernel;
    wsum += rule.weights[i];
  }
  for (double& w : rule.weights) w /= wsum;
  return rule;
}

/// <f, g>_{L^2_gamma} by quadrature; exact for polynomial inputs when the
/// rule degree covers deg f + deg g.
inline double inner_product_quadrature(const HermiteExpansion& f,
                                       const HermiteExpansion& g,
                                       const QuadratureRule& rule) {
  double s = 0.0;
  for (std::size_t i = 0; i < rule.nodes.size(); ++i)
    s += rule.weights[i] * eval_expansion(f, rule.nodes[i]) *
         eval_expansion(g, rule.nodes[i]);
  return s;
}

}  // namespace indexflow::hermite
