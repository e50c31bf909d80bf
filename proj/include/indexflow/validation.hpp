#pragma once

// Built-in invariant suite behind the `validate` subcommand: quick,
// deterministic spot checks of the library's structural identities. Each
// check prints one line; the suite passes only when every check does.

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "indexflow/empirical.hpp"
#include "indexflow/flow.hpp"
#include "indexflow/hermite.hpp"
#include "indexflow/lab.hpp"
#include "indexflow/rng.hpp"
#include "indexflow/spectral_loss.hpp"

namespace indexflow::lab {

namespace validation_detail {

using hermite::HermiteExpansion;
using loss::TargetSpec;

inline HermiteExpansion random_expansion(Rng& rng, int K, double scale = 1.0) {
  std::vector<double> c(K + 1);
  for (int k = 0; k <= K; ++k) c[k] = scale * rng.uniform_sym();
  return HermiteExpansion(std::move(c));
}

inline bool check_orthonormality() {
  const auto rule = hermite::gauss_hermite_rule(64);
  double worst = 0.0;
  for (int i = 0; i <= 20; ++i)
    for (int j = 0; j <= 20; ++j) {
      std::vector<double> ci(i + 1, 0.0), cj(j + 1, 0.0);
      ci[i] = 1.0;
      cj[j] = 1.0;
      const double ip = hermite::inner_product_quadrature(
          HermiteExpansion(ci), HermiteExpansion(cj), rule);
      worst = std::max(worst, std::abs(ip - (i == j ? 1.0 : 0.0)));
    }
  return worst < 1e-8;
}

inline bool check_quadrature_basics() {
  const auto one = hermite::gauss_hermite_rule(1);
  if (std::abs(one.nodes[0]) > 1e-14 || std::abs(one.weights[0] - 1.0) > 1e-14) return false;
  const auto two = hermite::gauss_hermite_rule(2);
  if (std::abs(two.nodes[0] + 1.0) > 1e-12 || std::abs(two.nodes[1] - 1.0) > 1e-12) return false;
  for (int n : {3, 16, 48}) {
    const auto rule = hermite::gauss_hermite_rule(n);
    double s = 0.0;
    for (double w : rule.weights) s += w;
    if (std::abs(s - 1.0) > 1e-12) return false;
  }
  return true;
}

inline bool check_derivative_fd() {
  Rng rng(11);
  const double h = 1e-5;
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_expansion(rng, 2 + static_cast<int>(rng.uniform() * 10));
    const double z = 3.0 * rng.uniform_sym();
    const double fd =
        (hermite::eval_expansion(f, z + h) - hermite::eval_expansion(f, z - h)) / (2.0 * h);
    const double an = hermite::eval_expansion_derivative(f, z);
    if (std::abs(an - fd) > 1e-6 * std::max(1.0, std::abs(fd))) return false;
  }
  return true;
}

inline bool check_smoothing_semigroup() {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_expansion(rng, 8);
    const double m1 = rng.uniform_sym(), m2 = rng.uniform_sym();
    const auto lhs = hermite::smooth(hermite::smooth(f, m1), m2);
    const auto rhs = hermite::smooth(f, m1 * m2);
    for (std::size_t k = 0; k < lhs.coeffs.size(); ++k)
      if (std::abs(lhs.coeffs[k] - rhs.coeffs[k]) > 1e-12) return false;
  }
  return true;
}

inline bool check_parseval() {
  Rng rng(13);
  const auto rule = hermite::gauss_hermite_rule(32);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = random_expansion(rng, 12);
    const double direct = hermite::l2_norm_sq(f);
    const double quad = hermite::inner_product_quadrature(f, f, rule);
    if (std::abs(direct - quad) > 1e-10 * std::max(1.0, direct)) return false;
  }
  return true;
}

inline bool check_spectral_gradients() {
  Rng rng(14);
  const double h = 1e-6;
  for (int trial = 0; trial < 30; ++trial) {
    const int K = 2 + static_cast<int>(rng.uniform() * 8);
    const auto a = random_expansion(rng, K);
    const TargetSpec target(random_expansion(rng, K), rng.uniform());
    const double m = 0.98 * rng.uniform_sym();
    const auto g = loss::grad_coeffs(a, target, m);
    for (int k = 0; k <= K; ++k) {
      auto up = a.coeffs, dn = a.coeffs;
      up[k] += h;
      dn[k] -= h;
      const double fd = (loss::closed_loss(HermiteExpansion(up), target, m) -
                         loss::closed_loss(HermiteExpansion(dn), target, m)) /
                        (2.0 * h);
      if (std::abs(g[k] - fd) > 1e-6 * std::max(1.0, std::abs(fd))) return false;
    }
    const double fd_m = (loss::closed_loss(a, target, m + h) -
                         loss::closed_loss(a, target, m - h)) /
                        (2.0 * h);
    const double drift = loss::drift_m(a, target, m);
    if (std::abs(drift + (1.0 - m * m) * fd_m) > 1e-6 * std::max(1.0, std::abs(drift)))
      return false;
  }
  return true;
}

inline bool check_mc_loss() {
  Rng rng(15);
  int ok = 0;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 6;
    const auto a = random_expansion(rng, 5);
    const TargetSpec target(random_expansion(rng, 5), 0.2 * rng.uniform());
    Eigen::VectorXd w(d), ws(d);
    for (int j = 0; j < d; ++j) {
      w[j] = rng.normal();
      ws[j] = rng.normal();
    }
    w.normalize();
    ws.normalize();
    const auto mc = loss::mc_loss(a, w, target, ws, 20000, 1000 + trial);
    const double cl = loss::closed_loss(a, target, w.dot(ws));
    if (std::abs(mc.estimate - cl) < 4.0 * mc.std_error + 1e-12) ++ok;
  }
  return ok >= 4;
}

inline bool check_planted_bifurcation() {
  const TargetSpec h2(HermiteExpansion({0.0, 0.0, 1.0}), 0.0);
  const TargetSpec h3(HermiteExpansion({0.0, 0.0, 0.0, 1.0}), 0.0);
  const TargetSpec mix(HermiteExpansion({0.0, 0.0, 0.5, 1.0}), 0.0);
  struct Case {
    const TargetSpec* target;
    double m0;
    double t_max;
  };
  const std::vector<Case> cases = {
      {&h2, 0.3, 60.0}, {&h3, -0.2, 400.0}, {&h2, -0.9, 60.0}, {&mix, -0.1, 120.0}};
  for (const auto& c : cases) {
    const auto predicted = flow::classify_planted(c.m0, *c.target);
    const auto traj = flow::integrate_planted(c.m0, *c.target, 1e-2, c.t_max);
    if (std::abs(traj.terminal.m - predicted.value) > 1e-3) return false;
  }
  return true;
}

inline bool check_boundedness() {
  Rng rng(16);
  for (int trial = 0; trial < 10; ++trial) {
    const int K = 6;
    std::vector<double> astar(K + 1, 0.0);
    astar[2] = 1.0 + rng.uniform();
    astar[3] = rng.uniform_sym();
    const TargetSpec target(HermiteExpansion(astar), 0.0);
    flow::InitSpec init;
    init.d = 50;
    init.K = K;
    init.seed = 500 + trial;
    const auto state = flow::sample_init(init);
    const auto traj = flow::integrate_joint(state, target, 1e-2, 80.0);
    for (int k = 0; k <= K; ++k) {
      const double bound =
          std::max(std::abs(target.a_star.coeff(k)), std::abs(state.a.coeffs[k])) + 1e-9;
      if (traj.coeff_abs_max[k] > bound) return false;
    }
  }
  return true;
}

inline bool check_lyapunov() {
  const TargetSpec target(HermiteExpansion({0.0, 0.0, 1.0, 1.0, -1.0}), 0.0);
  flow::InitSpec init;
  init.d = 100;
  init.K = 8;
  init.seed = 21;
  init.m0_override = 0.05;
  const auto traj = flow::integrate_joint(flow::sample_init(init), target, 1e-2, 40.0);
  for (std::size_t i = 1; i < traj.samples.size(); ++i)
    if (traj.samples[i].loss > traj.samples[i - 1].loss + 1e-9 * 1e-2) return false;
  return true;
}

inline bool check_truncation_bound() {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_expansion(rng, 64);
    const double h1 = hermite::sobolev_norm_sq(f, 1);
    for (int kk : {4, 8, 16, 32}) {
      double tail = 0.0;
      for (int k = kk + 1; k <= 64; ++k) tail += f.coeffs[k] * f.coeffs[k];
      if (tail > h1 / (static_cast<double>(kk) * kk) + 1e-12) return false;
    }
  }
  return true;
}

inline bool check_kernel() {
  Rng rng(18);
  const auto spec = emp::KernelSpec::power_decay(10);
  for (int trial = 0; trial < 10; ++trial) {
    const double x = 2.0 * rng.uniform_sym(), y = 2.0 * rng.uniform_sym();
    const auto fx = emp::feature_map(spec, x), fy = emp::feature_map(spec, y);
    double ip = 0.0;
    for (std::size_t k = 0; k < fx.size(); ++k) ip += fx[k] * fy[k];
    if (std::abs(ip - emp::kernel_eval(spec, x, y)) > 1e-12) return false;
  }
  const int npts = 30;
  Eigen::MatrixXd gram(npts, npts);
  std::vector<double> pts(npts);
  for (int i = 0; i < npts; ++i) pts[i] = 2.5 * rng.uniform_sym();
  for (int i = 0; i < npts; ++i)
    for (int j = 0; j < npts; ++j) gram(i, j) = emp::kernel_eval(spec, pts[i], pts[j]);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  return es.eigenvalues().minCoeff() > -1e-8;
}

inline bool check_empirical_gradients() {
  Rng rng(19);
  const double h = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 6, K = 5;
    const TargetSpec target(random_expansion(rng, K), 0.1);
    const auto data = emp::generate_dataset(150, d, target, 700 + trial);
    const auto spec = emp::KernelSpec::power_decay(K, trial % 2 == 0 ? 0.0 : 0.05);
    Eigen::VectorXd w(d);
    for (int j = 0; j < d; ++j) w[j] = rng.normal();
    w.normalize();
    emp::TrainState state{w, random_expansion(rng, K), 0};
    const auto g = emp::empirical_grads(state, data, spec);
    if (std::abs(g.grad_w.dot(state.w)) > 1e-10) return false;
    for (int k = 0; k <= K; ++k) {
      auto up = state, dn = state;
      auto cu = state.a.coeffs, cd = state.a.coeffs;
      cu[k] += h;
      cd[k] -= h;
      up.a = HermiteExpansion(cu);
      dn.a = HermiteExpansion(cd);
      const double fd = (emp::empirical_loss(up, data, spec) -
                         emp::empirical_loss(dn, data, spec)) /
                        (2.0 * h);
      if (std::abs(g.grad_a[k] - fd) > 1e-5 * std::max(1.0, std::abs(fd))) return false;
    }
    Eigen::VectorXd raw_fd(d);
    for (int j = 0; j < d; ++j) {
      auto up = state, dn = state;
      up.w[j] += h;
      dn.w[j] -= h;
      raw_fd[j] = (emp::empirical_loss(up, data, spec) -
                   emp::empirical_loss(dn, data, spec)) /
                  (2.0 * h);
    }
    const Eigen::VectorXd fd_tan = raw_fd - state.w.dot(raw_fd) * state.w;
    if ((fd_tan - g.grad_w).cwiseAbs().maxCoeff() >
        1e-5 * std::max(1.0, fd_tan.cwiseAbs().maxCoeff()))
      return false;
  }
  return true;
}

inline bool check_unit_sphere() {
  Rng rng(20);
  const int d = 12, K = 4;
  const TargetSpec target(HermiteExpansion({0.0, 0.0, 2.0}), 0.0);
  const auto data = emp::generate_dataset(400, d, target, 42);
  Eigen::VectorXd w(d);
  for (int j = 0; j < d; ++j) w[j] = rng.normal();
  w.normalize();
  emp::TrainState init{w, random_expansion(rng, K, 0.5), 0};
  const auto spec = emp::KernelSpec::power_decay(K);
  const auto trace = emp::train_joint(data, spec, 5e-2, 300, init, 10);
  if (std::abs(trace.final_state.w.norm() - 1.0) > 1e-9) return false;
  return trace.status == emp::TrainStatus::completed;
}

}  // namespace validation_detail

/// Runs the invariant suite; prints one line per check. Returns true when
/// every check passes.
inline bool run_validation(std::ostream& os) {
  using Check = std::pair<std::string, std::function<bool()>>;
  namespace vd = validation_detail;
  const std::vector<Check> checks = {
      {"hermite orthonormality (64-node rule, degrees 0..20)", vd::check_orthonormality},
      {"quadrature rule basics (n = 1, 2; weight normalization)", vd::check_quadrature_basics},
      {"expansion derivative vs central finite differences", vd::check_derivative_fd},
      {"smoothing operator semigroup property", vd::check_smoothing_semigroup},
      {"Parseval identity via quadrature", vd::check_parseval},
      {"spectral gradients vs finite differences", vd::check_spectral_gradients},
      {"Monte-Carlo loss vs closed form", vd::check_mc_loss},
      {"planted bifurcation table vs integrated flow", vd::check_planted_bifurcation},
      {"coefficient boundedness along joint trajectories", vd::check_boundedness},
      {"loss descent along the joint flow", vd::check_lyapunov},
      {"RKHS truncation tail bound", vd::check_truncation_bound},
      {"kernel PSD + feature map identity", vd::check_kernel},
      {"empirical gradients vs finite differences", vd::check_empirical_gradients},
      {"unit-sphere maintenance during training", vd::check_unit_sphere},
  };
  bool all_ok = true;
  for (const auto& [name, fn] : checks) {
    bool ok = false;
    try {
      ok = fn();
    } catch (const std::exception& e) {
      os << "[fail] " << name << " (exception: " << e.what() << ")\n";
      all_ok = false;
      continue;
    }
    os << (ok ? "[ ok ] " : "[fail] ") << name << '\n';
    all_ok = all_ok && ok;
  }
  return all_ok;
}

}  // namespace indexflow::lab
