#pragma once

// Idealized dynamics of the joint gradient flow in reduced coordinates
// (m, a_0..a_K):
//
//   da_k/dt = a*_k m^k - a_k
//   dm/dt   = (1 - m^2) sum_{k>=1} k a_k a*_k m^{k-1}
//
// integrated with fixed-step RK4 (m hard-clamped to [-1, 1] after each
// step), plus the planted flow where the coefficients stay frozen at a*,
// initialization sampling, hitting-time events, and the bifurcation
// classifier for the planted model.
//
// Convergence is detected by distance to the relevant attractor set, not by
// step-to-step stationarity: in the partial-equilibrium phase the state
// moves slower than any stationarity threshold while still far from the
// attractor. Joint runs test against (+-1, (+-1)^k a*_k); planted runs
// against m in {0, +-1, -mbar}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "indexflow/hermite.hpp"
#include "indexflow/rng.hpp"
#include "indexflow/spectral_loss.hpp"

namespace indexflow::flow {

using hermite::HermiteExpansion;
using loss::TargetSpec;

/// State of the reduced system: correlation, coefficients, flow time.
struct ReducedState {
  double m = 0.0;
  HermiteExpansion a;
  double t = 0.0;
};

/// Time derivative of a ReducedState (dt/dt = 1 implicit).
struct StateDerivative {
  double dm = 0.0;
  std::vector<double> da;
};

struct TrajectorySample {
  double t = 0.0;
  double m = 0.0;
  double loss = 0.0;
  std::vector<double> a;
  std::vector<double> u;  // equilibrium gap a_k - a*_k m^k
};

struct HitEvent {
  double kappa = 0.0;
  double time = 0.0;
};

enum class TerminalReason { horizon, converged, diverged };

inline const char* to_string(TerminalReason r) {
  switch (r) {
    case TerminalReason::horizon: return "horizon";
    case TerminalReason::converged: return "converged";
    case TerminalReason::diverged: return "diverged";
  }
  return "unknown";
}

struct Trajectory {
  std::vector<TrajectorySample> samples;
  std::vector<HitEvent> events;
  TerminalReason terminal_reason = TerminalReason::horizon;
  ReducedState initial;
  ReducedState terminal;
  double max_overshoot = 0.0;          // worst pre-clamp |m| excess over 1
  std::vector<double> coeff_abs_max;   // running max of |a_k| over all steps
  long steps_taken = 0;
};

/// Initialization scheme: m_0 is the first coordinate of a normalized
/// d-dimensional Gaussian draw (the law of <w_0, w*> for uniform w_0),
/// coefficients follow k^2 a_{k,0} ~ U([-1,1]). Both parts can be pinned
/// for deterministic studies.
struct InitSpec {
  int d = 2;
  int K = 16;
  std::uint64_t seed = 0;
  std::optional<double> m0_override;
  std::optional<std::vector<double>> a0_override;
};

/// Smallest k >= 1 with a*_k != 0 (exact test on stored coefficients).
inline int info_exponent(const TargetSpec& target) {
  const auto& c = target.a_star.coeffs;
  for (std::size_t k = 1; k < c.size(); ++k)
    if (c[k] != 0.0) return static_cast<int>(k);
  throw std::domain_error(
      "info_exponent: every coefficient with k >= 1 vanishes");
}

inline ReducedState sample_init(const InitSpec& spec) {
  if (spec.d < 2) throw std::invalid_argument("sample_init: d must be >= 2");
  if (spec.K < 1) throw std::invalid_argument("sample_init: K must be >= 1");
  Rng rng(spec.seed);
  double m0;
  if (spec.m0_override) {
    m0 = *spec.m0_override;
    if (!(std::abs(m0) <= 1.0) || !std::isfinite(m0))
      throw std::invalid_argument("sample_init: m0 override outside [-1, 1]");
  } else {
    const double g1 = rng.normal();
    double ss = g1 * g1;
    for (int i = 1; i < spec.d; ++i) {
      const double g = rng.normal();
      ss += g * g;
    }
    m0 = g1 / std::sqrt(ss);
  }
  std::vector<double> a;
  if (spec.a0_override) {
    a = *spec.a0_override;
    if (static_cast<int>(a.size()) != spec.K + 1)
      throw std::invalid_argument("sample_init: a0 override has wrong length");
  } else {
    a.resize(spec.K + 1);
    a[0] = rng.uniform_sym();
    for (int k = 1; k <= spec.K; ++k)
      a[k] = rng.uniform_sym() / static_cast<double>(k * k);
  }
  return ReducedState{m0, HermiteExpansion(std::move(a)), 0.0};
}

/// Right-hand side of the joint system at the given state.
inline StateDerivative joint_rhs(const ReducedState& state, const TargetSpec& target) {
  StateDerivative d;
  d.dm = loss::drift_m(state.a, target, state.m);
  d.da.resize(state.a.coeffs.size());
  double pw = 1.0;
  for (std::size_t k = 0; k < d.da.size(); ++k) {
    d.da[k] = target.a_star.coeff(k) * pw - state.a.coeffs[k];
    pw *= state.m;
  }
  return d;
}

/// Phi(x) = sum_{k>=1} k (a*_k)^2 x^{k-1}: drift profile of the planted flow.
inline double phi_drift(double x, const TargetSpec& target) {
  const auto& as = target.a_star.coeffs;
  double s = 0.0;
  double pw = 1.0;
  for (std::size_t k = 1; k < as.size(); ++k) {
    s += static_cast<double>(k) * as[k] * as[k] * pw;
    pw *= x;
  }
  return s;
}

/// Scalar planted flow: dm/dt = (1 - m^2) Phi(m).
inline double planted_rhs(double m, const TargetSpec& target) {
  return (1.0 - m * m) * phi_drift(m, target);
}

namespace detail {

// First sign change of Phi on the grid x = -i*res walking from `from` down
// to -1, refined by bisection; infinity when none.
inline double scan_negative_root(const TargetSpec& target, double from) {
  constexpr double res = 1e-4;
  const long i0 = std::max(1L, static_cast<long>(std::ceil(-from / res)));
  double x_prev = -static_cast<double>(i0) * res;
  double f_prev = phi_drift(x_prev, target);
  if (f_prev == 0.0) return x_prev;
  for (long i = i0 + 1; i <= 10000; ++i) {
    const double x = -static_cast<double>(i) * res;
    const double f = phi_drift(x, target);
    if (f == 0.0) return x;
    if (f_prev * f < 0.0) {
      double lo = x, hi = x_prev;  // f(lo), f(hi) of opposite sign
      double flo = f;
      while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        const double fm = phi_drift(mid, target);
        if (fm == 0.0) return mid;
        if (fm * flo > 0.0) {
          lo = mid;
          flo = fm;
        } else {
          hi = mid;
        }
      }
      return 0.5 * (lo + hi);
    }
    x_prev = x;
    f_prev = f;
  }
  return -std::numeric_limits<double>::infinity();
}

}  // namespace detail

/// mbar = min{ |z| : Phi(z) = 0, z in [-1, 0) }, or +infinity when Phi has
/// no negative root.
inline double find_mbar(const TargetSpec& target) {
  info_exponent(target);  // mbar is only meaningful when s is defined
  const double root = detail::scan_negative_root(target, 0.0);
  if (!std::isfinite(root)) return std::numeric_limits<double>::infinity();
  return -root;
}

enum class LimitKind { align, anti_align, origin, trapped };

struct PredictedLimit {
  LimitKind kind = LimitKind::align;
  double value = 1.0;
};

/// Case table for the planted bifurcation. The s = 1, m0 < 0 branch follows
/// the sign of Phi near the origin; it sits outside the stated case table
/// and its tests are advisory.
inline PredictedLimit classify_planted(double m0, const TargetSpec& target) {
  if (m0 == 0.0)
    throw std::invalid_argument("classify_planted: m0 = 0 is an unstable equilibrium");
  if (!(m0 > -1.0 && m0 < 1.0))
    throw std::invalid_argument("classify_planted: m0 must lie in (-1, 1)");
  const int s = info_exponent(target);
  if (m0 > 0.0) return {LimitKind::align, 1.0};
  if (s == 1) {
    if (phi_drift(m0, target) > 0.0) return {LimitKind::align, 1.0};
    const double root = detail::scan_negative_root(target, m0);
    if (std::isfinite(root)) return {LimitKind::trapped, root};
    return {LimitKind::anti_align, -1.0};
  }
  if (s % 2 == 1) return {LimitKind::origin, 0.0};
  const double mbar = find_mbar(target);
  if (mbar >= 1.0) return {LimitKind::anti_align, -1.0};
  return {LimitKind::trapped, -mbar};
}

struct IntegrateOptions {
  double dt = 1e-2;
  double t_max = 100.0;
  std::vector<double> levels;  // hitting levels, each in (0, 1)
  long record_stride = 1;      // coarse sampling stride, in steps
  double dense_level = 0.5;    // record every dense_stride once |m| >= this
  long dense_stride = 1;
  bool freeze_coeffs = false;  // hold a fixed (planted-style run)
};

namespace detail {

inline void rhs_raw(double m, const double* a, int K, const double* as,
                    bool freeze, double* dm, double* da) {
  double s = 0.0;
  double pw = 1.0;  // m^{k-1}
  for (int k = 1; k <= K; ++k) {
    s += static_cast<double>(k) * a[k] * as[k] * pw;
    pw *= m;
  }
  *dm = (1.0 - m * m) * s;
  if (freeze) return;
  pw = 1.0;  // m^k
  for (int k = 0; k <= K; ++k) {
    da[k] = as[k] * pw - a[k];
    pw *= m;
  }
}

inline Trajectory integrate_core(const ReducedState& init, const TargetSpec& target,
                                 const IntegrateOptions& opt) {
  if (!(opt.dt > 0.0)) throw std::invalid_argument("integrate: dt must be positive");
  if (!(opt.t_max > 0.0)) throw std::invalid_argument("integrate: t_max must be positive");
  if (opt.dt >= opt.t_max) throw std::invalid_argument("integrate: dt must be below t_max");
  if (opt.record_stride < 1 || opt.dense_stride < 1)
    throw std::invalid_argument("integrate: strides must be >= 1");
  for (double k : opt.levels)
    if (!(k > 0.0 && k < 1.0))
      throw std::invalid_argument("integrate: hitting levels must lie in (0, 1)");
  if (!(std::abs(init.m) <= 1.0))
    throw std::invalid_argument("integrate: |m0| must not exceed 1");

  const int K = init.a.degree();
  std::vector<double> as(K + 1);
  for (int k = 0; k <= K; ++k) as[k] = target.a_star.coeff(k);

  // Attractor coordinates of the two recovery fixed points.
  std::vector<double> a_plus(as), a_minus(as);
  for (int k = 1; k <= K; k += 2) a_minus[k] = -a_minus[k];

  // Planted runs converge in m alone; candidate limits per the bifurcation
  // table (mbar only when the information exponent exists).
  std::vector<double> planted_limits;
  if (opt.freeze_coeffs) {
    planted_limits = {1.0, -1.0, 0.0};
    bool has_s = false;
    for (int k = 1; k <= target.a_star.degree() && !has_s; ++k)
      if (target.a_star.coeffs[k] != 0.0) has_s = true;
    if (has_s) {
      const double mbar = find_mbar(target);
      if (std::isfinite(mbar) && mbar < 1.0) planted_limits.push_back(-mbar);
    }
  }

  Trajectory traj;
  traj.initial = init;
  traj.coeff_abs_max.resize(K + 1);

  const long nsteps = static_cast<long>(std::ceil(opt.t_max / opt.dt - 1e-9));
  const int n = K + 2;  // state = [m, a_0..a_K]
  std::vector<double> y(n), ysafe(n), k1(n), k2(n), k3(n), k4(n), tmp(n);
  y[0] = init.m;
  for (int k = 0; k <= K; ++k) {
    y[k + 1] = init.a.coeffs[k];
    traj.coeff_abs_max[k] = std::abs(init.a.coeffs[k]);
  }

  auto eval_rhs = [&](const std::vector<double>& s, std::vector<double>& out) {
    out.assign(n, 0.0);
    rhs_raw(s[0], s.data() + 1, K, as.data(), opt.freeze_coeffs, &out[0], out.data() + 1);
  };

  auto record = [&](double t) {
    TrajectorySample smp;
    smp.t = t;
    smp.m = y[0];
    smp.a.assign(y.begin() + 1, y.end());
    smp.u.resize(K + 1);
    double pw = 1.0;
    for (int k = 0; k <= K; ++k) {
      smp.u[k] = smp.a[k] - as[k] * pw;
      pw *= smp.m;
    }
    smp.loss = loss::closed_loss(HermiteExpansion(smp.a), target, std::clamp(smp.m, -1.0, 1.0));
    traj.samples.push_back(std::move(smp));
  };

  struct Pending {
    double kappa;
    bool hit;
  };
  std::vector<Pending> pending;
  pending.reserve(opt.levels.size());
  for (double k : opt.levels) pending.push_back({k, false});
  for (auto& p : pending)
    if (std::abs(init.m) >= p.kappa) {
      traj.events.push_back({p.kappa, 0.0});
      p.hit = true;
    }

  record(0.0);

  long settle = 0;
  double t = 0.0;
  TerminalReason reason = TerminalReason::horizon;
  ysafe = y;

  for (long step = 1; step <= nsteps; ++step) {
    const double m_prev = y[0];
    eval_rhs(y, k1);
    for (int i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * opt.dt * k1[i];
    eval_rhs(tmp, k2);
    for (int i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * opt.dt * k2[i];
    eval_rhs(tmp, k3);
    for (int i = 0; i < n; ++i) tmp[i] = y[i] + opt.dt * k3[i];
    eval_rhs(tmp, k4);
    for (int i = 0; i < n; ++i)
      y[i] += opt.dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);

    t = static_cast<double>(step) * opt.dt;

    const double over = std::abs(y[0]) - 1.0;
    if (over > traj.max_overshoot) traj.max_overshoot = over;
    y[0] = std::clamp(y[0], -1.0, 1.0);

    bool finite = std::isfinite(y[0]);
    for (int k = 0; k <= K && finite; ++k) finite = std::isfinite(y[k + 1]);
    if (!finite) {
      // Report the last finite state; the reason flags what happened.
      y = ysafe;
      t -= opt.dt;
      if (traj.samples.empty() || traj.samples.back().t < t) record(t);
      reason = TerminalReason::diverged;
      traj.steps_taken = step;
      break;
    }
    ysafe = y;

    // Dead modes decay exponentially forever; snap them to zero before they
    // reach the subnormal range, where the stuck values would slow every
    // subsequent step by orders of magnitude.
    for (int i = 0; i < n; ++i)
      if (std::abs(y[i]) < 1e-300) y[i] = 0.0;

    for (int k = 0; k <= K; ++k)
      traj.coeff_abs_max[k] = std::max(traj.coeff_abs_max[k], std::abs(y[k + 1]));

    bool hit_now = false;
    const double am_prev = std::abs(m_prev), am = std::abs(y[0]);
    for (auto& p : pending) {
      if (p.hit || am < p.kappa) continue;
      const double denom = am - am_prev;
      const double frac = denom > 0.0 ? std::clamp((p.kappa - am_prev) / denom, 0.0, 1.0) : 1.0;
      traj.events.push_back({p.kappa, t - opt.dt + frac * opt.dt});
      p.hit = true;
      hit_now = true;
    }

    // Convergence: within 1e-10 (sup norm) of the attractor for 100 steps.
    double dist;
    if (opt.freeze_coeffs) {
      dist = std::numeric_limits<double>::infinity();
      for (double c : planted_limits) dist = std::min(dist, std::abs(y[0] - c));
    } else {
      const std::vector<double>& att = (y[0] >= 0.0) ? a_plus : a_minus;
      dist = std::abs(std::abs(y[0]) - 1.0);
      for (int k = 0; k <= K; ++k)
        dist = std::max(dist, std::abs(y[k + 1] - att[k]));
    }
    settle = (dist < 1e-10) ? settle + 1 : 0;

    const long stride = (am >= opt.dense_level) ? opt.dense_stride : opt.record_stride;
    const bool last = (step == nsteps) || (settle >= 100);
    if (hit_now || last || step % stride == 0) record(t);

    traj.steps_taken = step;
    if (settle >= 100) {
      reason = TerminalReason::converged;
      break;
    }
  }

  traj.terminal_reason = reason;
  traj.terminal.m = y[0];
  traj.terminal.a = HermiteExpansion(std::vector<double>(y.begin() + 1, y.end()));
  traj.terminal.t = t;
  return traj;
}

}  // namespace detail

inline Trajectory integrate_joint(const ReducedState& init, const TargetSpec& target,
                                  const IntegrateOptions& opt) {
  return detail::integrate_core(init, target, opt);
}

inline Trajectory integrate_joint(const ReducedState& init, const TargetSpec& target,
                                  double dt, double t_max,
                                  const std::vector<double>& levels = {}) {
  IntegrateOptions opt;
  opt.dt = dt;
  opt.t_max = t_max;
  opt.levels = levels;
  return detail::integrate_core(init, target, opt);
}

/// Planted flow: the joint integrator with coefficients pinned at a*.
inline Trajectory integrate_planted(double m0, const TargetSpec& target,
                                    const IntegrateOptions& opt) {
  IntegrateOptions popt = opt;
  popt.freeze_coeffs = true;
  ReducedState init{m0, target.a_star, 0.0};
  return detail::integrate_core(init, target, popt);
}

inline Trajectory integrate_planted(double m0, const TargetSpec& target,
                                    double dt, double t_max,
                                    const std::vector<double>& levels = {}) {
  IntegrateOptions opt;
  opt.dt = dt;
  opt.t_max = t_max;
  opt.levels = levels;
  return integrate_planted(m0, target, opt);
}

/// First time |m| reaches kappa. Uses the per-step event when the level was
/// tracked during integration, otherwise interpolates between samples.
inline std::optional<double> hitting_time(const Trajectory& traj, double kappa) {
  if (!(kappa > 0.0 && kappa < 1.0))
    throw std::invalid_argument("hitting_time: level must lie in (0, 1)");
  for (const auto& e : traj.events)
    if (e.kappa == kappa) return e.time;
  if (traj.samples.empty()) return std::nullopt;
  if (std::abs(traj.samples.front().m) >= kappa) return traj.samples.front().t;
  for (std::size_t i = 1; i < traj.samples.size(); ++i) {
    const double prev = std::abs(traj.samples[i - 1].m);
    const double cur = std::abs(traj.samples[i].m);
    if (cur >= kappa) {
      const double denom = cur - prev;
      const double frac = denom > 0.0 ? std::clamp((kappa - prev) / denom, 0.0, 1.0) : 1.0;
      return traj.samples[i - 1].t + frac * (traj.samples[i].t - traj.samples[i - 1].t);
    }
  }
  return std::nullopt;
}

/// Partial-equilibrium diagnostic u_k = a_k - a*_k m^k.
inline std::vector<double> equilibrium_gap(const ReducedState& state,
                                           const TargetSpec& target) {
  std::vector<double> u(state.a.coeffs.size());
  double pw = 1.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    u[k] = state.a.coeffs[k] - target.a_star.coeff(k) * pw;
    pw *= state.m;
  }
  return u;
}

/// Recovery criterion sum_k (a_k m^k - a*_k)^2: the effective coefficients
/// a_k m^k must reach a*_k regardless of which pole m lands on.
inline double effective_coeff_error(const ReducedState& state, const TargetSpec& target) {
  double s = 0.0;
  double pw = 1.0;
  const std::size_t kmax = std::max(state.a.coeffs.size(), target.a_star.coeffs.size());
  for (std::size_t k = 0; k < kmax; ++k) {
    const double ak = k < state.a.coeffs.size() ? state.a.coeffs[k] : 0.0;
    const double e = ak * pw - target.a_star.coeff(k);
    s += e * e;
    pw *= state.m;
  }
  return s;
}

}  // namespace indexflow::flow
