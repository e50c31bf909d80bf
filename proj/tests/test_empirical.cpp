#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include <Eigen/Dense>

#include "indexflow/empirical.hpp"
#include "indexflow/flow.hpp"
#include "indexflow/rng.hpp"

using indexflow::Rng;
using indexflow::hermite::HermiteExpansion;
using indexflow::loss::TargetSpec;
using Catch::Approx;

namespace em = indexflow::emp;
namespace hp = indexflow::hermite;
namespace fl = indexflow::flow;
namespace sl = indexflow::loss;

namespace {

HermiteExpansion random_expansion(Rng& rng, int K, double scale = 1.0) {
  std::vector<double> c(K + 1);
  for (int k = 0; k <= K; ++k) c[k] = scale * rng.uniform_sym();
  return HermiteExpansion(std::move(c));
}

Eigen::VectorXd random_unit(Rng& rng, int d) {
  Eigen::VectorXd v(d);
  for (int j = 0; j < d; ++j) v[j] = rng.normal();
  v.normalize();
  return v;
}

// Direction with a pinned correlation against w*.
Eigen::VectorXd unit_with_overlap(Rng& rng, const Eigen::VectorXd& w_star, double m0) {
  Eigen::VectorXd g(w_star.size());
  for (Eigen::Index j = 0; j < g.size(); ++j) g[j] = rng.normal();
  Eigen::VectorXd v = g - w_star.dot(g) * w_star;
  v.normalize();
  Eigen::VectorXd w = m0 * w_star + std::sqrt(1.0 - m0 * m0) * v;
  w.normalize();
  return w;
}

}  // namespace

TEST_CASE("dataset generation") {
  SECTION("identity link with zero noise reproduces the projections") {
    const TargetSpec target(HermiteExpansion({0.0, 1.0}), 0.0);
    const auto data = em::generate_dataset(500, 6, target, 11);
    CHECK(std::abs(data.w_star.norm() - 1.0) < 1e-12);
    for (long i = 0; i < data.n(); ++i) {
      const double z = data.inputs.row(i) * data.w_star;
      CHECK(data.labels[i] == Approx(z).margin(1e-12));
    }
  }

  SECTION("label mean estimates the constant coefficient") {
    const TargetSpec target(HermiteExpansion({0.7, 0.0, 1.5}), 0.3);
    const long n = 40000;
    const auto data = em::generate_dataset(n, 8, target, 12);
    const double mean = data.labels.mean();
    const double var_y = hp::l2_norm_sq(target.a_star) - 0.49 + target.noise_var;
    CHECK(std::abs(mean - 0.7) < 4.0 * std::sqrt(var_y / static_cast<double>(n)));
  }

  SECTION("projections have unit variance") {
    const TargetSpec target(HermiteExpansion({0.0, 1.0}), 0.0);
    const long n = 30000;
    const auto data = em::generate_dataset(n, 10, target, 13);
    const Eigen::VectorXd z = data.inputs * data.w_star;
    const double mean = z.mean();
    const double var = (z.array() - mean).square().sum() / static_cast<double>(n - 1);
    CHECK(std::abs(var - 1.0) < 4.0 * std::sqrt(2.0 / static_cast<double>(n)));
  }

  SECTION("rejects degenerate sizes") {
    const TargetSpec target(HermiteExpansion({0.0, 1.0}), 0.0);
    CHECK_THROWS_AS(em::generate_dataset(0, 5, target, 1), std::invalid_argument);
    CHECK_THROWS_AS(em::generate_dataset(5, 1, target, 1), std::invalid_argument);
  }
}

TEST_CASE("kernel and feature map") {
  SECTION("length-one weight list gives the constant kernel") {
    const em::KernelSpec spec({1.0}, 0.0);
    CHECK(em::kernel_eval(spec, 0.3, -2.0) == Approx(1.0));
  }

  SECTION("symmetry and the feature-map identity") {
    Rng rng(14);
    const auto spec = em::KernelSpec::power_decay(12);
    for (int trial = 0; trial < 50; ++trial) {
      const double x = 2.5 * rng.uniform_sym(), y = 2.5 * rng.uniform_sym();
      const double kxy = em::kernel_eval(spec, x, y);
      CHECK(kxy == Approx(em::kernel_eval(spec, y, x)).margin(1e-14));
      const auto fx = em::feature_map(spec, x), fy = em::feature_map(spec, y);
      double ip = 0.0;
      for (std::size_t k = 0; k < fx.size(); ++k) ip += fx[k] * fy[k];
      CHECK(std::abs(ip - kxy) < 1e-12);
    }
  }

  SECTION("unit weights reduce the feature map to basis values") {
    const em::KernelSpec spec(std::vector<double>(7, 1.0), 0.0);
    const auto f = em::feature_map(spec, 1.3);
    for (int k = 0; k <= 6; ++k) CHECK(f[k] == Approx(hp::eval_basis(k, 1.3)).margin(1e-14));
  }

  SECTION("Gram matrices are positive semidefinite") {
    Rng rng(15);
    const auto spec = em::KernelSpec::power_decay(10);
    const int npts = 50;
    Eigen::MatrixXd gram(npts, npts);
    std::vector<double> pts(npts);
    for (int i = 0; i < npts; ++i) pts[i] = 3.0 * rng.uniform_sym();
    for (int i = 0; i < npts; ++i)
      for (int j = 0; j < npts; ++j) gram(i, j) = em::kernel_eval(spec, pts[i], pts[j]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    CHECK(es.eigenvalues().minCoeff() > -1e-8);
  }

  SECTION("RKHS norm in coefficient coordinates") {
    const em::KernelSpec spec({1.0, 0.5, 0.25}, 0.0);
    const HermiteExpansion f({2.0, 1.0, 0.5});
    CHECK(em::rkhs_norm_sq(f, spec) == Approx(4.0 + 2.0 + 1.0));
  }

  SECTION("weights must be positive") {
    CHECK_THROWS_AS(em::KernelSpec({1.0, 0.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(em::KernelSpec({1.0}, -0.5), std::invalid_argument);
  }
}

TEST_CASE("empirical loss") {
  Rng rng(16);
  const int d = 8, K = 5;
  const TargetSpec target(random_expansion(rng, K), 0.0);
  const auto data = em::generate_dataset(5000, d, target, 21);
  const auto spec = em::KernelSpec::power_decay(K);

  SECTION("zero at the truth with zero noise and no ridge") {
    // The trainer's table-driven recurrence rounds differently from the
    // reference evaluator used for the labels, so "zero" means round-off.
    em::TrainState truth{data.w_star, target.a_star, 0};
    CHECK(em::empirical_loss(truth, data, spec) < 1e-24);
  }

  SECTION("zero model: half the mean squared label") {
    std::vector<double> zeros(K + 1, 0.0);
    em::TrainState state{random_unit(rng, d), HermiteExpansion(zeros), 0};
    const double expect = data.labels.squaredNorm() / (2.0 * data.n());
    em::KernelSpec ridged = spec;
    ridged.mu = 3.7;  // regularizer vanishes at the origin
    CHECK(em::empirical_loss(state, data, ridged) == Approx(expect).margin(1e-12));
  }

  SECTION("matches a direct per-sample computation and the closed form") {
    const auto a = random_expansion(rng, K);
    const auto w = random_unit(rng, d);
    em::TrainState state{w, a, 0};
    double mean = 0.0, m2 = 0.0;
    for (long i = 0; i < data.n(); ++i) {
      const double z = data.inputs.row(i) * w;
      const double r = hp::eval_expansion(a, z) - data.labels[i];
      const double li = 0.5 * r * r;
      const double delta = li - mean;
      mean += delta / static_cast<double>(i + 1);
      m2 += delta * (li - mean);
    }
    const double direct = mean;
    const double se = std::sqrt(m2 / (data.n() - 1.0) / data.n());
    CHECK(em::empirical_loss(state, data, spec) == Approx(direct).epsilon(1e-10));
    CHECK(std::abs(direct - sl::closed_loss(a, target, w.dot(data.w_star))) <
          4.0 * se + 1e-12);
  }

  SECTION("rejects dimension mismatches") {
    em::TrainState bad{random_unit(rng, d + 1), target.a_star, 0};
    CHECK_THROWS_AS(em::empirical_loss(bad, data, spec), std::invalid_argument);
    em::TrainState bad2{data.w_star, HermiteExpansion({1.0}), 0};
    CHECK_THROWS_AS(em::empirical_loss(bad2, data, spec), std::invalid_argument);
  }
}

TEST_CASE("empirical gradients") {
  Rng rng(17);

  SECTION("tangency and agreement with finite differences") {
    const double h = 1e-6;
    for (int trial = 0; trial < 10; ++trial) {
      const int d = 6, K = 4;
      const TargetSpec target(random_expansion(rng, K), 0.1);
      const auto data = em::generate_dataset(200, d, target, 500 + trial);
      const em::KernelSpec spec = em::KernelSpec::power_decay(K, trial % 2 ? 0.05 : 0.0);
      em::TrainState state{random_unit(rng, d), random_expansion(rng, K), 0};
      const auto g = em::empirical_grads(state, data, spec);
      CHECK(std::abs(g.grad_w.dot(state.w)) < 1e-10);

      for (int k = 0; k <= K; ++k) {
        auto cu = state.a.coeffs, cd = state.a.coeffs;
        cu[k] += h;
        cd[k] -= h;
        em::TrainState up{state.w, HermiteExpansion(cu), 0};
        em::TrainState dn{state.w, HermiteExpansion(cd), 0};
        const double fd = (em::empirical_loss(up, data, spec) -
                           em::empirical_loss(dn, data, spec)) /
                          (2.0 * h);
        CHECK(std::abs(g.grad_a[k] - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
      }

      Eigen::VectorXd raw_fd(d);
      for (int j = 0; j < d; ++j) {
        em::TrainState up = state, dn = state;
        up.w[j] += h;
        dn.w[j] -= h;
        raw_fd[j] = (em::empirical_loss(up, data, spec) -
                     em::empirical_loss(dn, data, spec)) /
                    (2.0 * h);
      }
      const Eigen::VectorXd fd_tan = raw_fd - state.w.dot(raw_fd) * state.w;
      CHECK((fd_tan - g.grad_w).cwiseAbs().maxCoeff() <
            1e-5 * std::max(1.0, fd_tan.cwiseAbs().maxCoeff()));
    }
  }

  SECTION("both gradients vanish at the global minimum") {
    const int d = 7, K = 4;
    const TargetSpec target(random_expansion(rng, K), 0.0);
    const auto data = em::generate_dataset(300, d, target, 77);
    const auto spec = em::KernelSpec::power_decay(K);
    em::TrainState truth{data.w_star, target.a_star, 0};
    const auto g = em::empirical_grads(truth, data, spec);
    for (double gk : g.grad_a) CHECK(std::abs(gk) < 1e-12);
    CHECK(g.grad_w.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("joint training") {
  Rng rng(18);

  SECTION("stationary at the truth") {
    const int d = 6, K = 3;
    const TargetSpec target(random_expansion(rng, K), 0.0);
    const auto data = em::generate_dataset(400, d, target, 31);
    const auto spec = em::KernelSpec::power_decay(K);
    em::TrainState truth{data.w_star, target.a_star, 0};
    const auto trace = em::train_joint(data, spec, 1e-2, 50, truth, 10);
    CHECK(trace.status == em::TrainStatus::completed);
    CHECK((trace.final_state.w - data.w_star).cwiseAbs().maxCoeff() < 1e-12);
    for (int k = 0; k <= K; ++k)
      CHECK(trace.final_state.a.coeffs[k] ==
            Approx(target.a_star.coeffs[k]).margin(1e-12));
  }

  SECTION("loss descends monotonically at small step size") {
    const int d = 15, K = 6;
    const TargetSpec target(HermiteExpansion({0.0, 0.0, 2.0}), 0.01);
    const auto data = em::generate_dataset(2000, d, target, 32);
    const auto spec = em::KernelSpec::power_decay(K);
    em::TrainState init{random_unit(rng, d), random_expansion(rng, K, 0.5), 0};
    const auto trace = em::train_joint(data, spec, 1e-3, 800, init, 1);
    REQUIRE(trace.status == em::TrainStatus::completed);
    long increases = 0;
    for (std::size_t i = 1; i < trace.records.size(); ++i)
      if (trace.records[i].loss > trace.records[i - 1].loss + 1e-15) ++increases;
    CHECK(increases <= static_cast<long>(trace.records.size() / 100));
    CHECK(trace.max_norm_drift < 1e-9);
  }

  SECTION("ridge keeps the RKHS norm below the unregularized run") {
    const int d = 10, K = 6;
    const TargetSpec target(HermiteExpansion({0.0, 0.0, 2.0}), 0.05);
    const auto data = em::generate_dataset(1500, d, target, 33);
    const auto plain = em::KernelSpec::power_decay(K, 0.0);
    const auto ridged = em::KernelSpec::power_decay(K, 0.1);
    em::TrainState init{random_unit(rng, d), random_expansion(rng, K, 0.5), 0};
    const auto t0 = em::train_joint(data, plain, 5e-3, 400, init, 50);
    const auto t1 = em::train_joint(data, ridged, 5e-3, 400, init, 50);
    REQUIRE(t0.records.size() == t1.records.size());
    for (std::size_t i = 1; i < t0.records.size(); ++i) {
      const double n0 = em::rkhs_norm_sq(HermiteExpansion(t0.records[i].a), plain);
      const double n1 = em::rkhs_norm_sq(HermiteExpansion(t1.records[i].a), plain);
      CHECK(n1 <= n0 + 1e-9);
    }
  }

  SECTION("oversized steps abort with diverged status") {
    const int d = 6, K = 4;
    const TargetSpec target(HermiteExpansion({0.0, 0.0, 2.0}), 0.0);
    const auto data = em::generate_dataset(300, d, target, 34);
    const auto spec = em::KernelSpec::power_decay(K);
    em::TrainState init{random_unit(rng, d), random_expansion(rng, K), 0};
    const auto trace = em::train_joint(data, spec, 50.0, 4000, init, 100);
    CHECK(trace.status == em::TrainStatus::diverged);
  }
}

TEST_CASE("descent tracks the idealized flow as the step size shrinks") {
  const int d = 30, K = 6;
  const TargetSpec target(HermiteExpansion({0.0, 0.0, 2.0}), 0.0);
  const auto data = em::generate_dataset(30000, d, target, 55);
  const auto spec = em::KernelSpec::power_decay(K);

  Rng rng(56);
  const double m0 = 0.3;
  const Eigen::VectorXd w0 = unit_with_overlap(rng, data.w_star, m0);
  std::vector<double> a0(K + 1);
  for (int k = 0; k <= K; ++k) a0[k] = (k == 0) ? 0.2 : 0.5 / (k * k);

  const double horizon = 3.0;
  fl::ReducedState init{w0.dot(data.w_star), HermiteExpansion(a0), 0.0};
  const auto ode = fl::integrate_joint(init, target, 1e-4, horizon);
  const double m_ode = ode.terminal.m;

  std::vector<double> gaps;
  for (double lr : {1e-1, 1e-2, 1e-3}) {
    const long steps = static_cast<long>(horizon / lr);
    em::TrainState start{w0, HermiteExpansion(a0), 0};
    const auto trace = em::train_joint(data, spec, lr, steps, start, steps);
    REQUIRE(trace.status == em::TrainStatus::completed);
    gaps.push_back(std::abs(trace.final_state.w.dot(data.w_star) - m_ode));
  }
  CAPTURE(gaps[0], gaps[1], gaps[2]);
  CHECK(gaps[1] < gaps[0]);
  CHECK(gaps[2] < gaps[1]);
}

TEST_CASE("prediction") {
  Rng rng(19);
  const int d = 6, K = 4;
  const TargetSpec target(random_expansion(rng, K), 0.0);
  const auto data = em::generate_dataset(50, d, target, 40);

  SECTION("the truth reproduces noiseless labels") {
    em::TrainState truth{data.w_star, target.a_star, 0};
    for (long i = 0; i < data.n(); ++i)
      CHECK(em::predict(truth, data.inputs.row(i).transpose()) ==
            Approx(data.labels[i]).margin(1e-12));
  }

  SECTION("constant model") {
    em::TrainState state{random_unit(rng, d), HermiteExpansion({3.25}), 0};
    CHECK(em::predict(state, data.inputs.row(0).transpose()) == 3.25);
  }

  SECTION("invariant under (w, a) -> (-w, flip(a))") {
    em::TrainState state{random_unit(rng, d), random_expansion(rng, K), 0};
    em::TrainState mirrored{-state.w, hp::flip(state.a), 0};
    for (long i = 0; i < 10; ++i) {
      const Eigen::VectorXd x = data.inputs.row(i).transpose();
      CHECK(em::predict(state, x) == Approx(em::predict(mirrored, x)).margin(1e-12));
    }
  }

  SECTION("rejects dimension mismatch") {
    em::TrainState state{random_unit(rng, d), target.a_star, 0};
    CHECK_THROWS_AS(em::predict(state, Eigen::VectorXd::Zero(d + 2)),
                    std::invalid_argument);
  }
}

TEST_CASE("truncation tail bound") {
  Rng rng(20);
  for (int trial = 0; trial < 100; ++trial) {
    const auto f = random_expansion(rng, 64);
    const double h1 = hp::sobolev_norm_sq(f, 1);
    for (int kk : {4, 8, 16, 32}) {
      double tail = 0.0;
      for (int k = kk + 1; k <= 64; ++k) tail += f.coeffs[k] * f.coeffs[k];
      CHECK(tail <= h1 / (static_cast<double>(kk) * kk) + 1e-12);
    }
  }
}

TEST_CASE("dataset round-trips") {
  Rng rng(22);
  const TargetSpec target(random_expansion(rng, 4), 0.25);
  const auto data = em::generate_dataset(64, 5, target, 99);
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "indexflow_test_io";
  fs::create_directories(dir);

  SECTION("binary") {
    const std::string path = (dir / "data.ixfd").string();
    em::save_dataset_binary(data, path);
    const auto back = em::load_dataset_binary(path);
    REQUIRE(back.n() == data.n());
    REQUIRE(back.d() == data.d());
    CHECK(back.target.noise_var == data.target.noise_var);
    CHECK((back.inputs - data.inputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.labels - data.labels).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.w_star - data.w_star).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("csv") {
    const std::string path = (dir / "data.csv").string();
    em::save_dataset_csv(data, path);
    const auto back = em::load_dataset_csv(path);
    REQUIRE(back.n() == data.n());
    REQUIRE(back.d() == data.d());
    CHECK(back.target.noise_var == data.target.noise_var);
    CHECK((back.inputs - data.inputs).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.labels - data.labels).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.w_star - data.w_star).cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("binary loader rejects foreign files") {
    const std::string path = (dir / "bogus.bin").string();
    std::ofstream(path) << "not a dataset";
    CHECK_THROWS_AS(em::load_dataset_binary(path), std::runtime_error);
  }
}
