#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "indexflow/hermite.hpp"
#include "indexflow/rng.hpp"

using indexflow::Rng;
using indexflow::hermite::HermiteExpansion;
using Catch::Approx;

namespace hp = indexflow::hermite;

namespace {

HermiteExpansion basis(int k) {
  std::vector<double> c(k + 1, 0.0);
  c[k] = 1.0;
  return HermiteExpansion(std::move(c));
}

HermiteExpansion random_expansion(Rng& rng, int K) {
  std::vector<double> c(K + 1);
  for (int k = 0; k <= K; ++k) c[k] = rng.uniform_sym();
  return HermiteExpansion(std::move(c));
}

}  // namespace

TEST_CASE("basis evaluation matches the low-degree closed forms") {
  CHECK(hp::eval_basis(0, 3.7) == 1.0);
  CHECK(hp::eval_basis(1, 1.7) == 1.7);
  // h_2(z) = (z^2 - 1)/sqrt(2), h_3(z) = (z^3 - 3z)/sqrt(6)
  CHECK(hp::eval_basis(2, 1.0) == Approx(0.0).margin(1e-15));
  CHECK(hp::eval_basis(3, 2.0) == Approx(2.0 / std::sqrt(6.0)).epsilon(1e-13));
  CHECK(hp::eval_basis(3, 2.0) == Approx(0.816496580927726).epsilon(1e-12));
}

TEST_CASE("basis evaluation stays finite up to degree 64 on |z| <= 6") {
  for (int k = 0; k <= 64; ++k)
    for (double z = -6.0; z <= 6.0; z += 0.5) {
      CAPTURE(k, z);
      REQUIRE(std::isfinite(hp::eval_basis(k, z)));
    }
}

TEST_CASE("expansion evaluation") {
  CHECK(hp::eval_expansion(HermiteExpansion({0.0, 1.0}), 2.5) == 2.5);
  CHECK(hp::eval_expansion(HermiteExpansion({4.25}), -17.0) == 4.25);
  CHECK(hp::eval_expansion(HermiteExpansion({0.0, 0.0, 2.0}), 1.0) ==
        Approx(0.0).margin(1e-15));
  // One-pass accumulation agrees with summing basis values directly.
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_expansion(rng, 10);
    const double z = 3.0 * rng.uniform_sym();
    double direct = 0.0;
    for (int k = 0; k <= f.degree(); ++k) direct += f.coeffs[k] * hp::eval_basis(k, z);
    CHECK(hp::eval_expansion(f, z) == Approx(direct).margin(1e-12));
  }
}

TEST_CASE("expansion derivative") {
  CHECK(hp::eval_expansion_derivative(HermiteExpansion({0.0, 1.0}), 0.3) == 1.0);
  CHECK(hp::eval_expansion_derivative(HermiteExpansion({5.0}), 0.77) == 0.0);
  // h_2'(z) = sqrt(2) z
  CHECK(hp::eval_expansion_derivative(HermiteExpansion({0.0, 0.0, 1.0}), 2.0) ==
        Approx(2.0 * std::sqrt(2.0)).epsilon(1e-13));

  SECTION("matches central finite differences on random expansions") {
    Rng rng(7);
    const double h = 1e-5;
    for (int trial = 0; trial < 50; ++trial) {
      const int K = 1 + static_cast<int>(rng.uniform() * 12);
      const auto f = random_expansion(rng, K);
      const double z = 3.0 * rng.uniform_sym();
      const double fd = (hp::eval_expansion(f, z + h) - hp::eval_expansion(f, z - h)) / (2.0 * h);
      const double an = hp::eval_expansion_derivative(f, z);
      CAPTURE(K, z);
      CHECK(std::abs(an - fd) < 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("norms") {
  CHECK(hp::l2_norm_sq(HermiteExpansion({0.0, 1.0})) == 1.0);
  CHECK(hp::l2_norm_sq(HermiteExpansion({1.0, 1.0, 1.0})) == 3.0);
  CHECK(hp::l2_norm_sq(HermiteExpansion({0.0, 0.0, 2.0, 0.0, -1.0})) == 5.0);

  CHECK(hp::sobolev_norm_sq(HermiteExpansion({0.0, 1.0}), 1) == 1.0);
  // The constant term only enters at j = 0; k^{2j} kills it for j >= 1.
  CHECK(hp::sobolev_norm_sq(HermiteExpansion({1.0, 0.0, 0.0}), 5) == 0.0);
  CHECK(hp::sobolev_norm_sq(HermiteExpansion({1.0, 0.0, 0.0}), 0) == 1.0);
  CHECK(hp::sobolev_norm_sq(HermiteExpansion({0.0, 0.0, 1.0, 1.0}), 1) == 13.0);
  // j = 0 recovers the plain L2 norm (0^0 = 1 convention).
  Rng rng(5);
  const auto f = random_expansion(rng, 9);
  CHECK(hp::sobolev_norm_sq(f, 0) == hp::l2_norm_sq(f));
}

TEST_CASE("smoothing operator") {
  Rng rng(9);
  const auto f = random_expansion(rng, 8);

  SECTION("m = 1 is the identity, m = 0 keeps only the mean") {
    const auto id = hp::smooth(f, 1.0);
    for (int k = 0; k <= f.degree(); ++k) CHECK(id.coeffs[k] == f.coeffs[k]);
    const auto mean = hp::smooth(f, 0.0);
    CHECK(mean.coeffs[0] == f.coeffs[0]);
    for (int k = 1; k <= f.degree(); ++k) CHECK(mean.coeffs[k] == 0.0);
  }

  SECTION("diagonal action a_k -> a_k m^k") {
    const auto g = hp::smooth(HermiteExpansion({0.0, 0.0, 1.0}), 0.5);
    CHECK(g.coeffs[2] == Approx(0.25));
  }

  SECTION("semigroup: T_{m2} T_{m1} = T_{m1 m2}") {
    for (int trial = 0; trial < 20; ++trial) {
      const double m1 = rng.uniform_sym(), m2 = rng.uniform_sym();
      const auto lhs = hp::smooth(hp::smooth(f, m1), m2);
      const auto rhs = hp::smooth(f, m1 * m2);
      for (int k = 0; k <= f.degree(); ++k)
        CHECK(lhs.coeffs[k] == Approx(rhs.coeffs[k]).margin(1e-12));
    }
  }

  SECTION("Monte-Carlo conditional expectation: E_Z[h_2(m y + sqrt(1-m^2) Z)]") {
    const double m = 0.6;
    Rng mc(11);
    for (double y : {0.5, 1.7, -1.1}) {
      const long n = 400000;
      double mean = 0.0;
      for (long i = 0; i < n; ++i) {
        const double z = m * y + std::sqrt(1.0 - m * m) * mc.normal();
        mean += hp::eval_basis(2, z);
      }
      mean /= static_cast<double>(n);
      CHECK(mean == Approx(m * m * hp::eval_basis(2, y)).margin(6e-3));
    }
  }

  SECTION("rejects |m| > 1") {
    CHECK_THROWS_AS(hp::smooth(f, 1.0 + 1e-12), std::domain_error);
  }
}

TEST_CASE("Gauss-Hermite rules") {
  SECTION("one node: the mean of gamma") {
    const auto rule = hp::gauss_hermite_rule(1);
    REQUIRE(rule.nodes.size() == 1);
    CHECK(std::abs(rule.nodes[0]) < 1e-14);
    CHECK(rule.weights[0] == Approx(1.0));
  }

  SECTION("two nodes: +-1 with weight 1/2, integrating z^2 exactly") {
    const auto rule = hp::gauss_hermite_rule(2);
    REQUIRE(rule.nodes.size() == 2);
    CHECK(rule.nodes[0] == Approx(-1.0).margin(1e-13));
    CHECK(rule.nodes[1] == Approx(1.0).margin(1e-13));
    CHECK(rule.weights[0] == Approx(0.5).margin(1e-14));
    CHECK(rule.weights[1] == Approx(0.5).margin(1e-14));
    double second_moment = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i)
      second_moment += rule.weights[i] * rule.nodes[i] * rule.nodes[i];
    CHECK(second_moment == Approx(1.0).margin(1e-13));
  }

  SECTION("weights sum to one") {
    for (int n : {3, 7, 16, 33, 64}) {
      const auto rule = hp::gauss_hermite_rule(n);
      double s = 0.0;
      for (double w : rule.weights) s += w;
      CHECK(s == Approx(1.0).margin(1e-12));
    }
  }

  SECTION("n nodes integrate moments up to degree 2n - 1 exactly") {
    const auto rule = hp::gauss_hermite_rule(3);
    // E[z^4] = 3, E[z^5] = 0 under gamma
    double m4 = 0.0, m5 = 0.0;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
      const double z = rule.nodes[i];
      m4 += rule.weights[i] * z * z * z * z;
      m5 += rule.weights[i] * z * z * z * z * z;
    }
    CHECK(m4 == Approx(3.0).margin(1e-12));
    CHECK(m5 == Approx(0.0).margin(1e-12));
  }

  SECTION("rejects n = 0") {
    CHECK_THROWS_AS(hp::gauss_hermite_rule(0), std::domain_error);
  }
}

TEST_CASE("quadrature inner products") {
  const auto rule = hp::gauss_hermite_rule(64);

  SECTION("orthonormality of degrees 0..20 under the 64-node rule") {
    double worst = 0.0;
    for (int i = 0; i <= 20; ++i)
      for (int j = 0; j <= 20; ++j) {
        const double ip = hp::inner_product_quadrature(basis(i), basis(j), rule);
        worst = std::max(worst, std::abs(ip - (i == j ? 1.0 : 0.0)));
      }
    CHECK(worst < 1e-8);
  }

  SECTION("E[z^2] = 1") {
    const HermiteExpansion id({0.0, 1.0});
    CHECK(hp::inner_product_quadrature(id, id, rule) == Approx(1.0).margin(1e-12));
  }

  SECTION("Parseval on random expansions") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      const auto f = random_expansion(rng, 12);
      CHECK(hp::inner_product_quadrature(f, f, rule) ==
            Approx(hp::l2_norm_sq(f)).margin(1e-10));
    }
  }
}

TEST_CASE("expansion validation") {
  CHECK_THROWS_AS(HermiteExpansion(std::vector<double>{}), std::invalid_argument);
  CHECK_THROWS_AS(HermiteExpansion({1.0, std::nan("")}), std::invalid_argument);
  CHECK_THROWS_AS(HermiteExpansion({std::numeric_limits<double>::infinity()}),
                  std::invalid_argument);
}

TEST_CASE("flip negates odd coefficients and realizes f(-z)") {
  Rng rng(17);
  const auto f = random_expansion(rng, 9);
  const auto g = hp::flip(f);
  for (int trial = 0; trial < 10; ++trial) {
    const double z = 2.5 * rng.uniform_sym();
    CHECK(hp::eval_expansion(g, z) == Approx(hp::eval_expansion(f, -z)).margin(1e-12));
  }
}
