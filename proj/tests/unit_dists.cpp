#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <vector>

#include "support/testutil.hpp"
#include "vmm/dists.hpp"
#include "vmm/linalg.hpp"
#include "vmm/param_store.hpp"
#include "vmm/rng.hpp"

using namespace vmm;
namespace nd = vmm::ndgrad;
using dists::DiagGaussian;
using testutil::rand_tensor;

namespace {

double integrate(const std::function<double(double)>& f, double a, double b) {
  return boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, a, b, 12, 1e-9);
}

double gamma_logpdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) -
         rate * x;
}

} // namespace

TEST_CASE("diag gauss logpdf reference points") {
  DiagGaussian g{Tensor::vector({0}), Tensor::vector({1})};
  CHECK(dists::diag_gauss_logpdf(Tensor::vector({0}), g) ==
        doctest::Approx(-0.9189385332046727).epsilon(1e-12));
  CHECK(dists::diag_gauss_logpdf(Tensor::vector({1}), g) ==
        doctest::Approx(-1.4189385332046727).epsilon(1e-12));
}

TEST_CASE("diag gauss logpdf matches independent evaluation at p=5") {
  Rng rng(21);
  Tensor z = rand_tensor({5}, rng, -3, 3);
  Tensor m = rand_tensor({5}, rng, -2, 2);
  Tensor s = rand_tensor({5}, rng, 0.2, 4.0);
  // Independent path: long-double accumulation in a different term order.
  long double acc = 0;
  for (int d = 4; d >= 0; --d) {
    const long double diff = static_cast<long double>(z[d]) - m[d];
    acc -= 0.5L * std::log(2.0L * std::numbers::pi_v<long double> * s[d]);
    acc -= diff * diff / (2.0L * s[d]);
  }
  CHECK(dists::diag_gauss_logpdf(z, DiagGaussian{m, s}) ==
        doctest::Approx(static_cast<double>(acc)).epsilon(1e-13));
}

TEST_CASE("diag gauss rejects bad inputs") {
  CHECK_THROWS(dists::diag_gauss_logpdf(
      Tensor::vector({0}), DiagGaussian{Tensor::vector({0}), Tensor::vector({0})}));
  CHECK_THROWS(dists::diag_gauss_logpdf(
      Tensor::vector({0}), DiagGaussian{Tensor::vector({0}), Tensor::vector({-1})}));
  CHECK_THROWS(dists::diag_gauss_logpdf(
      Tensor::vector({0, 0}), DiagGaussian{Tensor::vector({0}), Tensor::vector({1})}));
}

TEST_CASE("precision gauss logpdf reference points") {
  CHECK(dists::prec_gauss_logpdf(Tensor::vector({0, 0}), Tensor::vector({0, 0}),
                                 Tensor::identity(2)) ==
        doctest::Approx(-1.8378770664093453).epsilon(1e-12));
  CHECK(dists::prec_gauss_logpdf(Tensor::vector({0.7}), Tensor::vector({0.7}),
                                 Tensor({1, 1}, {2})) ==
        doctest::Approx(-0.2257913526447274).epsilon(1e-12));
}

TEST_CASE("precision gauss agrees with diagonal parameterization") {
  Rng rng(31);
  const std::size_t p = 4;
  Tensor z = rand_tensor({p}, rng, -2, 2);
  Tensor m = rand_tensor({p}, rng, -2, 2);
  Tensor L({p, p});
  Tensor s({p});
  for (std::size_t d = 0; d < p; ++d) {
    const double l = 0.5 + 2.0 * rng.uniform();
    L.at(d, d) = l;
    s[d] = 1.0 / (l * l);
  }
  CHECK(dists::prec_gauss_logpdf(z, m, L) ==
        doctest::Approx(dists::diag_gauss_logpdf(z, DiagGaussian{m, s})).epsilon(1e-12));
}

TEST_CASE("precision and covariance parameterizations agree") {
  Rng rng(32);
  const std::size_t p = 3;
  Tensor B = rand_tensor({p, p}, rng);
  Tensor A({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = i == j ? 1.0 : 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += B.at(i, k) * B.at(j, k);
      A.at(i, j) = acc;
    }
  Tensor L = linalg::cholesky(A);
  Tensor Linv = linalg::tri_invert_lower(L);
  Tensor C({p, p}); // (L L^T)^{-1} = L^{-T} L^{-1}
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0;
      for (std::size_t k = std::max(i, j); k < p; ++k)
        acc += Linv.at(k, i) * Linv.at(k, j);
      C.at(i, j) = acc;
    }
  Tensor z = rand_tensor({p}, rng, -2, 2);
  Tensor m = rand_tensor({p}, rng, -1, 1);
  CHECK(std::fabs(dists::prec_gauss_logpdf(z, m, L) - dists::cov_gauss_logpdf(z, m, C)) <
        1e-10);
}

TEST_CASE("covariance gauss reference point and diagonal case") {
  Tensor C2 = Tensor({2, 2}, {2, 0, 0, 2});
  CHECK(dists::cov_gauss_logpdf(Tensor::vector({1, -1}), Tensor::vector({1, -1}), C2) ==
        doctest::Approx(-2.5310242469692907).epsilon(1e-12));
  Rng rng(33);
  Tensor z = rand_tensor({3}, rng, -2, 2);
  Tensor m = rand_tensor({3}, rng, -1, 1);
  Tensor s = rand_tensor({3}, rng, 0.3, 3.0);
  Tensor C({3, 3});
  for (std::size_t d = 0; d < 3; ++d) C.at(d, d) = s[d];
  CHECK(dists::cov_gauss_logpdf(z, m, C) ==
        doctest::Approx(dists::diag_gauss_logpdf(z, DiagGaussian{m, s})).epsilon(1e-12));
}

TEST_CASE("covariance gauss matches monte-carlo convolution") {
  // E_{mu ~ N(m, I)} N(z; mu, I) should equal N(z; m, 2I).
  Rng rng(34);
  Tensor m = Tensor::vector({0.4, -0.9});
  Tensor z = Tensor::vector({1.1, 0.2});
  Tensor ones = Tensor::vector({1, 1});
  const int n = 1000000;
  double acc = 0, acc2 = 0;
  for (int i = 0; i < n; ++i) {
    Tensor mu = dists::diag_gauss_sample(DiagGaussian{m, ones}, rng);
    const double v = std::exp(dists::diag_gauss_logpdf(z, DiagGaussian{mu, ones}));
    acc += v;
    acc2 += v * v;
  }
  const double mean = acc / n;
  const double se = std::sqrt((acc2 / n - mean * mean) / n);
  Tensor C = Tensor({2, 2}, {2, 0, 0, 2});
  const double target = std::exp(dists::cov_gauss_logpdf(z, m, C));
  CHECK(std::fabs(mean - target) < 3.0 * se);
}

TEST_CASE("dirichlet logpdf reference points") {
  CHECK(dists::dirichlet_logpdf(Tensor::vector({1.0 / 3, 1.0 / 3, 1.0 / 3}), 3.0) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));
  CHECK(dists::dirichlet_logpdf(Tensor::vector({0.5, 0.5}), 1.0) ==
        doctest::Approx(-0.4515827052894549).epsilon(1e-12));
}

TEST_CASE("dirichlet logpdf symmetry and domain") {
  Tensor pi = Tensor::vector({0.6, 0.3, 0.1});
  Tensor perm = Tensor::vector({0.1, 0.6, 0.3});
  CHECK(dists::dirichlet_logpdf(pi, 2.4) ==
        doctest::Approx(dists::dirichlet_logpdf(perm, 2.4)).epsilon(1e-13));
  CHECK_THROWS(dists::dirichlet_logpdf(Tensor::vector({1.0, 0.0}), 2.0));
  CHECK_THROWS(dists::dirichlet_logpdf(Tensor::vector({0.7, 0.7}), 2.0));
  CHECK_THROWS(dists::dirichlet_logpdf(Tensor::vector({0.5, 0.5}), 0.0));
}

TEST_CASE("dirichlet density integrates to one at K=2") {
  // Concentration alpha/K = 2 keeps the density smooth at the boundary, where
  // quadrature is reliable.
  const double alpha = 4.0;
  auto f = [&](double x) {
    return std::exp(dists::dirichlet_logpdf(Tensor::vector({x, 1.0 - x}), alpha));
  };
  CHECK(integrate(f, 1e-12, 1.0 - 1e-12) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("dirichlet gradient through softmax matches finite differences") {
  Rng rng(35);
  ParamStore ps;
  ps.add("logits", rand_tensor({4}, rng, -1, 1));
  ps.add("raw_alpha", Tensor::scalar(0.8));
  auto f = [](const VarMap& v) {
    auto log_pi = nd::log_softmax(v.at("logits"));
    auto alpha = nd::softplus(v.at("raw_alpha"));
    return dists::dirichlet_logpdf_g(log_pi, alpha, 4);
  };
  CHECK(testutil::fd_max_rel_err(ps, f) < 1e-4);
}

TEST_CASE("wishart reduces to gamma at p=1 over a grid") {
  // Lambda = lambda (1x1), V = v: Wishart(nu, v) is Gamma(nu/2, rate 1/(2v)).
  const double nu = 3.0;
  for (int a = 0; a < 10; ++a)
    for (int b = 0; b < 10; ++b) {
      const double lam = 0.1 + 1.05 * a;
      const double v = 0.2 + 0.5 * b;
      Tensor L({1, 1}, {std::sqrt(lam)});
      Tensor V({1, 1}, {v});
      const double got = dists::wishart_logpdf(L, nu, V);
      const double want = gamma_logpdf(lam, 1.5, 1.0 / (2.0 * v));
      CHECK(got == doctest::Approx(want).epsilon(1e-8));
    }
}

TEST_CASE("wishart hyper-parameters put the mean at K^(1/p) I") {
  auto h = dists::wishart_hyper(2, 100);
  CHECK(h.nu == doctest::Approx(4.0));
  CHECK(h.v == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(h.nu * h.v == doctest::Approx(10.0).epsilon(1e-12)); // K^(1/2) = 10
  auto h1 = dists::wishart_hyper(1, 50);
  CHECK(h1.nu * h1.v == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("wishart invariant under permutation when V is spherical") {
  Rng rng(36);
  const std::size_t p = 3;
  Tensor B = rand_tensor({p, p}, rng);
  Tensor A({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = i == j ? 0.5 : 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += B.at(i, k) * B.at(j, k);
      A.at(i, j) = acc;
    }
  // Permutation (2,0,1) applied to rows and columns.
  const std::size_t perm[3] = {2, 0, 1};
  Tensor Ap({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) Ap.at(i, j) = A.at(perm[i], perm[j]);
  Tensor V({p, p});
  for (std::size_t d = 0; d < p; ++d) V.at(d, d) = 1.3;
  const double base = dists::wishart_logpdf(linalg::cholesky(A), 5.0, V);
  const double permuted = dists::wishart_logpdf(linalg::cholesky(Ap), 5.0, V);
  CHECK(base == doctest::Approx(permuted).epsilon(1e-10));
}

TEST_CASE("wishart density integrates to one at p=1") {
  const double nu = 3.0, v = 0.7;
  auto f = [&](double lam) {
    Tensor L({1, 1}, {std::sqrt(lam)});
    return std::exp(dists::wishart_logpdf(L, nu, Tensor({1, 1}, {v})));
  };
  CHECK(integrate(f, 1e-10, 60.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("wishart rejects invalid degrees of freedom") {
  CHECK_THROWS(dists::wishart_logpdf(Tensor::identity(3), 1.5, Tensor::identity(3)));
}

TEST_CASE("wishart graph builder matches the plain evaluation") {
  Rng rng(37);
  const std::size_t p = 3;
  const double nu = 5.0, v = 1.7;
  Tensor B = rand_tensor({p, p}, rng);
  Tensor A({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double acc = i == j ? 1.0 : 0.0;
      for (std::size_t k = 0; k < p; ++k) acc += B.at(i, k) * B.at(j, k);
      A.at(i, j) = acc;
    }
  Tensor L = linalg::cholesky(A);
  Tensor V({p, p});
  for (std::size_t d = 0; d < p; ++d) V.at(d, d) = v;
  auto Lv = nd::cst(L);
  auto log_det = nd::cst(linalg::chol_log_det(L));
  const double got = dists::wishart_logpdf_g(Lv, log_det, nu, v)->value.value();
  CHECK(got == doctest::Approx(dists::wishart_logpdf(L, nu, V)).epsilon(1e-12));
}

TEST_CASE("inverse gamma shape-1 scale-1 values") {
  CHECK(dists::invgamma_logpdf(1.0) == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK(dists::invgamma_logpdf(2.0) == doctest::Approx(-1.8862943611198906).epsilon(1e-12));
  // Mode at 1/2.
  CHECK(dists::invgamma_logpdf(0.5) > dists::invgamma_logpdf(0.49));
  CHECK(dists::invgamma_logpdf(0.5) > dists::invgamma_logpdf(0.51));
  CHECK_THROWS(dists::invgamma_logpdf(0.0));
  CHECK_THROWS(dists::invgamma_logpdf(-1.0));
}

TEST_CASE("inverse gamma density integrates to one") {
  // The alpha^-2 tail converges too slowly to truncate, so integrate in
  // t = 1/alpha where the tails decay exponentially; the integrand still
  // evaluates the implementation.
  auto f = [](double t) { return std::exp(dists::invgamma_logpdf(1.0 / t)) / (t * t); };
  CHECK(integrate(f, 1e-9, 80.0) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("inverse gamma graph builder matches and differentiates") {
  ParamStore ps;
  ps.add("raw", Tensor::scalar(0.3));
  auto f = [](const VarMap& v) {
    return dists::invgamma_logpdf_g(nd::softplus(v.at("raw")));
  };
  auto res = value_and_grad(ps, f);
  const double alpha = std::log1p(std::exp(0.3));
  CHECK(res.value == doctest::Approx(dists::invgamma_logpdf(alpha)).epsilon(1e-12));
  CHECK(testutil::fd_max_rel_err(ps, f) < 1e-4);
}

TEST_CASE("diag gauss sampler properties") {
  Tensor m = Tensor::vector({2.0, -3.0});
  CHECK(dists::diag_gauss_sample(DiagGaussian{m, Tensor::vector({0, 0})},
                                 *std::make_unique<Rng>(1))
            .values() == m.values());

  Rng rng(40);
  Tensor mm = Tensor::vector({0.5, -1.5, 2.0});
  Tensor ss = Tensor::vector({1.0, 4.0, 0.25});
  const int n = 100000;
  Tensor acc({3});
  for (int i = 0; i < n; ++i) {
    Tensor z = dists::diag_gauss_sample(DiagGaussian{mm, ss}, rng);
    for (std::size_t d = 0; d < 3; ++d) acc[d] += z[d];
  }
  for (std::size_t d = 0; d < 3; ++d) {
    const double bound = 4.0 * std::sqrt(ss[d] / n);
    CHECK(std::fabs(acc[d] / n - mm[d]) < bound);
  }

  Rng r1(77), r2(77);
  for (int i = 0; i < 50; ++i) {
    Tensor a = dists::diag_gauss_sample(DiagGaussian{mm, ss}, r1);
    Tensor b = dists::diag_gauss_sample(DiagGaussian{mm, ss}, r2);
    CHECK(a.values() == b.values());
  }
}

TEST_CASE("diag gauss entropy values and identities") {
  CHECK(dists::diag_gauss_entropy(DiagGaussian{Tensor::vector({0}), Tensor::vector({1})}) ==
        doctest::Approx(1.4189385332046727).epsilon(1e-12));
  Rng rng(41);
  Tensor m = rand_tensor({4}, rng);
  Tensor s = rand_tensor({4}, rng, 0.1, 2.0);
  Tensor s4({4});
  for (std::size_t d = 0; d < 4; ++d) s4[d] = 4.0 * s[d];
  const double base = dists::diag_gauss_entropy(DiagGaussian{m, s});
  const double scaled = dists::diag_gauss_entropy(DiagGaussian{m, s4});
  CHECK(scaled - base == doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-12));
  long double ref = 0;
  for (std::size_t d = 0; d < 4; ++d)
    ref += 0.5L * std::log(2.0L * std::numbers::pi_v<long double> * std::exp(1.0L) * s[d]);
  CHECK(base == doctest::Approx(static_cast<double>(ref)).epsilon(1e-13));
}

TEST_CASE("densities integrate to one at p=1") {
  auto fd_diag = [](double x) {
    return std::exp(dists::diag_gauss_logpdf(
        Tensor::vector({x}), DiagGaussian{Tensor::vector({0.3}), Tensor::vector({1.7})}));
  };
  CHECK(integrate(fd_diag, -40, 40) == doctest::Approx(1.0).epsilon(1e-6));
  auto fd_prec = [](double x) {
    return std::exp(dists::prec_gauss_logpdf(Tensor::vector({x}), Tensor::vector({-0.5}),
                                             Tensor({1, 1}, {2.0})));
  };
  CHECK(integrate(fd_prec, -30, 30) == doctest::Approx(1.0).epsilon(1e-6));
  auto fd_cov = [](double x) {
    return std::exp(dists::cov_gauss_logpdf(Tensor::vector({x}), Tensor::vector({1.0}),
                                            Tensor({1, 1}, {2.5})));
  };
  CHECK(integrate(fd_cov, -40, 40) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("graph builders match plain evaluations") {
  Rng rng(42);
  Tensor z = rand_tensor({4}, rng, -2, 2);
  Tensor m = rand_tensor({4}, rng, -1, 1);
  Tensor s = rand_tensor({4}, rng, 0.2, 3.0);
  const double got =
      dists::diag_gauss_logpdf_g(nd::cst(z), nd::cst(m), nd::cst(s))->value.value();
  CHECK(got == doctest::Approx(dists::diag_gauss_logpdf(z, DiagGaussian{m, s}))
                   .epsilon(1e-12));

  Tensor pi = Tensor::vector({0.2, 0.5, 0.3});
  Tensor log_pi({3});
  for (std::size_t j = 0; j < 3; ++j) log_pi[j] = std::log(pi[j]);
  const double dd =
      dists::dirichlet_logpdf_g(nd::cst(log_pi), nd::cst(2.2), 3)->value.value();
  CHECK(dd == doctest::Approx(dists::dirichlet_logpdf(pi, 2.2)).epsilon(1e-12));

  Tensor smat({2, 3}, {0.5, 1.0, 2.0, 0.1, 0.7, 1.3});
  auto rows = dists::diag_gauss_entropy_rows_g(nd::cst(smat));
  for (std::size_t i = 0; i < 2; ++i) {
    Tensor si({3});
    for (std::size_t d = 0; d < 3; ++d) si[d] = smat.at(i, d);
    const double want = dists::diag_gauss_entropy(DiagGaussian{Tensor::zeros({3}), si});
    CHECK(rows->value[i] == doctest::Approx(want).epsilon(1e-12));
  }

  // Reparameterized sample built on the tape: gradient flows to m and s.
  ParamStore ps;
  ps.add("m", m);
  ps.add("raw_s", rand_tensor({4}, rng, -1, 1));
  Tensor eps = dists::gauss_vector(4, rng);
  auto f = [&](const VarMap& v) {
    auto svar = nd::softplus(v.at("raw_s"));
    auto zs = nd::add(v.at("m"), nd::mul(nd::sqrt(svar), nd::cst(eps)));
    return nd::sum(nd::square(zs));
  };
  CHECK(testutil::fd_max_rel_err(ps, f) < 1e-4);
}
