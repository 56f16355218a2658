#include "vmm/dists.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "vmm/linalg.hpp"

namespace vmm::dists {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_vector_pair(const Tensor& z, const Tensor& m, const char* op) {
  if (z.rank() != 1 || m.rank() != 1 || z.numel() != m.numel())
    throw std::invalid_argument(std::string(op) + ": dimension mismatch " + z.shape_str() +
                                " vs " + m.shape_str());
}

} // namespace

void validate(const DiagGaussian& g) {
  check_vector_pair(g.m, g.s, "DiagGaussian");
  for (std::size_t d = 0; d < g.s.numel(); ++d)
    if (!(g.s[d] > 0.0))
      throw std::invalid_argument("DiagGaussian: non-positive variance at dim " +
                                  std::to_string(d));
}

double diag_gauss_logpdf(const Tensor& z, const DiagGaussian& g) {
  check_vector_pair(z, g.m, "diag_gauss_logpdf");
  validate(g);
  double acc = 0;
  for (std::size_t d = 0; d < z.numel(); ++d) {
    const double diff = z[d] - g.m[d];
    acc += -0.5 * (kLog2Pi + std::log(g.s[d])) - diff * diff / (2.0 * g.s[d]);
  }
  return acc;
}

double prec_gauss_logpdf(const Tensor& z, const Tensor& mean, const Tensor& L) {
  check_vector_pair(z, mean, "prec_gauss_logpdf");
  const std::size_t p = z.numel();
  if (L.rank() != 2 || L.rows() != p || L.cols() != p)
    throw std::invalid_argument("prec_gauss_logpdf: factor shape " + L.shape_str() +
                                " vs dimension " + std::to_string(p));
  double half_log_det = 0;
  for (std::size_t d = 0; d < p; ++d) {
    if (!(L.at(d, d) > 0.0))
      throw std::invalid_argument("prec_gauss_logpdf: non-positive diagonal in L at dim " +
                                  std::to_string(d));
    half_log_det += std::log(L.at(d, d));
  }
  // ||L^T (z - mean)||^2 accumulated column-wise.
  double quad = 0;
  for (std::size_t d = 0; d < p; ++d) {
    double dot = 0;
    for (std::size_t i = d; i < p; ++i) dot += L.at(i, d) * (z[i] - mean[i]);
    quad += dot * dot;
  }
  return -0.5 * static_cast<double>(p) * kLog2Pi + half_log_det - 0.5 * quad;
}

double cov_gauss_logpdf(const Tensor& z, const Tensor& mean, const Tensor& C) {
  check_vector_pair(z, mean, "cov_gauss_logpdf");
  const std::size_t p = z.numel();
  Tensor G = linalg::cholesky(C); // C = G G^T
  Tensor diff({p});
  for (std::size_t d = 0; d < p; ++d) diff[d] = z[d] - mean[d];
  Tensor y = linalg::tri_solve_lower(G, diff);
  double quad = 0, half_log_det = 0;
  for (std::size_t d = 0; d < p; ++d) {
    quad += y[d] * y[d];
    half_log_det += std::log(G.at(d, d));
  }
  return -0.5 * static_cast<double>(p) * kLog2Pi - half_log_det - 0.5 * quad;
}

double dirichlet_logpdf(const Tensor& pi, double alpha) {
  if (pi.rank() != 1 || pi.numel() == 0)
    throw std::invalid_argument("dirichlet_logpdf: expected a probability vector, got " +
                                pi.shape_str());
  if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_logpdf: alpha must be positive");
  const std::size_t K = pi.numel();
  double sum = 0, sum_log = 0;
  for (std::size_t j = 0; j < K; ++j) {
    if (!(pi[j] > 0.0))
      throw std::invalid_argument("dirichlet_logpdf: boundary point, pi[" +
                                  std::to_string(j) + "] is not positive");
    sum += pi[j];
    sum_log += std::log(pi[j]);
  }
  if (std::fabs(sum - 1.0) > 1e-9)
    throw std::invalid_argument("dirichlet_logpdf: pi sums to " + std::to_string(sum));
  const double aK = alpha / static_cast<double>(K);
  return std::lgamma(alpha) - static_cast<double>(K) * std::lgamma(aK) +
         (aK - 1.0) * sum_log;
}

double log_multigamma(double a, std::size_t p) {
  double acc = 0.25 * static_cast<double>(p) * static_cast<double>(p - 1) *
               std::log(std::numbers::pi);
  for (std::size_t j = 1; j <= p; ++j)
    acc += std::lgamma(a + 0.5 * (1.0 - static_cast<double>(j)));
  return acc;
}

double wishart_logpdf(const Tensor& L, double nu, const Tensor& V) {
  if (L.rank() != 2 || L.rows() != L.cols())
    throw std::invalid_argument("wishart_logpdf: factor must be square, got " + L.shape_str());
  const std::size_t p = L.rows();
  if (!(nu > static_cast<double>(p) - 1.0))
    throw std::invalid_argument("wishart_logpdf: invalid degrees of freedom " +
                                std::to_string(nu) + " for dimension " + std::to_string(p));
  if (V.rank() != 2 || V.rows() != p || V.cols() != p)
    throw std::invalid_argument("wishart_logpdf: scale shape " + V.shape_str() +
                                " vs dimension " + std::to_string(p));
  double log_det_lambda = 0;
  for (std::size_t d = 0; d < p; ++d) {
    if (!(L.at(d, d) > 0.0))
      throw std::invalid_argument("wishart_logpdf: non-positive diagonal in L at dim " +
                                  std::to_string(d));
    log_det_lambda += 2.0 * std::log(L.at(d, d));
  }
  // tr(V^{-1} Lambda) with Lambda = L L^T, via V = G G^T.
  Tensor G = linalg::cholesky(V);
  Tensor Ginv = linalg::tri_invert_lower(G);
  double log_det_v = 0;
  for (std::size_t d = 0; d < p; ++d) log_det_v += 2.0 * std::log(G.at(d, d));
  Tensor Vinv({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double s = 0;
      for (std::size_t k = std::max(i, j); k < p; ++k)
        s += Ginv.at(k, i) * Ginv.at(k, j);
      Vinv.at(i, j) = s;
    }
  double trace = 0;
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      double lam = 0;
      for (std::size_t k = 0; k <= std::min(i, j); ++k) lam += L.at(i, k) * L.at(j, k);
      trace += Vinv.at(i, j) * lam;
    }
  const double dp = static_cast<double>(p);
  return 0.5 * (nu - dp - 1.0) * log_det_lambda - 0.5 * trace -
         0.5 * nu * dp * std::log(2.0) - 0.5 * nu * log_det_v - log_multigamma(0.5 * nu, p);
}

double invgamma_logpdf(double alpha) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("invgamma_logpdf: alpha must be positive, got " +
                                std::to_string(alpha));
  return -2.0 * std::log(alpha) - 1.0 / alpha;
}

double diag_gauss_entropy(const DiagGaussian& g) {
  validate(g);
  double acc = 0;
  for (std::size_t d = 0; d < g.s.numel(); ++d)
    acc += 0.5 * (kLog2Pi + 1.0 + std::log(g.s[d]));
  return acc;
}

Tensor diag_gauss_sample(const DiagGaussian& g, Rng& rng) {
  check_vector_pair(g.m, g.s, "diag_gauss_sample");
  const std::size_t p = g.m.numel();
  Tensor z({p});
  for (std::size_t d = 0; d < p; ++d) {
    if (!(g.s[d] >= 0.0))
      throw std::invalid_argument("diag_gauss_sample: negative variance at dim " +
                                  std::to_string(d));
    z[d] = g.m[d] + std::sqrt(g.s[d]) * rng.gauss();
  }
  return z;
}

Tensor gauss_vector(std::size_t p, Rng& rng) {
  Tensor t({p});
  for (std::size_t d = 0; d < p; ++d) t[d] = rng.gauss();
  return t;
}

Tensor gauss_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.gauss();
  return t;
}

WishartHyper wishart_hyper(std::size_t p, std::size_t K) {
  const double dp = static_cast<double>(p);
  const double nu = dp + 2.0;
  const double v = std::pow(static_cast<double>(K), 1.0 / dp) / nu;
  return {nu, v};
}

namespace nd = vmm::ndgrad;

nd::Var diag_gauss_logpdf_g(const nd::Var& z, const nd::Var& m, const nd::Var& s) {
  const double p = static_cast<double>(z->value.numel());
  auto diff = nd::sub(z, m);
  auto quad = nd::sum(nd::div(nd::square(diff), s));
  auto log_det = nd::sum(nd::log(s));
  return nd::scale(nd::add_n({quad, log_det, nd::cst(p * kLog2Pi)}), -0.5);
}

nd::Var dirichlet_logpdf_g(const nd::Var& log_pi, const nd::Var& alpha, std::size_t K) {
  const double dK = static_cast<double>(K);
  auto aK = nd::scale(alpha, 1.0 / dK);
  auto norm = nd::sub(nd::lgamma(alpha), nd::scale(nd::lgamma(aK), dK));
  auto data = nd::mul(nd::sub(aK, nd::cst(1.0)), nd::sum(log_pi));
  return nd::add(norm, data);
}

nd::Var invgamma_logpdf_g(const nd::Var& alpha) {
  return nd::sub(nd::scale(nd::log(alpha), -2.0), nd::div(nd::cst(1.0), alpha));
}

nd::Var wishart_logpdf_g(const nd::Var& L, const nd::Var& log_det, double nu, double v) {
  const std::size_t p = L->value.rows();
  const double dp = static_cast<double>(p);
  // tr(Lambda)/v with Lambda = L L^T: the trace is the sum of squared entries.
  auto trace_term = nd::scale(nd::sum(nd::square(L)), -0.5 / v);
  auto det_term = nd::scale(log_det, 0.5 * (nu - dp - 1.0));
  const double konst = -0.5 * nu * dp * std::log(2.0) - 0.5 * nu * dp * std::log(v) -
                       log_multigamma(0.5 * nu, p);
  return nd::add_n({det_term, trace_term, nd::cst(konst)});
}

nd::Var diag_gauss_entropy_rows_g(const nd::Var& s) {
  const double p = static_cast<double>(s->value.cols());
  auto half_logs = nd::scale(nd::sum_rows(nd::log(s)), 0.5);
  return nd::add(half_logs, nd::cst(0.5 * p * (kLog2Pi + 1.0)));
}

} // namespace vmm::dists
