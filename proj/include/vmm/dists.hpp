#pragma once

#include <cstddef>

#include "vmm/autodiff.hpp"
#include "vmm/rng.hpp"
#include "vmm/tensor.hpp"

namespace vmm::dists {

/// Diagonal Gaussian with variance (not stddev) parameterization.
struct DiagGaussian {
  Tensor m;
  Tensor s;
};

void validate(const DiagGaussian& g);

// Plain evaluations, used outside the gradient tape (responsibilities,
// metrics, oracles).
double diag_gauss_logpdf(const Tensor& z, const DiagGaussian& g);
double prec_gauss_logpdf(const Tensor& z, const Tensor& mean, const Tensor& L);
double cov_gauss_logpdf(const Tensor& z, const Tensor& mean, const Tensor& C);
double dirichlet_logpdf(const Tensor& pi, double alpha);
double wishart_logpdf(const Tensor& L, double nu, const Tensor& V);
double invgamma_logpdf(double alpha);
double diag_gauss_entropy(const DiagGaussian& g);

Tensor diag_gauss_sample(const DiagGaussian& g, Rng& rng);

/// Standard-normal draws, the raw material for reparameterized samples.
Tensor gauss_vector(std::size_t p, Rng& rng);
Tensor gauss_matrix(std::size_t rows, std::size_t cols, Rng& rng);

/// log Gamma_p(a), the multivariate gamma function.
double log_multigamma(double a, std::size_t p);

/// Wishart hyper-parameters (nu, scale v with V = v I) chosen so that
/// E[Lambda] = K^(1/p) I.
struct WishartHyper {
  double nu;
  double v;
};
WishartHyper wishart_hyper(std::size_t p, std::size_t K);

// Graph builders for the differentiable objectives. Callers pass Vars that
// already satisfy the domain constraints by construction (softplus maps et
// al.), so these do not re-validate.
ndgrad::Var diag_gauss_logpdf_g(const ndgrad::Var& z, const ndgrad::Var& m,
                                const ndgrad::Var& s);
ndgrad::Var dirichlet_logpdf_g(const ndgrad::Var& log_pi, const ndgrad::Var& alpha,
                               std::size_t K);
ndgrad::Var invgamma_logpdf_g(const ndgrad::Var& alpha);
/// L is the assembled lower-triangular factor, log_det = log|L L^T|; V = v I.
ndgrad::Var wishart_logpdf_g(const ndgrad::Var& L, const ndgrad::Var& log_det,
                             double nu, double v);
/// Row-wise entropies of diagonal Gaussians with variances in the rows of s.
ndgrad::Var diag_gauss_entropy_rows_g(const ndgrad::Var& s);

} // namespace vmm::dists
