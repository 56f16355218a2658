#include "vmm/priors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vmm/linalg.hpp"

namespace vmm::priors {

namespace nd = vmm::ndgrad;
using dists::DiagGaussian;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); }
double softplus_inv(double y) { return std::log(std::expm1(y)); }

Tensor strict_lower_mask(std::size_t p) {
  Tensor m({p, p});
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j < i; ++j) m.at(i, j) = 1.0;
  return m;
}

std::vector<std::size_t> pick_distinct(std::size_t N, std::size_t K, Rng& rng) {
  if (K > N)
    throw std::invalid_argument("init_prior: need " + std::to_string(K) +
                                " distinct training rows, have " + std::to_string(N));
  std::vector<std::size_t> idx(N);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < K; ++i)
    std::swap(idx[i], idx[i + rng.below(N - i)]);
  idx.resize(K);
  return idx;
}

Tensor tensor_row(const Tensor& m, std::size_t i) {
  Tensor out({m.cols()});
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = m.at(i, j);
  return out;
}

Tensor pseudo_input_matrix(const MixturePriorState& st, const ParamStore& ps) {
  Tensor U({st.K, st.D});
  for (std::size_t j = 0; j < st.K; ++j) {
    const Tensor& u = ps.at(u_name(j));
    for (std::size_t d = 0; d < st.D; ++d)
      U.at(j, d) = st.tanh_inputs ? std::tanh(u[d]) : u[d];
  }
  return U;
}

Tensor log_pi_tensor(const ParamStore& ps, const MixturePriorState& st) {
  Tensor logits({st.K});
  for (std::size_t j = 0; j < st.K; ++j) logits[j] = ps.at(pi_logit_name(j)).value();
  double hi = logits[0];
  for (std::size_t j = 1; j < st.K; ++j) hi = std::max(hi, logits[j]);
  double acc = 0;
  for (std::size_t j = 0; j < st.K; ++j) acc += std::exp(logits[j] - hi);
  const double lse = hi + std::log(acc);
  for (std::size_t j = 0; j < st.K; ++j) logits[j] -= lse;
  return logits;
}

/// Columns of per-component log-densities stacked into [M,K] and reduced by
/// logsumexp; shared by the constant-prior graph and the plain evaluator.
nd::Var mixture_columns_g(const nd::Var& Z, const PriorDensityCache& cache) {
  const std::size_t K = cache.m.rows();
  const double dp = static_cast<double>(cache.p);
  std::vector<nd::Var> cols;
  cols.reserve(K);
  for (std::size_t j = 0; j < K; ++j) {
    Tensor mj = tensor_row(cache.m, j);
    auto diff = nd::sub(Z, nd::cst(mj));
    if (cache.kind == PriorKind::vampprior) {
      Tensor sj = tensor_row(cache.S, j);
      double log_det = 0;
      Tensor inv_s({cache.p});
      for (std::size_t d = 0; d < cache.p; ++d) {
        log_det += std::log(sj[d]);
        inv_s[d] = 1.0 / sj[d];
      }
      auto quad = nd::sum_rows(nd::mul(nd::square(diff), nd::cst(inv_s)));
      cols.push_back(nd::add(nd::scale(quad, -0.5),
                             nd::cst(cache.log_pi[j] - 0.5 * (dp * kLog2Pi + log_det))));
      continue;
    }
    const Tensor& F = cache.chol[j];
    if (cache.kind == PriorKind::bayes_gmm) {
      // F is the precision factor L: log N = 1/2 log|Lambda| - quad/2 + const.
      double half_log_det = 0;
      for (std::size_t d = 0; d < cache.p; ++d) half_log_det += std::log(F.at(d, d));
      auto quad = nd::sum_rows(nd::square(nd::matmul(diff, nd::cst(F))));
      cols.push_back(nd::add(nd::scale(quad, -0.5),
                             nd::cst(cache.log_pi[j] + half_log_det - 0.5 * dp * kLog2Pi)));
    } else {
      // F is the covariance factor G of C = Lambda^-1 + diag S.
      double half_log_det = 0;
      for (std::size_t d = 0; d < cache.p; ++d) half_log_det += std::log(F.at(d, d));
      Tensor Ginv = linalg::tri_invert_lower(F);
      Tensor GinvT({cache.p, cache.p});
      for (std::size_t a = 0; a < cache.p; ++a)
        for (std::size_t b = 0; b < cache.p; ++b) GinvT.at(a, b) = Ginv.at(b, a);
      auto quad = nd::sum_rows(nd::square(nd::matmul(diff, nd::cst(GinvT))));
      cols.push_back(nd::add(nd::scale(quad, -0.5),
                             nd::cst(cache.log_pi[j] - half_log_det - 0.5 * dp * kLog2Pi)));
    }
  }
  if (cols.size() == 1) return cols[0];
  return nd::logsumexp_rows(nd::stack_cols(cols));
}

struct AssembledComponent {
  nd::Var L;            // [p,p] lower-triangular factor
  nd::Var half_log_det; // sum of log diag
};

AssembledComponent assemble_L_g(const VarMap& vars, std::size_t j, std::size_t p) {
  auto Ld = nd::softplus(vars.at(ldiag_name(j)));
  auto L = nd::add(nd::mul(vars.at(loff_name(j)), nd::cst(strict_lower_mask(p))),
                   nd::diag_embed(Ld));
  return {L, nd::sum(nd::log(Ld))};
}

} // namespace

PriorKind prior_kind_from_string(const std::string& s) {
  if (s == "standard-normal") return PriorKind::standard_normal;
  if (s == "vampprior") return PriorKind::vampprior;
  if (s == "bayes-gmm") return PriorKind::bayes_gmm;
  if (s == "vmm") return PriorKind::vmm;
  throw std::invalid_argument("unknown prior kind '" + s + "'");
}

std::string to_string(PriorKind kind) {
  switch (kind) {
    case PriorKind::standard_normal: return "standard-normal";
    case PriorKind::vampprior: return "vampprior";
    case PriorKind::bayes_gmm: return "bayes-gmm";
    case PriorKind::vmm: return "vmm";
  }
  throw std::logic_error("unreachable");
}

std::string alpha_name() { return "prior.alpha_raw"; }
std::string pi_logit_name(std::size_t j) { return "prior.pi_logit." + std::to_string(j); }
std::string u_name(std::size_t j) { return "prior.u." + std::to_string(j); }
std::string mu_name(std::size_t j) { return "prior.mu." + std::to_string(j); }
std::string loff_name(std::size_t j) { return "prior.Loff." + std::to_string(j); }
std::string ldiag_name(std::size_t j) { return "prior.Ldiag." + std::to_string(j); }

MixturePriorState init_prior(PriorKind kind, std::size_t K, std::size_t p, std::size_t D,
                             bool tanh_inputs, const Tensor& train_x,
                             const nets::MlpSpec& enc_spec, ParamStore& ps, Rng& rng) {
  MixturePriorState st;
  st.kind = kind;
  st.p = p;
  st.D = D;
  st.tanh_inputs = tanh_inputs;
  if (kind == PriorKind::standard_normal) {
    st.K = 1;
    st.frozen.assign(1, false);
    return st;
  }
  st.K = K;
  st.frozen.assign(K, false);
  const auto rows = pick_distinct(train_x.rows(), K, rng);
  if (st.has_pseudo_inputs()) {
    for (std::size_t j = 0; j < K; ++j) {
      Tensor u = tensor_row(train_x, rows[j]);
      if (tanh_inputs)
        for (std::size_t d = 0; d < D; ++d)
          u[d] = std::atanh(std::clamp(u[d], -(1.0 - 1e-3), 1.0 - 1e-3));
      ps.add(u_name(j), std::move(u));
    }
  }
  if (kind == PriorKind::bayes_gmm) {
    for (std::size_t j = 0; j < K; ++j) {
      auto g = nets::encode(tensor_row(train_x, rows[j]), ps, enc_spec, "enc");
      ps.add(mu_name(j), std::move(g.m));
    }
  }
  if (st.has_mixture_params()) {
    ps.add(alpha_name(), Tensor::scalar(softplus_inv(1.0)));
    const double l0 =
        softplus_inv(std::sqrt(std::pow(static_cast<double>(K), 1.0 / static_cast<double>(p))));
    for (std::size_t j = 0; j < K; ++j) {
      ps.add(pi_logit_name(j), Tensor::scalar(0.0));
      ps.add(loff_name(j), Tensor::zeros({p, p}));
      ps.add(ldiag_name(j), Tensor::full({p}, l0));
    }
  }
  return st;
}

MixturePriorState init_collapsed_vmm(std::size_t p, std::size_t D, ParamStore& ps) {
  MixturePriorState st;
  st.kind = PriorKind::vmm;
  st.K = 1;
  st.p = p;
  st.D = D;
  st.collapsed_standard = true;
  st.frozen.assign(1, true);
  ps.add(alpha_name(), Tensor::scalar(softplus_inv(1.0)), false);
  ps.add(pi_logit_name(0), Tensor::scalar(0.0), false);
  ps.add(loff_name(0), Tensor::zeros({p, p}), false);
  ps.add(ldiag_name(0), Tensor::full({p}, softplus_inv(1.0)), false);
  return st;
}

double alpha(const ParamStore& ps) { return softplus(ps.at(alpha_name()).value()); }

Tensor pi(const ParamStore& ps, const MixturePriorState& st) {
  Tensor out = log_pi_tensor(ps, st);
  for (std::size_t j = 0; j < st.K; ++j) out[j] = std::exp(out[j]);
  return out;
}

Tensor precision_chol(const ParamStore& ps, const MixturePriorState& st, std::size_t j) {
  const Tensor& off = ps.at(loff_name(j));
  const Tensor& raw = ps.at(ldiag_name(j));
  Tensor L({st.p, st.p});
  for (std::size_t a = 0; a < st.p; ++a) {
    for (std::size_t b = 0; b < a; ++b) L.at(a, b) = off.at(a, b);
    L.at(a, a) = softplus(raw[a]);
  }
  return L;
}

ComponentMoments component_moments(const MixturePriorState& st, const ParamStore& ps,
                                   const nets::MlpSpec& enc_spec) {
  ComponentMoments mom;
  if (st.kind == PriorKind::standard_normal || st.collapsed_standard) {
    mom.m = Tensor::zeros({st.K, st.p});
    mom.S = Tensor::zeros({st.K, st.p});
    return mom;
  }
  if (st.has_pseudo_inputs()) {
    auto [m, s] = nets::encode_batch(pseudo_input_matrix(st, ps), ps, enc_spec, "enc");
    mom.m = std::move(m);
    mom.S = std::move(s);
    return mom;
  }
  mom.m = Tensor({st.K, st.p});
  for (std::size_t j = 0; j < st.K; ++j) {
    const Tensor& mu = ps.at(mu_name(j));
    for (std::size_t d = 0; d < st.p; ++d) mom.m.at(j, d) = mu[d];
  }
  mom.S = Tensor::zeros({st.K, st.p});
  return mom;
}

double expected_component_loglik(const Tensor& z, const Tensor& m_j, const Tensor& S_j,
                                 const Tensor& L_j) {
  double correction = 0;
  for (std::size_t d = 0; d < S_j.numel(); ++d) {
    double lam_dd = 0;
    for (std::size_t k = 0; k <= d; ++k) lam_dd += L_j.at(d, k) * L_j.at(d, k);
    correction += lam_dd * S_j[d];
  }
  return dists::prec_gauss_logpdf(z, m_j, L_j) - 0.5 * correction;
}

PriorDensityCache make_density_cache(const MixturePriorState& st, const ParamStore& ps,
                                     const ComponentMoments& mom) {
  PriorDensityCache cache;
  cache.kind = st.collapsed_standard ? PriorKind::vmm : st.kind;
  cache.p = st.p;
  cache.m = mom.m;
  if (st.kind == PriorKind::standard_normal) {
    cache.log_pi = Tensor::zeros({1});
    return cache;
  }
  if (st.kind == PriorKind::vampprior) {
    cache.S = mom.S;
    cache.log_pi = Tensor::full({st.K}, -std::log(static_cast<double>(st.K)));
    return cache;
  }
  cache.log_pi = log_pi_tensor(ps, st);
  cache.chol.reserve(st.K);
  for (std::size_t j = 0; j < st.K; ++j) {
    Tensor L = precision_chol(ps, st, j);
    if (st.kind == PriorKind::bayes_gmm) {
      cache.chol.push_back(std::move(L));
      continue;
    }
    // C_j = Lambda^-1 + diag S_j, factored once.
    Tensor Linv = linalg::tri_invert_lower(L);
    Tensor C({st.p, st.p});
    for (std::size_t a = 0; a < st.p; ++a)
      for (std::size_t b = 0; b < st.p; ++b) {
        double acc = a == b ? mom.S.at(j, a) : 0.0;
        for (std::size_t k = std::max(a, b); k < st.p; ++k)
          acc += Linv.at(k, a) * Linv.at(k, b);
        C.at(a, b) = acc;
      }
    cache.chol.push_back(linalg::cholesky(C));
  }
  return cache;
}

double prior_log_density(const Tensor& z, const PriorDensityCache& cache) {
  const double dp = static_cast<double>(cache.p);
  if (cache.kind == PriorKind::standard_normal) {
    double quad = 0;
    for (std::size_t d = 0; d < z.numel(); ++d) quad += z[d] * z[d];
    return -0.5 * (quad + dp * kLog2Pi);
  }
  const std::size_t K = cache.m.rows();
  std::vector<double> terms(K);
  for (std::size_t j = 0; j < K; ++j) {
    Tensor mj = tensor_row(cache.m, j);
    if (cache.kind == PriorKind::vampprior) {
      terms[j] = cache.log_pi[j] +
                 dists::diag_gauss_logpdf(z, DiagGaussian{mj, tensor_row(cache.S, j)});
    } else if (cache.kind == PriorKind::bayes_gmm) {
      terms[j] = cache.log_pi[j] + dists::prec_gauss_logpdf(z, mj, cache.chol[j]);
    } else {
      const Tensor& G = cache.chol[j];
      Tensor diff({cache.p});
      for (std::size_t d = 0; d < cache.p; ++d) diff[d] = z[d] - mj[d];
      Tensor y = linalg::tri_solve_lower(G, diff);
      double quad = 0, half_log_det = 0;
      for (std::size_t d = 0; d < cache.p; ++d) {
        quad += y[d] * y[d];
        half_log_det += std::log(G.at(d, d));
      }
      terms[j] = cache.log_pi[j] - half_log_det - 0.5 * (quad + dp * kLog2Pi);
    }
  }
  double hi = terms[0];
  for (double t : terms) hi = std::max(hi, t);
  double acc = 0;
  for (double t : terms) acc += std::exp(t - hi);
  return hi + std::log(acc);
}

double prior_log_density(const Tensor& z, const MixturePriorState& st, const ParamStore& ps,
                         const ComponentMoments& mom) {
  return prior_log_density(z, make_density_cache(st, ps, mom));
}

nd::Var prior_log_density_rows_g(const nd::Var& Z, const PriorDensityCache& cache) {
  if (cache.kind == PriorKind::standard_normal) {
    const double dp = static_cast<double>(cache.p);
    return nd::add(nd::scale(nd::sum_rows(nd::square(Z)), -0.5),
                   nd::cst(-0.5 * dp * kLog2Pi));
  }
  return mixture_columns_g(Z, cache);
}

nd::Var vamp_log_density_rows_g(const nd::Var& Z, const nd::Var& mu, const nd::Var& su) {
  const std::size_t K = mu->value.rows();
  const double dp = static_cast<double>(mu->value.cols());
  auto inv_s = nd::div(nd::cst(1.0), su);
  auto A = nd::matmul(nd::square(Z), nd::transpose(inv_s));           // [M,K]
  auto B = nd::matmul(Z, nd::transpose(nd::div(mu, su)));             // [M,K]
  auto c = nd::add(nd::sum_rows(nd::div(nd::square(mu), su)),
                   nd::sum_rows(nd::log(su)));                        // [K]
  auto quad = nd::add(nd::sub(A, nd::scale(B, 2.0)), c);              // row-broadcast
  auto mat = nd::add(nd::scale(quad, -0.5),
                     nd::cst(-0.5 * dp * kLog2Pi - std::log(static_cast<double>(K))));
  return nd::logsumexp_rows(mat);
}

double kl_to_prior(const DiagGaussian& q, const MixturePriorState& st, const ParamStore& ps,
                   const ComponentMoments& mom, std::size_t n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("kl_to_prior: need at least one sample");
  if (st.kind == PriorKind::standard_normal) {
    dists::validate(q);
    double acc = 0;
    for (std::size_t d = 0; d < q.m.numel(); ++d)
      acc += q.s[d] + q.m[d] * q.m[d] - 1.0 - std::log(q.s[d]);
    return 0.5 * acc;
  }
  PriorDensityCache cache = make_density_cache(st, ps, mom);
  double acc = 0;
  for (std::size_t t = 0; t < n_samples; ++t)
    acc += prior_log_density(dists::diag_gauss_sample(q, rng), cache);
  return -dists::diag_gauss_entropy(q) - acc / static_cast<double>(n_samples);
}

Tensor e_step(const Tensor& zbatch, const MixturePriorState& st, const ParamStore& ps,
              const ComponentMoments& mom) {
  if (!st.has_mixture_params())
    throw std::logic_error("e_step: prior has no mixture components");
  const std::size_t M = zbatch.rows(), K = st.K;
  Tensor log_pi = log_pi_tensor(ps, st);
  Tensor r({M, K});
  std::vector<Tensor> L(K);
  for (std::size_t j = 0; j < K; ++j) L[j] = precision_chol(ps, st, j);
  for (std::size_t i = 0; i < M; ++i) {
    Tensor zi = tensor_row(zbatch, i);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < K; ++j) {
      const double v = log_pi[j] + expected_component_loglik(zi, tensor_row(mom.m, j),
                                                             tensor_row(mom.S, j), L[j]);
      r.at(i, j) = v;
      hi = std::max(hi, v);
    }
    double acc = 0;
    for (std::size_t j = 0; j < K; ++j) acc += std::exp(r.at(i, j) - hi);
    const double lse = hi + std::log(acc);
    for (std::size_t j = 0; j < K; ++j) r.at(i, j) = std::exp(r.at(i, j) - lse);
  }
  return r;
}

Tensor vamp_responsibilities(const Tensor& zbatch, const ComponentMoments& mom) {
  const std::size_t M = zbatch.rows(), K = mom.m.rows(), p = mom.m.cols();
  Tensor r({M, K});
  for (std::size_t i = 0; i < M; ++i) {
    Tensor zi = tensor_row(zbatch, i);
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < K; ++j) {
      double quad = 0, log_det = 0;
      for (std::size_t d = 0; d < p; ++d) {
        const double diff = zi[d] - mom.m.at(j, d);
        quad += diff * diff / mom.S.at(j, d);
        log_det += std::log(mom.S.at(j, d));
      }
      r.at(i, j) = -0.5 * (quad + log_det);
      hi = std::max(hi, r.at(i, j));
    }
    double acc = 0;
    for (std::size_t j = 0; j < K; ++j) acc += std::exp(r.at(i, j) - hi);
    const double lse = hi + std::log(acc);
    for (std::size_t j = 0; j < K; ++j) r.at(i, j) = std::exp(r.at(i, j) - lse);
  }
  return r;
}

double em_objective(const Tensor& zbatch, const Tensor& r, const MixturePriorState& st,
                    const ParamStore& ps, const ComponentMoments& mom) {
  if (!st.has_mixture_params())
    throw std::logic_error("em_objective: prior has no mixture components");
  const std::size_t M = zbatch.rows(), K = st.K, p = st.p;
  if (r.rank() != 2 || r.rows() != M || r.cols() != K)
    throw std::invalid_argument("em_objective: responsibilities shape " + r.shape_str());
  Tensor log_pi = log_pi_tensor(ps, st);
  const double a = alpha(ps);
  auto hyper = dists::wishart_hyper(p, K);
  Tensor V({p, p});
  for (std::size_t d = 0; d < p; ++d) V.at(d, d) = hyper.v;

  double total = dists::invgamma_logpdf(a) + dists::dirichlet_logpdf(pi(ps, st), a);
  for (std::size_t j = 0; j < K; ++j) {
    Tensor L = precision_chol(ps, st, j);
    Tensor mj = tensor_row(mom.m, j);
    Tensor Sj = tensor_row(mom.S, j);
    for (std::size_t i = 0; i < M; ++i)
      total += r.at(i, j) *
               (log_pi[j] + expected_component_loglik(tensor_row(zbatch, i), mj, Sj, L));
    // E_q(mu)[log N(mu; 0, I)] = log N(m; 0, I) - sum(S)/2.
    double quad = 0, trace = 0;
    for (std::size_t d = 0; d < p; ++d) {
      quad += mj[d] * mj[d];
      trace += Sj[d];
    }
    total += -0.5 * (quad + static_cast<double>(p) * kLog2Pi) - 0.5 * trace;
    total += dists::wishart_logpdf(L, hyper.nu, V);
  }
  return total;
}

nd::Var em_objective_g(const Tensor& zbatch, const Tensor& r, const MixturePriorState& st,
                       const VarMap& vars, const nets::MlpSpec& enc_spec) {
  if (!st.has_mixture_params())
    throw std::logic_error("em_objective_g: prior has no mixture components");
  const std::size_t M = zbatch.rows(), K = st.K, p = st.p;
  const double dp = static_cast<double>(p);
  auto hyper = dists::wishart_hyper(p, K);

  Tensor rcs({K});
  std::vector<Tensor> rcol(K, Tensor({M}));
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < K; ++j) {
      rcol[j][i] = r.at(i, j);
      rcs[j] += r.at(i, j);
    }

  std::vector<nd::Var> logits;
  logits.reserve(K);
  for (std::size_t j = 0; j < K; ++j) logits.push_back(vars.at(pi_logit_name(j)));
  auto log_pi = nd::log_softmax(nd::concat(logits));
  auto a = nd::softplus(vars.at(alpha_name()));

  // Component moments, in-graph for the vmm so gradients reach the
  // pseudo-inputs through the encoder.
  nd::Var mom_m;
  nd::Var mom_S; // null for point centers
  if (st.kind == PriorKind::vmm) {
    std::vector<nd::Var> urows;
    urows.reserve(K);
    for (std::size_t j = 0; j < K; ++j) urows.push_back(vars.at(u_name(j)));
    nd::Var U = nd::stack_rows(urows);
    if (st.tanh_inputs) U = nd::tanh(U);
    auto enc = nets::encode_g(U, vars, enc_spec, "enc");
    mom_m = enc.m;
    mom_S = enc.s;
  } else {
    std::vector<nd::Var> mrows;
    mrows.reserve(K);
    for (std::size_t j = 0; j < K; ++j) mrows.push_back(vars.at(mu_name(j)));
    mom_m = nd::stack_rows(mrows);
  }

  std::vector<nd::Var> terms;
  terms.push_back(nd::sum(nd::mul(log_pi, nd::cst(rcs))));
  terms.push_back(dists::invgamma_logpdf_g(a));
  terms.push_back(dists::dirichlet_logpdf_g(log_pi, a, K));
  double const_acc = 0;
  for (std::size_t j = 0; j < K; ++j) {
    auto [L, half_log_det] = assemble_L_g(vars, j, p);
    auto mj = nd::row(mom_m, j);
    auto diff = nd::sub(nd::cst(zbatch), mj);
    auto quad = nd::sum_rows(nd::square(nd::matmul(diff, L)));
    terms.push_back(nd::scale(nd::sum(nd::mul(quad, nd::cst(rcol[j]))), -0.5));
    terms.push_back(nd::scale(half_log_det, rcs[j]));
    const_acc += rcs[j] * -0.5 * dp * kLog2Pi;
    terms.push_back(nd::scale(nd::sum(nd::square(mj)), -0.5));
    const_acc += -0.5 * dp * kLog2Pi;
    if (mom_S) {
      auto Sj = nd::row(mom_S, j);
      auto lam_diag = nd::sum_rows(nd::square(L));
      terms.push_back(nd::scale(nd::sum(nd::mul(lam_diag, Sj)), -0.5 * rcs[j]));
      terms.push_back(nd::scale(nd::sum(Sj), -0.5));
    }
    terms.push_back(
        dists::wishart_logpdf_g(L, nd::scale(half_log_det, 2.0), hyper.nu, hyper.v));
  }
  terms.push_back(nd::cst(const_acc));
  return nd::add_n(terms);
}

bool em_trainable(const MixturePriorState& st, const std::string& name) {
  if (name.rfind("prior.", 0) != 0) return false;
  if (name == alpha_name()) return true;
  for (const char* stem : {"prior.pi_logit.", "prior.u.", "prior.mu.", "prior.Loff.",
                           "prior.Ldiag."}) {
    const std::string prefix(stem);
    if (name.rfind(prefix, 0) == 0) {
      const std::size_t j = std::stoul(name.substr(prefix.size()));
      return !st.frozen.at(j);
    }
  }
  return false;
}

void em_update(MixturePriorState& st, const Tensor& zbatch, ParamStore& ps, AdamState& adam,
               const nets::MlpSpec& enc_spec) {
  if (!st.has_mixture_params())
    throw std::logic_error("em_update: prior has no mixture components");
  ComponentMoments mom = component_moments(st, ps, enc_spec);
  Tensor r = e_step(zbatch, st, ps, mom);
  auto res = value_and_grad(
      ps,
      [&](const VarMap& v) { return nd::neg(em_objective_g(zbatch, r, st, v, enc_spec)); },
      [&](const std::string& name) { return em_trainable(st, name); });
  adam.step(ps, res.grads);
}

Utilization utilization(const Tensor& r_full, const Tensor& pi) {
  if (r_full.rank() != 2 || r_full.rows() == 0)
    throw std::invalid_argument("utilization: empty responsibilities");
  const std::size_t N = r_full.rows(), K = r_full.cols();
  Utilization out;
  out.proportions = pi;
  out.assignments.resize(N);
  std::vector<bool> used(K, false);
  for (std::size_t i = 0; i < N; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < K; ++j)
      if (r_full.at(i, j) > r_full.at(i, best)) best = j;
    out.assignments[i] = best;
    used[best] = true;
  }
  for (std::size_t j = 0; j < K; ++j)
    if (used[j]) ++out.count;
  return out;
}

void apply_gating(MixturePriorState& st, const Utilization& util) {
  if (!st.gating_enabled) return;
  std::vector<bool> used(st.K, false);
  for (std::size_t a : util.assignments) used.at(a) = true;
  for (std::size_t j = 0; j < st.K; ++j) st.frozen[j] = !used[j];
}

SampleGrid prior_predictive_sample(const MixturePriorState& st, const ComponentMoments& mom,
                                   const ParamStore& ps, const nets::MlpSpec& dec_spec,
                                   nets::LikelihoodHead head, Rng& rng,
                                   const Tensor* train_x, const Tensor* r_full) {
  SampleGrid grid;
  Tensor pis = st.has_mixture_params()
                   ? pi(ps, st)
                   : Tensor::full({st.K}, 1.0 / static_cast<double>(st.K));
  std::vector<std::size_t> components(st.K);
  std::iota(components.begin(), components.end(), 0);
  std::vector<bool> used(st.K, true);
  if (r_full) {
    used.assign(st.K, false);
    Utilization util = utilization(*r_full, pis);
    for (std::size_t a : util.assignments) used[a] = true;
  }
  std::stable_sort(components.begin(), components.end(),
                   [&](std::size_t a, std::size_t b) { return pis[a] > pis[b]; });
  double max_pi = 0;
  for (std::size_t j = 0; j < st.K; ++j) max_pi = std::max(max_pi, pis[j]);

  PriorDensityCache cache = st.kind == PriorKind::vmm
                                ? make_density_cache(st, ps, mom)
                                : PriorDensityCache{};
  for (std::size_t j : components) {
    if (!used[j]) continue;
    SampleColumn col;
    col.component = j;
    col.pi = pis[j];
    const auto n = static_cast<std::size_t>(std::llround(10.0 * pis[j] / max_pi));
    for (std::size_t t = 0; t < n; ++t) {
      Tensor eps = dists::gauss_vector(st.p, rng);
      Tensor z({st.p});
      switch (st.kind) {
        case PriorKind::standard_normal:
          z = eps;
          break;
        case PriorKind::vampprior:
          for (std::size_t d = 0; d < st.p; ++d)
            z[d] = mom.m.at(j, d) + std::sqrt(mom.S.at(j, d)) * eps[d];
          break;
        case PriorKind::bayes_gmm: {
          Tensor y = linalg::tri_solve_lower_transposed(precision_chol(ps, st, j), eps);
          for (std::size_t d = 0; d < st.p; ++d) z[d] = mom.m.at(j, d) + y[d];
          break;
        }
        case PriorKind::vmm: {
          const Tensor& G = cache.chol[j];
          for (std::size_t a = 0; a < st.p; ++a) {
            double acc = mom.m.at(j, a);
            for (std::size_t b = 0; b <= a; ++b) acc += G.at(a, b) * eps[b];
            z[a] = acc;
          }
          break;
        }
      }
      col.samples.push_back(nets::decode_mean(z, ps, dec_spec, "dec", head));
    }
    if (train_x && r_full) {
      std::size_t best = 0;
      for (std::size_t i = 1; i < r_full->rows(); ++i)
        if (r_full->at(i, j) > r_full->at(best, j)) best = i;
      col.exemplar = tensor_row(*train_x, best);
    }
    grid.max_rows = std::max(grid.max_rows,
                             col.samples.size() + (col.exemplar.numel() ? 1 : 0));
    grid.columns.push_back(std::move(col));
  }
  return grid;
}

} // namespace vmm::priors
