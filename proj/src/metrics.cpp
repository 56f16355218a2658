#include "vmm/metrics.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include "vmm/dists.hpp"

namespace vmm::metrics {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

double choose2(double n) { return 0.5 * n * (n - 1.0); }

struct MeanSe {
  double mean = 0;
  double se = 0;
};

MeanSe mean_se(const std::vector<double>& xs) {
  const auto n = static_cast<double>(xs.size());
  double m = 0;
  for (double x : xs) m += x;
  m /= n;
  if (xs.size() < 2) return {m, 0.0};
  double acc = 0;
  for (double x : xs) acc += (x - m) * (x - m);
  return {m, std::sqrt(acc / (n - 1.0) / n)};
}

Tensor row_of(const Tensor& m, std::size_t i) {
  Tensor out({m.cols()});
  for (std::size_t j = 0; j < m.cols(); ++j) out[j] = m.at(i, j);
  return out;
}

/// Per-datum [log q(z_n|x_n), log (1/N) sum_m q(z_n|x_m)] for one z-draw per
/// datum, computed in row blocks so the N x N matrix never materializes.
struct IndexCodeTerms {
  std::vector<double> self;     // log q(z_n | x_n)
  std::vector<double> mixture;  // log mean_m q(z_n | x_m)
  Tensor Z;                     // the draws, one row per datum
};

IndexCodeTerms index_code_terms(const Tensor& m, const Tensor& s, Rng& rng) {
  const std::size_t N = m.rows(), p = m.cols();
  Tensor Z({N, p});
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t d = 0; d < p; ++d)
      Z.at(i, d) = m.at(i, d) + std::sqrt(s.at(i, d)) * rng.gauss();

  Tensor inv_s({N, p}), m_over_s({N, p});
  std::vector<double> colc(N);
  for (std::size_t i = 0; i < N; ++i) {
    double acc = 0;
    for (std::size_t d = 0; d < p; ++d) {
      const double sv = s.at(i, d);
      inv_s.at(i, d) = 1.0 / sv;
      m_over_s.at(i, d) = m.at(i, d) / sv;
      acc += m.at(i, d) * m.at(i, d) / sv + std::log(sv);
    }
    colc[i] = acc;
  }

  IndexCodeTerms out;
  out.self.resize(N);
  out.mixture.resize(N);
  const double log_n = std::log(static_cast<double>(N));
  const std::size_t block = 256;
  std::vector<double> quad;
  for (std::size_t lo = 0; lo < N; lo += block) {
    const std::size_t rows = std::min(block, N - lo);
    Tensor zsq({rows, p});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t d = 0; d < p; ++d)
        zsq.at(i, d) = Z.at(lo + i, d) * Z.at(lo + i, d);
    quad.assign(rows * N, 0.0);
    MatMap Q(quad.data(), rows, N);
    ConstMatMap Zb(Z.data() + lo * p, rows, p);
    ConstMatMap Zs(zsq.data(), rows, p);
    ConstMatMap Si(inv_s.data(), N, p);
    ConstMatMap Ms(m_over_s.data(), N, p);
    Q.noalias() = Zs * Si.transpose() - 2.0 * (Zb * Ms.transpose());
    for (std::size_t i = 0; i < rows; ++i) {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < N; ++j) {
        const double lq = -0.5 * (Q(i, j) + colc[j] +
                                  static_cast<double>(p) * kLog2Pi);
        Q(i, j) = lq;
        hi = std::max(hi, lq);
      }
      double acc = 0;
      for (std::size_t j = 0; j < N; ++j) acc += std::exp(Q(i, j) - hi);
      out.self[lo + i] = Q(i, lo + i);
      out.mixture[lo + i] = hi + std::log(acc) - log_n;
    }
  }
  out.Z = std::move(Z);
  return out;
}

} // namespace

ClusteringReport clustering_scores(const std::vector<std::size_t>& assignments,
                                   const std::vector<int>& labels, const Tensor& r) {
  const std::size_t N = labels.size();
  if (N < 2) throw std::invalid_argument("clustering_scores: need at least two data");
  if (assignments.size() != N)
    throw std::invalid_argument("clustering_scores: assignment/label count mismatch");
  if (r.rank() != 2 || r.rows() != N)
    throw std::invalid_argument("clustering_scores: responsibilities shape " + r.shape_str());

  std::map<std::size_t, std::size_t> cid;
  std::map<int, std::size_t> lid;
  for (std::size_t a : assignments) cid.emplace(a, cid.size());
  for (int y : labels) lid.emplace(y, lid.size());
  const std::size_t A = cid.size(), Y = lid.size();

  std::vector<std::vector<double>> cont(A, std::vector<double>(Y, 0.0));
  std::vector<double> ca(A, 0.0), cy(Y, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t a = cid.at(assignments[i]), y = lid.at(labels[i]);
    cont[a][y] += 1.0;
    ca[a] += 1.0;
    cy[y] += 1.0;
  }
  const double dn = static_cast<double>(N);

  ClusteringReport rep;
  rep.n = N;
  rep.utilized = A;
  rep.degenerate_nmi = (A == 1 && Y == 1);

  double ha = 0, hy = 0, mi = 0;
  for (std::size_t a = 0; a < A; ++a) ha -= ca[a] / dn * std::log(ca[a] / dn);
  for (std::size_t y = 0; y < Y; ++y) hy -= cy[y] / dn * std::log(cy[y] / dn);
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t y = 0; y < Y; ++y)
      if (cont[a][y] > 0)
        mi += cont[a][y] / dn * std::log(dn * cont[a][y] / (ca[a] * cy[y]));
  rep.nmi = rep.degenerate_nmi ? 1.0 : mi / (0.5 * (ha + hy));

  double idx = 0, suma = 0, sumy = 0;
  for (std::size_t a = 0; a < A; ++a)
    for (std::size_t y = 0; y < Y; ++y) idx += choose2(cont[a][y]);
  for (std::size_t a = 0; a < A; ++a) suma += choose2(ca[a]);
  for (std::size_t y = 0; y < Y; ++y) sumy += choose2(cy[y]);
  const double expected = suma * sumy / choose2(dn);
  const double maximum = 0.5 * (suma + sumy);
  rep.ari = maximum == expected ? (idx == expected ? 1.0 : 0.0)
                                : (idx - expected) / (maximum - expected);

  // Cluster labels from the most responsible datum per column.
  std::vector<int> cluster_label(r.cols(), 0);
  for (std::size_t j = 0; j < r.cols(); ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < N; ++i)
      if (r.at(i, j) > r.at(best, j)) best = i;
    cluster_label[j] = labels[best];
  }
  double correct = 0;
  for (std::size_t i = 0; i < N; ++i)
    if (cluster_label.at(assignments[i]) == labels[i]) correct += 1.0;
  rep.accuracy = correct / dn;
  return rep;
}

RateDistortion elbo_decomposition(const Tensor& X, const ParamStore& ps,
                                  const nets::MlpSpec& enc, const nets::MlpSpec& dec,
                                  nets::LikelihoodHead head,
                                  const priors::MixturePriorState& prior,
                                  std::size_t n_samples, Rng& rng) {
  if (n_samples < 1)
    throw std::invalid_argument("elbo_decomposition: need at least one sample");
  auto mom = priors::component_moments(prior, ps, enc);
  auto cache = priors::make_density_cache(prior, ps, mom);
  const bool closed_form = prior.kind == priors::PriorKind::standard_normal;
  const std::size_t N = X.rows();
  std::vector<double> dist(N), rate(N);
  for (std::size_t i = 0; i < N; ++i) {
    Tensor x = row_of(X, i);
    auto q = nets::encode(x, ps, enc, "enc");
    double recon = 0, cross = 0;
    for (std::size_t t = 0; t < n_samples; ++t) {
      Tensor z = dists::diag_gauss_sample(q, rng);
      recon += nets::decode_loglik(x, z, ps, dec, "dec", head);
      if (!closed_form) cross += priors::prior_log_density(z, cache);
    }
    dist[i] = recon / static_cast<double>(n_samples);
    if (closed_form) {
      double acc = 0;
      for (std::size_t d = 0; d < q.m.numel(); ++d)
        acc += q.s[d] + q.m[d] * q.m[d] - 1.0 - std::log(q.s[d]);
      rate[i] = 0.5 * acc;
    } else {
      rate[i] = -dists::diag_gauss_entropy(q) - cross / static_cast<double>(n_samples);
    }
  }
  auto [dm, dse] = mean_se(dist);
  auto [rm, rse] = mean_se(rate);
  return {dm, rm, dse, rse};
}

MarginalReport mi_and_marginal_kl(const Tensor& X, const ParamStore& ps,
                                  const nets::MlpSpec& enc,
                                  const priors::MixturePriorState& prior, Rng& rng) {
  const std::size_t N = X.rows();
  if (N < 2) throw std::invalid_argument("mi_and_marginal_kl: need at least two data");
  auto mom = priors::component_moments(prior, ps, enc);
  auto cache = priors::make_density_cache(prior, ps, mom);
  auto [m, s] = nets::encode_batch(X, ps, enc, "enc");

  auto first = index_code_terms(m, s, rng);
  std::vector<double> mi_terms(N), rate_terms(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double log_prior = priors::prior_log_density(row_of(first.Z, i), cache);
    mi_terms[i] = first.self[i] - first.mixture[i];
    rate_terms[i] = first.self[i] - log_prior;
  }
  auto second = index_code_terms(m, s, rng);
  std::vector<double> kl_terms(N);
  for (std::size_t i = 0; i < N; ++i)
    kl_terms[i] =
        second.mixture[i] - priors::prior_log_density(row_of(second.Z, i), cache);

  MarginalReport rep;
  rep.n = N;
  auto [mi, mi_se] = mean_se(mi_terms);
  auto [rt, rt_se] = mean_se(rate_terms);
  auto [kl, kl_se] = mean_se(kl_terms);
  rep.mi = mi;
  rep.mi_se = mi_se;
  rep.rate = rt;
  rep.rate_se = rt_se;
  rep.marginal_kl = rt - mi;
  rep.marginal_kl_mc = kl;
  rep.marginal_kl_mc_se = kl_se;
  return rep;
}

double iw_log_marginal(const Tensor& x, const ParamStore& ps, const nets::MlpSpec& enc,
                       const nets::MlpSpec& dec, nets::LikelihoodHead head,
                       const priors::PriorDensityCache& cache, std::size_t S, Rng& rng) {
  if (S < 1) throw std::invalid_argument("iw_log_marginal: need at least one sample");
  auto q = nets::encode(x, ps, enc, "enc");
  std::vector<double> w(S);
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < S; ++t) {
    Tensor z = dists::diag_gauss_sample(q, rng);
    w[t] = nets::decode_loglik(x, z, ps, dec, "dec", head) +
           priors::prior_log_density(z, cache) - dists::diag_gauss_logpdf(z, q);
    hi = std::max(hi, w[t]);
  }
  double acc = 0;
  for (double v : w) acc += std::exp(v - hi);
  return hi + std::log(acc) - std::log(static_cast<double>(S));
}

double iw_log_marginal_mean(const Tensor& X, const ParamStore& ps, const nets::MlpSpec& enc,
                            const nets::MlpSpec& dec, nets::LikelihoodHead head,
                            const priors::MixturePriorState& prior, std::size_t S,
                            Rng& rng) {
  auto mom = priors::component_moments(prior, ps, enc);
  auto cache = priors::make_density_cache(prior, ps, mom);
  double acc = 0;
  for (std::size_t i = 0; i < X.rows(); ++i)
    acc += iw_log_marginal(row_of(X, i), ps, enc, dec, head, cache, S, rng);
  return acc / static_cast<double>(X.rows());
}

} // namespace vmm::metrics
