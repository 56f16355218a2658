#pragma once

#include <cstddef>
#include <vector>

#include "vmm/nets.hpp"
#include "vmm/param_store.hpp"
#include "vmm/priors.hpp"
#include "vmm/rng.hpp"
#include "vmm/tensor.hpp"

namespace vmm::metrics {

struct ClusteringReport {
  double nmi = 0;
  double ari = 0;
  double accuracy = 0;
  std::size_t utilized = 0;
  std::size_t n = 0;
  bool degenerate_nmi = false; // single label and single cluster; nmi pinned to 1
};

/// NMI (arithmetic-mean normalization, natural logs), ARI, and matched
/// accuracy, where cluster j takes the label of its most responsible datum.
ClusteringReport clustering_scores(const std::vector<std::size_t>& assignments,
                                   const std::vector<int>& labels, const Tensor& r);

struct RateDistortion {
  double neg_distortion = 0;
  double rate = 0;
  double neg_distortion_se = 0;
  double rate_se = 0;
};

/// Validation-set means of E_q[log p(x|z)] and of the KL estimate used in
/// training, n_samples reparameterized draws per datum.
RateDistortion elbo_decomposition(const Tensor& X, const ParamStore& ps,
                                  const nets::MlpSpec& enc, const nets::MlpSpec& dec,
                                  nets::LikelihoodHead head,
                                  const priors::MixturePriorState& prior,
                                  std::size_t n_samples, Rng& rng);

struct MarginalReport {
  double mi = 0;                 // index-code estimate over all posteriors
  double rate = 0;               // same-draw single-sample rate estimate
  double marginal_kl = 0;        // rate - mi; the decomposition identity
  double mi_se = 0;
  double rate_se = 0;
  double marginal_kl_mc = 0;     // independent second pass with fresh draws
  double marginal_kl_mc_se = 0;
  std::size_t n = 0;
};

/// The rate split into marginal KL plus index-code mutual information, one
/// z-draw per datum, with a fresh-draw second estimate of the marginal KL as
/// a cross-check. The decoder plays no part here.
MarginalReport mi_and_marginal_kl(const Tensor& X, const ParamStore& ps,
                                  const nets::MlpSpec& enc,
                                  const priors::MixturePriorState& prior, Rng& rng);

/// logsumexp_s [log p(x|z_s) + log p(z_s) - log q(z_s;x)] - log S with z ~ q.
double iw_log_marginal(const Tensor& x, const ParamStore& ps, const nets::MlpSpec& enc,
                       const nets::MlpSpec& dec, nets::LikelihoodHead head,
                       const priors::PriorDensityCache& cache, std::size_t S, Rng& rng);

/// Mean of iw_log_marginal over the rows of X, sharing one density cache.
double iw_log_marginal_mean(const Tensor& X, const ParamStore& ps, const nets::MlpSpec& enc,
                            const nets::MlpSpec& dec, nets::LikelihoodHead head,
                            const priors::MixturePriorState& prior, std::size_t S, Rng& rng);

} // namespace vmm::metrics
