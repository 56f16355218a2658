#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vmm/autodiff.hpp"
#include "vmm/dists.hpp"
#include "vmm/nets.hpp"
#include "vmm/optim.hpp"
#include "vmm/param_store.hpp"
#include "vmm/rng.hpp"
#include "vmm/tensor.hpp"

namespace vmm::priors {

enum class PriorKind { standard_normal, vampprior, bayes_gmm, vmm };

PriorKind prior_kind_from_string(const std::string& s);
std::string to_string(PriorKind kind);

/// Structural description of the latent prior. Parameter values live in the
/// shared ParamStore under the `prior.` prefix:
///   prior.alpha_raw            softplus -> alpha        (vmm, bayes-gmm)
///   prior.pi_logit.<j>         softmax over j -> pi     (vmm, bayes-gmm)
///   prior.u.<j>    [D]         pseudo-input             (vampprior, vmm)
///   prior.mu.<j>   [p]         free center              (bayes-gmm)
///   prior.Loff.<j> [p,p]       strict lower part of L   (vmm, bayes-gmm)
///   prior.Ldiag.<j> [p]        softplus -> diag of L    (vmm, bayes-gmm)
/// Per-component entries keep the eliminated-cluster gating a pure
/// trainability question: a frozen component's entries receive no gradient
/// and are bit-identical after an update.
struct MixturePriorState {
  PriorKind kind = PriorKind::standard_normal;
  std::size_t K = 1;
  std::size_t p = 0;
  std::size_t D = 0;
  bool tanh_inputs = false;       // map pseudo-inputs through tanh into [-1,1]
  bool gating_enabled = false;    // eliminated-cluster gradient gating
  std::vector<bool> frozen;      // per-component flag, all false by default
  bool collapsed_standard = false; // pin moments to (0,0); single-component check case

  bool has_mixture_params() const {
    return kind == PriorKind::bayes_gmm || kind == PriorKind::vmm;
  }
  bool has_pseudo_inputs() const {
    return kind == PriorKind::vampprior || kind == PriorKind::vmm;
  }
};

struct ComponentMoments {
  Tensor m; // [K,p]
  Tensor S; // [K,p], zero rows for point centers
};

// Parameter-store entry names.
std::string alpha_name();
std::string pi_logit_name(std::size_t j);
std::string u_name(std::size_t j);
std::string mu_name(std::size_t j);
std::string loff_name(std::size_t j);
std::string ldiag_name(std::size_t j);

/// Adds the prior's entries to the store and returns the state. Pseudo-inputs
/// are K distinct training rows; bayes-gmm centers are encoder means of K
/// distinct training rows; pi-logits start uniform, alpha at 1, and Lambda at
/// its prior mean K^(1/p) I.
MixturePriorState init_prior(PriorKind kind, std::size_t K, std::size_t p, std::size_t D,
                             bool tanh_inputs, const Tensor& train_x,
                             const nets::MlpSpec& enc_spec, ParamStore& ps, Rng& rng);

/// K=1 vmm with pinned moments (0,0), Lambda = I, uniform pi, everything
/// frozen: its density is the standard normal, evaluated through the mixture
/// machinery.
MixturePriorState init_collapsed_vmm(std::size_t p, std::size_t D, ParamStore& ps);

double alpha(const ParamStore& ps);
Tensor pi(const ParamStore& ps, const MixturePriorState& st);          // [K]
Tensor precision_chol(const ParamStore& ps, const MixturePriorState& st,
                      std::size_t j); // assembled lower-triangular L_j

ComponentMoments component_moments(const MixturePriorState& st, const ParamStore& ps,
                                   const nets::MlpSpec& enc_spec);

double expected_component_loglik(const Tensor& z, const Tensor& m_j, const Tensor& S_j,
                                 const Tensor& L_j);

/// Precomputed per-component quantities for repeated density evaluation; for
/// the vmm this is where Lambda^-1 + diag S is factored.
struct PriorDensityCache {
  PriorKind kind = PriorKind::standard_normal;
  std::size_t p = 0;
  Tensor log_pi;                  // [K]
  Tensor m;                       // [K,p]
  Tensor S;                       // [K,p] (vampprior path)
  std::vector<Tensor> chol;       // bayes-gmm: L_j; vmm: G_j with C_j = G_j G_j^T
};

PriorDensityCache make_density_cache(const MixturePriorState& st, const ParamStore& ps,
                                     const ComponentMoments& mom);
double prior_log_density(const Tensor& z, const PriorDensityCache& cache);
double prior_log_density(const Tensor& z, const MixturePriorState& st, const ParamStore& ps,
                         const ComponentMoments& mom);

/// In-graph per-row log p(z) with the prior side held constant.
ndgrad::Var prior_log_density_rows_g(const ndgrad::Var& Z, const PriorDensityCache& cache);
/// VampPrior density with trainable component moments (graph inputs).
ndgrad::Var vamp_log_density_rows_g(const ndgrad::Var& Z, const ndgrad::Var& mu,
                                    const ndgrad::Var& su);

double kl_to_prior(const dists::DiagGaussian& q, const MixturePriorState& st,
                   const ParamStore& ps, const ComponentMoments& mom,
                   std::size_t n_samples, Rng& rng);

Tensor e_step(const Tensor& zbatch, const MixturePriorState& st, const ParamStore& ps,
              const ComponentMoments& mom); // [M,K] responsibilities

/// Component-membership probabilities under the uniform mixture of posteriors:
/// softmax over j of log N(z; m_j, diag S_j). The vampprior has no E-step, but
/// utilization reporting still needs assignments.
Tensor vamp_responsibilities(const Tensor& zbatch, const ComponentMoments& mom);

double em_objective(const Tensor& zbatch, const Tensor& r, const MixturePriorState& st,
                    const ParamStore& ps, const ComponentMoments& mom);

/// The same objective as a graph, with moments recomputed from the store's
/// leaves so gradients reach the pseudo-inputs through the (frozen) encoder.
ndgrad::Var em_objective_g(const Tensor& zbatch, const Tensor& r,
                           const MixturePriorState& st, const VarMap& vars,
                           const nets::MlpSpec& enc_spec);

/// Names trainable during the EM step: the prior block minus frozen
/// components.
bool em_trainable(const MixturePriorState& st, const std::string& name);

/// One E-step on the batch followed by one Adam ascent step on the prior
/// parameters, with the encoder frozen.
void em_update(MixturePriorState& st, const Tensor& zbatch, ParamStore& ps,
               AdamState& adam, const nets::MlpSpec& enc_spec);

struct Utilization {
  std::size_t count = 0;
  Tensor proportions;                    // mixture weights pi
  std::vector<std::size_t> assignments;  // argmax per row, ties to lowest index
};
Utilization utilization(const Tensor& r_full, const Tensor& pi);

/// Marks components with zero argmax assignments as frozen. No-op unless
/// gating is enabled.
void apply_gating(MixturePriorState& st, const Utilization& util);

struct SampleColumn {
  std::size_t component = 0;
  double pi = 0;
  std::vector<Tensor> samples; // decoded likelihood means
  Tensor exemplar;             // highest-responsibility training datum; may be empty
};

struct SampleGrid {
  std::size_t max_rows = 0;
  std::vector<SampleColumn> columns;
};

/// Fig-1-style grid: utilized components sorted by descending pi, each with
/// round(10 pi_j / max pi) decoded prior-predictive samples; when training
/// data and responsibilities are given, the best-matching datum joins as the
/// bottom row.
SampleGrid prior_predictive_sample(const MixturePriorState& st, const ComponentMoments& mom,
                                   const ParamStore& ps, const nets::MlpSpec& dec_spec,
                                   nets::LikelihoodHead head, Rng& rng,
                                   const Tensor* train_x = nullptr,
                                   const Tensor* r_full = nullptr);

} // namespace vmm::priors
