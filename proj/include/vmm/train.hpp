#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vmm/nets.hpp"
#include "vmm/optim.hpp"
#include "vmm/param_store.hpp"
#include "vmm/priors.hpp"
#include "vmm/rng.hpp"
#include "vmm/tensor.hpp"

namespace vmm::train {

struct ModelArch {
  std::size_t input_dim = 0;
  std::vector<std::size_t> enc_hidden;
  std::vector<std::size_t> dec_hidden;
  nets::HeadKind head = nets::HeadKind::bernoulli;
  bool tanh_pseudo_inputs = false; // image-style data in [-1,1]
  void validate() const;
};

struct TrainConfig {
  enum class Metric { nmi, elbo };

  priors::PriorKind prior = priors::PriorKind::vmm;
  std::size_t K = 100;
  std::size_t dim_z = 10;
  std::size_t batch_size = 256; // the hyper-prior strength knob
  double gamma1 = 1e-4;         // VI learning rate
  double gamma2 = 1e-4;         // Empirical-Bayes learning rate
  std::size_t max_epochs = 10000;
  std::size_t patience = 100;
  Metric metric = Metric::elbo;
  std::uint64_t seed = 0;
  std::size_t n_kl_samples = 1;
  bool gating = false;
  bool collapsed_vmm = false; // K=1, pinned moments; standard-normal check case
  void validate() const;
};

std::string to_string(TrainConfig::Metric m);
TrainConfig::Metric metric_from_string(const std::string& s);

struct Model {
  nets::MlpSpec enc;
  nets::MlpSpec dec;
  nets::LikelihoodHead head;
  ParamStore ps;
  priors::MixturePriorState prior;
};

Model init_model(const TrainConfig& cfg, const ModelArch& arch, const Tensor& train_x,
                 Rng& rng);

/// Batch ELBO (a sum over rows): reconstruction with one reparameterized z
/// per datum minus the KL estimate with cfg.n_kl_samples draws.
double elbo_batch(const Tensor& batch, const Model& model, std::size_t n_kl_samples,
                  Rng& rng);

/// One Adam ascent step on theta and phi (plus the pseudo-inputs for the
/// vampprior, whose inference is joint ELBO maximization). Returns the batch
/// ELBO before the step.
double vi_step(const Tensor& batch, Model& model, AdamState& adam,
               std::size_t n_kl_samples, Rng& rng, std::size_t epoch = 0,
               std::size_t batch_index = 0);

struct SplitData {
  Tensor train_x; // [N,D]
  Tensor val_x;   // [Nv,D]
  std::vector<int> train_y; // empty when unlabeled
  std::vector<int> val_y;
};

struct EpochRecord {
  std::size_t epoch = 0;     // 1-based
  double train_elbo = 0;     // per-datum mean over the epoch
  double val_metric = 0;
  std::size_t utilized = 0;  // on the validation set, at posterior means
};
using History = std::vector<EpochRecord>;

struct Checkpoint {
  TrainConfig config;
  ModelArch arch;
  ParamStore params;
  priors::MixturePriorState prior;
  AdamState adam_vi;
  AdamState adam_em;
  std::size_t epoch = 0;
  double best_metric = 0;
};

struct TrainResult {
  Checkpoint best;
  History history;
};

struct ValMetric {
  double value = 0;
  std::size_t utilized = 0;
};

/// The early-stopping metric on held-out data: validation NMI from
/// responsibilities at posterior means, or per-datum validation ELBO with a
/// dedicated generator derived from the seed so every epoch (and any later
/// re-evaluation) sees the same draws.
ValMetric validation_metric(const Model& model, const Tensor& val_x,
                            const std::vector<int>& val_y, const TrainConfig& cfg);

/// Alternating loop: per batch one vi_step, a fresh posterior sample, one
/// em_update (mixture-parameter priors only); per epoch the validation
/// metric, patience bookkeeping, and best-checkpoint tracking. `live` (when
/// given) receives each epoch record as it happens, so callers keep the
/// history even if an error propagates.
TrainResult train_loop(const SplitData& data, const TrainConfig& cfg,
                       const ModelArch& arch, History* live = nullptr);

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);
Model model_from_checkpoint(const Checkpoint& ck);

} // namespace vmm::train
