#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "vmm/autodiff.hpp"
#include "vmm/dists.hpp"
#include "vmm/param_store.hpp"
#include "vmm/rng.hpp"
#include "vmm/tensor.hpp"

namespace vmm::nets {

/// Widths of an MLP with ReLU hidden layers. `output` is the width of each
/// head attached to the trunk.
struct MlpSpec {
  std::size_t input = 0;
  std::vector<std::size_t> hidden;
  std::size_t output = 0;
};

void validate(const MlpSpec& spec);

enum class HeadKind { gaussian_global_variance, bernoulli };

HeadKind head_kind_from_string(const std::string& s);
std::string to_string(HeadKind kind);

struct LikelihoodHead {
  HeadKind kind = HeadKind::bernoulli;
};

inline constexpr double kVarianceFloor = 1e-6;

/// Glorot-uniform trunk plus two linear heads (mean, raw variance). Entries
/// are named `prefix.W<i>`/`prefix.b<i>` for the trunk and `prefix.Wm/bm`,
/// `prefix.Wv/bv` for the heads.
void init_encoder(const MlpSpec& spec, const std::string& prefix, ParamStore& ps, Rng& rng);

/// Trunk plus one linear output head `prefix.Wo/bo`; the gaussian head adds
/// the global raw-variance scalar `prefix.raw_var` (softplus -> sigma^2).
void init_decoder(const MlpSpec& spec, const std::string& prefix, LikelihoodHead head,
                  ParamStore& ps, Rng& rng);

// Graph builders over batches (rows are examples).
struct EncOut {
  ndgrad::Var m; // [M,p]
  ndgrad::Var s; // [M,p], strictly positive by the softplus-plus-floor map
};
EncOut encode_g(const ndgrad::Var& x, const VarMap& vars, const MlpSpec& spec,
                const std::string& prefix);

/// Per-row log p(x_i | z_i) as an [M] graph vector.
ndgrad::Var decode_loglik_rows_g(const Tensor& x, const ndgrad::Var& z, const VarMap& vars,
                                 const MlpSpec& spec, const std::string& prefix,
                                 LikelihoodHead head);

// Plain single-vector views used off the tape.
dists::DiagGaussian encode(const Tensor& x, const ParamStore& ps, const MlpSpec& spec,
                           const std::string& prefix);
/// Batched plain encode: returns means and variances as [M,p] tensors.
std::pair<Tensor, Tensor> encode_batch(const Tensor& x, const ParamStore& ps,
                                       const MlpSpec& spec, const std::string& prefix);
double decode_loglik(const Tensor& x, const Tensor& z, const ParamStore& ps,
                     const MlpSpec& spec, const std::string& prefix, LikelihoodHead head);
/// Decoded observation mean (sigmoid of logits for bernoulli).
Tensor decode_mean(const Tensor& z, const ParamStore& ps, const MlpSpec& spec,
                   const std::string& prefix, LikelihoodHead head);

double head_sigma2(const ParamStore& ps, const std::string& prefix);

} // namespace vmm::nets
