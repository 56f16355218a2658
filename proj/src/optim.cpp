#include "vmm/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace vmm {

void AdamState::step(ParamStore& params, const GradMap& grads) {
  for (const auto& [name, g] : grads) {
    if (!params.has(name) || !params.trainable(name))
      throw std::invalid_argument("adam_step: gradient for non-trainable entry '" + name + "'");
    Tensor& w = params.at(name);
    if (!w.same_shape(g))
      throw std::invalid_argument("adam_step: gradient shape " + g.shape_str() +
                                  " vs parameter " + w.shape_str() + " for '" + name + "'");
    if (!g.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for parameter '" + name + "'");

    Slot& slot = slots_[name];
    if (slot.t == 0) {
      slot.m = Tensor(w.shape());
      slot.v = Tensor(w.shape());
    }
    slot.t += 1;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(slot.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(slot.t));
    const std::size_t n = w.numel();
    for (std::size_t i = 0; i < n; ++i) {
      slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g[i];
      slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void AdamState::restore_slot(const std::string& name, Slot slot) {
  slots_[name] = std::move(slot);
}

void adam_step(AdamState& state, ParamStore& params, const GradMap& grads) {
  state.step(params, grads);
}

} // namespace vmm
