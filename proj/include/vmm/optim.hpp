#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "vmm/param_store.hpp"
#include "vmm/tensor.hpp"

namespace vmm {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam in descent convention. Moments and the step counter live per
/// parameter, so a parameter that receives no gradient in some update is left
/// completely untouched, state included.
class AdamState {
public:
  struct Slot {
    Tensor m;
    Tensor v;
    std::uint64_t t = 0;
  };

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  void step(ParamStore& params, const GradMap& grads);

  const std::map<std::string, Slot>& slots() const { return slots_; }
  void restore_slot(const std::string& name, Slot slot);

private:
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

void adam_step(AdamState& state, ParamStore& params, const GradMap& grads);

} // namespace vmm
