#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vmm/autodiff.hpp"
#include "vmm/tensor.hpp"

namespace vmm {

/// Named parameter tensors with a per-entry trainability flag. Iteration
/// follows insertion order so optimizer traversal and serialization stay
/// stable across runs.
class ParamStore {
public:
  void add(std::string name, Tensor value, bool trainable = true);
  bool has(const std::string& name) const;
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool flag);
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const { return order_.size(); }

private:
  struct Entry {
    Tensor value;
    bool trainable = true;
  };
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
};

using GradMap = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, ndgrad::Var>;

struct GradResult {
  double value = 0;
  GradMap grads;
};

/// Evaluates a scalar objective built from the store's entries and returns its
/// gradients. `build` receives one graph leaf per entry; leaves for entries
/// that are trainable and pass `filter` (all trainable entries when `filter`
/// is empty) carry gradients, the rest enter the graph as constants. Entries
/// outside the filter are untouched by construction, which is what lets the
/// alternating updates leave the other parameter set bit-identical.
GradResult value_and_grad(const ParamStore& params,
                          const std::function<ndgrad::Var(const VarMap&)>& build,
                          const std::function<bool(const std::string&)>& filter = {});

} // namespace vmm
