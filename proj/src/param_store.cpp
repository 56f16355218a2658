#include "vmm/param_store.hpp"

#include <stdexcept>

namespace vmm {

void ParamStore::add(std::string name, Tensor value, bool trainable) {
  if (entries_.count(name))
    throw std::invalid_argument("ParamStore: duplicate entry '" + name + "'");
  order_.push_back(name);
  entries_.emplace(std::move(name), Entry{std::move(value), trainable});
}

bool ParamStore::has(const std::string& name) const { return entries_.count(name) != 0; }

Tensor& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("ParamStore: no entry '" + name + "'");
  return it->second.value;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("ParamStore: no entry '" + name + "'");
  return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("ParamStore: no entry '" + name + "'");
  return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
  auto it = entries_.find(name);
  if (it == entries_.end())
    throw std::out_of_range("ParamStore: no entry '" + name + "'");
  it->second.trainable = flag;
}

GradResult value_and_grad(const ParamStore& params,
                          const std::function<ndgrad::Var(const VarMap&)>& build,
                          const std::function<bool(const std::string&)>& filter) {
  VarMap leaves;
  for (const auto& name : params.names()) {
    const bool wants = params.trainable(name) && (!filter || filter(name));
    leaves.emplace(name, ndgrad::leaf(params.at(name), wants));
  }
  ndgrad::Var root = build(leaves);
  ndgrad::backward(root);
  GradResult out;
  out.value = root->value.value();
  for (const auto& [name, var] : leaves) {
    if (!var->needs_grad) continue;
    if (var->grad.empty()) var->ensure_grad(); // disconnected leaf: zero gradient
    out.grads.emplace(name, std::move(var->grad));
  }
  return out;
}

} // namespace vmm
