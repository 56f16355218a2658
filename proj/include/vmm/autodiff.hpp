#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "vmm/tensor.hpp"

namespace vmm::ndgrad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the computational graph. Built define-by-run; `backprop`
/// reads this node's grad and accumulates into its inputs' grads.
struct Node {
  Tensor value;
  Tensor grad; // allocated on first accumulation
  bool needs_grad = false;
  std::vector<Var> inputs;
  std::function<void(Node&)> backprop;
  const char* op = "leaf";

  void accumulate(const Tensor& g);
  Tensor& ensure_grad();
};

Var leaf(Tensor value, bool needs_grad);
Var cst(Tensor value);
Var cst(double value);

// Elementwise binary ops. Accepted shape pairs: identical; either side a
// scalar; or [M,N] with a [N] vector broadcast across rows.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var add_n(const std::vector<Var>& terms);

Var neg(const Var& a);
Var scale(const Var& a, double c);

// Unary elementwise ops.
Var relu(const Var& a);
Var softplus(const Var& a);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var log(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var lgamma(const Var& a);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var reshape(const Var& a, std::vector<std::size_t> shape);

// Reductions.
Var sum(const Var& a);
Var sum_rows(const Var& a); // [M,N] -> [M]
Var sum_cols(const Var& a); // [M,N] -> [N]
Var mean(const Var& a);

// Stabilized mixture reductions.
Var logsumexp(const Var& v);      // vector -> scalar
Var logsumexp_rows(const Var& m); // [M,K] -> [M]
Var softmax(const Var& v);        // vector -> vector
Var log_softmax(const Var& v);    // vector -> vector

// Structure ops.
Var row(const Var& m, std::size_t i);             // [K,N] -> [N]
Var stack_rows(const std::vector<Var>& rows);     // K x [N] -> [K,N]
Var stack_cols(const std::vector<Var>& cols);     // K x [M] -> [M,K]
Var concat(const std::vector<Var>& scalars);      // K x [] -> [K]
Var diag_embed(const Var& v);                     // [p] -> [p,p]

// Convenience operators for graph code.
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double c) { return add(a, cst(c)); }
inline Var operator+(double c, const Var& a) { return add(cst(c), a); }
inline Var operator-(const Var& a, double c) { return add(a, cst(-c)); }
inline Var operator-(double c, const Var& a) { return sub(cst(c), a); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator/(const Var& a, double c) { return scale(a, 1.0 / c); }

/// Reverse pass from a scalar root; fills `grad` on every needs_grad node
/// reachable from it.
void backward(const Var& root);

} // namespace vmm::ndgrad
