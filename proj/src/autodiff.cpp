#include "vmm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <Eigen/Core>
#include <boost/math/special_functions/digamma.hpp>

namespace vmm::ndgrad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

CMatMap as_mat(const Tensor& t) {
  return CMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                 static_cast<Eigen::Index>(t.cols()));
}

MatMap as_mat(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

[[noreturn]] void shape_error(const char* op, const Tensor& a) {
  throw std::invalid_argument(std::string(op) + ": unsupported shape " + a.shape_str());
}

Var make_node(const char* op, Tensor value, std::vector<Var> inputs) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = std::move(value);
  n->inputs = std::move(inputs);
  for (const auto& in : n->inputs)
    if (in->needs_grad) {
      n->needs_grad = true;
      break;
    }
  return n;
}

enum class Bcast { same, a_scalar, b_scalar, b_row };

Bcast classify(const char* op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return Bcast::same;
  if (b.rank() == 0) return Bcast::b_scalar;
  if (a.rank() == 0) return Bcast::a_scalar;
  if (a.rank() == 2 && b.rank() == 1 && a.cols() == b.numel()) return Bcast::b_row;
  shape_error(op, a, b);
}

// Generic elementwise binary op over the supported broadcast pairs. FwdF
// computes f(x,y); DaF and DbF the partials given (x, y, f).
template <class FwdF, class DaF, class DbF>
Var binary_op(const char* op, const Var& a, const Var& b, FwdF f, DaF dfda, DbF dfdb) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  const Bcast kind = classify(op, av, bv);
  Tensor out(av.rank() == 0 && kind == Bcast::a_scalar ? bv.shape() : av.shape());
  const std::size_t n = out.numel();
  const std::size_t ncols = (kind == Bcast::b_row) ? av.cols() : 0;
  switch (kind) {
    case Bcast::same:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
      break;
    case Bcast::b_scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[0]);
      break;
    case Bcast::a_scalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[0], bv[i]);
      break;
    case Bcast::b_row:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % ncols]);
      break;
  }
  Var node = make_node(op, std::move(out), {a, b});
  if (node->needs_grad) {
    Node* pa = a.get();
    Node* pb = b.get();
    node->backprop = [pa, pb, kind, ncols, dfda, dfdb](Node& self) {
      const Tensor& g = self.grad;
      const Tensor& x = pa->value;
      const Tensor& y = pb->value;
      const Tensor& o = self.value;
      const std::size_t n = o.numel();
      if (pa->needs_grad) {
        Tensor& ga = pa->ensure_grad();
        if (kind == Bcast::a_scalar) {
          double acc = 0;
          for (std::size_t i = 0; i < n; ++i) acc += g[i] * dfda(x[0], y[i], o[i]);
          ga[0] += acc;
        } else if (kind == Bcast::b_row) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfda(x[i], y[i % ncols], o[i]);
        } else if (kind == Bcast::b_scalar) {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfda(x[i], y[0], o[i]);
        } else {
          for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * dfda(x[i], y[i], o[i]);
        }
      }
      if (pb->needs_grad) {
        Tensor& gb = pb->ensure_grad();
        switch (kind) {
          case Bcast::same:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * dfdb(x[i], y[i], o[i]);
            break;
          case Bcast::b_scalar: {
            double acc = 0;
            for (std::size_t i = 0; i < n; ++i) acc += g[i] * dfdb(x[i], y[0], o[i]);
            gb[0] += acc;
            break;
          }
          case Bcast::a_scalar:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * dfdb(x[0], y[i], o[i]);
            break;
          case Bcast::b_row:
            for (std::size_t i = 0; i < n; ++i)
              gb[i % ncols] += g[i] * dfdb(x[i], y[i % ncols], o[i]);
            break;
        }
      }
    };
  }
  return node;
}

template <class FwdF, class DF>
Var unary_op(const char* op, const Var& a, FwdF f, DF df) {
  const Tensor& av = a->value;
  Tensor out(av.shape());
  const std::size_t n = out.numel();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i]);
  Var node = make_node(op, std::move(out), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa, df](Node& self) {
      Tensor& ga = pa->ensure_grad();
      const std::size_t n = self.value.numel();
      for (std::size_t i = 0; i < n; ++i)
        ga[i] += self.grad[i] * df(pa->value[i], self.value[i]);
    };
  }
  return node;
}

double softplus_stable(double x) {
  return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

double sigmoid_stable(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

void Node::accumulate(const Tensor& g) {
  if (!needs_grad) return;
  Tensor& target = ensure_grad();
  if (!target.same_shape(g))
    throw std::logic_error(std::string("accumulate(") + op + "): grad shape " +
                           g.shape_str() + " vs value " + target.shape_str());
  const std::size_t n = target.numel();
  for (std::size_t i = 0; i < n; ++i) target[i] += g[i];
}

Tensor& Node::ensure_grad() {
  if (grad.numel() != value.numel() || grad.shape() != value.shape())
    grad = Tensor(value.shape());
  return grad;
}

Var leaf(Tensor value, bool needs_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->needs_grad = needs_grad;
  return n;
}

Var cst(Tensor value) { return leaf(std::move(value), false); }
Var cst(double value) { return leaf(Tensor::scalar(value), false); }

Var add(const Var& a, const Var& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(const Var& a, const Var& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(const Var& a, const Var& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(const Var& a, const Var& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Var add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_n: empty term list");
  Tensor out = terms[0]->value;
  for (std::size_t k = 1; k < terms.size(); ++k) {
    if (!terms[k]->value.same_shape(out)) shape_error("add_n", out, terms[k]->value);
    const std::size_t n = out.numel();
    for (std::size_t i = 0; i < n; ++i) out[i] += terms[k]->value[i];
  }
  Var node = make_node("add_n", std::move(out), terms);
  if (node->needs_grad) {
    node->backprop = [](Node& self) {
      for (auto& in : self.inputs) in->accumulate(self.grad);
    };
  }
  return node;
}

Var neg(const Var& a) {
  return unary_op(
      "neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double c) {
  return unary_op(
      "scale", a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var relu(const Var& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0 ? x : 0.0; },
      [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var softplus(const Var& a) {
  return unary_op(
      "softplus", a, [](double x) { return softplus_stable(x); },
      [](double x, double) { return sigmoid_stable(x); });
}

Var sigmoid(const Var& a) {
  return unary_op(
      "sigmoid", a, [](double x) { return sigmoid_stable(x); },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(const Var& a) {
  return unary_op(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var log(const Var& a) {
  return unary_op(
      "log", a, [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

Var exp(const Var& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var sqrt(const Var& a) {
  return unary_op(
      "sqrt", a, [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

Var lgamma(const Var& a) {
  return unary_op(
      "lgamma", a, [](double x) { return std::lgamma(x); },
      [](double x, double) { return boost::math::digamma(x); });
}

Var matmul(const Var& a, const Var& b) {
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows())
    shape_error("matmul", av, bv);
  Tensor out({av.rows(), bv.cols()});
  as_mat(out).noalias() = as_mat(av) * as_mat(bv);
  Var node = make_node("matmul", std::move(out), {a, b});
  if (node->needs_grad) {
    Node* pa = a.get();
    Node* pb = b.get();
    node->backprop = [pa, pb](Node& self) {
      const auto g = as_mat(self.grad);
      if (pa->needs_grad)
        as_mat(pa->ensure_grad()).noalias() += g * as_mat(pb->value).transpose();
      if (pb->needs_grad)
        as_mat(pb->ensure_grad()).noalias() += as_mat(pa->value).transpose() * g;
    };
  }
  return node;
}

Var transpose(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) shape_error("transpose", av);
  Tensor out({av.cols(), av.rows()});
  as_mat(out) = as_mat(av).transpose();
  Var node = make_node("transpose", std::move(out), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa](Node& self) {
      as_mat(pa->ensure_grad()) += as_mat(self.grad).transpose();
    };
  }
  return node;
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
  Tensor out(std::move(shape), a->value.values());
  Var node = make_node("reshape", std::move(out), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa](Node& self) {
      Tensor& ga = pa->ensure_grad();
      const std::size_t n = ga.numel();
      for (std::size_t i = 0; i < n; ++i) ga[i] += self.grad[i];
    };
  }
  return node;
}

Var sum(const Var& a) {
  double s = 0;
  for (std::size_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  Var node = make_node("sum", Tensor::scalar(s), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa](Node& self) {
      Tensor& ga = pa->ensure_grad();
      const double g = self.grad[0];
      for (std::size_t i = 0; i < ga.numel(); ++i) ga[i] += g;
    };
  }
  return node;
}

Var sum_rows(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) shape_error("sum_rows", av);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({m});
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < n; ++j) s += av.at(i, j);
    out[i] = s;
  }
  Var node = make_node("sum_rows", std::move(out), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa, m, n](Node& self) {
      Tensor& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += self.grad[i];
    };
  }
  return node;
}

Var sum_cols(const Var& a) {
  const Tensor& av = a->value;
  if (av.rank() != 2) shape_error("sum_cols", av);
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av.at(i, j);
  Var node = make_node("sum_cols", std::move(out), {a});
  if (node->needs_grad) {
    Node* pa = a.get();
    node->backprop = [pa, m, n](Node& self) {
      Tensor& ga = pa->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += self.grad[j];
    };
  }
  return node;
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a->value.numel())); }

Var logsumexp(const Var& v) {
  const Tensor& x = v->value;
  if (x.rank() != 1 || x.numel() == 0) shape_error("logsumexp", x);
  const std::size_t n = x.numel();
  double hi = x[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, x[i]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - hi);
  Var node = make_node("logsumexp", Tensor::scalar(hi + std::log(s)), {v});
  if (node->needs_grad) {
    Node* pv = v.get();
    node->backprop = [pv](Node& self) {
      Tensor& gv = pv->ensure_grad();
      const double y = self.value[0];
      const double g = self.grad[0];
      for (std::size_t i = 0; i < gv.numel(); ++i)
        gv[i] += g * std::exp(pv->value[i] - y);
    };
  }
  return node;
}

Var logsumexp_rows(const Var& m) {
  const Tensor& x = m->value;
  if (x.rank() != 2 || x.cols() == 0) shape_error("logsumexp_rows", x);
  const std::size_t rows = x.rows(), cols = x.cols();
  Tensor out({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double hi = x.at(i, 0);
    for (std::size_t j = 1; j < cols; ++j) hi = std::max(hi, x.at(i, j));
    double s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x.at(i, j) - hi);
    out[i] = hi + std::log(s);
  }
  Var node = make_node("logsumexp_rows", std::move(out), {m});
  if (node->needs_grad) {
    Node* pm = m.get();
    node->backprop = [pm, rows, cols](Node& self) {
      Tensor& gm = pm->ensure_grad();
      for (std::size_t i = 0; i < rows; ++i) {
        const double y = self.value[i];
        const double g = self.grad[i];
        for (std::size_t j = 0; j < cols; ++j)
          gm.at(i, j) += g * std::exp(pm->value.at(i, j) - y);
      }
    };
  }
  return node;
}

Var softmax(const Var& v) {
  const Tensor& x = v->value;
  if (x.rank() != 1 || x.numel() == 0) shape_error("softmax", x);
  const std::size_t n = x.numel();
  double hi = x[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, x[i]);
  Tensor out({n});
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - hi);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
  Var node = make_node("softmax", std::move(out), {v});
  if (node->needs_grad) {
    Node* pv = v.get();
    node->backprop = [pv](Node& self) {
      Tensor& gv = pv->ensure_grad();
      const std::size_t n = self.value.numel();
      double inner = 0;
      for (std::size_t i = 0; i < n; ++i) inner += self.grad[i] * self.value[i];
      for (std::size_t i = 0; i < n; ++i)
        gv[i] += self.value[i] * (self.grad[i] - inner);
    };
  }
  return node;
}

Var log_softmax(const Var& v) {
  const Tensor& x = v->value;
  if (x.rank() != 1 || x.numel() == 0) shape_error("log_softmax", x);
  const std::size_t n = x.numel();
  double hi = x[0];
  for (std::size_t i = 1; i < n; ++i) hi = std::max(hi, x[i]);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - hi);
  const double lse = hi + std::log(s);
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
  Var node = make_node("log_softmax", std::move(out), {v});
  if (node->needs_grad) {
    Node* pv = v.get();
    node->backprop = [pv](Node& self) {
      Tensor& gv = pv->ensure_grad();
      const std::size_t n = self.value.numel();
      double gsum = 0;
      for (std::size_t i = 0; i < n; ++i) gsum += self.grad[i];
      for (std::size_t i = 0; i < n; ++i)
        gv[i] += self.grad[i] - std::exp(self.value[i]) * gsum;
    };
  }
  return node;
}

Var row(const Var& m, std::size_t i) {
  const Tensor& x = m->value;
  if (x.rank() != 2 || i >= x.rows()) shape_error("row", x);
  const std::size_t n = x.cols();
  Tensor out({n});
  for (std::size_t j = 0; j < n; ++j) out[j] = x.at(i, j);
  Var node = make_node("row", std::move(out), {m});
  if (node->needs_grad) {
    Node* pm = m.get();
    node->backprop = [pm, i, n](Node& self) {
      Tensor& gm = pm->ensure_grad();
      for (std::size_t j = 0; j < n; ++j) gm.at(i, j) += self.grad[j];
    };
  }
  return node;
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: empty list");
  const std::size_t n = rows[0]->value.numel();
  for (const auto& r : rows)
    if (r->value.rank() != 1 || r->value.numel() != n) shape_error("stack_rows", r->value);
  const std::size_t k = rows.size();
  Tensor out({k, n});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = rows[i]->value[j];
  Var node = make_node("stack_rows", std::move(out), rows);
  if (node->needs_grad) {
    node->backprop = [k, n](Node& self) {
      for (std::size_t i = 0; i < k; ++i) {
        Node* in = self.inputs[i].get();
        if (!in->needs_grad) continue;
        Tensor& g = in->ensure_grad();
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad.at(i, j);
      }
    };
  }
  return node;
}

Var stack_cols(const std::vector<Var>& cols) {
  if (cols.empty()) throw std::invalid_argument("stack_cols: empty list");
  const std::size_t m = cols[0]->value.numel();
  for (const auto& c : cols)
    if (c->value.rank() != 1 || c->value.numel() != m) shape_error("stack_cols", c->value);
  const std::size_t k = cols.size();
  Tensor out({m, k});
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t i = 0; i < m; ++i) out.at(i, j) = cols[j]->value[i];
  Var node = make_node("stack_cols", std::move(out), cols);
  if (node->needs_grad) {
    node->backprop = [k, m](Node& self) {
      for (std::size_t j = 0; j < k; ++j) {
        Node* in = self.inputs[j].get();
        if (!in->needs_grad) continue;
        Tensor& g = in->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) g[i] += self.grad.at(i, j);
      }
    };
  }
  return node;
}

Var concat(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw std::invalid_argument("concat: empty list");
  const std::size_t k = scalars.size();
  Tensor out({k});
  for (std::size_t i = 0; i < k; ++i) out[i] = scalars[i]->value.value();
  Var node = make_node("concat", std::move(out), scalars);
  if (node->needs_grad) {
    node->backprop = [k](Node& self) {
      for (std::size_t i = 0; i < k; ++i) {
        Node* in = self.inputs[i].get();
        if (!in->needs_grad) continue;
        in->ensure_grad()[0] += self.grad[i];
      }
    };
  }
  return node;
}

Var diag_embed(const Var& v) {
  const Tensor& x = v->value;
  if (x.rank() != 1) shape_error("diag_embed", x);
  const std::size_t p = x.numel();
  Tensor out({p, p});
  for (std::size_t d = 0; d < p; ++d) out.at(d, d) = x[d];
  Var node = make_node("diag_embed", std::move(out), {v});
  if (node->needs_grad) {
    Node* pv = v.get();
    node->backprop = [pv, p](Node& self) {
      Tensor& gv = pv->ensure_grad();
      for (std::size_t d = 0; d < p; ++d) gv[d] += self.grad.at(d, d);
    };
  }
  return node;
}

void backward(const Var& root) {
  if (root->value.numel() != 1)
    throw std::logic_error("backward: root is not a scalar, shape " +
                           root->value.shape_str());
  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->inputs.size()) {
      Node* child = node->inputs[idx++].get();
      if (child->needs_grad && seen.insert(child).second)
        stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backprop && node->grad.numel() == node->value.numel())
      node->backprop(*node);
  }
}

} // namespace vmm::ndgrad
