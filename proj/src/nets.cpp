#include "vmm/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace vmm::nets {

namespace nd = vmm::ndgrad;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w({fan_in, fan_out});
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] = a * (2.0 * rng.uniform() - 1.0);
  return w;
}

void add_linear(ParamStore& ps, const std::string& w, const std::string& b,
                std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  ps.add(w, glorot(fan_in, fan_out, rng));
  ps.add(b, Tensor::zeros({fan_out}));
}

nd::Var trunk_g(const nd::Var& x, const VarMap& vars, const MlpSpec& spec,
                const std::string& prefix) {
  nd::Var h = x;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    const std::string tag = std::to_string(i);
    h = nd::relu(nd::add(nd::matmul(h, vars.at(prefix + ".W" + tag)),
                         vars.at(prefix + ".b" + tag)));
  }
  return h;
}

nd::Var linear_g(const nd::Var& h, const VarMap& vars, const std::string& w,
                 const std::string& b) {
  return nd::add(nd::matmul(h, vars.at(w)), vars.at(b));
}

VarMap as_constants(const ParamStore& ps) {
  VarMap vars;
  for (const auto& name : ps.names()) vars.emplace(name, nd::cst(ps.at(name)));
  return vars;
}

Tensor as_row_matrix(const Tensor& x) {
  if (x.rank() == 1) return Tensor({1, x.numel()}, x.values());
  return x;
}

void check_bernoulli_support(const Tensor& x) {
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (!(x[i] >= 0.0 && x[i] <= 1.0))
      throw std::invalid_argument(
          "decode_loglik: bernoulli data outside [0,1], value " + std::to_string(x[i]));
}

} // namespace

void validate(const MlpSpec& spec) {
  if (spec.input == 0 || spec.output == 0)
    throw std::invalid_argument("MlpSpec: zero input or output width");
  for (std::size_t h : spec.hidden)
    if (h == 0) throw std::invalid_argument("MlpSpec: zero hidden width");
}

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "gaussian") return HeadKind::gaussian_global_variance;
  if (s == "bernoulli") return HeadKind::bernoulli;
  throw std::invalid_argument("unknown likelihood head '" + s + "'");
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::gaussian_global_variance: return "gaussian";
    case HeadKind::bernoulli: return "bernoulli";
  }
  throw std::logic_error("unreachable");
}

void init_encoder(const MlpSpec& spec, const std::string& prefix, ParamStore& ps, Rng& rng) {
  validate(spec);
  std::size_t w = spec.input;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    add_linear(ps, prefix + ".W" + std::to_string(i), prefix + ".b" + std::to_string(i), w,
               spec.hidden[i], rng);
    w = spec.hidden[i];
  }
  add_linear(ps, prefix + ".Wm", prefix + ".bm", w, spec.output, rng);
  add_linear(ps, prefix + ".Wv", prefix + ".bv", w, spec.output, rng);
}

void init_decoder(const MlpSpec& spec, const std::string& prefix, LikelihoodHead head,
                  ParamStore& ps, Rng& rng) {
  validate(spec);
  std::size_t w = spec.input;
  for (std::size_t i = 0; i < spec.hidden.size(); ++i) {
    add_linear(ps, prefix + ".W" + std::to_string(i), prefix + ".b" + std::to_string(i), w,
               spec.hidden[i], rng);
    w = spec.hidden[i];
  }
  add_linear(ps, prefix + ".Wo", prefix + ".bo", w, spec.output, rng);
  if (head.kind == HeadKind::gaussian_global_variance)
    ps.add(prefix + ".raw_var", Tensor::scalar(std::log(std::expm1(1.0)))); // sigma^2 = 1
}

EncOut encode_g(const nd::Var& x, const VarMap& vars, const MlpSpec& spec,
                const std::string& prefix) {
  nd::Var h = trunk_g(x, vars, spec, prefix);
  nd::Var m = linear_g(h, vars, prefix + ".Wm", prefix + ".bm");
  nd::Var s = nd::add(nd::softplus(linear_g(h, vars, prefix + ".Wv", prefix + ".bv")),
                      nd::cst(kVarianceFloor));
  return {m, s};
}

nd::Var decode_loglik_rows_g(const Tensor& x, const nd::Var& z, const VarMap& vars,
                             const MlpSpec& spec, const std::string& prefix,
                             LikelihoodHead head) {
  nd::Var h = trunk_g(z, vars, spec, prefix);
  nd::Var o = linear_g(h, vars, prefix + ".Wo", prefix + ".bo");
  const double D = static_cast<double>(x.cols());
  if (head.kind == HeadKind::bernoulli) {
    check_bernoulli_support(x);
    // sum_d [x log mu + (1-x) log(1-mu)] = sum_d [x o - softplus(o)]
    return nd::sum_rows(nd::sub(nd::mul(nd::cst(x), o), nd::softplus(o)));
  }
  nd::Var s2 = nd::softplus(vars.at(prefix + ".raw_var"));
  nd::Var sq = nd::sum_rows(nd::square(nd::sub(o, nd::cst(x))));
  nd::Var quad = nd::neg(nd::div(sq, nd::scale(s2, 2.0)));
  nd::Var logdet = nd::scale(nd::log(s2), -0.5 * D);
  return nd::add(nd::add(quad, logdet), nd::cst(-0.5 * D * kLog2Pi));
}

dists::DiagGaussian encode(const Tensor& x, const ParamStore& ps, const MlpSpec& spec,
                           const std::string& prefix) {
  auto [m, s] = encode_batch(as_row_matrix(x), ps, spec, prefix);
  Tensor mv({m.cols()}), sv({s.cols()});
  for (std::size_t d = 0; d < m.cols(); ++d) {
    mv[d] = m.at(0, d);
    sv[d] = s.at(0, d);
  }
  return {mv, sv};
}

std::pair<Tensor, Tensor> encode_batch(const Tensor& x, const ParamStore& ps,
                                       const MlpSpec& spec, const std::string& prefix) {
  if (!x.all_finite()) throw std::invalid_argument("encode: non-finite input");
  VarMap vars = as_constants(ps);
  EncOut out = encode_g(nd::cst(as_row_matrix(x)), vars, spec, prefix);
  return {out.m->value, out.s->value};
}

double decode_loglik(const Tensor& x, const Tensor& z, const ParamStore& ps,
                     const MlpSpec& spec, const std::string& prefix, LikelihoodHead head) {
  VarMap vars = as_constants(ps);
  nd::Var rows = decode_loglik_rows_g(as_row_matrix(x), nd::cst(as_row_matrix(z)), vars,
                                      spec, prefix, head);
  return rows->value[0];
}

Tensor decode_mean(const Tensor& z, const ParamStore& ps, const MlpSpec& spec,
                   const std::string& prefix, LikelihoodHead head) {
  VarMap vars = as_constants(ps);
  nd::Var h = trunk_g(nd::cst(as_row_matrix(z)), vars, spec, prefix);
  nd::Var o = linear_g(h, vars, prefix + ".Wo", prefix + ".bo");
  Tensor out({o->value.cols()});
  for (std::size_t d = 0; d < out.numel(); ++d) {
    const double v = o->value.at(0, d);
    out[d] = head.kind == HeadKind::bernoulli ? 1.0 / (1.0 + std::exp(-v)) : v;
  }
  return out;
}

double head_sigma2(const ParamStore& ps, const std::string& prefix) {
  const double raw = ps.at(prefix + ".raw_var").value();
  return std::log1p(std::exp(raw));
}

} // namespace vmm::nets
