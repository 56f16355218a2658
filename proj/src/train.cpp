#include "vmm/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "vmm/dists.hpp"
#include "vmm/metrics.hpp"

namespace vmm::train {

namespace nd = ndgrad;
using json = nlohmann::json;

namespace {

Tensor tensor_row(const Tensor& m, std::size_t i) {
  Tensor out({m.cols()});
  for (std::size_t d = 0; d < m.cols(); ++d) out[d] = m.at(i, d);
  return out;
}

/// The VI-trainable block: the networks, plus the pseudo-inputs when the
/// prior is the vampprior (whose u is fit by ELBO ascent, not by EM).
bool vi_trainable(const priors::MixturePriorState& st, const std::string& name) {
  if (name.starts_with("enc.") || name.starts_with("dec.")) return true;
  return st.kind == priors::PriorKind::vampprior && name.starts_with("prior.u.");
}

Tensor mixture_weights(const Model& model) {
  if (model.prior.has_mixture_params()) return priors::pi(model.ps, model.prior);
  return Tensor::full({model.prior.K}, 1.0 / static_cast<double>(model.prior.K));
}

} // namespace

void ModelArch::validate() const {
  nets::MlpSpec probe{input_dim, enc_hidden, 1};
  nets::validate(probe); // catches zero input and zero hidden widths
  for (std::size_t h : dec_hidden)
    if (h == 0) throw std::invalid_argument("ModelArch: zero decoder hidden width");
}

void TrainConfig::validate() const {
  if (K < 1) throw std::invalid_argument("TrainConfig: K must be at least 1");
  if (dim_z < 1) throw std::invalid_argument("TrainConfig: dim_z must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be at least 1");
  if (!(gamma1 > 0.0) || !(gamma2 > 0.0))
    throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (max_epochs < 1) throw std::invalid_argument("TrainConfig: max_epochs must be at least 1");
  if (patience < 1) throw std::invalid_argument("TrainConfig: patience must be at least 1");
  if (n_kl_samples < 1)
    throw std::invalid_argument("TrainConfig: n_kl_samples must be at least 1");
  if (gating && !(prior == priors::PriorKind::vmm || prior == priors::PriorKind::bayes_gmm))
    throw std::invalid_argument("TrainConfig: gating needs a mixture prior with weights");
  if (collapsed_vmm && prior != priors::PriorKind::vmm)
    throw std::invalid_argument("TrainConfig: collapsed_vmm only applies to the vmm prior");
  if (collapsed_vmm && gating)
    throw std::invalid_argument("TrainConfig: collapsed_vmm excludes gating");
}

std::string to_string(TrainConfig::Metric m) {
  return m == TrainConfig::Metric::nmi ? "nmi" : "elbo";
}

TrainConfig::Metric metric_from_string(const std::string& s) {
  if (s == "nmi") return TrainConfig::Metric::nmi;
  if (s == "elbo") return TrainConfig::Metric::elbo;
  throw std::invalid_argument("unknown early-stop metric '" + s + "'");
}

Model init_model(const TrainConfig& cfg, const ModelArch& arch, const Tensor& train_x,
                 Rng& rng) {
  cfg.validate();
  arch.validate();
  Model model;
  model.enc = nets::MlpSpec{arch.input_dim, arch.enc_hidden, cfg.dim_z};
  model.dec = nets::MlpSpec{cfg.dim_z, arch.dec_hidden, arch.input_dim};
  model.head = nets::LikelihoodHead{arch.head};
  nets::init_encoder(model.enc, "enc", model.ps, rng);
  nets::init_decoder(model.dec, "dec", model.head, model.ps, rng);
  if (cfg.collapsed_vmm) {
    model.prior = priors::init_collapsed_vmm(cfg.dim_z, arch.input_dim, model.ps);
  } else {
    model.prior = priors::init_prior(cfg.prior, cfg.K, cfg.dim_z, arch.input_dim,
                                     arch.tanh_pseudo_inputs, train_x, model.enc, model.ps,
                                     rng);
    model.prior.gating_enabled = cfg.gating;
  }
  return model;
}

double elbo_batch(const Tensor& batch, const Model& model, std::size_t n_kl_samples,
                  Rng& rng) {
  if (batch.rank() != 2 || batch.rows() == 0)
    throw std::invalid_argument("elbo_batch: batch is empty");
  const auto [m, s] = nets::encode_batch(batch, model.ps, model.enc, "enc");
  const priors::ComponentMoments mom =
      priors::component_moments(model.prior, model.ps, model.enc);
  double total = 0;
  for (std::size_t i = 0; i < batch.rows(); ++i) {
    const Tensor xi = tensor_row(batch, i);
    const dists::DiagGaussian q{tensor_row(m, i), tensor_row(s, i)};
    const Tensor z = dists::diag_gauss_sample(q, rng);
    total += nets::decode_loglik(xi, z, model.ps, model.dec, "dec", model.head);
    total -= priors::kl_to_prior(q, model.prior, model.ps, mom, n_kl_samples, rng);
  }
  return total;
}

double vi_step(const Tensor& batch, Model& model, AdamState& adam,
               std::size_t n_kl_samples, Rng& rng, std::size_t epoch,
               std::size_t batch_index) {
  if (batch.rank() != 2 || batch.rows() == 0)
    throw std::invalid_argument("vi_step: batch is empty");
  if (n_kl_samples < 1) throw std::invalid_argument("vi_step: need at least one KL sample");
  const std::size_t M = batch.rows();
  const std::size_t p = model.enc.output;
  const priors::PriorKind kind = model.prior.kind;
  const bool closed_form_kl = kind == priors::PriorKind::standard_normal;

  // Noise drawn up front; the graph only sees it as constants.
  const Tensor eps0 = dists::gauss_matrix(M, p, rng);
  std::vector<Tensor> eps_kl;
  if (!closed_form_kl)
    for (std::size_t k = 0; k < n_kl_samples; ++k)
      eps_kl.push_back(dists::gauss_matrix(M, p, rng));

  // vmm / bayes-gmm: the prior enters the VI objective as a fixed density.
  priors::PriorDensityCache cache;
  if (model.prior.has_mixture_params()) {
    const priors::ComponentMoments mom =
        priors::component_moments(model.prior, model.ps, model.enc);
    cache = priors::make_density_cache(model.prior, model.ps, mom);
  }

  auto build = [&](const VarMap& vars) {
    const nets::EncOut q = nets::encode_g(nd::cst(batch), vars, model.enc, "enc");
    const nd::Var sqrt_s = nd::sqrt(q.s);
    const nd::Var z0 = q.m + sqrt_s * nd::cst(eps0);
    const nd::Var recon =
        nd::sum(nets::decode_loglik_rows_g(batch, z0, vars, model.dec, "dec", model.head));
    nd::Var kl;
    if (closed_form_kl) {
      kl = 0.5 * nd::sum(q.s + nd::square(q.m) - 1.0 - nd::log(q.s));
    } else {
      nd::Var prior_m, prior_s;
      if (kind == priors::PriorKind::vampprior) {
        std::vector<nd::Var> us;
        for (std::size_t j = 0; j < model.prior.K; ++j)
          us.push_back(vars.at(priors::u_name(j)));
        nd::Var U = nd::stack_rows(us);
        if (model.prior.tanh_inputs) U = nd::tanh(U);
        const nets::EncOut comp = nets::encode_g(U, vars, model.enc, "enc");
        prior_m = comp.m;
        prior_s = comp.s;
      }
      std::vector<nd::Var> lp;
      for (std::size_t k = 0; k < n_kl_samples; ++k) {
        const nd::Var zk = q.m + sqrt_s * nd::cst(eps_kl[k]);
        lp.push_back(nd::sum(kind == priors::PriorKind::vampprior
                                 ? priors::vamp_log_density_rows_g(zk, prior_m, prior_s)
                                 : priors::prior_log_density_rows_g(zk, cache)));
      }
      const nd::Var entropy = nd::sum(dists::diag_gauss_entropy_rows_g(q.s));
      kl = -entropy - nd::add_n(lp) / static_cast<double>(n_kl_samples);
    }
    return nd::neg(recon - kl);
  };

  const GradResult res = value_and_grad(model.ps, build, [&](const std::string& name) {
    return vi_trainable(model.prior, name);
  });
  if (!std::isfinite(res.value))
    throw std::runtime_error("vi_step: non-finite loss at epoch " + std::to_string(epoch) +
                             " batch " + std::to_string(batch_index));
  adam.step(model.ps, res.grads);
  return -res.value;
}

ValMetric validation_metric(const Model& model, const Tensor& val_x,
                            const std::vector<int>& val_y, const TrainConfig& cfg) {
  if (val_x.rank() != 2 || val_x.rows() == 0)
    throw std::invalid_argument("validation_metric: empty validation set");
  ValMetric out;
  const auto [m, s] = nets::encode_batch(val_x, model.ps, model.enc, "enc");
  std::vector<std::size_t> assignments(val_x.rows(), 0);
  Tensor r;
  if (model.prior.kind == priors::PriorKind::standard_normal) {
    out.utilized = 1;
    r = Tensor::full({val_x.rows(), 1}, 1.0);
  } else {
    const priors::ComponentMoments mom =
        priors::component_moments(model.prior, model.ps, model.enc);
    r = model.prior.has_mixture_params()
            ? priors::e_step(m, model.prior, model.ps, mom)
            : priors::vamp_responsibilities(m, mom);
    const priors::Utilization util = priors::utilization(r, mixture_weights(model));
    out.utilized = util.count;
    assignments = util.assignments;
  }
  if (cfg.metric == TrainConfig::Metric::nmi) {
    if (val_y.size() != val_x.rows())
      throw std::invalid_argument("validation_metric: the nmi metric needs validation labels");
    out.value = metrics::clustering_scores(assignments, val_y, r).nmi;
  } else {
    // Re-derived stream each call: every epoch scores the same draws, and a
    // restored checkpoint reproduces the stored value exactly.
    Rng eval_rng = Rng(cfg.seed).fork(0x5EED);
    out.value =
        elbo_batch(val_x, model, cfg.n_kl_samples, eval_rng) / static_cast<double>(val_x.rows());
  }
  return out;
}

TrainResult train_loop(const SplitData& data, const TrainConfig& cfg, const ModelArch& arch,
                       History* live) {
  cfg.validate();
  arch.validate();
  const std::size_t N = data.train_x.rank() == 2 ? data.train_x.rows() : 0;
  const std::size_t Nv = data.val_x.rank() == 2 ? data.val_x.rows() : 0;
  if (N == 0) throw std::invalid_argument("train_loop: empty training set");
  if (Nv == 0) throw std::invalid_argument("train_loop: empty validation set");
  if (data.train_x.cols() != arch.input_dim || data.val_x.cols() != arch.input_dim)
    throw std::invalid_argument("train_loop: data width does not match input_dim");
  if (!data.val_y.empty() && data.val_y.size() != Nv)
    throw std::invalid_argument("train_loop: validation label count mismatch");
  if (cfg.metric == TrainConfig::Metric::nmi && data.val_y.size() != Nv)
    throw std::invalid_argument("train_loop: the nmi metric needs validation labels");

  Rng rng(cfg.seed);
  Model model = init_model(cfg, arch, data.train_x, rng);
  AdamState adam_vi(AdamConfig{cfg.gamma1, 0.9, 0.999, 1e-8});
  AdamState adam_em(AdamConfig{cfg.gamma2, 0.9, 0.999, 1e-8});
  const bool run_em = model.prior.has_mixture_params() && !model.prior.collapsed_standard;
  const std::size_t D = arch.input_dim;
  const std::size_t p = cfg.dim_z;

  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  bool have_best = false;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    for (std::size_t i = N - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
      std::swap(order[i], order[j]);
    }
    double elbo_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size, ++batch_index) {
      const std::size_t M = std::min(cfg.batch_size, N - start);
      Tensor batch({M, D});
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t d = 0; d < D; ++d) batch.at(i, d) = data.train_x.at(order[start + i], d);
      elbo_sum += vi_step(batch, model, adam_vi, cfg.n_kl_samples, rng, epoch, batch_index);
      if (run_em) {
        const auto [m, s] = nets::encode_batch(batch, model.ps, model.enc, "enc");
        Tensor z({M, p});
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t d = 0; d < p; ++d)
            z.at(i, d) = m.at(i, d) + std::sqrt(s.at(i, d)) * rng.gauss();
        priors::em_update(model.prior, z, model.ps, adam_em, model.enc);
      }
    }
    if (model.prior.gating_enabled) {
      // Recomputed from scratch: a component that regains members thaws.
      const auto [tm, ts] = nets::encode_batch(data.train_x, model.ps, model.enc, "enc");
      const priors::ComponentMoments mom =
          priors::component_moments(model.prior, model.ps, model.enc);
      const Tensor r = priors::e_step(tm, model.prior, model.ps, mom);
      priors::apply_gating(model.prior, priors::utilization(r, mixture_weights(model)));
    }
    const ValMetric vm = validation_metric(model, data.val_x, data.val_y, cfg);
    const EpochRecord rec{epoch, elbo_sum / static_cast<double>(N), vm.value, vm.utilized};
    result.history.push_back(rec);
    if (live) live->push_back(rec);
    if (!have_best || vm.value > result.best.best_metric) {
      have_best = true;
      result.best = Checkpoint{cfg,      arch,      model.ps, model.prior,
                               adam_vi,  adam_em,   epoch,    vm.value};
      stale = 0;
    } else if (++stale >= cfg.patience) {
      break;
    }
  }
  return result;
}

Model model_from_checkpoint(const Checkpoint& ck) {
  Model model;
  model.enc = nets::MlpSpec{ck.arch.input_dim, ck.arch.enc_hidden, ck.config.dim_z};
  model.dec = nets::MlpSpec{ck.config.dim_z, ck.arch.dec_hidden, ck.arch.input_dim};
  model.head = nets::LikelihoodHead{ck.arch.head};
  model.ps = ck.params;
  model.prior = ck.prior;
  return model;
}

namespace {

constexpr char kMagic[9] = "VMKP0001";

void append_u64(std::string& buf, std::uint64_t v) {
  for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

void append_f64(std::string& buf, double d) {
  append_u64(buf, std::bit_cast<std::uint64_t>(d));
}

std::uint64_t read_u64(const std::string& buf, std::size_t off) {
  std::uint64_t v = 0;
  for (int b = 0; b < 8; ++b)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[off + b])) << (8 * b);
  return v;
}

json append_tensor(std::vector<double>& payload, const Tensor& t) {
  const std::size_t offset = payload.size();
  payload.insert(payload.end(), t.data(), t.data() + t.numel());
  return json(offset);
}

Tensor tensor_from_payload(const std::vector<std::size_t>& shape, std::size_t offset,
                           const std::vector<double>& payload) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (offset + n > payload.size())
    throw std::runtime_error("load_checkpoint: payload truncated");
  return Tensor(shape, std::vector<double>(payload.begin() + static_cast<std::ptrdiff_t>(offset),
                                           payload.begin() + static_cast<std::ptrdiff_t>(offset + n)));
}

json config_manifest(const TrainConfig& c) {
  return json{{"prior", priors::to_string(c.prior)},
              {"K", c.K},
              {"dim_z", c.dim_z},
              {"batch_size", c.batch_size},
              {"gamma1", c.gamma1},
              {"gamma2", c.gamma2},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"metric", to_string(c.metric)},
              {"seed", c.seed},
              {"n_kl_samples", c.n_kl_samples},
              {"gating", c.gating},
              {"collapsed_vmm", c.collapsed_vmm}};
}

TrainConfig config_from_manifest(const json& j) {
  TrainConfig c;
  c.prior = priors::prior_kind_from_string(j.at("prior").get<std::string>());
  c.K = j.at("K").get<std::size_t>();
  c.dim_z = j.at("dim_z").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.gamma1 = j.at("gamma1").get<double>();
  c.gamma2 = j.at("gamma2").get<double>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.metric = metric_from_string(j.at("metric").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.n_kl_samples = j.at("n_kl_samples").get<std::size_t>();
  c.gating = j.at("gating").get<bool>();
  c.collapsed_vmm = j.at("collapsed_vmm").get<bool>();
  return c;
}

json arch_manifest(const ModelArch& a) {
  return json{{"input_dim", a.input_dim},
              {"enc_hidden", a.enc_hidden},
              {"dec_hidden", a.dec_hidden},
              {"head", nets::to_string(a.head)},
              {"tanh_pseudo_inputs", a.tanh_pseudo_inputs}};
}

ModelArch arch_from_manifest(const json& j) {
  ModelArch a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.enc_hidden = j.at("enc_hidden").get<std::vector<std::size_t>>();
  a.dec_hidden = j.at("dec_hidden").get<std::vector<std::size_t>>();
  a.head = nets::head_kind_from_string(j.at("head").get<std::string>());
  a.tanh_pseudo_inputs = j.at("tanh_pseudo_inputs").get<bool>();
  return a;
}

json prior_manifest(const priors::MixturePriorState& st) {
  return json{{"kind", priors::to_string(st.kind)},
              {"K", st.K},
              {"p", st.p},
              {"D", st.D},
              {"tanh_inputs", st.tanh_inputs},
              {"gating_enabled", st.gating_enabled},
              {"frozen", st.frozen},
              {"collapsed_standard", st.collapsed_standard}};
}

priors::MixturePriorState prior_from_manifest(const json& j) {
  priors::MixturePriorState st;
  st.kind = priors::prior_kind_from_string(j.at("kind").get<std::string>());
  st.K = j.at("K").get<std::size_t>();
  st.p = j.at("p").get<std::size_t>();
  st.D = j.at("D").get<std::size_t>();
  st.tanh_inputs = j.at("tanh_inputs").get<bool>();
  st.gating_enabled = j.at("gating_enabled").get<bool>();
  st.frozen = j.at("frozen").get<std::vector<bool>>();
  st.collapsed_standard = j.at("collapsed_standard").get<bool>();
  return st;
}

json adam_manifest(const AdamState& st, std::vector<double>& payload) {
  json out{{"lr", st.config().lr},
           {"beta1", st.config().beta1},
           {"beta2", st.config().beta2},
           {"eps", st.config().eps}};
  json slots = json::array();
  for (const auto& [name, slot] : st.slots()) {
    json e{{"name", name}, {"t", slot.t}, {"shape", slot.m.shape()}};
    e["offset_m"] = append_tensor(payload, slot.m);
    e["offset_v"] = append_tensor(payload, slot.v);
    slots.push_back(std::move(e));
  }
  out["slots"] = std::move(slots);
  return out;
}

AdamState adam_from_manifest(const json& j, const std::vector<double>& payload) {
  AdamState st(AdamConfig{j.at("lr").get<double>(), j.at("beta1").get<double>(),
                          j.at("beta2").get<double>(), j.at("eps").get<double>()});
  for (const auto& e : j.at("slots")) {
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    AdamState::Slot slot;
    slot.m = tensor_from_payload(shape, e.at("offset_m").get<std::size_t>(), payload);
    slot.v = tensor_from_payload(shape, e.at("offset_v").get<std::size_t>(), payload);
    slot.t = e.at("t").get<std::uint64_t>();
    st.restore_slot(e.at("name").get<std::string>(), std::move(slot));
  }
  return st;
}

} // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::vector<double> payload;
  json params = json::array();
  for (const auto& name : ck.params.names()) {
    const Tensor& t = ck.params.at(name);
    json e{{"name", name}, {"shape", t.shape()}, {"trainable", ck.params.trainable(name)}};
    e["offset"] = append_tensor(payload, t);
    params.push_back(std::move(e));
  }
  json man{{"version", 1},
           {"epoch", ck.epoch},
           {"best_metric", ck.best_metric},
           {"config", config_manifest(ck.config)},
           {"arch", arch_manifest(ck.arch)},
           {"prior_state", prior_manifest(ck.prior)},
           {"params", std::move(params)},
           {"adam_vi", adam_manifest(ck.adam_vi, payload)},
           {"adam_em", adam_manifest(ck.adam_em, payload)}};
  const std::string text = man.dump();

  std::string buf;
  buf.reserve(16 + text.size() + 8 * payload.size());
  buf.append(kMagic, 8);
  append_u64(buf, text.size());
  buf.append(text);
  for (double d : payload) append_f64(buf, d);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  if (!out) throw std::runtime_error("save_checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 16 || buf.compare(0, 8, kMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: '" + path + "' is not a checkpoint file");
  const std::uint64_t mlen = read_u64(buf, 8);
  if (16 + mlen > buf.size())
    throw std::runtime_error("load_checkpoint: manifest truncated in '" + path + "'");
  json man;
  try {
    man = json::parse(buf.begin() + 16, buf.begin() + 16 + static_cast<std::ptrdiff_t>(mlen));
  } catch (const json::parse_error& e) {
    throw std::runtime_error("load_checkpoint: bad manifest in '" + path + "': " + e.what());
  }
  if (man.at("version").get<int>() != 1)
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");

  const std::size_t body = buf.size() - 16 - mlen;
  if (body % 8 != 0)
    throw std::runtime_error("load_checkpoint: payload truncated");
  std::vector<double> payload(body / 8);
  for (std::size_t i = 0; i < payload.size(); ++i)
    payload[i] = std::bit_cast<double>(read_u64(buf, 16 + mlen + 8 * i));

  Checkpoint ck;
  ck.epoch = man.at("epoch").get<std::size_t>();
  ck.best_metric = man.at("best_metric").get<double>();
  ck.config = config_from_manifest(man.at("config"));
  ck.arch = arch_from_manifest(man.at("arch"));
  ck.prior = prior_from_manifest(man.at("prior_state"));
  for (const auto& e : man.at("params")) {
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    ck.params.add(e.at("name").get<std::string>(),
                  tensor_from_payload(shape, e.at("offset").get<std::size_t>(), payload),
                  e.at("trainable").get<bool>());
  }
  ck.adam_vi = adam_from_manifest(man.at("adam_vi"), payload);
  ck.adam_em = adam_from_manifest(man.at("adam_em"), payload);
  return ck;
}

} // namespace vmm::train
