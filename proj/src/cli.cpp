#include "vmm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vmm/metrics.hpp"
#include "vmm/priors.hpp"

namespace vmm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      parts.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  parts.push_back(trim(cur));
  return parts;
}

/// Per-line parse context so every failure names its file, line, and key.
struct KeyContext {
  const std::string& path;
  std::size_t line_no;
  const std::string& key;

  [[noreturn]] void fail(const std::string& what) const {
    throw std::runtime_error(path + ":" + std::to_string(line_no) + ": key '" + key +
                             "': " + what);
  }

  double number(const std::string& v) const {
    try {
      std::size_t used = 0;
      const double out = std::stod(v, &used);
      if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail("cannot parse '" + v + "' as a number");
  }

  std::uint64_t unsigned_int(const std::string& v) const {
    try {
      std::size_t used = 0;
      const std::uint64_t out = std::stoull(v, &used);
      if (used == v.size() && v[0] != '-') return out;
    } catch (const std::exception&) {
    }
    fail("cannot parse '" + v + "' as a nonnegative integer");
  }

  bool flag(const std::string& v) const {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    fail("expected true or false, got '" + v + "'");
  }

  std::vector<std::size_t> size_list(const std::string& v) const {
    if (trim(v).empty()) return {};
    std::vector<std::size_t> out;
    for (const std::string& part : split_on(v, ','))
      out.push_back(static_cast<std::size_t>(unsigned_int(part)));
    return out;
  }

  std::vector<double> double_list(const std::string& v) const {
    std::vector<double> out;
    for (const std::string& part : split_on(v, ',')) out.push_back(number(part));
    return out;
  }
};

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

json history_json(const train::History& history) {
  json arr = json::array();
  for (const auto& rec : history)
    arr.push_back(json{{"epoch", rec.epoch},
                       {"train_elbo", rec.train_elbo},
                       {"val_metric", rec.val_metric},
                       {"utilized", rec.utilized}});
  return arr;
}

json train_config_json(const train::TrainConfig& c) {
  return json{{"prior", priors::to_string(c.prior)},
              {"k", c.K},
              {"dim_z", c.dim_z},
              {"batch_size", c.batch_size},
              {"gamma1", c.gamma1},
              {"gamma2", c.gamma2},
              {"max_epochs", c.max_epochs},
              {"patience", c.patience},
              {"metric", train::to_string(c.metric)},
              {"seed", c.seed},
              {"n_kl_samples", c.n_kl_samples},
              {"gating", c.gating},
              {"collapsed_vmm", c.collapsed_vmm}};
}

json source_json(const RunConfig& rc) {
  switch (rc.source) {
    case SourceKind::idx:
      return json{{"kind", "idx"}, {"images", rc.idx_images}, {"labels", rc.idx_labels}};
    case SourceKind::csv:
      return json{{"kind", "csv"}, {"path", rc.csv_path}, {"labels", rc.csv_labels}};
    case SourceKind::synth: {
      json means = json::array();
      for (const auto& m : rc.synth.means) means.push_back(m);
      return json{{"kind", "synth"},        {"components", rc.synth.components},
                  {"dim", rc.synth.dim},    {"means", means},
                  {"scales", rc.synth.scales}, {"points_per_component", rc.synth.points_per_component},
                  {"seed", rc.synth.seed}};
    }
    case SourceKind::none: break;
  }
  throw std::logic_error("unresolved dataset source");
}

/// Posterior-mean responsibilities on X; standard-normal models collapse to
/// the single-cluster column.
Tensor responsibilities(const train::Model& model, const Tensor& X) {
  const auto [m, s] = nets::encode_batch(X, model.ps, model.enc, "enc");
  if (model.prior.kind == priors::PriorKind::standard_normal)
    return Tensor::full({X.rows(), 1}, 1.0);
  const priors::ComponentMoments mom =
      priors::component_moments(model.prior, model.ps, model.enc);
  return model.prior.has_mixture_params()
             ? priors::e_step(m, model.prior, model.ps, mom)
             : priors::vamp_responsibilities(m, mom);
}

Tensor mixture_weights(const train::Model& model) {
  if (model.prior.has_mixture_params()) return priors::pi(model.ps, model.prior);
  return Tensor::full({model.prior.K}, 1.0 / static_cast<double>(model.prior.K));
}

json metrics_json(const train::Model& model, const train::TrainConfig& cfg, const Tensor& X,
                  const std::vector<int>& y, std::size_t iw_samples) {
  const Tensor r = responsibilities(model, X);
  const Tensor pis = mixture_weights(model);
  const priors::Utilization util = priors::utilization(r, pis);
  double mass = 0;
  {
    std::vector<bool> used(model.prior.K, false);
    for (std::size_t a : util.assignments) used[a] = true;
    for (std::size_t j = 0; j < model.prior.K; ++j)
      if (used[j]) mass += pis[j];
  }

  json clustering = nullptr;
  if (!y.empty()) {
    const metrics::ClusteringReport cs = metrics::clustering_scores(util.assignments, y, r);
    clustering = json{{"nmi", cs.nmi},
                      {"ari", cs.ari},
                      {"accuracy", cs.accuracy},
                      {"utilized", cs.utilized},
                      {"n", cs.n},
                      {"degenerate_nmi", cs.degenerate_nmi}};
  }

  json val_metric = nullptr;
  if (cfg.metric != train::TrainConfig::Metric::nmi || !y.empty())
    val_metric = train::validation_metric(model, X, y, cfg).value;

  Rng base(cfg.seed);
  Rng rng_rd = base.fork(0xD15);
  Rng rng_mi = base.fork(0xA11);
  Rng rng_iw = base.fork(0x1F);
  const metrics::RateDistortion rd = metrics::elbo_decomposition(
      X, model.ps, model.enc, model.dec, model.head, model.prior, cfg.n_kl_samples, rng_rd);
  const metrics::MarginalReport mr =
      metrics::mi_and_marginal_kl(X, model.ps, model.enc, model.prior, rng_mi);
  const double iw = metrics::iw_log_marginal_mean(X, model.ps, model.enc, model.dec,
                                                  model.head, model.prior, iw_samples, rng_iw);

  return json{{"prior", priors::to_string(model.prior.kind)},
              {"metric", train::to_string(cfg.metric)},
              {"n", X.rows()},
              {"utilized_clusters", util.count},
              {"utilized_mass", mass},
              {"val_metric", val_metric},
              {"clustering", clustering},
              {"model", json{{"neg_distortion", rd.neg_distortion},
                             {"rate", rd.rate},
                             {"elbo", rd.neg_distortion - rd.rate},
                             {"mi", mr.mi},
                             {"marginal_kl", mr.marginal_kl},
                             {"marginal_kl_mc", mr.marginal_kl_mc},
                             {"iw_log_marginal", iw},
                             {"iw_samples", iw_samples}}}};
}

std::string resolved_out_dir(const RunConfig& rc, const Overrides& ov) {
  return ov.has_out ? ov.out_dir : rc.out_dir;
}

unsigned char to_pixel(double v) {
  const double c = std::clamp(v, -1.0, 1.0);
  return static_cast<unsigned char>(std::llround((c + 1.0) * 127.5));
}

} // namespace

RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  RunConfig rc;
  std::map<std::string, std::size_t> seen;
  bool has_idx = false, has_csv = false, has_synth = false;
  std::string line;
  std::size_t line_no = 0;

  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": empty key");
    const auto [it, fresh] = seen.emplace(key, line_no);
    if (!fresh)
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": key '" + key +
                               "' already set on line " + std::to_string(it->second));
    const KeyContext kc{path, line_no, key};

    if (key == "prior") {
      try {
        rc.train.prior = priors::prior_kind_from_string(val);
      } catch (const std::invalid_argument& e) {
        kc.fail(e.what());
      }
    } else if (key == "k") {
      rc.train.K = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "dim_z") {
      rc.train.dim_z = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "batch_size") {
      rc.train.batch_size = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "gamma1") {
      rc.train.gamma1 = kc.number(val);
    } else if (key == "gamma2") {
      rc.train.gamma2 = kc.number(val);
    } else if (key == "max_epochs") {
      rc.train.max_epochs = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "patience") {
      rc.train.patience = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "metric") {
      try {
        rc.train.metric = train::metric_from_string(val);
      } catch (const std::invalid_argument& e) {
        kc.fail(e.what());
      }
      rc.metric_set = true;
    } else if (key == "seed") {
      rc.train.seed = kc.unsigned_int(val);
    } else if (key == "n_kl_samples") {
      rc.train.n_kl_samples = static_cast<std::size_t>(kc.unsigned_int(val));
    } else if (key == "gating") {
      rc.train.gating = kc.flag(val);
    } else if (key == "collapsed_vmm") {
      rc.train.collapsed_vmm = kc.flag(val);
    } else if (key == "enc_hidden") {
      rc.enc_hidden = kc.size_list(val);
    } else if (key == "dec_hidden") {
      rc.dec_hidden = kc.size_list(val);
    } else if (key == "likelihood") {
      try {
        rc.head = nets::head_kind_from_string(val);
      } catch (const std::invalid_argument& e) {
        kc.fail(e.what());
      }
    } else if (key == "tanh_pseudo_inputs") {
      rc.tanh_pseudo_inputs = kc.flag(val);
      rc.tanh_set = true;
    } else if (key == "idx_images") {
      rc.idx_images = val;
      has_idx = true;
    } else if (key == "idx_labels") {
      rc.idx_labels = val;
    } else if (key == "csv") {
      rc.csv_path = val;
      has_csv = true;
    } else if (key == "csv_labels") {
      rc.csv_labels = kc.flag(val);
    } else if (key == "synth_components") {
      rc.synth.components = static_cast<std::size_t>(kc.unsigned_int(val));
      has_synth = true;
    } else if (key == "synth_dim") {
      rc.synth.dim = static_cast<std::size_t>(kc.unsigned_int(val));
      has_synth = true;
    } else if (key == "synth_means") {
      for (const std::string& comp : split_on(val, ';'))
        rc.synth.means.push_back(kc.double_list(comp));
      has_synth = true;
    } else if (key == "synth_scales") {
      rc.synth.scales = kc.double_list(val);
      has_synth = true;
    } else if (key == "synth_points") {
      rc.synth.points_per_component = static_cast<std::size_t>(kc.unsigned_int(val));
      has_synth = true;
    } else if (key == "synth_seed") {
      rc.synth.seed = kc.unsigned_int(val);
      has_synth = true;
    } else if (key == "val_fraction") {
      rc.val_fraction = kc.number(val);
    } else if (key == "split_seed") {
      rc.split_seed = kc.unsigned_int(val);
      rc.split_seed_set = true;
    } else if (key == "eval_fold") {
      if (val != "val" && val != "train" && val != "all")
        kc.fail("expected val, train, or all");
      rc.eval_fold = val;
    } else if (key == "out_dir") {
      rc.out_dir = val;
    } else if (key == "iw_samples") {
      rc.iw_samples = static_cast<std::size_t>(kc.unsigned_int(val));
      if (rc.iw_samples == 0) kc.fail("must be positive");
    } else {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key '" +
                               key + "'");
    }
  }

  const int sources = int(has_idx) + int(has_csv) + int(has_synth);
  if (sources == 0)
    throw std::runtime_error("config '" + path +
                             "': no dataset source (idx_images, csv, or synth_* keys)");
  if (sources > 1)
    throw std::runtime_error("config '" + path + "': exactly one dataset source, found " +
                             std::to_string(sources));
  rc.source = has_idx ? SourceKind::idx : has_csv ? SourceKind::csv : SourceKind::synth;
  if (rc.source == SourceKind::synth) rc.synth.validate();
  rc.train.validate();
  return rc;
}

LoadedData load_run_data(const RunConfig& rc) {
  LoadedData ld;
  switch (rc.source) {
    case SourceKind::idx:
      ld.dataset = data::load_idx(rc.idx_images, rc.idx_labels);
      break;
    case SourceKind::csv:
      ld.dataset = data::load_csv(rc.csv_path, rc.csv_labels);
      break;
    case SourceKind::synth:
      ld.dataset = data::synth_mixture(rc.synth);
      break;
    case SourceKind::none:
      throw std::logic_error("unresolved dataset source");
  }
  const std::uint64_t seed = rc.split_seed_set ? rc.split_seed : rc.train.seed;
  ld.dataset = data::split(std::move(ld.dataset), rc.val_fraction, seed);
  ld.split.train_x = data::gather_rows(ld.dataset.x, ld.dataset.train_idx);
  ld.split.val_x = data::gather_rows(ld.dataset.x, ld.dataset.val_idx);
  ld.split.train_y = data::gather_labels(ld.dataset.labels, ld.dataset.train_idx);
  ld.split.val_y = data::gather_labels(ld.dataset.labels, ld.dataset.val_idx);
  return ld;
}

int cmd_fit(const std::string& config_path, const Overrides& ov) {
  RunConfig rc = parse_run_config(config_path);
  if (ov.has_seed) rc.train.seed = ov.seed;
  const std::string out_dir = resolved_out_dir(rc, ov);
  fs::create_directories(out_dir);

  const LoadedData ld = load_run_data(rc);
  train::ModelArch arch;
  arch.input_dim = ld.dataset.x.cols();
  arch.enc_hidden = rc.enc_hidden;
  arch.dec_hidden = rc.dec_hidden;
  arch.head = rc.head;
  arch.tanh_pseudo_inputs = rc.tanh_set ? rc.tanh_pseudo_inputs
                                        : rc.source == SourceKind::idx;
  if (!rc.metric_set)
    rc.train.metric = ld.dataset.labeled() ? train::TrainConfig::Metric::nmi
                                           : train::TrainConfig::Metric::elbo;

  json echo{{"train", train_config_json(rc.train)},
            {"arch", json{{"input_dim", arch.input_dim},
                          {"enc_hidden", arch.enc_hidden},
                          {"dec_hidden", arch.dec_hidden},
                          {"head", nets::to_string(arch.head)},
                          {"tanh_pseudo_inputs", arch.tanh_pseudo_inputs}}},
            {"source", source_json(rc)},
            {"val_fraction", rc.val_fraction},
            {"split_seed", rc.split_seed_set ? rc.split_seed : rc.train.seed},
            {"eval_fold", rc.eval_fold},
            {"out_dir", out_dir},
            {"iw_samples", rc.iw_samples}};
  write_json_file(out_dir + "/run_config.json", echo);

  train::History live;
  train::TrainResult result;
  try {
    result = train::train_loop(ld.split, rc.train, arch, &live);
  } catch (...) {
    write_json_file(out_dir + "/history.json", history_json(live));
    throw;
  }
  write_json_file(out_dir + "/history.json", history_json(result.history));
  train::save_checkpoint(result.best, out_dir + "/checkpoint.bin");

  const train::Model model = train::model_from_checkpoint(result.best);
  write_json_file(out_dir + "/metrics.json",
                  metrics_json(model, result.best.config, ld.split.val_x, ld.split.val_y,
                               rc.iw_samples));
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_config_path,
             const Overrides& ov) {
  const train::Checkpoint ck = train::load_checkpoint(ckpt_path);
  const train::Model model = train::model_from_checkpoint(ck);
  const RunConfig rc = parse_run_config(data_config_path);
  const LoadedData ld = load_run_data(rc);

  Tensor X;
  std::vector<int> y;
  if (rc.eval_fold == "train") {
    X = ld.split.train_x;
    y = ld.split.train_y;
  } else if (rc.eval_fold == "all") {
    X = ld.dataset.x;
    y = ld.dataset.labels;
  } else {
    X = ld.split.val_x;
    y = ld.split.val_y;
  }
  if (X.cols() != ck.arch.input_dim)
    throw std::runtime_error("data width " + std::to_string(X.cols()) +
                             " does not match the checkpoint's input_dim " +
                             std::to_string(ck.arch.input_dim));

  const std::string out_dir = resolved_out_dir(rc, ov);
  fs::create_directories(out_dir);
  write_json_file(out_dir + "/metrics.json",
                  metrics_json(model, ck.config, X, y, rc.iw_samples));
  return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& out_pgm,
               const std::string& data_config_path, const Overrides& ov) {
  const train::Checkpoint ck = train::load_checkpoint(ckpt_path);
  const train::Model model = train::model_from_checkpoint(ck);
  const std::size_t D = ck.arch.input_dim;
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(D))));
  if (side * side != D)
    throw std::runtime_error("input_dim " + std::to_string(D) +
                             " is not a square image shape");

  Tensor X, r;
  const Tensor* xp = nullptr;
  const Tensor* rp = nullptr;
  if (!data_config_path.empty()) {
    const RunConfig rc = parse_run_config(data_config_path);
    const LoadedData ld = load_run_data(rc);
    if (ld.dataset.x.cols() != D)
      throw std::runtime_error("data width " + std::to_string(ld.dataset.x.cols()) +
                               " does not match the checkpoint's input_dim " +
                               std::to_string(D));
    X = ld.dataset.x;
    r = responsibilities(model, X);
    xp = &X;
    rp = &r;
  }

  const priors::ComponentMoments mom =
      priors::component_moments(model.prior, model.ps, model.enc);
  Rng rng = Rng(ov.has_seed ? ov.seed : ck.config.seed).fork(0x5A3E);
  const priors::SampleGrid grid = priors::prior_predictive_sample(
      model.prior, mom, model.ps, model.dec, model.head, rng, xp, rp);

  const std::size_t cols = grid.columns.size();
  const std::size_t rows = std::max<std::size_t>(grid.max_rows, 1);
  std::vector<unsigned char> pixels(cols * side * rows * side, 0);
  auto blit = [&](const Tensor& img, std::size_t col, std::size_t row) {
    for (std::size_t a = 0; a < side; ++a)
      for (std::size_t b = 0; b < side; ++b)
        pixels[(row * side + a) * (cols * side) + col * side + b] =
            to_pixel(img[a * side + b]);
  };
  json sidecar_cols = json::array();
  double mass = 0;
  for (std::size_t c = 0; c < cols; ++c) {
    const priors::SampleColumn& col = grid.columns[c];
    for (std::size_t t = 0; t < col.samples.size(); ++t) blit(col.samples[t], c, t);
    if (col.exemplar.numel()) blit(col.exemplar, c, rows - 1);
    sidecar_cols.push_back(json{{"component", col.component}, {"pi", col.pi}});
    mass += col.pi;
  }
  data::save_pgm(out_pgm, cols * side, rows * side, pixels);
  write_json_file(out_pgm + ".json", json{{"columns", sidecar_cols},
                                          {"utilized_mass", mass},
                                          {"image_side", side},
                                          {"rows", rows}});
  return 0;
}

} // namespace vmm::cli
