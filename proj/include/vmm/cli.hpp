#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmm/data.hpp"
#include "vmm/nets.hpp"
#include "vmm/train.hpp"

namespace vmm::cli {

enum class SourceKind { none, idx, csv, synth };

/// A resolved run description: everything in TrainConfig, the architecture,
/// exactly one dataset source, and the output knobs.
struct RunConfig {
  train::TrainConfig train;
  std::vector<std::size_t> enc_hidden = {64, 64};
  std::vector<std::size_t> dec_hidden = {64, 64};
  nets::HeadKind head = nets::HeadKind::gaussian_global_variance;
  bool tanh_pseudo_inputs = false; // defaults to true for idx sources
  bool tanh_set = false;
  bool metric_set = false;

  SourceKind source = SourceKind::none;
  std::string idx_images;
  std::string idx_labels;
  std::string csv_path;
  bool csv_labels = false;
  data::SynthSpec synth;

  double val_fraction = 1.0 / 6.0;
  std::uint64_t split_seed = 0; // defaults to train.seed
  bool split_seed_set = false;
  std::string eval_fold = "val"; // val | train | all
  std::string out_dir = ".";
  std::size_t iw_samples = 64;
};

/// Flat key=value text, one pair per line, '#' comments. Errors carry the
/// file, line, and key that caused them.
RunConfig parse_run_config(const std::string& path);

struct LoadedData {
  data::Dataset dataset; // with split indices
  train::SplitData split;
};
LoadedData load_run_data(const RunConfig& rc);

struct Overrides {
  bool has_seed = false;
  std::uint64_t seed = 0;
  bool has_out = false;
  std::string out_dir;
};

/// Runs the training loop and writes checkpoint.bin, history.json,
/// metrics.json, and run_config.json into the output directory. The history
/// file is written even when training aborts partway.
int cmd_fit(const std::string& config_path, const Overrides& ov);

/// Recomputes the metric report for a checkpoint on the dataset named by a
/// config file (its `eval_fold` key picks the fold; training keys are
/// ignored) and writes metrics.json.
int cmd_eval(const std::string& ckpt_path, const std::string& data_config_path,
             const Overrides& ov);

/// Writes the prior-predictive grid as a binary PGM plus a JSON sidecar of
/// per-column mixture weights. With a data config, utilization restricts the
/// columns and each one gains its best-matching datum as a bottom row.
int cmd_sample(const std::string& ckpt_path, const std::string& out_pgm,
               const std::string& data_config_path, const Overrides& ov);

} // namespace vmm::cli
