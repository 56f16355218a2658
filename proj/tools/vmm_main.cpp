#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "vmm/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"VampPrior mixture model: fit, evaluate, and sample latent-prior VAEs"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, data_config, out_pgm;
  std::string out_dir;
  std::uint64_t seed = 0;

  CLI::App* fit = app.add_subcommand("fit", "train a model from a key=value config file");
  fit->add_option("config", config_path, "run configuration file")->required();
  CLI::Option* fit_out = fit->add_option("--out", out_dir, "output directory override");
  CLI::Option* fit_seed = fit->add_option("--seed", seed, "seed override");

  CLI::App* ev = app.add_subcommand("eval", "recompute metrics for a checkpoint");
  ev->add_option("ckpt", ckpt_path, "checkpoint file")->required();
  ev->add_option("data", data_config, "config file naming the dataset")->required();
  CLI::Option* ev_out = ev->add_option("--out", out_dir, "output directory override");

  CLI::App* sm = app.add_subcommand("sample", "write a prior-predictive sample grid");
  sm->add_option("ckpt", ckpt_path, "checkpoint file")->required();
  sm->add_option("out", out_pgm, "output PGM path")->required();
  sm->add_option("--data", data_config,
                 "config file naming the dataset (adds utilization and exemplars)");
  CLI::Option* sm_seed = sm->add_option("--seed", seed, "sampling seed override");

  CLI11_PARSE(app, argc, argv);

  vmm::cli::Overrides ov;
  ov.has_out = fit_out->count() > 0 || ev_out->count() > 0;
  ov.out_dir = out_dir;
  ov.has_seed = fit_seed->count() > 0 || sm_seed->count() > 0;
  ov.seed = seed;

  try {
    if (fit->parsed()) return vmm::cli::cmd_fit(config_path, ov);
    if (ev->parsed()) return vmm::cli::cmd_eval(ckpt_path, data_config, ov);
    return vmm::cli::cmd_sample(ckpt_path, out_pgm, data_config, ov);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
