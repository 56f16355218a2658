#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmm/cli.hpp"
#include "vmm/train.hpp"

using namespace vmm;
using json = nlohmann::json;

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json slurp_json(const std::string& path) { return json::parse(slurp(path)); }

const char* kSynthConfig = R"(# two separated blobs
prior = vmm
k = 3
dim_z = 2
batch_size = 16
gamma1 = 1e-3
gamma2 = 1e-3
max_epochs = 2
patience = 10
seed = 5
enc_hidden = 6
dec_hidden = 6
likelihood = gaussian
synth_components = 2
synth_dim = 4
synth_means = -0.5,-0.5,-0.5,-0.5 ; 0.5,0.5,0.5,0.5
synth_scales = 0.1,0.1
synth_points = 24
synth_seed = 2
val_fraction = 0.25
out_dir = cli_run_a
)";

} // namespace

TEST_CASE("run configs parse with full diagnostics") {
  write_file("cli_good.conf", kSynthConfig);
  const cli::RunConfig rc = cli::parse_run_config("cli_good.conf");
  CHECK(rc.train.prior == priors::PriorKind::vmm);
  CHECK(rc.train.K == 3);
  CHECK(rc.train.batch_size == 16);
  CHECK(rc.enc_hidden == std::vector<std::size_t>{6});
  CHECK(rc.source == cli::SourceKind::synth);
  REQUIRE(rc.synth.means.size() == 2);
  CHECK(rc.synth.means[1] == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  CHECK(rc.val_fraction == 0.25);
  CHECK(rc.out_dir == "cli_run_a");
  CHECK(!rc.metric_set);

  SUBCASE("missing separator names the line") {
    write_file("cli_bad.conf", "prior = vmm\nk 3\n");
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("cli_bad.conf:2"), std::runtime_error);
  }
  SUBCASE("unknown keys are rejected") {
    write_file("cli_bad.conf", "priur = vmm\n");
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("unknown key 'priur'"), std::runtime_error);
  }
  SUBCASE("duplicate keys are rejected") {
    write_file("cli_bad.conf", "k = 3\nk = 4\n");
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("already set on line 1"), std::runtime_error);
  }
  SUBCASE("unparseable numbers name the key") {
    write_file("cli_bad.conf", "gamma1 = fast\n");
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("key 'gamma1'"), std::runtime_error);
  }
  SUBCASE("a dataset source is mandatory") {
    write_file("cli_bad.conf", "prior = vmm\n");
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("dataset source"), std::runtime_error);
  }
  SUBCASE("two dataset sources are rejected") {
    std::string text = kSynthConfig;
    text += "csv = somewhere.csv\n";
    write_file("cli_bad.conf", text);
    CHECK_THROWS_WITH_AS(cli::parse_run_config("cli_bad.conf"),
                         doctest::Contains("exactly one dataset source"), std::runtime_error);
  }
  SUBCASE("training invariants apply at parse time") {
    write_file("cli_bad.conf", "patience = 0\nsynth_components = 1\nsynth_dim = 1\n"
                               "synth_means = 0\nsynth_scales = 1\nsynth_points = 4\n");
    CHECK_THROWS_AS(cli::parse_run_config("cli_bad.conf"), std::invalid_argument);
  }
}

TEST_CASE("fit writes its four artifacts deterministically") {
  write_file("cli_fit.conf", kSynthConfig);
  cli::Overrides ov;
  REQUIRE(cli::cmd_fit("cli_fit.conf", ov) == 0);
  CHECK(slurp("cli_run_a/checkpoint.bin").size() > 16);
  const json hist = slurp_json("cli_run_a/history.json");
  REQUIRE(hist.is_array());
  CHECK(hist.size() == 2);
  CHECK(hist[0].contains("train_elbo"));
  const json mets = slurp_json("cli_run_a/metrics.json");
  CHECK(mets.at("n").get<int>() == 12);
  CHECK(mets.at("metric").get<std::string>() == "nmi"); // labels present, auto rule
  CHECK(!mets.at("clustering").is_null());
  CHECK(mets.at("model").contains("iw_log_marginal"));
  const json echo = slurp_json("cli_run_a/run_config.json");
  CHECK(echo.at("source").at("kind").get<std::string>() == "synth");
  CHECK(echo.at("arch").at("input_dim").get<int>() == 4);
  CHECK(echo.at("train").at("metric").get<std::string>() == "nmi");

  ov.has_out = true;
  ov.out_dir = "cli_run_b";
  REQUIRE(cli::cmd_fit("cli_fit.conf", ov) == 0);
  CHECK(slurp("cli_run_b/metrics.json") == slurp("cli_run_a/metrics.json"));
  CHECK(slurp("cli_run_b/history.json") == slurp("cli_run_a/history.json"));
  CHECK(slurp("cli_run_b/checkpoint.bin") == slurp("cli_run_a/checkpoint.bin"));
}

TEST_CASE("eval reproduces the stored best metric on the validation fold") {
  write_file("cli_fit.conf", kSynthConfig);
  cli::Overrides ov;
  REQUIRE(cli::cmd_fit("cli_fit.conf", ov) == 0);
  const train::Checkpoint ck = train::load_checkpoint("cli_run_a/checkpoint.bin");

  ov.has_out = true;
  ov.out_dir = "cli_eval_a";
  REQUIRE(cli::cmd_eval("cli_run_a/checkpoint.bin", "cli_fit.conf", ov) == 0);
  const json mets = slurp_json("cli_eval_a/metrics.json");
  CHECK(std::fabs(mets.at("val_metric").get<double>() - ck.best_metric) <= 1e-12);

  ov.out_dir = "cli_eval_b";
  REQUIRE(cli::cmd_eval("cli_run_a/checkpoint.bin", "cli_fit.conf", ov) == 0);
  CHECK(slurp("cli_eval_a/metrics.json") == slurp("cli_eval_b/metrics.json"));

  SUBCASE("shape mismatches are caught") {
    write_file("cli_narrow.conf",
               "synth_components = 2\nsynth_dim = 3\nsynth_means = 0,0,0 ; 1,1,1\n"
               "synth_scales = 0.1,0.1\nsynth_points = 16\nval_fraction = 0.25\n");
    CHECK_THROWS_WITH_AS(cli::cmd_eval("cli_run_a/checkpoint.bin", "cli_narrow.conf", ov),
                         doctest::Contains("input_dim"), std::runtime_error);
  }
}

TEST_CASE("eval without labels reports null clustering and a full model block") {
  {
    std::ofstream out("cli_plain.csv");
    for (int i = 0; i < 24; ++i)
      out << 0.1 * i - 1.0 << "," << 0.05 * i << "," << -0.3 << "," << 0.2 << "\n";
  }
  write_file("cli_csv.conf",
             "prior = vmm\nk = 2\ndim_z = 2\nbatch_size = 8\ngamma1 = 1e-3\ngamma2 = 1e-3\n"
             "max_epochs = 2\npatience = 5\nseed = 3\nenc_hidden = 6\ndec_hidden = 6\n"
             "likelihood = gaussian\ncsv = cli_plain.csv\nval_fraction = 0.25\n"
             "out_dir = cli_csv_run\n");
  cli::Overrides ov;
  REQUIRE(cli::cmd_fit("cli_csv.conf", ov) == 0);
  const json fit_mets = slurp_json("cli_csv_run/metrics.json");
  CHECK(fit_mets.at("metric").get<std::string>() == "elbo"); // unlabeled auto rule
  CHECK(fit_mets.at("clustering").is_null());
  CHECK(!fit_mets.at("val_metric").is_null());
  CHECK(fit_mets.at("model").contains("marginal_kl"));

  ov.has_out = true;
  ov.out_dir = "cli_csv_eval";
  REQUIRE(cli::cmd_eval("cli_csv_run/checkpoint.bin", "cli_csv.conf", ov) == 0);
  const json mets = slurp_json("cli_csv_eval/metrics.json");
  CHECK(mets.at("clustering").is_null());
  CHECK(mets.at("model").contains("iw_log_marginal"));
}

TEST_CASE("sample writes a parsable grid with a pi sidecar") {
  write_file("cli_fit.conf", kSynthConfig);
  cli::Overrides ov;
  REQUIRE(cli::cmd_fit("cli_fit.conf", ov) == 0);

  SUBCASE("with data the columns carry exemplars and utilization") {
    REQUIRE(cli::cmd_sample("cli_run_a/checkpoint.bin", "cli_grid.pgm", "cli_fit.conf",
                            ov) == 0);
    const json side = slurp_json("cli_grid.pgm.json");
    const std::size_t cols = side.at("columns").size();
    const std::size_t rows = side.at("rows").get<std::size_t>();
    REQUIRE(cols >= 1);
    double mass = 0;
    for (const auto& c : side.at("columns")) mass += c.at("pi").get<double>();
    CHECK(std::fabs(mass - side.at("utilized_mass").get<double>()) < 1e-12);

    const std::string raw = slurp("cli_grid.pgm");
    std::istringstream hs(raw);
    std::string magic;
    std::size_t w = 0, h = 0, maxval = 0;
    hs >> magic >> w >> h >> maxval;
    CHECK(magic == "P5");
    CHECK(maxval == 255);
    CHECK(w == cols * 2); // synth_dim 4 decodes as 2x2 tiles
    CHECK(h == rows * 2);
    const std::size_t header = raw.find("255\n") + 4;
    CHECK(raw.size() - header == w * h);
  }

  SUBCASE("without data every component gets a column") {
    REQUIRE(cli::cmd_sample("cli_run_a/checkpoint.bin", "cli_grid_all.pgm", "", ov) == 0);
    const json side = slurp_json("cli_grid_all.pgm.json");
    CHECK(side.at("columns").size() == 3); // K columns when utilization is unknown
  }

  SUBCASE("non-square shapes are rejected") {
    write_file("cli_csv3.conf",
               "prior = standard-normal\nk = 1\ndim_z = 2\nbatch_size = 8\n"
               "gamma1 = 1e-3\ngamma2 = 1e-3\nmax_epochs = 1\npatience = 5\nseed = 3\n"
               "enc_hidden = 6\ndec_hidden = 6\nlikelihood = gaussian\n"
               "synth_components = 2\nsynth_dim = 3\nsynth_means = 0,0,0 ; 1,1,1\n"
               "synth_scales = 0.1,0.1\nsynth_points = 16\nval_fraction = 0.25\n"
               "out_dir = cli_run3\n");
    REQUIRE(cli::cmd_fit("cli_csv3.conf", ov) == 0);
    CHECK_THROWS_WITH_AS(
        cli::cmd_sample("cli_run3/checkpoint.bin", "cli_grid3.pgm", "", ov),
        doctest::Contains("square"), std::runtime_error);
  }
}
