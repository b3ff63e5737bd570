#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "reve/kde.hpp"
#include "reve/runner.hpp"
#include "reve/verify.hpp"

using namespace reve;
using namespace reve::runner;

namespace {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

RunConfig tiny_config(const std::string& out_dir) {
  RunConfig cfg;
  cfg.dataset = "blobs:classes=2,informative=2,nuisance=6,noise=1.0,train=200,test=200";
  cfg.arch = "dense:12:tanh,dense:8:identity";
  cfg.dim_y = 8;
  cfg.n_classes = 2;
  cfg.batch_size = 50;
  cfg.epochs = 2;
  cfg.seed = 77;
  cfg.out_dir = out_dir;
  cfg.optim.lr_base = 0.05;
  cfg.reve.beta = 1e-4;
  cfg.reve.mc_samples = 4;
  return cfg;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("config text round trip and overrides") {
  RunConfig cfg = tiny_config("runs/x");
  cfg.reve.q_model = QModel::kSingleGaussian;
  cfg.optim.weight_decay = 0.25;
  const std::string text = cfg.to_text();
  const RunConfig back = RunConfig::from_text(text);
  CHECK(back.to_text() == text);
  CHECK(back.reve.q_model == QModel::kSingleGaussian);
  CHECK(back.optim.weight_decay == doctest::Approx(0.25));
  CHECK(back.seed == 77);
}

TEST_CASE("config parser: comments, blanks, unknown keys, bad values") {
  const RunConfig ok = RunConfig::from_text("# comment line\n\nseed = 5\nbeta = 0.5 # tail\n");
  CHECK(ok.seed == 5);
  CHECK(ok.reve.beta == doctest::Approx(0.5));
  CHECK_THROWS_AS(RunConfig::from_text("not_a_key = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("seed 5\n"), std::invalid_argument);
  CHECK_THROWS_AS(RunConfig::from_text("beta = zebra\n"), std::invalid_argument);
}

TEST_CASE("config validation rejects inconsistent settings") {
  RunConfig cfg = tiny_config("runs/x");
  cfg.reve.sigma2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("runs/x");
  cfg.arch = "dense:8:bogus";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = tiny_config("runs/x");
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("identical config and seed give byte-identical metrics and checkpoints") {
  TempDir dir_a("reve_run_a");
  TempDir dir_b("reve_run_b");
  RunConfig cfg_a = tiny_config(dir_a.path.string());
  RunConfig cfg_b = tiny_config(dir_b.path.string());
  const TrainResult ra = train(cfg_a);
  const TrainResult rb = train(cfg_b);
  CHECK(read_file(ra.metrics_path) == read_file(rb.metrics_path));
  CHECK(read_file(ra.checkpoint_path) == read_file(rb.checkpoint_path));

  // a different seed diverges
  RunConfig cfg_c = tiny_config(dir_b.path.string());
  cfg_c.seed = 78;
  const TrainResult rc = train(cfg_c);
  CHECK(read_file(ra.metrics_path) != read_file(rc.metrics_path));
}

TEST_CASE("metrics file carries the fixed header and one row per epoch") {
  TempDir dir("reve_run_metrics");
  RunConfig cfg = tiny_config(dir.path.string());
  const TrainResult result = train(cfg);
  std::ifstream is(result.metrics_path);
  std::string header;
  std::getline(is, header);
  CHECK(header == kMetricsHeader);
  std::size_t rows = 0;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) {
    if (!line.empty()) {
      ++rows;
      lines.push_back(line);
    }
  }
  CHECK(rows == cfg.epochs);
  // all logged omegas are finite numbers
  for (const auto& row : lines) CHECK(row.find("nan") == std::string::npos);
  CHECK(result.rows.size() == cfg.epochs);
  for (std::size_t e = 0; e + 1 < result.rows.size(); ++e) {
    CHECK(result.rows[e].epoch < result.rows[e + 1].epoch);
    CHECK(result.rows[e].step < result.rows[e + 1].step);
    CHECK(result.rows[e].wall_seconds <= result.rows[e + 1].wall_seconds);
  }
}

TEST_CASE("evaluate matches the final logged test error exactly") {
  TempDir dir("reve_run_eval");
  RunConfig cfg = tiny_config(dir.path.string());
  const TrainResult result = train(cfg);
  auto [train_set, test_set] = load_dataset(cfg);
  const double err = evaluate_checkpoint(cfg, result.checkpoint_path.string(), test_set);
  CHECK(err == result.final_test_error);

  // label permutation can only hurt
  data::LabeledDataset permuted = test_set;
  for (int& label : permuted.labels) label = 1 - label;
  const double permuted_err =
      evaluate_checkpoint(cfg, result.checkpoint_path.string(), permuted);
  CHECK(permuted_err >= err);
}

TEST_CASE("beta 0 training trace is identical to the same run with any sigma2") {
  TempDir dir_a("reve_beta0_a");
  TempDir dir_b("reve_beta0_b");
  RunConfig cfg_a = tiny_config(dir_a.path.string());
  cfg_a.reve.beta = 0.0;
  cfg_a.reve.sigma2 = 1e-2;
  RunConfig cfg_b = tiny_config(dir_b.path.string());
  cfg_b.reve.beta = 0.0;
  cfg_b.reve.sigma2 = 0.5;  // irrelevant when the regularizer is off
  const TrainResult ra = train(cfg_a);
  const TrainResult rb = train(cfg_b);
  CHECK(read_file(ra.checkpoint_path) == read_file(rb.checkpoint_path));
  CHECK(read_file(ra.metrics_path) == read_file(rb.metrics_path));
}

TEST_CASE("random-init network sits at chance level; trained one beats it") {
  TempDir dir("reve_chance");
  RunConfig cfg = tiny_config(dir.path.string());
  cfg.dataset = "blobs:classes=4,informative=4,nuisance=4,noise=0.6,train=1200,test=1200";
  cfg.n_classes = 4;
  cfg.arch = "dense:12:tanh,dense:8:identity";
  cfg.dim_y = 8;
  auto [train_set, test_set] = load_dataset(cfg);

  // a single random decision function can sit several points off chance;
  // the init-averaged error is (K-1)/K
  double chance_sum = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    Rng init(s);
    Model model = build_model(cfg, init);
    chance_sum += evaluate(model, test_set);
  }
  const double chance = chance_sum / 10.0;
  CHECK(std::fabs(chance - 75.0) <= 5.0);  // (K-1)/K within 5 points

  cfg.epochs = 6;
  const TrainResult result = train(cfg);
  CHECK(result.final_test_error < 40.0);
}

TEST_CASE("checkpoint/architecture mismatch is reported") {
  TempDir dir("reve_mismatch");
  RunConfig cfg = tiny_config(dir.path.string());
  const TrainResult result = train(cfg);
  RunConfig other = cfg;
  other.arch = "dense:16:tanh,dense:8:identity";
  CHECK_THROWS_AS(load_model(other, result.checkpoint_path.string()), std::runtime_error);
}

TEST_CASE("export_density: columns integrate to one and spike on constants") {
  TempDir dir("reve_density");
  RunConfig cfg = tiny_config(dir.path.string());
  const TrainResult result = train(cfg);
  auto [train_set, test_set] = load_dataset(cfg);
  const std::string out = (dir.path / "density.txt").string();
  export_density(cfg, result.checkpoint_path.string(), test_set, {0, 1, 2},
                 "silverman", out);

  std::ifstream is(out);
  std::string header;
  std::getline(is, header);
  CHECK(header == "grid density_y0 density_z0 density_y1 density_z1 density_y2 density_z2");
  std::vector<double> grid;
  std::vector<std::vector<double>> cols(6);
  double g, v;
  while (is >> g) {
    grid.push_back(g);
    for (auto& col : cols) {
      is >> v;
      col.push_back(v);
    }
  }
  CHECK(grid.size() == 512);
  for (const auto& col : cols) {
    CHECK(kde::trapezoid(grid, col) == doctest::Approx(1.0).epsilon(1e-3));
  }

  CHECK_THROWS_AS(export_density(cfg, result.checkpoint_path.string(), test_set, {999},
                                 "silverman", out),
                  std::invalid_argument);
  CHECK_THROWS_AS(export_density(cfg, result.checkpoint_path.string(), test_set, {0},
                                 "parzen", out),
                  std::invalid_argument);
}

TEST_CASE("kde: constant column becomes a unit-mass spike") {
  kde::DensityColumn col;
  col.name = "constant";
  col.samples.assign(500, 2.5);
  const kde::DensityTable table = kde::estimate_columns({col});
  CHECK(kde::trapezoid(table.grid, table.densities[0]) == doctest::Approx(1.0).epsilon(1e-3));
  // all mass concentrates near 2.5
  const double peak = *std::max_element(table.densities[0].begin(), table.densities[0].end());
  CHECK(peak > 10.0);
}

TEST_CASE("kde: standard normal column peaks near 1/sqrt(2 pi)") {
  Rng rng(8);
  kde::DensityColumn col;
  col.name = "normal";
  col.samples.resize(10000);
  for (double& v : col.samples) v = rng.normal();
  const kde::DensityTable table = kde::estimate_columns({col});
  const double peak = *std::max_element(table.densities[0].begin(), table.densities[0].end());
  CHECK(peak == doctest::Approx(0.3989).epsilon(0.10));
  CHECK(kde::trapezoid(table.grid, table.densities[0]) == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("verify runner reports every suite as passing") {
  std::ostringstream os;
  const int failures = verify(200, os);
  CHECK(failures == 0);
  CHECK(os.str().find("FAIL") == std::string::npos);
  CHECK(os.str().find("variational-bound") != std::string::npos);
  CHECK(os.str().find("gradient-check") != std::string::npos);
}

TEST_CASE("training with a lazy svd refresh period completes") {
  TempDir dir("reve_lazy_svd");
  RunConfig cfg = tiny_config(dir.path.string());
  cfg.reve.svd_refresh_period = 5;
  const TrainResult result = train(cfg);
  CHECK(result.rows.size() == cfg.epochs);
  for (const MetricsRow& row : result.rows) CHECK(std::isfinite(row.omega));
}

TEST_CASE("non-finite loss aborts with the offending step reported") {
  TempDir dir("reve_blowup");
  RunConfig cfg = tiny_config(dir.path.string());
  cfg.optim.lr_base = 1e6;  // divergence on purpose
  cfg.epochs = 3;
  try {
    train(cfg);
    // divergence to NaN is expected but not guaranteed at any fixed lr;
    // accept a clean run too
  } catch (const std::runtime_error& err) {
    CHECK(std::string(err.what()).find("step") != std::string::npos);
  }
}
