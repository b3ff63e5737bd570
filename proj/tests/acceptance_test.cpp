// Acceptance suite: one test case per criterion, each printing a
// machine-readable PASS/FAIL line with its measured quantities.
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "reve/core.hpp"
#include "reve/kde.hpp"
#include "reve/oracle.hpp"
#include "reve/runner.hpp"
#include "reve/verify.hpp"

using namespace reve;
using namespace reve::runner;

namespace {

namespace fs = std::filesystem;

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

void report(int index, const char* name, bool pass, const std::string& detail, double seconds) {
  std::printf("[acceptance] %02d %-28s %s (%s; %.2fs)\n", index, name,
              pass ? "PASS" : "FAIL", detail.c_str(), seconds);
  std::fflush(stdout);
}

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// ---- criterion 8/9 shared protocol -------------------------------------

RunConfig desk_config(const std::string& out_dir, std::uint64_t seed, double beta,
                      QModel q_model) {
  RunConfig cfg;
  cfg.dataset = "blobs:classes=2,informative=2,nuisance=30,noise=1.0,train=2000,test=2000";
  cfg.arch = "dense:256:tanh,dense:32:tanh";
  cfg.dim_y = 32;
  cfg.n_classes = 2;
  cfg.batch_size = 128;
  cfg.epochs = 30;
  cfg.seed = seed;
  cfg.out_dir = out_dir;
  cfg.optim.lr_base = 0.05;
  cfg.optim.lr_decay = 0.97;
  cfg.optim.momentum = 0.9;
  cfg.optim.weight_decay = 1e-3;
  cfg.reve.beta = beta;
  cfg.reve.sigma2 = 1e-2;
  cfg.reve.mc_samples = 12;
  cfg.reve.q_model = q_model;
  return cfg;
}

// final-epoch Z batch of a trained run over the test split
Tensor final_z(const RunConfig& cfg, const std::string& checkpoint,
               const data::LabeledDataset& test_set) {
  Model model = load_model(cfg, checkpoint);
  model.head.refresh_projection(cfg.reve.rank_tolerance);
  const Tensor h = model.net.forward(test_set.all().inputs, false, nullptr);
  return matmul(h, model.head.projection_tensor());
}

// mean over classes of the summed per-coordinate plug-in entropies
// (fixed absolute bin width so runs are comparable)
std::vector<double> per_class_binned_entropy(const Tensor& z, const std::vector<int>& labels,
                                             std::size_t n_classes, double width) {
  const std::size_t n = z.shape()[0], d = z.shape()[1];
  std::vector<double> out;
  for (std::size_t cls = 0; cls < n_classes; ++cls) {
    std::vector<double> rows;
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] != static_cast<int>(cls)) continue;
      for (std::size_t j = 0; j < d; ++j) rows.push_back(z.values()[i * d + j]);
      ++count;
    }
    out.push_back(oracle::binned_entropy_rows(rows, count, d, width));
  }
  return out;
}

}  // namespace

TEST_CASE("criterion 1: variational bound suite") {
  Timer timer;
  const SuiteReport report_data = verify_variational_bound(1000, 424241);
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 5.0;
  report(1, "variational-bound", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 5.0);
}

TEST_CASE("criterion 2: entropy decomposition") {
  Timer timer;
  const SuiteReport report_data = verify_entropy_decomposition(500, 424242);
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 5.0;
  report(2, "entropy-decomposition", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 5.0);
}

TEST_CASE("criterion 3: markov-chain bound") {
  Timer timer;
  const SuiteReport report_data = verify_markov_bound(500, 424243);
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 10.0;
  report(3, "markov-chain-bound", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 10.0);
}

TEST_CASE("criterion 4: projection suite") {
  Timer timer;
  const SuiteReport report_data = verify_projection_suite(100, 424244);
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 5.0;
  report(4, "projection-suite", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 5.0);
}

TEST_CASE("criterion 5: gradient check") {
  Timer timer;
  const SuiteReport report_data = verify_gradient_check();
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 10.0;
  report(5, "gradient-check", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 10.0);
}

TEST_CASE("criterion 6: m-step recovery") {
  Timer timer;
  const SuiteReport report_data = verify_mstep_recovery(424246);
  const double seconds = timer.seconds();
  const bool pass = report_data.pass && seconds < 1.0;
  report(6, "m-step-recovery", pass, report_data.detail, seconds);
  CHECK(report_data.pass);
  CHECK(seconds < 1.0);
}

TEST_CASE("criterion 7: monte carlo behavior across S") {
  Timer timer;
  Rng rng(909);
  nn::DecoderHead head(2, 8, rng);
  head.refresh_projection(1e-7);
  std::vector<double> hv(16 * 8);
  for (double& v : hv) v = rng.normal();
  const Tensor h(Shape{16, 8}, std::move(hv));
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < 16; ++i) labels[i] = static_cast<int>(i % 2);

  ReveConfig cfg;
  cfg.sigma2 = 0.25;

  const std::size_t s_grid[4] = {1, 4, 16, 64};
  double means[4], stds[4];
  for (int si = 0; si < 4; ++si) {
    cfg.mc_samples = s_grid[si];
    std::vector<double> omegas(200);
    for (double& omega : omegas) {
      const Tensor eps = draw_encoding_noise(h.shape(), cfg.sigma2, cfg.mc_samples, rng);
      omega = reve_loss_from_h(h, labels, head, cfg, eps, std::nullopt).omega.value();
    }
    double mean = std::accumulate(omegas.begin(), omegas.end(), 0.0) / 200.0;
    double var = 0.0;
    for (double omega : omegas) var += (omega - mean) * (omega - mean);
    means[si] = mean;
    stds[si] = std::sqrt(var / 199.0);
  }

  const bool decreasing = stds[0] > stds[1] && stds[1] > stds[2] && stds[2] > stds[3];
  const double se = std::sqrt(stds[0] * stds[0] / 200.0 + stds[3] * stds[3] / 200.0);
  const bool unbiased = std::fabs(means[3] - means[0]) <= 3.0 * se;
  const double seconds = timer.seconds();
  std::ostringstream detail;
  detail << "std " << stds[0] << " > " << stds[1] << " > " << stds[2] << " > " << stds[3]
         << "; |mean64-mean1| = " << std::fabs(means[3] - means[0]) << " vs 3se = " << 3.0 * se;
  const bool pass = decreasing && unbiased && seconds < 30.0;
  report(7, "monte-carlo-behavior", pass, detail.str(), seconds);
  CHECK(decreasing);
  CHECK(unbiased);
  CHECK(seconds < 30.0);
}

TEST_CASE("criterion 8: desk-scale directional experiment") {
  Timer timer;
  const std::uint64_t seeds[5] = {1, 2, 3, 4, 5};
  const double beta = 1e-4;  // default-scale regularization weight
  const double bin_width = 0.2;

  double base_error_sum = 0.0, reve_error_sum = 0.0;
  double base_entropy[2] = {0.0, 0.0};
  double reve_entropy[2] = {0.0, 0.0};

  for (std::uint64_t seed : seeds) {
    TempDir dir_base("reve_acc8_base_" + std::to_string(seed));
    TempDir dir_reve("reve_acc8_reve_" + std::to_string(seed));
    const RunConfig cfg_base = desk_config(dir_base.path.string(), seed, 0.0,
                                           QModel::kBimodal);
    const RunConfig cfg_reve = desk_config(dir_reve.path.string(), seed, beta,
                                           QModel::kBimodal);
    const TrainResult rb = train(cfg_base);
    const TrainResult rr = train(cfg_reve);
    base_error_sum += rb.final_test_error;
    reve_error_sum += rr.final_test_error;

    auto [train_set, test_set] = load_dataset(cfg_base);
    const Tensor z_base = final_z(cfg_base, rb.checkpoint_path.string(), test_set);
    const Tensor z_reve = final_z(cfg_reve, rr.checkpoint_path.string(), test_set);
    const auto h_base =
        per_class_binned_entropy(z_base, test_set.labels, 2, bin_width);
    const auto h_reve =
        per_class_binned_entropy(z_reve, test_set.labels, 2, bin_width);
    for (int cls = 0; cls < 2; ++cls) {
      base_entropy[cls] += h_base[static_cast<std::size_t>(cls)];
      reve_entropy[cls] += h_reve[static_cast<std::size_t>(cls)];
    }
  }

  const double base_mean = base_error_sum / 5.0;
  const double reve_mean = reve_error_sum / 5.0;
  const bool error_ok = reve_mean <= base_mean;
  const bool entropy_ok = reve_entropy[0] < base_entropy[0] && reve_entropy[1] < base_entropy[1];
  const double seconds = timer.seconds();
  std::ostringstream detail;
  detail << "test error reve " << reve_mean << "% vs base " << base_mean
         << "%; class-0 H(Z) " << reve_entropy[0] / 5.0 << " vs " << base_entropy[0] / 5.0
         << "; class-1 H(Z) " << reve_entropy[1] / 5.0 << " vs " << base_entropy[1] / 5.0;
  const bool pass = error_ok && entropy_ok && seconds < 300.0;
  report(8, "desk-scale-experiment", pass, detail.str(), seconds);
  CHECK(error_ok);
  CHECK(entropy_ok);
  CHECK(seconds < 300.0);
}

TEST_CASE("criterion 9: single-gaussian ablation direction") {
  Timer timer;
  TempDir dir("reve_acc9_sgm");
  const RunConfig cfg = desk_config(dir.path.string(), 1, 1e-4, QModel::kSingleGaussian);
  const TrainResult result = train(cfg);  // must run to completion

  auto [train_set, test_set] = load_dataset(cfg);
  const Tensor z = final_z(cfg, result.checkpoint_path.string(), test_set);

  // fit both q models on the same frozen Z batch
  const Tensor pi = responsibilities(z);
  const GmmParams fit_bimodal = m_step(z, pi, cfg.reve.variance_floor, QModel::kBimodal);
  const GmmParams fit_single = m_step(z, pi, cfg.reve.variance_floor, QModel::kSingleGaussian);
  const double nll_bimodal = -mean(log_q(z, fit_bimodal, QModel::kBimodal)).value();
  const double nll_single = -mean(log_q(z, fit_single, QModel::kSingleGaussian)).value();

  const bool pass_direction = nll_single >= nll_bimodal - 1e-6;
  const double seconds = timer.seconds();
  std::ostringstream detail;
  detail << "-mean log q: single " << nll_single << " vs bimodal " << nll_bimodal
         << " (final test error " << result.final_test_error << "%)";
  report(9, "sgm-ablation-direction", pass_direction, detail.str(), seconds);
  CHECK(pass_direction);
}

TEST_CASE("criterion 10: determinism and round-trip") {
  Timer timer;
  TempDir dir_a("reve_acc10_a");
  TempDir dir_b("reve_acc10_b");
  RunConfig cfg = desk_config(dir_a.path.string(), 3, 1e-4, QModel::kBimodal);
  cfg.epochs = 3;  // short run; determinism does not depend on length
  RunConfig cfg_b = cfg;
  cfg_b.out_dir = dir_b.path.string();

  const TrainResult ra = train(cfg);
  const TrainResult rb = train(cfg_b);
  const bool metrics_identical = read_file(ra.metrics_path) == read_file(rb.metrics_path);
  const bool checkpoints_identical =
      read_file(ra.checkpoint_path) == read_file(rb.checkpoint_path);

  auto [train_set, test_set] = load_dataset(cfg);
  const Model in_memory = load_model(cfg, ra.checkpoint_path.string());
  const double direct = evaluate(in_memory, test_set);
  const double via_checkpoint = evaluate_checkpoint(cfg, ra.checkpoint_path.string(), test_set);
  const bool round_trip = direct == via_checkpoint && direct == ra.final_test_error;

  const std::string density_path = (dir_a.path / "density.txt").string();
  export_density(cfg, ra.checkpoint_path.string(), test_set, {0, 1, 2, 3, 4}, "silverman",
                 density_path);
  std::ifstream is(density_path);
  std::string header;
  std::getline(is, header);
  std::vector<double> grid;
  std::vector<std::vector<double>> cols(10);
  double g, v;
  while (is >> g) {
    grid.push_back(g);
    for (auto& col : cols) {
      is >> v;
      col.push_back(v);
    }
  }
  bool densities_normalized = grid.size() == 512;
  double worst_integral = 1.0;
  for (const auto& col : cols) {
    const double integral = kde::trapezoid(grid, col);
    if (std::fabs(integral - 1.0) > std::fabs(worst_integral - 1.0)) worst_integral = integral;
    densities_normalized = densities_normalized && std::fabs(integral - 1.0) <= 1e-3;
  }

  const double seconds = timer.seconds();
  std::ostringstream detail;
  detail << "metrics byte-identical " << metrics_identical << ", checkpoints "
         << checkpoints_identical << ", round-trip error " << via_checkpoint
         << "% == " << ra.final_test_error << "%, worst density integral " << worst_integral;
  const bool pass = metrics_identical && checkpoints_identical && round_trip &&
                    densities_normalized;
  report(10, "determinism-and-roundtrip", pass, detail.str(), seconds);
  CHECK(metrics_identical);
  CHECK(checkpoints_identical);
  CHECK(round_trip);
  CHECK(densities_normalized);
}
