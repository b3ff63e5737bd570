#include <CLI11.hpp>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "reve/runner.hpp"
#include "reve/verify.hpp"

namespace {

using reve::runner::RunConfig;

std::vector<std::size_t> parse_coords(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw std::invalid_argument("--coords: no coordinates given");
  return out;
}

// config next to the checkpoint unless one is given explicitly
RunConfig resolve_config(const std::string& explicit_config, const std::string& checkpoint) {
  if (!explicit_config.empty()) return RunConfig::load(explicit_config);
  const std::filesystem::path sibling =
      std::filesystem::path(checkpoint).parent_path() / reve::runner::kConfigFileName;
  if (!std::filesystem::exists(sibling)) {
    throw std::runtime_error("no --config given and '" + sibling.string() + "' not found");
  }
  return RunConfig::load(sibling.string());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"REVE regularized training"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  std::string train_config_path;
  std::optional<std::uint64_t> seed_flag;
  std::optional<double> beta_flag, sigma2_flag;
  std::optional<std::uint64_t> s_flag;
  std::optional<std::string> out_flag;
  train_cmd->add_option("--config", train_config_path, "run configuration file")->required();
  train_cmd->add_option("--seed", seed_flag, "override the config seed");
  train_cmd->add_option("--beta", beta_flag, "override beta");
  train_cmd->add_option("--sigma2", sigma2_flag, "override the encoding noise variance");
  train_cmd->add_option("--s-samples", s_flag, "override the Monte Carlo sample count");
  train_cmd->add_option("--out", out_flag, "override the output directory");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "test error of a checkpoint");
  std::string eval_checkpoint, eval_data, eval_config;
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "dataset spec (defaults to the config's)");
  eval_cmd->add_option("--config", eval_config, "config file (defaults to the checkpoint's)");

  // export-density
  auto* dens_cmd = app.add_subcommand("export-density", "kernel density estimates of Y and Z");
  std::string dens_checkpoint, dens_coords = "0,1,2,3,4", dens_config, dens_data;
  std::string dens_out = "density.txt", bandwidth_rule = "silverman";
  dens_cmd->add_option("--checkpoint", dens_checkpoint, "checkpoint file")->required();
  dens_cmd->add_option("--coords", dens_coords, "comma-separated coordinate indices");
  dens_cmd->add_option("--config", dens_config, "config file (defaults to the checkpoint's)");
  dens_cmd->add_option("--data", dens_data, "dataset spec (defaults to the config's)");
  dens_cmd->add_option("--out", dens_out, "output file");
  dens_cmd->add_option("--bandwidth", bandwidth_rule, "bandwidth rule (silverman)");

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run the information-theory property suites");
  std::size_t trials = 1000;
  verify_cmd->add_option("--trials", trials, "trials per randomized suite");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig config = RunConfig::load(train_config_path);
      if (seed_flag) config.seed = *seed_flag;
      if (beta_flag) config.reve.beta = *beta_flag;
      if (sigma2_flag) config.reve.sigma2 = *sigma2_flag;
      if (s_flag) config.reve.mc_samples = *s_flag;
      if (out_flag) config.out_dir = *out_flag;
      const auto result = reve::runner::train(config, &std::cout);
      std::cout << "final train error " << result.final_train_error << "%, test error "
                << result.final_test_error << "%\n";
      std::cout << "checkpoint: " << result.checkpoint_path.string() << '\n';
      std::cout << "metrics: " << result.metrics_path.string() << '\n';
      return 0;
    }
    if (*eval_cmd) {
      RunConfig config = resolve_config(eval_config, eval_checkpoint);
      if (!eval_data.empty()) config.dataset = eval_data;
      auto [train_set, test_set] = reve::runner::load_dataset(config);
      const double error =
          reve::runner::evaluate_checkpoint(config, eval_checkpoint, test_set);
      std::cout << "test error " << error << "%\n";
      return 0;
    }
    if (*dens_cmd) {
      RunConfig config = resolve_config(dens_config, dens_checkpoint);
      if (!dens_data.empty()) config.dataset = dens_data;
      auto [train_set, test_set] = reve::runner::load_dataset(config);
      reve::runner::export_density(config, dens_checkpoint, test_set,
                                   parse_coords(dens_coords), bandwidth_rule, dens_out);
      std::cout << "wrote " << dens_out << '\n';
      return 0;
    }
    if (*verify_cmd) {
      const int failures = reve::runner::verify(trials, std::cout);
      return failures == 0 ? 0 : 1;
    }
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
