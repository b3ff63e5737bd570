#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "reve/core.hpp"
#include "reve/data.hpp"
#include "reve/nn.hpp"

namespace reve::runner {

struct OptimSpec {
  double lr_base = 0.05;
  double lr_decay = 0.97;  // per epoch
  double momentum = 0.9;
  double weight_decay = 1e-3;
};

/// Full run description. A run is reproducible from this struct and the
/// code version alone; the canonical serialization is a key = value text
/// document (see configs/blobs.cfg for an annotated example).
struct RunConfig {
  std::string dataset = "blobs:classes=2,informative=2,nuisance=30,noise=1.0,train=2000,test=2000";
  std::string arch = "dense:64:tanh,dense:32:identity";
  std::size_t dim_y = 32;
  std::size_t n_classes = 2;
  OptimSpec optim;
  ReveConfig reve;
  std::size_t batch_size = 128;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string out_dir = "runs/out";
  std::size_t aug_pad = 0;     // image datasets only
  double aug_hflip = 0.0;

  void validate() const;
  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig load(const std::string& path);
};

struct MetricsRow {
  std::size_t epoch = 0;
  std::size_t step = 0;  // cumulative optimizer steps
  double cross_entropy = 0.0;
  double omega = 0.0;
  double total_loss = 0.0;
  double train_error = 0.0;  // percent
  double test_error = 0.0;   // percent
  double neg_mean_log_q = 0.0;
  double neg_mean_log_r = 0.0;
  double wall_seconds = 0.0;  // stdout only; the metrics file stays
                              // byte-reproducible across runs
};

/// Fixed-header CSV serialization (excludes wall_seconds).
extern const char* const kMetricsHeader;
std::string metrics_csv_row(const MetricsRow& row);

struct Model {
  nn::EncoderNetwork net;
  nn::DecoderHead head;
};

Model build_model(const RunConfig& config, Rng& init_rng);
Model load_model(const RunConfig& config, const std::string& checkpoint_path);
void save_model(const Model& model, const std::string& checkpoint_path);

/// Builds the (train, test) pair named by the dataset spec string:
///   blobs:classes=..,informative=..,nuisance=..,noise=..,train=..,test=..
///   idx:images=..,labels=..,test_images=..,test_labels=..,limit=..
/// Normalization statistics always come from the train split.
std::pair<data::LabeledDataset, data::LabeledDataset> load_dataset(const RunConfig& config);

struct TrainResult {
  std::vector<MetricsRow> rows;
  double final_test_error = 0.0;
  double final_train_error = 0.0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path metrics_path;
  std::filesystem::path config_path;
};

/// Full training run: per step refresh the projection cache, draw S
/// encodings, project to Z, fit q on the mini-batch, take an SGD step on
/// cross-entropy + beta * Omega; per epoch log train/test error.
TrainResult train(const RunConfig& config, std::ostream* log = nullptr);

double evaluate(const Model& model, const data::LabeledDataset& dataset);
double evaluate_checkpoint(const RunConfig& config, const std::string& checkpoint_path,
                           const data::LabeledDataset& dataset);

/// Writes Fig.-1 style kernel density estimates for the requested
/// coordinates of Y (deterministic h) and Z (= P h) as columnar text:
/// grid, then density_y<i>, density_z<i> pairs.
void export_density(const RunConfig& config, const std::string& checkpoint_path,
                    const data::LabeledDataset& dataset, const std::vector<std::size_t>& coords,
                    const std::string& bandwidth_rule, const std::string& out_path);

/// Resolved config written next to checkpoints so `evaluate` can rebuild
/// the architecture from the checkpoint directory alone.
inline constexpr const char* kConfigFileName = "config.cfg";
inline constexpr const char* kCheckpointFileName = "checkpoint.bin";
inline constexpr const char* kMetricsFileName = "metrics.csv";

}  // namespace reve::runner
