#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reve/rng.hpp"
#include "reve/tensor.hpp"

namespace reve::data {

struct Batch {
  Tensor inputs;  // [N, ...]
  std::vector<int> labels;
};

struct LabeledDataset {
  Tensor inputs;  // [N, D] or [N, C, H, W]
  std::vector<int> labels;
  std::string split;  // "train" or "test"
  std::size_t n_classes = 0;
  // normalization statistics from the training split, one per channel
  // (per coordinate for flat data)
  std::vector<double> channel_mean;
  std::vector<double> channel_std;

  std::size_t size() const { return labels.size(); }
  Batch batch(std::span<const std::size_t> indices) const;
  Batch all() const;
};

/// Gaussian class blobs: centers on a regular simplex in the informative
/// subspace, nuisance coordinates pure class-independent noise. Labels are
/// assigned round-robin so classes are balanced within one sample.
LabeledDataset synth_nuisance_blobs(std::size_t n_classes, std::size_t n_informative_dims,
                                    std::size_t n_nuisance_dims, double noise,
                                    std::size_t n_samples, std::uint64_t seed);

/// Train/test pair drawn from the same blob distribution on independent
/// streams of `seed`, normalized with the training statistics.
struct BlobsSpec {
  std::size_t n_classes = 2;
  std::size_t informative = 2;
  std::size_t nuisance = 30;
  double noise = 1.0;
  std::size_t n_train = 2000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 0;
};
std::pair<LabeledDataset, LabeledDataset> make_blobs(const BlobsSpec& spec);

/// IDX-format loader (big-endian magic 0x803 for images, 0x801 for labels).
/// Pixels are scaled to [0,1]; output shape is [N, 1, H, W].
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit);

/// Computes per-channel mean/std on the train split and applies them to
/// both splits. Test data never contributes statistics.
void normalize_with_train_stats(LabeledDataset& train, LabeledDataset& test);
void normalize_with_train_stats(LabeledDataset& train);

/// Zero-pad by `pad` on each spatial side, uniform-random crop to
/// `crop` x `crop`, horizontal flip with probability `hflip_prob`.
Batch augment(const Batch& batch, std::size_t pad, std::size_t crop, double hflip_prob,
              Rng& rng);

}  // namespace reve::data
