#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "reve/linalg.hpp"
#include "reve/rng.hpp"
#include "reve/tensor.hpp"

namespace reve::nn {

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

Activation activation_from_string(const std::string& name);
std::string activation_to_string(Activation act);

/// One entry of an architecture description.
struct LayerSpec {
  enum class Kind { kDense, kConv, kMaxPool, kDropout, kFlatten };
  Kind kind = Kind::kDense;
  std::size_t units = 0;   // dense width / conv output channels
  std::size_t kernel = 0;  // conv kernel size (square)
  std::size_t pad = 0;     // conv zero padding
  Activation act = Activation::kIdentity;
  double keep_prob = 1.0;  // dropout keep probability
};

/// Parses "dense:64:tanh,dense:32:identity" style architecture strings.
/// Layer forms: dense:<units>:<act>, conv:<channels>:<kernel>:<pad>:<act>,
/// maxpool, dropout:<keep>, flatten.
std::vector<LayerSpec> parse_arch(const std::string& text);
std::string arch_to_string(const std::vector<LayerSpec>& layers);

/// Feed-forward encoder producing the representation h(x). Parameters are
/// registered in a stable order for the optimizer and checkpoints.
class EncoderNetwork {
 public:
  EncoderNetwork(Shape input_shape, std::vector<LayerSpec> layers, Rng& init_rng);

  /// Forward pass over a batch (leading axis N). Dropout draws its masks
  /// from `rng` when `train` is set and is the identity otherwise.
  Tensor forward(const Tensor& x, bool train = false, Rng* rng = nullptr) const;

  std::size_t output_dim() const { return output_dim_; }
  const Shape& input_shape() const { return input_shape_; }  // without batch axis

  std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }

 private:
  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::vector<std::pair<std::string, Tensor>> params_;
  // parameter indices per layer, -1 when the layer has none
  std::vector<int> layer_param_;
  std::size_t output_dim_ = 0;
};

/// Linear decoder with cached kernel-complement factorization of its weight.
class DecoderHead {
 public:
  DecoderHead(std::size_t n_classes, std::size_t dim_y, Rng& init_rng);

  Tensor& weight() { return weight_; }  // [C, dimY]
  const Tensor& weight() const { return weight_; }
  Tensor& bias() { return bias_; }  // [C]
  const Tensor& bias() const { return bias_; }
  std::size_t n_classes() const { return weight_.shape()[0]; }
  std::size_t dim_y() const { return weight_.shape()[1]; }

  /// Recomputes the compact SVD and projection from the current weight.
  void refresh_projection(double rank_tolerance);
  /// Refreshes when the cache is missing or `period` steps old, then
  /// advances the age counter.
  void step_projection(double rank_tolerance, std::size_t period);

  bool has_projection() const { return has_cache_; }
  const linalg::CompactSvd& svd() const;
  const linalg::ProjectionMatrix& projection() const;
  /// Projection as a gradient-free [dimY, dimY] tensor for tape use.
  const Tensor& projection_tensor() const;
  std::size_t svd_age() const { return svd_age_; }

  /// Batch logits h W_d^T + b, tape-connected to the head parameters.
  Tensor logits(const Tensor& h_batch) const;

 private:
  Tensor weight_;
  Tensor bias_;
  linalg::CompactSvd svd_;
  linalg::ProjectionMatrix proj_;
  Tensor proj_tensor_;
  bool has_cache_ = false;
  std::size_t svd_age_ = 0;
};

/// Row-wise softmax probabilities of W_d h + b; no noise, no tape.
Tensor predict(const DecoderHead& head, const Tensor& h_batch);

/// Mean over the batch of -log softmax(logits)[label], via logsumexp.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// argmax-vs-label error rate in percent.
double error_rate_percent(const Tensor& probabilities, std::span<const int> labels);

/// SGD with momentum, weight decay folded into the gradient, and an
/// exponentially decaying learning rate: lr(epoch) = base * decay^epoch.
class SgdMomentum {
 public:
  SgdMomentum(double base_lr, double decay_per_epoch, double momentum, double weight_decay);

  void register_params(const std::vector<std::pair<std::string, Tensor>>& params);
  double learning_rate(std::size_t epoch) const;
  /// v <- m v + (grad + wd p); p <- p - lr(epoch) v; gradients cleared.
  void step(std::size_t epoch);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  const std::vector<std::vector<double>>& velocities() const { return velocity_; }

 private:
  double base_lr_;
  double decay_;
  double momentum_;
  double weight_decay_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::vector<double>> velocity_;
};

}  // namespace reve::nn
