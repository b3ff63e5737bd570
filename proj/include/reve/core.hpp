#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reve/data.hpp"
#include "reve/nn.hpp"
#include "reve/rng.hpp"
#include "reve/tensor.hpp"

namespace reve {

enum class QModel { kBimodal, kSingleGaussian };

QModel q_model_from_string(const std::string& name);
std::string q_model_to_string(QModel model);

/// Method hyperparameters. sigma2 is the fixed encoding noise variance (it
/// is a parameter of the method, never learned); beta weights the
/// regularizer against cross-entropy.
struct ReveConfig {
  double sigma2 = 1e-2;
  double beta = 1e-4;
  std::size_t mc_samples = 12;  // S
  double variance_floor = 1e-4;
  double rank_tolerance = 1e-7;
  std::size_t svd_refresh_period = 1;  // steps between SVD recomputations
  QModel q_model = QModel::kBimodal;
  double gmm_ema = 0.0;  // 0 disables cross-batch smoothing of the q fit

  void validate() const;
};

/// Per-coordinate bimodal mixture parameters for q(z). Variances are kept
/// at or above the variance floor and alpha inside [kAlphaFloor,
/// 1 - kAlphaFloor], so log q stays finite even for collapsed batches.
struct GmmParams {
  std::vector<double> alpha;
  std::vector<double> mu1, var1;
  std::vector<double> mu0, var0;

  std::size_t dim() const { return alpha.size(); }
};

inline constexpr double kAlphaFloor = 1e-3;

/// Encoding samples projected onto the kernel complement of the decoder.
struct ZBatch {
  Tensor samples;  // [N, S, dimY], every row in range(P)
  std::vector<int> labels;
  std::size_t n = 0, s = 0;

  /// Samples flattened to [N*S, dimY] (tape-connected view).
  Tensor flat() const;
  /// Labels repeated per sample, length N*S.
  std::vector<int> flat_labels() const;
};

/// y_{n,s} = h_n + eps_{n,s} with eps ~ N(0, sigma2 I); the noise enters
/// the tape as a constant so gradients reach h by reparameterization.
Tensor sample_encoding(const Tensor& h_batch, double sigma2, std::size_t s_samples, Rng& rng);
/// Same with caller-supplied noise (frozen fixtures, oracles).
Tensor sample_encoding_with(const Tensor& h_batch, const Tensor& eps);
/// Draws the noise tensor [N, S, dimY] by itself.
Tensor draw_encoding_noise(const Shape& h_shape, double sigma2, std::size_t s_samples, Rng& rng);

/// z = P y for every sample; P enters the tape as a gradient-free constant.
ZBatch project_to_z(const Tensor& y_samples, const Tensor& projection,
                    std::span<const int> labels);

/// Mode-1 responsibilities via the logistic function, computed outside the
/// tape (the E-step replacement is not differentiated).
Tensor responsibilities(const Tensor& z);

/// Weighted-moment M-step over all samples; outputs are gradient-free
/// constants for the subsequent log_q. For kSingleGaussian the fit is the
/// unweighted batch mean/variance (stored in both modes).
GmmParams m_step(const Tensor& z_samples, const Tensor& pi, double variance_floor,
                 QModel q_model = QModel::kBimodal);

/// EMA blend of two fits (decay toward `previous`); floors re-applied.
GmmParams blend_gmm(const GmmParams& previous, const GmmParams& fresh, double decay,
                    double variance_floor);

/// log q(z) per sample under the mean-field mixture, one scalar per row of
/// z [M, dim]. Each mixture term is a stable two-component log-sum-exp.
Tensor log_q(const Tensor& z, const GmmParams& params, QModel q_model);

/// log r(c|z) = log softmax(W_d z + b)_c per sample.
Tensor log_r(const Tensor& z, std::span<const int> labels, const nn::DecoderHead& head);

struct ReveTerms {
  Tensor omega;            // scalar Omega_REVE, tape-connected
  double mean_log_q = 0.0;
  double mean_log_r = 0.0;
  GmmParams gmm;
  ZBatch z;
};

/// Omega_REVE = -(1/(N S)) sum_{n,s} [ log r(c_n | z_{n,s}) + log q(z_{n,s}) ].
ReveTerms reve_loss(const data::Batch& batch, const nn::EncoderNetwork& net,
                    const nn::DecoderHead& head, const ReveConfig& config, Rng& rng,
                    const GmmParams* previous_gmm = nullptr);
/// Assembly from a precomputed representation and frozen pieces; used by
/// the training path and by gradient-check fixtures alike.
ReveTerms reve_loss_from_h(const Tensor& h, std::span<const int> labels,
                           const nn::DecoderHead& head, const ReveConfig& config,
                           const Tensor& eps, const std::optional<GmmParams>& frozen_gmm,
                           const GmmParams* previous_gmm = nullptr);

struct TotalTerms {
  Tensor total;  // scalar, tape-connected
  double cross_entropy = 0.0;
  double omega = 0.0;
  double mean_log_q = 0.0;
  double mean_log_r = 0.0;
  GmmParams gmm;
};

/// cross_entropy(deterministic h) + beta * Omega_REVE. Weight decay lives
/// in the optimizer, not here. With beta == 0 the REVE machinery is
/// skipped entirely (no rng draws), so traces match a plain-CE run.
TotalTerms total_objective(const data::Batch& batch, const nn::EncoderNetwork& net,
                           const nn::DecoderHead& head, const ReveConfig& config, Rng& rng,
                           const GmmParams* previous_gmm = nullptr, bool train = true);
/// Frozen-noise / frozen-GMM variant for finite-difference oracles.
TotalTerms total_objective_with(const data::Batch& batch, const nn::EncoderNetwork& net,
                                const nn::DecoderHead& head, const ReveConfig& config,
                                const Tensor& eps, const std::optional<GmmParams>& frozen_gmm);

}  // namespace reve
