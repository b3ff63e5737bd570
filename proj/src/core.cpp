#include "reve/core.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace reve {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

QModel q_model_from_string(const std::string& name) {
  if (name == "bimodal") return QModel::kBimodal;
  if (name == "single_gaussian" || name == "sgm") return QModel::kSingleGaussian;
  throw std::invalid_argument("unknown q model '" + name + "'");
}

std::string q_model_to_string(QModel model) {
  return model == QModel::kBimodal ? "bimodal" : "single_gaussian";
}

void ReveConfig::validate() const {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("ReveConfig: sigma2 must be positive");
  if (!(beta >= 0.0)) throw std::invalid_argument("ReveConfig: beta must be non-negative");
  if (mc_samples < 1) throw std::invalid_argument("ReveConfig: S must be at least 1");
  if (!(variance_floor > 0.0)) {
    throw std::invalid_argument("ReveConfig: variance_floor must be positive");
  }
  if (!(rank_tolerance > 0.0)) {
    throw std::invalid_argument("ReveConfig: rank_tolerance must be positive");
  }
  if (svd_refresh_period < 1) {
    throw std::invalid_argument("ReveConfig: svd_refresh_period must be at least 1");
  }
  if (!(gmm_ema >= 0.0 && gmm_ema < 1.0)) {
    throw std::invalid_argument("ReveConfig: gmm_ema must lie in [0, 1)");
  }
}

Tensor ZBatch::flat() const {
  return reshape(samples, Shape{n * s, samples.shape()[2]});
}

std::vector<int> ZBatch::flat_labels() const {
  std::vector<int> out(n * s);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < s; ++j) out[i * s + j] = labels[i];
  return out;
}

// ----------------------------------------------------------------- sampling

Tensor draw_encoding_noise(const Shape& h_shape, double sigma2, std::size_t s_samples,
                           Rng& rng) {
  if (h_shape.size() != 2) {
    throw std::invalid_argument("draw_encoding_noise: h must be [N, dimY]");
  }
  const double sigma = std::sqrt(sigma2);
  const std::size_t n = h_shape[0], d = h_shape[1];
  std::vector<double> eps(n * s_samples * d);
  for (double& e : eps) e = sigma * rng.normal();
  return Tensor(Shape{n, s_samples, d}, std::move(eps));
}

Tensor sample_encoding_with(const Tensor& h_batch, const Tensor& eps) {
  if (h_batch.rank() != 2 || eps.rank() != 3 || eps.shape()[0] != h_batch.shape()[0] ||
      eps.shape()[2] != h_batch.shape()[1]) {
    throw std::invalid_argument("sample_encoding: noise " + shape_str(eps.shape()) +
                                " does not match h " + shape_str(h_batch.shape()));
  }
  const std::size_t n = eps.shape()[0], s = eps.shape()[1], d = eps.shape()[2];
  const Tensor h_expanded = broadcast_to(reshape(h_batch, Shape{n, 1, d}), Shape{n, s, d});
  return add(h_expanded, eps);
}

Tensor sample_encoding(const Tensor& h_batch, double sigma2, std::size_t s_samples, Rng& rng) {
  if (!(sigma2 > 0.0)) throw std::invalid_argument("sample_encoding: sigma2 must be positive");
  return sample_encoding_with(h_batch,
                              draw_encoding_noise(h_batch.shape(), sigma2, s_samples, rng));
}

ZBatch project_to_z(const Tensor& y_samples, const Tensor& projection,
                    std::span<const int> labels) {
  if (y_samples.rank() != 3) {
    throw std::invalid_argument("project_to_z: samples must be [N, S, dimY], got " +
                                shape_str(y_samples.shape()));
  }
  const std::size_t n = y_samples.shape()[0], s = y_samples.shape()[1];
  const std::size_t d = y_samples.shape()[2];
  if (projection.rank() != 2 || projection.shape()[0] != d || projection.shape()[1] != d) {
    throw std::invalid_argument("project_to_z: projection " + shape_str(projection.shape()) +
                                " does not match dim(Y) " + std::to_string(d));
  }
  if (labels.size() != n) throw std::invalid_argument("project_to_z: label count mismatch");
  // rows transform as z = y P because P is symmetric
  const Tensor flat = reshape(y_samples, Shape{n * s, d});
  const Tensor z_flat = matmul(flat, projection);
  ZBatch out;
  out.samples = reshape(z_flat, Shape{n, s, d});
  out.labels.assign(labels.begin(), labels.end());
  out.n = n;
  out.s = s;
  return out;
}

Tensor responsibilities(const Tensor& z) {
  // plain value computation; the E-step replacement stays off the tape
  auto v = z.values();
  std::vector<double> pi(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = v[i];
    pi[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
  return Tensor(z.shape(), std::move(pi));
}

// ------------------------------------------------------------------ M-step

GmmParams m_step(const Tensor& z_samples, const Tensor& pi, double variance_floor,
                 QModel q_model) {
  if (z_samples.shape() != pi.shape()) {
    throw std::invalid_argument("m_step: responsibilities shape " + shape_str(pi.shape()) +
                                " does not match samples " + shape_str(z_samples.shape()));
  }
  if (z_samples.rank() < 2) {
    throw std::invalid_argument("m_step: samples must have a trailing coordinate axis");
  }
  const std::size_t dim = z_samples.shape().back();
  const std::size_t m = z_samples.size() / dim;
  if (m < 2) throw std::invalid_argument("m_step: needs at least 2 samples");

  auto z = z_samples.values();
  auto w = pi.values();

  GmmParams out;
  out.alpha.assign(dim, 0.0);
  out.mu1.assign(dim, 0.0);
  out.var1.assign(dim, 0.0);
  out.mu0.assign(dim, 0.0);
  out.var0.assign(dim, 0.0);

  for (std::size_t j = 0; j < dim; ++j) {
    if (q_model == QModel::kSingleGaussian) {
      // unweighted batch mean / variance per coordinate
      double mean = 0.0;
      for (std::size_t i = 0; i < m; ++i) mean += z[i * dim + j];
      mean /= static_cast<double>(m);
      double var = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double dlt = z[i * dim + j] - mean;
        var += dlt * dlt;
      }
      var = std::max(variance_floor, var / static_cast<double>(m));
      out.alpha[j] = 0.5;  // unused by the single-Gaussian density
      out.mu1[j] = mean;
      out.var1[j] = var;
      out.mu0[j] = mean;
      out.var0[j] = var;
      continue;
    }

    double sw1 = 0.0, sw0 = 0.0, s1 = 0.0, s0 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double zi = z[i * dim + j];
      const double wi = w[i * dim + j];
      sw1 += wi;
      sw0 += 1.0 - wi;
      s1 += wi * zi;
      s0 += (1.0 - wi) * zi;
    }
    const double alpha = sw1 / static_cast<double>(m);
    out.alpha[j] = std::clamp(alpha, kAlphaFloor, 1.0 - kAlphaFloor);

    // a numerically empty mode parks at the overall mean with floored
    // variance; the clamp above keeps its weight defined
    double mean_all = (s1 + s0) / static_cast<double>(m);
    out.mu1[j] = sw1 > 1e-12 ? s1 / sw1 : mean_all;
    out.mu0[j] = sw0 > 1e-12 ? s0 / sw0 : mean_all;

    double v1 = 0.0, v0 = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double zi = z[i * dim + j];
      const double wi = w[i * dim + j];
      const double d1 = zi - out.mu1[j];
      const double d0 = zi - out.mu0[j];
      v1 += wi * d1 * d1;
      v0 += (1.0 - wi) * d0 * d0;
    }
    out.var1[j] = std::max(variance_floor, sw1 > 1e-12 ? v1 / sw1 : 0.0);
    out.var0[j] = std::max(variance_floor, sw0 > 1e-12 ? v0 / sw0 : 0.0);
  }
  return out;
}

GmmParams blend_gmm(const GmmParams& previous, const GmmParams& fresh, double decay,
                    double variance_floor) {
  if (previous.dim() != fresh.dim()) throw std::invalid_argument("blend_gmm: dim mismatch");
  GmmParams out = fresh;
  for (std::size_t j = 0; j < fresh.dim(); ++j) {
    out.alpha[j] = std::clamp(decay * previous.alpha[j] + (1.0 - decay) * fresh.alpha[j],
                              kAlphaFloor, 1.0 - kAlphaFloor);
    out.mu1[j] = decay * previous.mu1[j] + (1.0 - decay) * fresh.mu1[j];
    out.mu0[j] = decay * previous.mu0[j] + (1.0 - decay) * fresh.mu0[j];
    out.var1[j] = std::max(variance_floor, decay * previous.var1[j] + (1.0 - decay) * fresh.var1[j]);
    out.var0[j] = std::max(variance_floor, decay * previous.var0[j] + (1.0 - decay) * fresh.var0[j]);
  }
  return out;
}

// ------------------------------------------------------------------- log q

namespace {

// log of one weighted Gaussian component over a [M, dim] tensor with
// per-coordinate constants; gradients flow through z only
Tensor gaussian_log_density(const Tensor& z, const std::vector<double>& mu,
                            const std::vector<double>& var,
                            const std::vector<double>* log_weight) {
  const std::size_t dim = mu.size();
  std::vector<double> shift(dim), inv2v(dim), base(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    shift[j] = mu[j];
    inv2v[j] = 0.5 / var[j];
    base[j] = -0.5 * (kLog2Pi + std::log(var[j])) + (log_weight ? (*log_weight)[j] : 0.0);
  }
  const Tensor mu_t(Shape{dim}, std::move(shift));
  const Tensor inv_t(Shape{dim}, std::move(inv2v));
  const Tensor base_t(Shape{dim}, std::move(base));
  const Tensor diff = sub(z, mu_t);
  return sub(base_t, mul(square(diff), inv_t));
}

}  // namespace

Tensor log_q(const Tensor& z, const GmmParams& params, QModel q_model) {
  if (z.rank() != 2 || z.shape()[1] != params.dim()) {
    throw std::invalid_argument("log_q: z " + shape_str(z.shape()) +
                                " does not match model dim " + std::to_string(params.dim()));
  }
  for (std::size_t j = 0; j < params.dim(); ++j) {
    if (!std::isfinite(params.mu1[j]) || !std::isfinite(params.mu0[j]) ||
        !(params.var1[j] > 0.0) || !(params.var0[j] > 0.0)) {
      throw std::invalid_argument("log_q: non-finite or degenerate mixture parameters");
    }
  }
  const std::size_t m = z.shape()[0];
  const std::size_t dim = params.dim();

  if (q_model == QModel::kSingleGaussian) {
    const Tensor per_coord = gaussian_log_density(z, params.mu1, params.var1, nullptr);
    return sum(per_coord, 1, false);
  }

  std::vector<double> log_a1(dim), log_a0(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    log_a1[j] = std::log(params.alpha[j]);
    log_a0[j] = std::log(1.0 - params.alpha[j]);
  }
  const Tensor comp1 = gaussian_log_density(z, params.mu1, params.var1, &log_a1);
  const Tensor comp0 = gaussian_log_density(z, params.mu0, params.var0, &log_a0);
  // stack the two component log-densities and reduce with logsumexp
  const Tensor stacked = concat(
      std::array{reshape(comp1, Shape{m, dim, 1}), reshape(comp0, Shape{m, dim, 1})}, 2);
  const Tensor mixture = logsumexp(stacked, 2, false);  // [M, dim]
  return sum(mixture, 1, false);
}

Tensor log_r(const Tensor& z, std::span<const int> labels, const nn::DecoderHead& head) {
  if (z.rank() != 2 || z.shape()[1] != head.dim_y()) {
    throw std::invalid_argument("log_r: z " + shape_str(z.shape()) + " does not match dim(Y) " +
                                std::to_string(head.dim_y()));
  }
  const std::size_t m = z.shape()[0];
  const std::size_t c = head.n_classes();
  if (labels.size() != m) throw std::invalid_argument("log_r: label count mismatch");
  std::vector<double> onehot(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw std::invalid_argument("log_r: class " + std::to_string(label) + " out of range [0," +
                                  std::to_string(c) + ")");
    }
    onehot[i * c + static_cast<std::size_t>(label)] = 1.0;
  }
  const Tensor logits = head.logits(z);
  const Tensor picked = sum(mul(logits, Tensor(Shape{m, c}, std::move(onehot))), 1, false);
  return sub(picked, logsumexp(logits, 1, false));
}

// -------------------------------------------------------------- Omega_REVE

ReveTerms reve_loss_from_h(const Tensor& h, std::span<const int> labels,
                           const nn::DecoderHead& head, const ReveConfig& config,
                           const Tensor& eps, const std::optional<GmmParams>& frozen_gmm,
                           const GmmParams* previous_gmm) {
  config.validate();
  const Tensor y = sample_encoding_with(h, eps);
  ReveTerms terms;
  terms.z = project_to_z(y, head.projection_tensor(), labels);

  const Tensor z_flat = terms.z.flat();
  if (frozen_gmm) {
    terms.gmm = *frozen_gmm;
  } else {
    // E-step replacement and M-step run on detached values
    const Tensor z_values = z_flat.detached();
    const Tensor pi = responsibilities(z_values);
    terms.gmm = m_step(z_values, pi, config.variance_floor, config.q_model);
    if (previous_gmm && config.gmm_ema > 0.0) {
      terms.gmm = blend_gmm(*previous_gmm, terms.gmm, config.gmm_ema, config.variance_floor);
    }
  }

  const std::vector<int> sample_labels = terms.z.flat_labels();
  const Tensor lq = log_q(z_flat, terms.gmm, config.q_model);
  const Tensor lr = log_r(z_flat, sample_labels, head);
  terms.mean_log_q = mean(lq.detached()).value();
  terms.mean_log_r = mean(lr.detached()).value();
  terms.omega = neg(mean(add(lr, lq)));
  return terms;
}

ReveTerms reve_loss(const data::Batch& batch, const nn::EncoderNetwork& net,
                    const nn::DecoderHead& head, const ReveConfig& config, Rng& rng,
                    const GmmParams* previous_gmm) {
  const Tensor h = net.forward(batch.inputs, false, nullptr);
  const Tensor eps = draw_encoding_noise(h.shape(), config.sigma2, config.mc_samples, rng);
  return reve_loss_from_h(h, batch.labels, head, config, eps, std::nullopt, previous_gmm);
}

// ---------------------------------------------------------- total objective

namespace {

TotalTerms assemble_total(const Tensor& h, const data::Batch& batch,
                          const nn::DecoderHead& head, const ReveConfig& config,
                          const Tensor* eps, const std::optional<GmmParams>* frozen_gmm,
                          Rng* rng, const GmmParams* previous_gmm) {
  TotalTerms out;
  const Tensor ce = nn::cross_entropy(head.logits(h), batch.labels);
  out.cross_entropy = ce.value();
  if (config.beta == 0.0) {
    out.total = ce;
    return out;
  }
  ReveTerms terms;
  if (eps) {
    terms = reve_loss_from_h(h, batch.labels, head, config, *eps,
                             frozen_gmm ? *frozen_gmm : std::nullopt, previous_gmm);
  } else {
    const Tensor drawn = draw_encoding_noise(h.shape(), config.sigma2, config.mc_samples, *rng);
    terms = reve_loss_from_h(h, batch.labels, head, config, drawn, std::nullopt, previous_gmm);
  }
  out.omega = terms.omega.value();
  out.mean_log_q = terms.mean_log_q;
  out.mean_log_r = terms.mean_log_r;
  out.gmm = std::move(terms.gmm);
  out.total = add(ce, scale(terms.omega, config.beta));
  return out;
}

}  // namespace

TotalTerms total_objective(const data::Batch& batch, const nn::EncoderNetwork& net,
                           const nn::DecoderHead& head, const ReveConfig& config, Rng& rng,
                           const GmmParams* previous_gmm, bool train) {
  config.validate();
  // dropout masks (if any) draw from the same stream, before the noise
  const Tensor h = net.forward(batch.inputs, train, &rng);
  return assemble_total(h, batch, head, config, nullptr, nullptr, &rng, previous_gmm);
}

TotalTerms total_objective_with(const data::Batch& batch, const nn::EncoderNetwork& net,
                                const nn::DecoderHead& head, const ReveConfig& config,
                                const Tensor& eps, const std::optional<GmmParams>& frozen_gmm) {
  config.validate();
  const Tensor h = net.forward(batch.inputs, false, nullptr);
  return assemble_total(h, batch, head, config, &eps, &frozen_gmm, nullptr, nullptr);
}

}  // namespace reve
