#pragma once

#include <functional>
#include <span>
#include <vector>

#include "reve/rng.hpp"

namespace reve::oracle {

/// Probability vector over a finite support; entries >= 0, sum within 1e-12
/// of one.
struct DiscreteDistribution {
  std::vector<double> p;

  explicit DiscreteDistribution(std::vector<double> probs);
  static DiscreteDistribution uniform(std::size_t n);
  /// Strictly positive random distribution (normalized exponential draws).
  static DiscreteDistribution random(std::size_t n, Rng& rng);
  std::size_t support() const { return p.size(); }
};

/// Finite joint p(z, c), rows indexed by z, columns by c.
struct DiscreteJoint {
  std::size_t n_z = 0, n_c = 0;
  std::vector<double> p;  // row-major [n_z][n_c]

  DiscreteJoint(std::size_t nz, std::size_t nc, std::vector<double> probs);
  static DiscreteJoint random(std::size_t nz, std::size_t nc, Rng& rng);
  double at(std::size_t z, std::size_t c) const { return p[z * n_c + c]; }
  DiscreteDistribution marginal_z() const;
  DiscreteDistribution marginal_c() const;
};

/// Rows are conditional distributions given the row index.
struct ConditionalTable {
  std::size_t rows = 0, cols = 0;
  std::vector<double> p;

  ConditionalTable(std::size_t r, std::size_t c, std::vector<double> probs);
  static ConditionalTable random(std::size_t r, std::size_t c, Rng& rng);
  double at(std::size_t r, std::size_t c) const { return p[r * cols + c]; }
};

/// -sum p log p in nats, with 0 log 0 = 0.
double entropy(const DiscreteDistribution& dist);

struct BoundCheck {
  double entropy = 0.0;        // H(p)
  double cross_entropy = 0.0;  // -sum p log q; +inf if q vanishes on support
  double gap = 0.0;            // KL(p || q)
  bool infinite = false;
};

/// Variational bound H(p) <= -sum p log q; the gap is the KL divergence.
BoundCheck cross_entropy_bound_check(const DiscreteDistribution& p,
                                     const DiscreteDistribution& q);

enum class Conditional { kCGivenZ, kZGivenC };

double conditional_entropy(const DiscreteJoint& joint, Conditional direction);
double mutual_information(const DiscreteJoint& joint);

/// |H(Z|C) - H(Z) + H(C) - H(C|Z)|; zero up to round-off for any joint.
double decomposition_residual(const DiscreteJoint& joint);

/// Joint p(z,c) = sum_x p(x) p(c|x) p(z|x) under the Markov chain C-X-Z.
DiscreteJoint markov_joint(const DiscreteDistribution& px, const ConditionalTable& pc_given_x,
                           const ConditionalTable& pz_given_x);

/// (-sum_{z,c} p(z,c) log r(c|z)) - H(C|Z); non-negative for any model r.
/// Returns +inf when r vanishes somewhere the joint has mass.
double markov_bound_residual(const DiscreteDistribution& px, const ConditionalTable& pc_given_x,
                             const ConditionalTable& pz_given_x, const ConditionalTable& r);

/// Central finite differences (f(t+h e_i) - f(t-h e_i)) / 2h.
std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double step);

/// Plug-in entropy of samples discretized into bins of `width` (nats).
/// Adding log(width) gives a differential-entropy estimate.
double binned_entropy(std::span<const double> samples, double width);

/// Sum of per-coordinate binned entropies for row-major samples [n][dim]
/// (mean-field surrogate for multivariate data).
double binned_entropy_rows(std::span<const double> rows, std::size_t n, std::size_t dim,
                           double width);

}  // namespace reve::oracle
