#include "reve/oracle.hpp"

#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>

namespace reve::oracle {

namespace {

constexpr double kSumTolerance = 1e-12;

void validate_probs(const std::vector<double>& p, const char* what) {
  double sum = 0.0;
  for (double v : p) {
    if (!(v >= 0.0)) throw std::invalid_argument(std::string(what) + ": negative probability");
    sum += v;
  }
  if (std::fabs(sum - 1.0) > kSumTolerance) {
    throw std::invalid_argument(std::string(what) + ": probabilities sum to " +
                                std::to_string(sum));
  }
}

double plogp(double p) { return p > 0.0 ? p * std::log(p) : 0.0; }

// Folds round-off into the largest entry so the vector sums to one exactly
// enough for the 1e-12 validity window.
void normalize_largest(std::vector<double>& p) {
  double sum = 0.0;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    sum += p[i];
    if (p[i] > p[arg]) arg = i;
  }
  p[arg] += 1.0 - sum;
}

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<double> probs) : p(std::move(probs)) {
  if (p.empty()) throw std::invalid_argument("DiscreteDistribution: empty support");
  validate_probs(p, "DiscreteDistribution");
}

DiscreteDistribution DiscreteDistribution::uniform(std::size_t n) {
  return DiscreteDistribution(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

DiscreteDistribution DiscreteDistribution::random(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double sum = 0.0;
  for (double& v : p) {
    v = -std::log(1.0 - rng.uniform());  // Exp(1), strictly positive
    sum += v;
  }
  for (double& v : p) v /= sum;
  normalize_largest(p);
  return DiscreteDistribution(std::move(p));
}

DiscreteJoint::DiscreteJoint(std::size_t nz, std::size_t nc, std::vector<double> probs)
    : n_z(nz), n_c(nc), p(std::move(probs)) {
  if (n_z == 0 || n_c == 0 || p.size() != n_z * n_c) {
    throw std::invalid_argument("DiscreteJoint: bad dimensions");
  }
  validate_probs(p, "DiscreteJoint");
}

DiscreteJoint DiscreteJoint::random(std::size_t nz, std::size_t nc, Rng& rng) {
  DiscreteDistribution flat = DiscreteDistribution::random(nz * nc, rng);
  return DiscreteJoint(nz, nc, std::move(flat.p));
}

DiscreteDistribution DiscreteJoint::marginal_z() const {
  std::vector<double> m(n_z, 0.0);
  for (std::size_t z = 0; z < n_z; ++z)
    for (std::size_t c = 0; c < n_c; ++c) m[z] += at(z, c);
  normalize_largest(m);
  return DiscreteDistribution(std::move(m));
}

DiscreteDistribution DiscreteJoint::marginal_c() const {
  std::vector<double> m(n_c, 0.0);
  for (std::size_t z = 0; z < n_z; ++z)
    for (std::size_t c = 0; c < n_c; ++c) m[c] += at(z, c);
  normalize_largest(m);
  return DiscreteDistribution(std::move(m));
}

ConditionalTable::ConditionalTable(std::size_t r, std::size_t c, std::vector<double> probs)
    : rows(r), cols(c), p(std::move(probs)) {
  if (rows == 0 || cols == 0 || p.size() != rows * cols) {
    throw std::invalid_argument("ConditionalTable: bad dimensions");
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!(p[i * cols + j] >= 0.0))
        throw std::invalid_argument("ConditionalTable: negative probability");
      sum += p[i * cols + j];
    }
    if (std::fabs(sum - 1.0) > kSumTolerance) {
      throw std::invalid_argument("ConditionalTable: row " + std::to_string(i) + " sums to " +
                                  std::to_string(sum));
    }
  }
}

ConditionalTable ConditionalTable::random(std::size_t r, std::size_t c, Rng& rng) {
  std::vector<double> p(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    DiscreteDistribution row = DiscreteDistribution::random(c, rng);
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] = row.p[j];
  }
  return ConditionalTable(r, c, std::move(p));
}

double entropy(const DiscreteDistribution& dist) {
  double h = 0.0;
  for (double v : dist.p) h -= plogp(v);
  return h;
}

BoundCheck cross_entropy_bound_check(const DiscreteDistribution& p,
                                     const DiscreteDistribution& q) {
  if (p.support() != q.support()) {
    throw std::invalid_argument("cross_entropy_bound_check: support mismatch");
  }
  BoundCheck out;
  out.entropy = entropy(p);
  for (std::size_t i = 0; i < p.support(); ++i) {
    if (p.p[i] == 0.0) continue;
    if (q.p[i] == 0.0) {
      out.infinite = true;  // bound is +inf; reported, not thrown
      out.cross_entropy = std::numeric_limits<double>::infinity();
      out.gap = std::numeric_limits<double>::infinity();
      return out;
    }
    out.cross_entropy -= p.p[i] * std::log(q.p[i]);
  }
  out.gap = out.cross_entropy - out.entropy;
  return out;
}

double conditional_entropy(const DiscreteJoint& joint, Conditional direction) {
  // H(C|Z) = -sum p(z,c) log p(c|z); empty marginal cells carry no mass
  double h = 0.0;
  if (direction == Conditional::kCGivenZ) {
    for (std::size_t z = 0; z < joint.n_z; ++z) {
      double pz = 0.0;
      for (std::size_t c = 0; c < joint.n_c; ++c) pz += joint.at(z, c);
      if (pz == 0.0) continue;
      for (std::size_t c = 0; c < joint.n_c; ++c) {
        const double pzc = joint.at(z, c);
        if (pzc > 0.0) h -= pzc * std::log(pzc / pz);
      }
    }
  } else {
    for (std::size_t c = 0; c < joint.n_c; ++c) {
      double pc = 0.0;
      for (std::size_t z = 0; z < joint.n_z; ++z) pc += joint.at(z, c);
      if (pc == 0.0) continue;
      for (std::size_t z = 0; z < joint.n_z; ++z) {
        const double pzc = joint.at(z, c);
        if (pzc > 0.0) h -= pzc * std::log(pzc / pc);
      }
    }
  }
  return h;
}

double mutual_information(const DiscreteJoint& joint) {
  return entropy(joint.marginal_c()) - conditional_entropy(joint, Conditional::kCGivenZ);
}

double decomposition_residual(const DiscreteJoint& joint) {
  const double h_z_given_c = conditional_entropy(joint, Conditional::kZGivenC);
  const double h_z = entropy(joint.marginal_z());
  const double h_c = entropy(joint.marginal_c());
  const double h_c_given_z = conditional_entropy(joint, Conditional::kCGivenZ);
  return std::fabs(h_z_given_c - h_z + h_c - h_c_given_z);
}

DiscreteJoint markov_joint(const DiscreteDistribution& px, const ConditionalTable& pc_given_x,
                           const ConditionalTable& pz_given_x) {
  const std::size_t nx = px.support();
  if (pc_given_x.rows != nx || pz_given_x.rows != nx) {
    throw std::invalid_argument("markov_joint: conditional tables do not match |X|");
  }
  const std::size_t nc = pc_given_x.cols;
  const std::size_t nz = pz_given_x.cols;
  std::vector<double> joint(nz * nc, 0.0);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t c = 0; c < nc; ++c)
        joint[z * nc + c] += px.p[x] * pc_given_x.at(x, c) * pz_given_x.at(x, z);
  normalize_largest(joint);
  return DiscreteJoint(nz, nc, std::move(joint));
}

double markov_bound_residual(const DiscreteDistribution& px, const ConditionalTable& pc_given_x,
                             const ConditionalTable& pz_given_x, const ConditionalTable& r) {
  const DiscreteJoint joint = markov_joint(px, pc_given_x, pz_given_x);
  if (r.rows != joint.n_z || r.cols != joint.n_c) {
    throw std::invalid_argument("markov_bound_residual: model r has wrong dimensions");
  }
  double bound = 0.0;
  for (std::size_t z = 0; z < joint.n_z; ++z)
    for (std::size_t c = 0; c < joint.n_c; ++c) {
      const double pzc = joint.at(z, c);
      if (pzc == 0.0) continue;
      if (r.at(z, c) == 0.0) return std::numeric_limits<double>::infinity();
      bound -= pzc * std::log(r.at(z, c));
    }
  return bound - conditional_entropy(joint, Conditional::kCGivenZ);
}

std::vector<double> finite_difference_gradient(
    const std::function<double(std::span<const double>)>& f, std::span<const double> theta,
    double step) {
  std::vector<double> point(theta.begin(), theta.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + step;
    const double f_plus = f(point);
    point[i] = saved - step;
    const double f_minus = f(point);
    point[i] = saved;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw std::runtime_error("finite_difference_gradient: non-finite function value");
    }
    grad[i] = (f_plus - f_minus) / (2.0 * step);
  }
  return grad;
}

double binned_entropy(std::span<const double> samples, double width) {
  if (samples.empty()) throw std::invalid_argument("binned_entropy: no samples");
  if (!(width > 0.0)) throw std::invalid_argument("binned_entropy: bin width must be positive");
  std::map<long long, std::size_t> counts;
  for (double v : samples) {
    counts[static_cast<long long>(std::floor(v / width))] += 1;
  }
  const double n = static_cast<double>(samples.size());
  double h = 0.0;
  for (const auto& [bin, count] : counts) {
    const double p = static_cast<double>(count) / n;
    h -= plogp(p);
  }
  return h;
}

double binned_entropy_rows(std::span<const double> rows, std::size_t n, std::size_t dim,
                           double width) {
  if (rows.size() != n * dim) throw std::invalid_argument("binned_entropy_rows: size mismatch");
  double total = 0.0;
  std::vector<double> column(n);
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < n; ++i) column[i] = rows[i * dim + j];
    total += binned_entropy(column, width);
  }
  return total;
}

}  // namespace reve::oracle
