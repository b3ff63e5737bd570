#include "reve/verify.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "reve/linalg.hpp"
#include "reve/oracle.hpp"

namespace reve::runner {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

}  // namespace

SuiteReport verify_variational_bound(std::size_t trials, std::uint64_t seed) {
  using namespace reve::oracle;
  Rng rng(seed);
  SuiteReport report;
  report.name = "variational-bound";
  report.trials = trials;
  double worst_gap = 0.0;       // most negative gap seen
  double worst_equality = 0.0;  // largest |gap| at q = p
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t support = 2 + rng.uniform_index(15);  // <= 16
    const auto p = DiscreteDistribution::random(support, rng);
    const auto q = DiscreteDistribution::random(support, rng);
    const BoundCheck check = cross_entropy_bound_check(p, q);
    if (!check.infinite) worst_gap = std::min(worst_gap, check.gap);
    const BoundCheck self = cross_entropy_bound_check(p, p);
    worst_equality = std::max(worst_equality, std::fabs(self.gap));
  }
  report.worst = std::min(worst_gap, -worst_equality);
  report.pass = worst_gap >= -1e-12 && worst_equality <= 1e-12;
  report.detail = "min gap " + fmt(worst_gap) + ", max |gap| at q=p " + fmt(worst_equality);
  return report;
}

SuiteReport verify_entropy_decomposition(std::size_t trials, std::uint64_t seed) {
  using namespace reve::oracle;
  Rng rng(seed);
  SuiteReport report;
  report.name = "entropy-decomposition";
  report.trials = trials;
  double worst = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t nz = 2 + rng.uniform_index(7);  // <= 8
    const std::size_t nc = 2 + rng.uniform_index(3);  // <= 4
    const DiscreteJoint joint = DiscreteJoint::random(nz, nc, rng);
    worst = std::max(worst, decomposition_residual(joint));
  }
  report.worst = worst;
  report.pass = worst <= 1e-10;
  report.detail = "max residual " + fmt(worst);
  return report;
}

SuiteReport verify_markov_bound(std::size_t trials, std::uint64_t seed) {
  using namespace reve::oracle;
  Rng rng(seed);
  SuiteReport report;
  report.name = "markov-chain-bound";
  report.trials = trials;
  double worst = 0.0;          // most negative residual for random r
  double worst_tight = 0.0;    // residual when r is the true conditional
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t nx = 2 + rng.uniform_index(7);  // <= 8
    const std::size_t nz = 2 + rng.uniform_index(7);  // <= 8
    const std::size_t nc = 2 + rng.uniform_index(3);  // <= 4
    const auto px = DiscreteDistribution::random(nx, rng);
    const auto pcx = ConditionalTable::random(nx, nc, rng);
    const auto pzx = ConditionalTable::random(nx, nz, rng);
    const auto r = ConditionalTable::random(nz, nc, rng);
    const double residual = markov_bound_residual(px, pcx, pzx, r);
    if (std::isfinite(residual)) worst = std::min(worst, residual);

    // the bound is tight at the true conditional p(c|z)
    const DiscreteJoint joint = markov_joint(px, pcx, pzx);
    std::vector<double> true_r(nz * nc, 0.0);
    for (std::size_t z = 0; z < nz; ++z) {
      double pz = 0.0;
      for (std::size_t c = 0; c < nc; ++c) pz += joint.at(z, c);
      for (std::size_t c = 0; c < nc; ++c)
        true_r[z * nc + c] = pz > 0.0 ? joint.at(z, c) / pz : 1.0 / static_cast<double>(nc);
      // fold row round-off into the largest entry
      double sum = 0.0;
      std::size_t arg = 0;
      for (std::size_t c = 0; c < nc; ++c) {
        sum += true_r[z * nc + c];
        if (true_r[z * nc + c] > true_r[z * nc + arg]) arg = c;
      }
      true_r[z * nc + arg] += 1.0 - sum;
    }
    const double tight =
        markov_bound_residual(px, pcx, pzx, ConditionalTable(nz, nc, std::move(true_r)));
    worst_tight = std::max(worst_tight, std::fabs(tight));
  }
  report.worst = worst;
  report.pass = worst >= -1e-12 && worst_tight <= 1e-12;
  report.detail = "min residual " + fmt(worst) + ", max tight-case |residual| " +
                  fmt(worst_tight);
  return report;
}

SuiteReport verify_projection_suite(std::size_t trials, std::uint64_t seed) {
  Rng rng(seed);
  SuiteReport report;
  report.name = "projection-suite";
  report.trials = trials;
  double worst = 0.0;
  const std::size_t class_choices[2] = {2, 10};
  const std::size_t dim_choices[2] = {4, 64};
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t k = class_choices[t % 2];
    const std::size_t d = dim_choices[(t / 2) % 2];
    linalg::Mat w(k, d);
    for (double& v : w.a) v = rng.normal();
    const auto svd = linalg::compact_svd(w, 1e-7);
    const auto proj = linalg::kernel_complement_projection(svd, d);
    const linalg::Mat& p = proj.p;

    // idempotence and symmetry at 1e-10
    const linalg::Mat pp = linalg::matmul(p, p);
    double err_idem = 0.0, err_sym = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        err_idem = std::max(err_idem, std::fabs(pp.at(i, j) - p.at(i, j)));
        err_sym = std::max(err_sym, std::fabs(p.at(i, j) - p.at(j, i)));
      }

    // annihilation: W (I - P) = 0 at 1e-8 scale
    const double w_scale = std::max(1.0, linalg::max_abs(w));
    linalg::Mat wp = linalg::matmul(w, p);
    double err_ann = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < d; ++j)
        err_ann = std::max(err_ann, std::fabs(w.at(i, j) - wp.at(i, j)));

    // prediction invariance: softmax(W y + b) == softmax(W P y + b) at 1e-8
    std::vector<double> y(d), b(k);
    for (double& v : y) v = 3.0 * rng.normal();
    for (double& v : b) v = rng.normal();
    std::vector<double> py(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) py[i] += p.at(i, j) * y[j];
    auto softmax_logits = [&](const std::vector<double>& input) {
      std::vector<double> logits(k);
      for (std::size_t i = 0; i < k; ++i) {
        logits[i] = b[i];
        for (std::size_t j = 0; j < d; ++j) logits[i] += w.at(i, j) * input[j];
      }
      const double m = *std::max_element(logits.begin(), logits.end());
      double sum = 0.0;
      for (double& v : logits) {
        v = std::exp(v - m);
        sum += v;
      }
      for (double& v : logits) v /= sum;
      return logits;
    };
    const auto soft_y = softmax_logits(y);
    const auto soft_py = softmax_logits(py);
    double err_pred = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      err_pred = std::max(err_pred, std::fabs(soft_y[i] - soft_py[i]));

    const double trial_worst =
        std::max(std::max(err_idem, err_sym) / 1e-10,
                 std::max(err_ann / (1e-8 * w_scale), err_pred / 1e-8));
    worst = std::max(worst, trial_worst);
  }
  report.worst = worst;  // normalized: <= 1 means every bound held
  report.pass = worst <= 1.0;
  report.detail = "worst normalized residual " + fmt(worst);
  return report;
}

// ----------------------------------------------------- gradient fixture

GradCheckFixture GradCheckFixture::make(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t input_dim = 4, hidden = 6, dim_y = 4, n_classes = 3, batch_n = 5;

  nn::EncoderNetwork net(Shape{input_dim},
                         nn::parse_arch("dense:" + std::to_string(hidden) +
                                        ":tanh,dense:" + std::to_string(dim_y) + ":identity"),
                         rng);
  nn::DecoderHead head(n_classes, dim_y, rng);

  std::vector<double> x(batch_n * input_dim);
  for (double& v : x) v = rng.normal();
  std::vector<int> labels(batch_n);
  for (std::size_t i = 0; i < batch_n; ++i) labels[i] = static_cast<int>(i % n_classes);
  data::Batch batch{Tensor(Shape{batch_n, input_dim}, std::move(x)), std::move(labels)};

  ReveConfig config;
  config.sigma2 = 0.04;
  config.beta = 0.5;  // both objective terms carry weight in the check
  config.mc_samples = 3;

  head.refresh_projection(config.rank_tolerance);

  GradCheckFixture fixture{std::move(net), std::move(head), std::move(batch), config,
                           Tensor(),      GmmParams{}};
  fixture.eps = draw_encoding_noise(Shape{batch_n, dim_y}, config.sigma2, config.mc_samples,
                                    rng);
  // freeze the mixture fit from the unperturbed parameters
  const TotalTerms reference = total_objective_with(fixture.batch, fixture.net, fixture.head,
                                                    fixture.config, fixture.eps, std::nullopt);
  fixture.frozen_gmm = reference.gmm;
  return fixture;
}

double GradCheckFixture::max_relative_error(double fd_step) {
  std::vector<Tensor> params;
  for (auto& [name, tensor] : net.parameters()) params.push_back(tensor);
  params.push_back(head.weight());
  params.push_back(head.bias());

  const std::optional<GmmParams> frozen(frozen_gmm);

  // reverse-mode gradients
  {
    Tape tape;
    const TotalTerms terms = total_objective_with(batch, net, head, config, eps, frozen);
    tape.backward(terms.total);
  }

  double worst = 0.0;
  for (Tensor& p : params) {
    auto values = p.values_mut();
    const auto ad = p.grad();
    std::vector<double> theta(values.begin(), values.end());
    const auto fd = oracle::finite_difference_gradient(
        [&](std::span<const double> point) {
          std::copy(point.begin(), point.end(), values.begin());
          const TotalTerms terms =
              total_objective_with(batch, net, head, config, eps, frozen);
          return terms.total.value();
        },
        theta, fd_step);
    std::copy(theta.begin(), theta.end(), values.begin());
    for (std::size_t i = 0; i < fd.size(); ++i) {
      const double denom = std::max({std::fabs(ad[i]), std::fabs(fd[i]), 1e-4});
      worst = std::max(worst, std::fabs(ad[i] - fd[i]) / denom);
    }
    p.zero_grad();
  }
  return worst;
}

SuiteReport verify_gradient_check() {
  SuiteReport report;
  report.name = "gradient-check";
  report.trials = 1;
  GradCheckFixture fixture = GradCheckFixture::make();
  report.worst = fixture.max_relative_error();
  report.pass = report.worst <= 1e-4;
  report.detail = "max relative error " + fmt(report.worst);
  return report;
}

SuiteReport verify_mstep_recovery(std::uint64_t seed) {
  SuiteReport report;
  report.name = "m-step-recovery";
  report.trials = 1;
  Rng rng(seed);
  const std::size_t n = 10000;
  const double alpha = 0.6, mu1 = 3.0, mu0 = -3.0, var = 0.25;
  const double sd = std::sqrt(var);

  std::vector<double> z(n), pi(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool mode1 = rng.uniform() < alpha;
    z[i] = mode1 ? rng.normal(mu1, sd) : rng.normal(mu0, sd);
    // true posterior responsibilities: the M-step input is an argument of
    // the operation, and exact recovery needs the exact weights
    const double d1 = (z[i] - mu1) / sd, d0 = (z[i] - mu0) / sd;
    const double l1 = std::log(alpha) - 0.5 * d1 * d1;
    const double l0 = std::log(1.0 - alpha) - 0.5 * d0 * d0;
    const double m = std::max(l1, l0);
    pi[i] = std::exp(l1 - m) / (std::exp(l1 - m) + std::exp(l0 - m));
  }
  const GmmParams fit = m_step(Tensor(Shape{n, 1}, std::move(z)), Tensor(Shape{n, 1}, std::move(pi)),
                               1e-4);

  const double err_alpha = std::fabs(fit.alpha[0] - alpha);
  const double err_mu1 = std::fabs(fit.mu1[0] - mu1);
  const double err_mu0 = std::fabs(fit.mu0[0] - mu0);
  const double err_v1 = std::fabs(fit.var1[0] - var) / var;
  const double err_v0 = std::fabs(fit.var0[0] - var) / var;
  report.pass = err_alpha <= 0.05 && err_mu1 <= 0.1 && err_mu0 <= 0.1 && err_v1 <= 0.2 &&
                err_v0 <= 0.2;
  report.worst = std::max({err_alpha / 0.05, err_mu1 / 0.1, err_mu0 / 0.1, err_v1 / 0.2,
                           err_v0 / 0.2});
  std::ostringstream detail;
  detail << "alpha " << fit.alpha[0] << ", mu1 " << fit.mu1[0] << ", mu0 " << fit.mu0[0]
         << ", var1 " << fit.var1[0] << ", var0 " << fit.var0[0];
  report.detail = detail.str();
  return report;
}

int verify(std::size_t trials, std::ostream& os, std::uint64_t seed) {
  std::vector<SuiteReport> reports;
  reports.push_back(verify_variational_bound(trials, seed));
  reports.push_back(verify_entropy_decomposition(trials / 2 + 1, seed + 1));
  reports.push_back(verify_markov_bound(trials / 2 + 1, seed + 2));
  reports.push_back(verify_projection_suite(std::min<std::size_t>(trials, 100), seed + 3));
  reports.push_back(verify_gradient_check());
  reports.push_back(verify_mstep_recovery(seed + 4));

  int failures = 0;
  for (const SuiteReport& r : reports) {
    os << (r.pass ? "PASS" : "FAIL") << ' ' << r.name << " (" << r.trials << " trials): "
       << r.detail << '\n';
    if (!r.pass) ++failures;
  }
  return failures;
}

}  // namespace reve::runner
