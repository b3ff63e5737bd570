#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "reve/core.hpp"
#include "reve/data.hpp"
#include "reve/nn.hpp"

namespace reve::runner {

struct SuiteReport {
  std::string name;
  bool pass = false;
  std::size_t trials = 0;
  double worst = 0.0;  // worst observed residual / error for the suite
  std::string detail;
};

/// 1000-style randomized (p, q) pairs: -sum p log q >= H(p) with gap
/// >= -1e-12, and gap == 0 within 1e-12 when q = p.
SuiteReport verify_variational_bound(std::size_t trials, std::uint64_t seed);

/// Random joints: |H(Z|C) - H(Z) + H(C) - H(C|Z)| <= 1e-10.
SuiteReport verify_entropy_decomposition(std::size_t trials, std::uint64_t seed);

/// Random Markov systems and random models r: the conditional-entropy
/// bound is never violated beyond -1e-12; r = true posterior is tight.
SuiteReport verify_markov_bound(std::size_t trials, std::uint64_t seed);

/// Random decoder matrices: P symmetric idempotent within 1e-10,
/// W (I - P) = 0 within 1e-8 scale, softmax(W y + b) = softmax(W P y + b)
/// within 1e-8.
SuiteReport verify_projection_suite(std::size_t trials, std::uint64_t seed);

/// Every parameter gradient of the total objective on the frozen fixture
/// matches central finite differences (h = 1e-5) within 1e-4 relative.
SuiteReport verify_gradient_check();

/// M-step on 1e4 draws from 0.6 N(3, 0.25) + 0.4 N(-3, 0.25) with true
/// posterior responsibilities recovers alpha within 0.05, means within
/// 0.1, variances within 20%.
SuiteReport verify_mstep_recovery(std::uint64_t seed);

/// Runs all suites, printing one PASS/FAIL line each; returns the number
/// of failures. `trials` scales the randomized suites.
int verify(std::size_t trials, std::ostream& os, std::uint64_t seed = 20240901);

/// Shared gradient-check fixture: tiny tanh encoder (4 -> 6 -> 4), 3
/// classes, S = 3, frozen noise / projection / mixture fit.
struct GradCheckFixture {
  nn::EncoderNetwork net;
  nn::DecoderHead head;
  data::Batch batch;
  ReveConfig config;
  Tensor eps;
  GmmParams frozen_gmm;

  static GradCheckFixture make(std::uint64_t seed = 7);
  /// max over parameters of |g_ad - g_fd| / max(|g_ad|, |g_fd|, 1e-4)
  double max_relative_error(double fd_step = 1e-5);
};

}  // namespace reve::runner
