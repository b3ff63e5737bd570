#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "reve/oracle.hpp"
#include "reve/rng.hpp"
#include "reve/tensor.hpp"

using namespace reve;

namespace {

Tensor leaf(Shape shape, std::vector<double> values) {
  return Tensor::param(std::move(shape), std::move(values));
}

double relative_error(double a, double b) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), 1e-4});
}

}  // namespace

TEST_CASE("matmul forward matches hand arithmetic") {
  const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor b(Shape{2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.values()[0] == doctest::Approx(3.0));
  CHECK(c.values()[1] == doctest::Approx(7.0));
}

TEST_CASE("matmul rejects mismatched inner extents with both shapes named") {
  const Tensor a(Shape{2, 3}, std::vector<double>(6, 1.0));
  const Tensor b(Shape{4, 5}, std::vector<double>(20, 1.0));
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  try {
    matmul(a, b);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("sigmoid at zero") {
  CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("stop_gradient keeps values bit-identical and blocks gradients") {
  Tensor x = leaf({3}, {1.5, -2.25, 0.125});
  Tape tape;
  const Tensor detached = stop_gradient(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(detached.values()[i] == x.values()[i]);

  const Tensor loss = sum(add(mul(x, x), stop_gradient(scale(x, 10.0))));
  tape.backward(loss);
  const auto g = x.grad();
  CHECK(g[0] == doctest::Approx(3.0).epsilon(1e-12));   // d/dx x^2 only
  CHECK(g[1] == doctest::Approx(-4.5).epsilon(1e-12));
  CHECK(g[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tensor x = leaf({3}, {1, 2, 3});
  Tape tape;
  tape.backward(sum(square(x)));
  const auto g = x.grad();
  CHECK(g[0] == doctest::Approx(2.0));
  CHECK(g[1] == doctest::Approx(4.0));
  CHECK(g[2] == doctest::Approx(6.0));
}

TEST_CASE("backward of sigmoid at zero is a quarter") {
  Tensor w = leaf({}, {0.0});
  Tape tape;
  tape.backward(sigmoid(w));
  CHECK(w.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("backward errors: non-scalar, detached, already consumed") {
  Tensor x = leaf({2}, {1, 2});
  {
    Tape tape;
    const Tensor y = square(x);
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // non-scalar
    const Tensor loss = sum(y);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::runtime_error);  // consumed
  }
  x.zero_grad();
  {
    Tape tape;
    const Tensor constant = Tensor::scalar(4.0);
    CHECK_THROWS_AS(tape.backward(constant), std::invalid_argument);  // detached
  }
}

TEST_CASE("only one tape may be active per thread") {
  Tape tape;
  CHECK_THROWS_AS(Tape(), std::runtime_error);
}

TEST_CASE("log and div domain errors") {
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::domain_error);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::domain_error);
  CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), std::domain_error);
}

TEST_CASE("logsumexp examples") {
  // [0, 0] -> log 2
  CHECK(logsumexp(Tensor(Shape{2}, {0, 0}), 0).value() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // huge inputs do not overflow
  CHECK(logsumexp(Tensor(Shape{2}, {1000, 1000}), 0).value() ==
        doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  // log(e^0 + e^1 + e^2), evaluated directly
  const double direct = std::log(std::exp(0.0) + std::exp(1.0) + std::exp(2.0));
  CHECK(direct == doctest::Approx(2.407606).epsilon(1e-6));
  CHECK(logsumexp(Tensor(Shape{3}, {0, 1, 2}), 0).value() ==
        doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("logsumexp shift invariance") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v(8);
    for (double& x : v) x = 10.0 * rng.normal();
    const double c = 100.0 * rng.normal();
    const Tensor t(Shape{2, 4}, std::vector<double>(v));
    const Tensor shifted = add_scalar(t, c);
    const Tensor a = logsumexp(t, 1);
    const Tensor b = logsumexp(shifted, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(std::fabs(a.values()[i] + c - b.values()[i]) <= 1e-12 * std::max(1.0, std::fabs(c)));
    }
  }
}

TEST_CASE("broadcast only expands extent-1 axes") {
  const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor row(Shape{1, 3}, {10, 20, 30});
  const Tensor s = add(a, row);
  CHECK(s.values()[0] == doctest::Approx(11));
  CHECK(s.values()[5] == doctest::Approx(36));

  const Tensor bad(Shape{2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_AS(add(a, bad), std::invalid_argument);
  CHECK_THROWS_AS(broadcast_to(Tensor(Shape{2}, {1, 2}), Shape{3}), std::invalid_argument);
}

TEST_CASE("concat and slice round trip") {
  const Tensor a(Shape{2, 2}, {1, 2, 3, 4});
  const Tensor b(Shape{2, 1}, {9, 8});
  const Tensor joined = concat(std::vector<Tensor>{a, b}, 1);
  CHECK(joined.shape() == Shape{2, 3});
  CHECK(joined.values()[2] == doctest::Approx(9));
  const Tensor back = slice(joined, 1, 0, 2);
  for (std::size_t i = 0; i < 4; ++i) CHECK(back.values()[i] == a.values()[i]);
}

// Random op chains vs central finite differences; smooth op pool so the
// 1e-4 relative tolerance is meaningful everywhere.
TEST_CASE("random op chains match finite differences") {
  Rng rng(1234);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(5);  // extents <= 6
    const std::size_t k = 1 + rng.uniform_index(5);
    const std::size_t n = 1 + rng.uniform_index(5);

    std::vector<double> av(m * k), bv(k * n), cv(m * n);
    for (double& v : av) v = rng.normal();
    for (double& v : bv) v = rng.normal();
    for (double& v : cv) v = rng.normal();

    Tensor a = leaf({m, k}, std::vector<double>(av));
    Tensor b = leaf({k, n}, std::vector<double>(bv));
    Tensor c = leaf({m, n}, std::vector<double>(cv));
    const int variant = static_cast<int>(rng.uniform_index(4));

    auto eval = [&](const Tensor& aa, const Tensor& bb, const Tensor& cc) {
      Tensor base = add(matmul(aa, bb), cc);
      switch (variant) {
        case 0: base = sigmoid(base); break;
        case 1: base = tanh(scale(base, 0.5)); break;
        case 2: base = square(add_scalar(base, 0.25)); break;
        default: base = exp(scale(base, -0.5)); break;
      }
      base = mul(base, add_scalar(cc, 2.0));
      const Tensor lse = logsumexp(base, 1, true);
      return mean(sub(broadcast_to(lse, base.shape()), scale(base, 0.5)));
    };

    double loss_value = 0.0;
    {
      Tape tape;
      const Tensor loss = eval(a, b, c);
      loss_value = loss.value();
      tape.backward(loss);
    }
    CHECK(std::isfinite(loss_value));

    auto fd_check = [&](Tensor& target) {
      auto values = target.values_mut();
      std::vector<double> theta(values.begin(), values.end());
      const auto fd = oracle::finite_difference_gradient(
          [&](std::span<const double> point) {
            std::copy(point.begin(), point.end(), values.begin());
            return eval(a, b, c).value();
          },
          theta, 1e-5);
      std::copy(theta.begin(), theta.end(), values.begin());
      const auto ad = target.grad();
      for (std::size_t i = 0; i < fd.size(); ++i) {
        CHECK(relative_error(ad[i], fd[i]) <= 1e-4);
      }
      target.zero_grad();
    };
    fd_check(a);
    fd_check(b);
    fd_check(c);
  }
}

TEST_CASE("shape-op gradients: reshape, concat, slice, reductions") {
  Rng rng(99);
  std::vector<double> av(12), bv(12);
  for (double& v : av) v = rng.normal();
  for (double& v : bv) v = rng.normal();
  Tensor a = leaf({3, 4}, std::vector<double>(av));
  Tensor b = leaf({3, 4}, std::vector<double>(bv));

  auto eval = [&](const Tensor& aa, const Tensor& bb) {
    const Tensor joined = concat(std::vector<Tensor>{reshape(aa, Shape{3, 4, 1}),
                                                     reshape(bb, Shape{3, 4, 1})}, 2);
    const Tensor mixed = logsumexp(joined, 2, false);
    const Tensor cut = slice(mixed, 1, 1, 4);
    return mean(sum(square(cut), 1, false));
  };

  {
    Tape tape;
    tape.backward(eval(a, b));
  }
  for (Tensor* target : {&a, &b}) {
    auto values = target->values_mut();
    std::vector<double> theta(values.begin(), values.end());
    const auto fd = oracle::finite_difference_gradient(
        [&](std::span<const double> point) {
          std::copy(point.begin(), point.end(), values.begin());
          return eval(a, b).value();
        },
        theta, 1e-5);
    std::copy(theta.begin(), theta.end(), values.begin());
    const auto ad = target->grad();
    for (std::size_t i = 0; i < fd.size(); ++i) CHECK(relative_error(ad[i], fd[i]) <= 1e-4);
  }
}

TEST_CASE("conv2d and maxpool2 gradients match finite differences") {
  Rng rng(7);
  std::vector<double> xv(1 * 2 * 4 * 4), kv(2 * 2 * 3 * 3), bv(2);
  // keep values away from pooling ties
  for (double& v : xv) v = rng.normal() * 2.0;
  for (double& v : kv) v = rng.normal();
  for (double& v : bv) v = rng.normal();
  Tensor x = leaf({1, 2, 4, 4}, std::vector<double>(xv));
  Tensor k = leaf({2, 2, 3, 3}, std::vector<double>(kv));
  Tensor b = leaf({2}, std::vector<double>(bv));

  auto eval = [&]() {
    const Tensor c = conv2d(x, k, b, 1);   // [1,2,4,4]
    const Tensor p = maxpool2(tanh(c));    // [1,2,2,2]
    return mean(square(p));
  };
  {
    Tape tape;
    tape.backward(eval());
  }
  for (Tensor* target : {&x, &k, &b}) {
    auto values = target->values_mut();
    std::vector<double> theta(values.begin(), values.end());
    const auto fd = oracle::finite_difference_gradient(
        [&](std::span<const double> point) {
          std::copy(point.begin(), point.end(), values.begin());
          return eval().value();
        },
        theta, 1e-5);
    std::copy(theta.begin(), theta.end(), values.begin());
    const auto ad = target->grad();
    for (std::size_t i = 0; i < fd.size(); ++i) CHECK(relative_error(ad[i], fd[i]) <= 1e-4);
  }
}

TEST_CASE("gradient accumulates when a tensor is used twice") {
  Tensor x = leaf({}, {3.0});
  Tape tape;
  tape.backward(mul(x, x));  // d/dx x*x = 2x
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("ops off the tape stay value-only") {
  const Tensor a(Shape{2}, {1, 2});
  const Tensor b = square(a);  // no active tape
  CHECK(b.values()[1] == doctest::Approx(4.0));
  Tensor p = leaf({2}, {1, 2});
  const Tensor q = square(p);  // requires_grad but no tape: still value-only
  CHECK_FALSE(q.requires_grad());
}
