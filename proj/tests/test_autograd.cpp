#include <doctest.h>

#include <random>

#include "lagamc/autograd.hpp"
#include "oracles.hpp"

using namespace lagamc;
using ag::Matrix;
using ag::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = n(rng);
  return m;
}

using Op = std::function<Var(const Var&)>;

/// Checks d/dx sum(op(x) .* w) against central differences.
void check_unary(const Op& op, const Matrix& x0, std::uint64_t seed, double tol = 1e-6) {
  std::mt19937_64 rng(seed);
  auto x = Var::parameter(x0);
  const auto probe = op(x);
  const Matrix w = random_matrix(probe.rows(), probe.cols(), rng);
  ag::dot(probe, ag::constant(w)).backward();
  const Matrix analytic = x.grad();
  const auto f = [&](const Matrix& v) {
    ag::NoGradGuard guard;
    return ag::dot(op(ag::constant(v)), ag::constant(w)).scalar();
  };
  const Matrix numeric = oracle::finite_difference(f, x0);
  CHECK(oracle::relative_error(analytic, numeric) < tol);
}

}  // namespace

TEST_SUITE("autograd") {

TEST_CASE("gradients of each op match finite differences") {
  std::mt19937_64 rng(3);
  const Matrix a = random_matrix(3, 4, rng);
  const Matrix b = random_matrix(4, 2, rng);
  const Matrix c = random_matrix(3, 4, rng);
  const Matrix r = random_matrix(1, 4, rng);
  const auto B = ag::constant(b);
  const auto C = ag::constant(c);
  const auto R = ag::constant(r);

  SUBCASE("matmul left") { check_unary([&](const Var& x) { return ag::matmul(x, B); }, a, 1); }
  SUBCASE("matmul right") {
    check_unary([&](const Var& x) { return ag::matmul(ag::constant(a), x); }, b, 2);
  }
  SUBCASE("add and sub") {
    check_unary([&](const Var& x) { return ag::sub(ag::add(x, C), ag::mul(x, x)); }, a, 3);
  }
  SUBCASE("add_row") {
    check_unary([&](const Var& x) { return ag::add_row(ag::constant(a), x); }, r, 4);
    check_unary([&](const Var& x) { return ag::add_row(x, R); }, a, 5);
  }
  SUBCASE("scale and add_scalar") {
    check_unary([&](const Var& x) { return ag::add_scalar(ag::scale(x, -2.5), 1.0); }, a, 6);
  }
  SUBCASE("tanh and sigmoid") {
    check_unary([&](const Var& x) { return ag::tanh(x); }, a, 7);
    check_unary([&](const Var& x) { return ag::sigmoid(x); }, a, 8);
  }
  SUBCASE("slicing and stacking") {
    check_unary([&](const Var& x) { return ag::slice_cols(x, 1, 2); }, a, 9);
    check_unary([&](const Var& x) { return ag::row(x, 2); }, a, 10);
    check_unary([&](const Var& x) { return ag::concat_rows({x, ag::row(x, 0), C}); }, a, 11);
  }
  SUBCASE("gather with repeats") {
    check_unary([&](const Var& x) { return ag::gather_rows(x, {2, 0, 2, 1}); }, a, 12);
  }
  SUBCASE("reductions") {
    check_unary([&](const Var& x) { return ag::sum_rows(x); }, a, 13);
    check_unary([&](const Var& x) { return ag::mean_rows(x); }, a, 14);
    check_unary([&](const Var& x) { return ag::sum(ag::mul(x, x)); }, a, 15);
    check_unary([&](const Var& x) { return ag::dot(x, C); }, a, 16);
  }
  SUBCASE("softmax") { check_unary([&](const Var& x) { return ag::softmax_rows(x); }, a, 17); }
  SUBCASE("cross entropy") {
    check_unary([&](const Var& x) { return ag::cross_entropy_rows(x, {0, 3, 1}); }, a, 18);
  }
  SUBCASE("l2 normalize") {
    check_unary([&](const Var& x) { return ag::l2_normalize(x); }, r, 19);
    check_unary([&](const Var& x) { return ag::l2_normalize(x); }, a, 20);
  }
}

TEST_CASE("forward values") {
  Matrix logits(1, 3);
  logits << 1.0, 2.0, 3.0;
  const auto sm = ag::softmax_rows(ag::constant(logits));
  CHECK(sm.value().sum() == doctest::Approx(1.0));
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(ag::cross_entropy_rows(ag::constant(logits), {2}).scalar() == doctest::Approx(lse - 3.0));
  Matrix big(1, 2);
  big << 1000.0, 0.0;
  CHECK(std::isfinite(ag::cross_entropy_rows(ag::constant(big), {1}).scalar()));
  CHECK(ag::l2_normalize(ag::constant(logits)).value().norm() == doctest::Approx(1.0));
}

TEST_CASE("shared subgraph accumulates gradients") {
  auto x = Var::parameter(Matrix::Constant(1, 1, 3.0));
  const auto y = ag::mul(x, x);
  ag::add(y, y).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(12.0));
  x.zero_grad();
  ag::sum(x).backward();
  CHECK(x.grad()(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("no-grad guard drops the graph") {
  auto x = Var::parameter(Matrix::Ones(2, 2));
  {
    ag::NoGradGuard guard;
    const auto y = ag::scale(x, 2.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.node()->parents.empty());
  }
  CHECK(ag::scale(x, 2.0).requires_grad());
}

TEST_CASE("constants receive no gradient") {
  auto c = ag::constant(Matrix::Ones(1, 2));
  auto p = Var::parameter(Matrix::Ones(1, 2));
  ag::dot(c, p).backward();
  CHECK(p.grad().sum() == doctest::Approx(2.0));
  CHECK_FALSE(c.requires_grad());
}

}  // TEST_SUITE
