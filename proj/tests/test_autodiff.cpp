#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "mftnet/grad_check.hpp"
#include "test_util.hpp"

using namespace mftnet;
using testutil::random_tensor;

namespace {

constexpr double kEps = 1e-6;
constexpr double kTol = 1e-6;

// Weighted sum so that every output entry carries a distinct, O(1) gradient.
Var<double> weighted_sum(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Graph<double>& g = y.graph();
  return ops::sum(ops::mul(y, g.constant(random_tensor<double>(y.shape(), rng))));
}

double check_unary(std::function<Var<double>(Var<double>)> op, Shape shape, std::uint64_t seed = 1,
                   double lo_shift = 0.0) {
  std::mt19937_64 rng(seed);
  Tensor<double> x = random_tensor<double>(shape, rng);
  for (auto& v : x.values()) v += lo_shift;
  return grad_check<double>([&](Graph<double>&, Var<double> in) { return weighted_sum(op(in), seed + 99); }, x, kEps);
}

}  // namespace

TEST_CASE("primitive values") {
  Graph<double> g(false);
  auto a = g.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  auto b = g.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  auto mm = ops::matmul(a, b);
  CHECK(mm.value().storage() == std::vector<double>{19, 22, 43, 50});
  auto bc = ops::add(a, g.constant(Tensor<double>({2}, {10, 20})));
  CHECK(bc.value().storage() == std::vector<double>{11, 22, 13, 24});
  auto tr = ops::transpose(a, {1, 0});
  CHECK(tr.value().storage() == std::vector<double>{1, 3, 2, 4});
  auto rs = ops::reduce_sum(a, {1});
  CHECK(rs.shape() == Shape{2, 1});
  CHECK(rs.value().storage() == std::vector<double>{3, 7});
  auto mx = ops::reduce_max(a, 0);
  CHECK(mx.value().storage() == std::vector<double>{3, 4});
  std::vector<Var<double>> parts{a, b};
  auto cat = ops::concat<double>(parts, 1);
  CHECK(cat.shape() == Shape{2, 4});
  CHECK(cat.value().storage() == std::vector<double>{1, 2, 5, 6, 3, 4, 7, 8});
  auto sl = ops::slice(cat, 1, 1, 2);
  CHECK(sl.value().storage() == std::vector<double>{2, 5, 4, 7});
  CHECK_THROWS_AS(ops::add(a, g.constant(Tensor<double>({3}))), ShapeError);
  CHECK_THROWS_AS(ops::matmul(a, g.constant(Tensor<double>({3, 2}))), ShapeError);
}

TEST_CASE("primitive gradients match central differences") {
  CHECK(check_unary([](Var<double> x) { return ops::exp(x); }, {3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::log(x); }, {3, 4}, 2, 5.0) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::tanh(x); }, {3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::erf(x); }, {3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::mul(x, x); }, {5}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::transpose(x, {2, 0, 1}); }, {2, 3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::reshape(x, {6, 4}); }, {2, 3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::reduce_mean(x, {0, 2}); }, {2, 3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::reduce_sum(x, {1}); }, {2, 3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::reduce_max(x, 1); }, {2, 5, 3}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::slice(x, 2, 1, 2); }, {2, 3, 4}) <= kTol);
  CHECK(check_unary([](Var<double> x) { return ops::scale(x, 2.5); }, {4}) <= kTol);
  CHECK(check_unary(
            [](Var<double> x) {
              std::vector<Var<double>> parts{x, ops::exp(x)};
              return ops::concat<double>(parts, 1);
            },
            {2, 3}) <= kTol);
}

TEST_CASE("binary and broadcast gradients") {
  std::mt19937_64 rng(5);
  Parameter<double> a{"a", random_tensor<double>({2, 3, 4}, rng)};
  Parameter<double> b{"b", random_tensor<double>({3, 1}, rng)};
  Parameter<double> w{"w", random_tensor<double>({4, 5}, rng)};
  Parameter<double> s{"s", random_tensor<double>({1}, rng)};
  std::vector<Parameter<double>*> ps{&a, &b, &w, &s};
  auto f = [&](Graph<double>& g) {
    auto x = ops::add(g.parameter(a), g.parameter(b));
    x = ops::mul(x, ops::sub(g.parameter(a), g.parameter(b)));
    x = ops::matmul(x, g.parameter(w));
    x = ops::scale(x, g.parameter(s));
    return weighted_sum(x, 11);
  };
  const auto r = grad_check_parameters<double>(f, ps, kEps);
  CAPTURE(r.worst);
  CHECK(r.max_relative_error <= kTol);
}

TEST_CASE("batched matmul gradient") {
  std::mt19937_64 rng(8);
  Parameter<double> a{"a", random_tensor<double>({2, 3, 4}, rng)};
  Parameter<double> b{"b", random_tensor<double>({2, 4, 2}, rng)};
  std::vector<Parameter<double>*> ps{&a, &b};
  auto f = [&](Graph<double>& g) { return weighted_sum(ops::matmul(g.parameter(a), g.parameter(b)), 3); };
  CHECK(grad_check_parameters<double>(f, ps, kEps).max_relative_error <= kTol);
}

TEST_CASE("reused parameters accumulate") {
  Parameter<double> p{"p", Tensor<double>({1}, 3.0)};
  Graph<double> g;
  auto v1 = g.parameter(p);
  auto v2 = g.parameter(p);
  CHECK(v1.id() == v2.id());
  auto grads = g.backward(ops::mul(v1, v2));
  CHECK(grads.at("p")[0] == doctest::Approx(6.0));
}

TEST_CASE("non-trainable parameters and constants receive no gradient") {
  Parameter<double> p{"p", Tensor<double>({2}, 1.0), false};
  Parameter<double> q{"q", Tensor<double>({2}, 2.0)};
  Graph<double> g;
  auto grads = g.backward(ops::sum(ops::mul(g.parameter(p), g.parameter(q))));
  CHECK(grads.count("p") == 0);
  CHECK(grads.at("q")[0] == doctest::Approx(1.0));
}

TEST_CASE("tape misuse is reported") {
  Graph<double> g;
  auto x = g.input(Tensor<double>({2}, 1.0), "x");
  CHECK_THROWS_AS(g.backward(x), AutodiffError);
  auto s = ops::sum(x);
  g.backward(s);
  CHECK_THROWS_AS(g.backward(s), AutodiffError);

  Graph<double> nog(false);
  auto y = ops::sum(nog.input(Tensor<double>({2}, 1.0), "y"));
  CHECK_THROWS_AS(nog.backward(y), AutodiffError);

  Graph<double> g1, g2;
  CHECK_THROWS_AS(ops::add(g1.constant(Tensor<double>({1})), g2.constant(Tensor<double>({1}))), AutodiffError);
  CHECK_THROWS_AS(Var<double>().value(), AutodiffError);
}

TEST_CASE("debug checks name the failing op") {
  set_debug_checks(true);
  Graph<double> g(false);
  auto x = g.constant(Tensor<double>({2}, -1.0));
  try {
    ops::log(x);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(std::string(e.what()).find("log") != std::string::npos);
  }
  set_debug_checks(false);
  CHECK_NOTHROW(ops::log(x));
}

TEST_CASE("gradient checker detects nondeterminism") {
  int calls = 0;
  InputFn<double> f = [&](Graph<double>&, Var<double> x) { return ops::scale(ops::sum(x), double(++calls)); };
  CHECK_THROWS_AS(grad_check<double>(f, Tensor<double>({2}, 1.0), 1e-6), NonDeterministicError);
}

TEST_CASE("relative error definition") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(0.0, 0.0) == 0.0);
}
