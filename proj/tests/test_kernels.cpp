#include <cmath>
#include <stdexcept>
#include <random>
#include <vector>

#include "doctest.h"
#include "mftnet/kernels.hpp"

using namespace mftnet::kernels;

namespace {

template <typename Real>
std::vector<Real> randv(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Real> v(n);
  for (auto& x : v) x = Real(u(rng));
  return v;
}

template <typename Real>
void check_equivalence(double tol) {
  const auto& s = table<Real>(Backend::scalar);
  const auto& a = table<Real>(Backend::avx2);
  std::mt19937_64 rng(7);
  for (std::size_t n : {0, 1, 2, 3, 4, 5, 7, 8, 9, 15, 16, 17, 31, 32, 33, 63, 64, 100, 1000, 4099}) {
    CAPTURE(n);
    auto x = randv<Real>(n, rng), y = randv<Real>(n, rng);
    const double scale = std::max<double>(1.0, double(n));
    CHECK(std::abs(double(s.dot(x.data(), y.data(), n)) - double(a.dot(x.data(), y.data(), n))) <= tol * scale);
    CHECK(std::abs(double(s.sum(x.data(), n)) - double(a.sum(x.data(), n))) <= tol * scale);

    auto y1 = y, y2 = y;
    s.axpy(Real(0.37), x.data(), y1.data(), n);
    a.axpy(Real(0.37), x.data(), y2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(double(y1[i]) - double(y2[i])) <= tol);

    auto x1 = x, x2 = x;
    s.scal(Real(-1.5), x1.data(), n);
    a.scal(Real(-1.5), x2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(x1[i] == x2[i]);

    std::vector<Real> m1(n), m2(n);
    s.mul(x.data(), y.data(), m1.data(), n);
    a.mul(x.data(), y.data(), m2.data(), n);
    for (std::size_t i = 0; i < n; ++i) CHECK(m1[i] == m2[i]);
  }
}

}  // namespace

TEST_CASE("scalar kernels match naive loops") {
  const auto& s = table<double>(Backend::scalar);
  std::vector<double> x{1, 2, 3, 4, 5}, y{2, -1, 0.5, 3, -2};
  CHECK(s.dot(x.data(), y.data(), 5) == doctest::Approx(2 - 2 + 1.5 + 12 - 10));
  CHECK(s.sum(x.data(), 5) == 15.0);
  s.axpy(2.0, x.data(), y.data(), 5);
  CHECK(y == std::vector<double>{4, 3, 6.5, 11, 8});
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  if (!backend_available(Backend::avx2)) {
    MESSAGE("avx2 backend unavailable on this machine; equivalence not exercised");
    return;
  }
  check_equivalence<float>(1e-5);
  check_equivalence<double>(1e-12);
}

TEST_CASE("avx2 kernels are deterministic run to run") {
  if (!backend_available(Backend::avx2)) return;
  std::mt19937_64 rng(3);
  auto x = randv<float>(1031, rng), y = randv<float>(1031, rng);
  const auto& a = table<float>(Backend::avx2);
  const float d1 = a.dot(x.data(), y.data(), x.size());
  const float d2 = a.dot(x.data(), y.data(), x.size());
  CHECK(d1 == d2);
}

TEST_CASE("backend selection") {
  CHECK(parse_backend("scalar") == Backend::scalar);
  CHECK(parse_backend("avx2") == Backend::avx2);
  CHECK_THROWS_AS(parse_backend("neon"), std::invalid_argument);
  CHECK(backend_name(Backend::scalar) == "scalar");
  const Backend before = active_backend();
  set_backend(Backend::scalar);
  CHECK(active_backend() == Backend::scalar);
  CHECK(active<double>().backend == Backend::scalar);
  set_backend(before);
  CHECK(active_backend() == before);
}
