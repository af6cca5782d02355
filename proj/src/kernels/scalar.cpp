#include "mftnet/kernels.hpp"

namespace mftnet::kernels::detail {
namespace {

template <typename Real>
Real dot_scalar(const Real* a, const Real* b, std::size_t n) {
  Real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename Real>
void axpy_scalar(Real alpha, const Real* x, Real* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename Real>
Real sum_scalar(const Real* x, std::size_t n) {
  Real acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <typename Real>
void scal_scalar(Real alpha, Real* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

template <typename Real>
void mul_scalar(const Real* a, const Real* b, Real* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace

template <typename Real>
const KernelTable<Real>& scalar_table() {
  static const KernelTable<Real> t{Backend::scalar, &dot_scalar<Real>, &axpy_scalar<Real>,
                                   &sum_scalar<Real>, &scal_scalar<Real>, &mul_scalar<Real>};
  return t;
}

template const KernelTable<float>& scalar_table<float>();
template const KernelTable<double>& scalar_table<double>();

}  // namespace mftnet::kernels::detail
