#pragma once

// Inner-loop arithmetic used by every convolution, projection and reduction.
//
// Two implementations exist: a portable scalar reference and an AVX2/FMA
// variant. The active table is chosen once at startup from the CPU's feature
// flags and may be overridden with MFTNET_KERNELS=scalar|avx2 or
// set_backend(). Results of the two backends agree to rounding, not bitwise;
// a given backend is bitwise deterministic.

#include <cstddef>
#include <string_view>

namespace mftnet::kernels {

enum class Backend { scalar, avx2 };

template <typename Real>
struct KernelTable {
  Backend backend;
  // sum_i a[i] * b[i]
  Real (*dot)(const Real* a, const Real* b, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(Real alpha, const Real* x, Real* y, std::size_t n);
  // sum_i x[i]
  Real (*sum)(const Real* x, std::size_t n);
  // x[i] *= alpha
  void (*scal)(Real alpha, Real* x, std::size_t n);
  // out[i] = a[i] * b[i]
  void (*mul)(const Real* a, const Real* b, Real* out, std::size_t n);
};

bool backend_available(Backend backend);
Backend active_backend();
// Throws std::invalid_argument if the backend is not compiled in or the CPU
// lacks the instructions.
void set_backend(Backend backend);
std::string_view backend_name(Backend backend);
Backend parse_backend(std::string_view name);

template <typename Real>
const KernelTable<Real>& table(Backend backend);

template <typename Real>
const KernelTable<Real>& active() {
  return table<Real>(active_backend());
}

template <typename Real>
inline Real dot(const Real* a, const Real* b, std::size_t n) {
  return active<Real>().dot(a, b, n);
}

template <typename Real>
inline void axpy(Real alpha, const Real* x, Real* y, std::size_t n) {
  active<Real>().axpy(alpha, x, y, n);
}

template <typename Real>
inline Real sum(const Real* x, std::size_t n) {
  return active<Real>().sum(x, n);
}

template <typename Real>
inline void scal(Real alpha, Real* x, std::size_t n) {
  active<Real>().scal(alpha, x, n);
}

template <typename Real>
inline void mul(const Real* a, const Real* b, Real* out, std::size_t n) {
  active<Real>().mul(a, b, out, n);
}

namespace detail {
template <typename Real>
const KernelTable<Real>& scalar_table();
template <typename Real>
const KernelTable<Real>& avx2_table();
template <>
const KernelTable<float>& avx2_table<float>();
template <>
const KernelTable<double>& avx2_table<double>();
}  // namespace detail

}  // namespace mftnet::kernels
