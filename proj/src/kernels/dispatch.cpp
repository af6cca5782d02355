#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "mftnet/kernels.hpp"

namespace mftnet::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(MFTNET_WITH_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("MFTNET_KERNELS"); env != nullptr && *env != '\0') {
    const Backend requested = parse_backend(env);
    if (backend_available(requested)) return requested;
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& active_slot() {
  static std::atomic<Backend> slot{initial_backend()};
  return slot;
}

}  // namespace

bool backend_available(Backend backend) {
  switch (backend) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return cpu_has_avx2();
  }
  return false;
}

Backend active_backend() { return active_slot().load(std::memory_order_relaxed); }

void set_backend(Backend backend) {
  if (!backend_available(backend)) {
    throw std::invalid_argument("kernel backend '" + std::string(backend_name(backend)) +
                                "' is not available on this machine");
  }
  active_slot().store(backend, std::memory_order_relaxed);
}

std::string_view backend_name(Backend backend) {
  switch (backend) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "unknown";
}

Backend parse_backend(std::string_view name) {
  if (name == "scalar") return Backend::scalar;
  if (name == "avx2") return Backend::avx2;
  throw std::invalid_argument("unknown kernel backend '" + std::string(name) + "'");
}

template <typename Real>
const KernelTable<Real>& table(Backend backend) {
#if defined(MFTNET_WITH_AVX2)
  if (backend == Backend::avx2) return detail::avx2_table<Real>();
#else
  (void)backend;
#endif
  return detail::scalar_table<Real>();
}

template const KernelTable<float>& table<float>(Backend);
template const KernelTable<double>& table<double>(Backend);

}  // namespace mftnet::kernels
