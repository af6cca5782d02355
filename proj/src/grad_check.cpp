#include "mftnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mftnet {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
  return std::abs(analytic - numeric) / denom;
}

namespace {

template <typename Real>
Real eval_input(const InputFn<Real>& f, const Tensor<Real>& x) {
  Graph<Real> g(false);
  Var<Real> out = f(g, g.constant(x));
  if (out.numel() != 1) throw AutodiffError("grad_check: f must return a single value");
  return out.value()[0];
}

template <typename Real>
Real eval_params(const ParamFn<Real>& f) {
  Graph<Real> g(false);
  Var<Real> out = f(g);
  if (out.numel() != 1) throw AutodiffError("grad_check: f must return a single value");
  return out.value()[0];
}

template <typename Real>
void require_deterministic(Real first, Real second) {
  if (std::memcmp(&first, &second, sizeof(Real)) != 0) {
    throw NonDeterministicError("grad_check: f is not deterministic (disable dropout)");
  }
}

}  // namespace

template <typename Real>
GradCheckResult grad_check_input(const InputFn<Real>& f, const Tensor<Real>& x, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  if (!x.all_finite()) throw std::invalid_argument("grad_check: input is not finite");
  require_deterministic(eval_input(f, x), eval_input(f, x));

  Graph<Real> g(true);
  Var<Real> xv = g.input(x, "x");
  Var<Real> out = f(g, xv);
  g.backward(out);
  const Tensor<Real> analytic = g.grad(xv).is_null() ? Tensor<Real>(x.shape()) : g.grad(xv);

  GradCheckResult result;
  Tensor<Real> probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + static_cast<Real>(epsilon);
    const double plus = eval_input(f, probe);
    probe[i] = x[i] - static_cast<Real>(epsilon);
    const double minus = eval_input(f, probe);
    probe[i] = x[i];
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double err = relative_error(analytic[i], numeric);
    if (result.worst.empty() || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst = "x[" + std::to_string(i) + "]";
    }
  }
  return result;
}

template <typename Real>
double grad_check(const InputFn<Real>& f, const Tensor<Real>& x, double epsilon) {
  return grad_check_input(f, x, epsilon).max_relative_error;
}

template <typename Real>
GradCheckResult grad_check_parameters(const ParamFn<Real>& f, std::span<Parameter<Real>* const> params,
                                      double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("grad_check: epsilon must be positive");
  require_deterministic(eval_params(f), eval_params(f));

  Graph<Real> g(true);
  GradientMap<Real> grads = g.backward(f(g));

  GradCheckResult result;
  for (Parameter<Real>* p : params) {
    if (!p->trainable) continue;
    auto it = grads.find(p->name);
    const Tensor<Real> analytic = it == grads.end() ? Tensor<Real>(p->value.shape()) : it->second;
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const Real saved = p->value[i];
      p->value[i] = saved + static_cast<Real>(epsilon);
      const double plus = eval_params(f);
      p->value[i] = saved - static_cast<Real>(epsilon);
      const double minus = eval_params(f);
      p->value[i] = saved;
      const double numeric = (plus - minus) / (2.0 * epsilon);
      const double err = relative_error(analytic[i], numeric);
      if (result.worst.empty() || err > result.max_relative_error) {
        result.max_relative_error = err;
        result.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

template double grad_check(const InputFn<float>&, const Tensor<float>&, double);
template double grad_check(const InputFn<double>&, const Tensor<double>&, double);
template GradCheckResult grad_check_input(const InputFn<float>&, const Tensor<float>&, double);
template GradCheckResult grad_check_input(const InputFn<double>&, const Tensor<double>&, double);
template GradCheckResult grad_check_parameters(const ParamFn<float>&, std::span<Parameter<float>* const>, double);
template GradCheckResult grad_check_parameters(const ParamFn<double>&, std::span<Parameter<double>* const>, double);

}  // namespace mftnet
