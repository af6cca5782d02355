#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <string>

#include "mftnet/autodiff.hpp"

namespace mftnet {

class NonDeterministicError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// f maps the bound input to a single-element Var.
template <typename Real>
using InputFn = std::function<Var<Real>(Graph<Real>&, Var<Real>)>;

// f builds a single-element Var from parameters it binds itself.
template <typename Real>
using ParamFn = std::function<Var<Real>(Graph<Real>&)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst;  // "<name>[<flat index>]" of the worst entry
};

// Compares the tape gradient of f at x against central differences with
// step epsilon. Returns max_i |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-12). Throws NonDeterministicError if two evaluations of f at
// x differ bitwise.
template <typename Real>
double grad_check(const InputFn<Real>& f, const Tensor<Real>& x, double epsilon);

template <typename Real>
GradCheckResult grad_check_input(const InputFn<Real>& f, const Tensor<Real>& x, double epsilon);

// Same check over every element of every listed parameter. Parameters are
// perturbed in place and restored.
template <typename Real>
GradCheckResult grad_check_parameters(const ParamFn<Real>& f, std::span<Parameter<Real>* const> params,
                                      double epsilon);

double relative_error(double analytic, double numeric);

}  // namespace mftnet
