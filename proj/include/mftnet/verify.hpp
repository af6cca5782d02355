#pragma once

// End-to-end finite-difference check of a whole model's loss.

#include <cstdint>
#include <string>
#include <vector>

#include "mftnet/model.hpp"

namespace mftnet {

struct ParameterCheck {
  std::string name;
  double max_relative_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  // Every analytic entry is below 1e-12 and every numeric entry below 1e-8:
  // the loss does not depend on this tensor at all (e.g. a shift removed by
  // a later normalization). Such tensors are reported, not scored.
  bool structurally_zero = false;
};

struct ModelGradCheckReport {
  std::string mode;  // "infer" or "train-bn"
  double max_relative_error = 0.0;
  std::string worst;
  double input_relative_error = 0.0;
  std::vector<ParameterCheck> parameters;
  std::size_t checked_entries = 0;
};

// Cross-entropy of a batch of two random trials through `cfg`'s model, with
// dropout off. train_bn selects batch-moment normalization instead of the
// running moments.
template <typename Real>
ModelGradCheckReport model_grad_check(const ModelConfig& cfg, bool train_bn, std::uint64_t seed, double epsilon);

}  // namespace mftnet
