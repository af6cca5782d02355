#include "mftnet/verify.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mftnet/grad_check.hpp"
#include "mftnet/training.hpp"

namespace mftnet {

template <typename Real>
ModelGradCheckReport model_grad_check(const ModelConfig& cfg, bool train_bn, std::uint64_t seed, double epsilon) {
  Model<Real> model = build_model<Real>(cfg, seed);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<Real> x({2, cfg.electrodes, cfg.samples});
  for (auto& v : x.values()) v = Real(normal(rng));
  // Give the running moments and the fusion scalars non-trivial values so
  // every path is exercised.
  for (Parameter<Real>* p : model.all_parameters()) {
    if (p->name.find("running_var") != std::string::npos) {
      for (auto& v : p->value.values()) v = Real(0.5 + std::abs(normal(rng)));
    } else if (p->name.find("running_mean") != std::string::npos) {
      for (auto& v : p->value.values()) v = Real(0.1 * normal(rng));
    } else if (p->name.rfind("fusion.", 0) == 0 || p->name.find(".gamma") != std::string::npos ||
               p->name.find(".beta") != std::string::npos || p->name.find(".bias") != std::string::npos) {
      for (auto& v : p->value.values()) v += Real(0.1 * normal(rng));
    }
  }
  const std::vector<std::uint8_t> labels{0, 1};
  ForwardContext ctx;
  ctx.mode = train_bn ? layers::Mode::train : layers::Mode::infer;
  ctx.dropout = false;

  auto loss_of = [&](Graph<Real>& g, Var<Real> input) {
    auto r = model.forward(g, input, ctx);
    return cross_entropy(r.probs, std::span<const std::uint8_t>(labels));
  };

  ModelGradCheckReport report;
  report.mode = train_bn ? "train-bn" : "infer";
  report.input_relative_error = grad_check_input<Real>(loss_of, x, epsilon).max_relative_error;
  report.max_relative_error = report.input_relative_error;
  report.worst = "input";

  Graph<Real> g(true);
  GradientMap<Real> grads = g.backward(loss_of(g, g.constant(x)));
  auto eval = [&]() {
    Graph<Real> ng(false);
    return double(loss_of(ng, ng.constant(x)).value()[0]);
  };
  for (Parameter<Real>* p : model.trainable_parameters()) {
    ParameterCheck pc;
    pc.name = p->name;
    auto it = grads.find(p->name);
    std::vector<double> analytic(p->value.numel(), 0.0), numeric(p->value.numel());
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      if (it != grads.end()) analytic[i] = double(it->second[i]);
      const Real saved = p->value[i];
      p->value[i] = saved + Real(epsilon);
      const double plus = eval();
      p->value[i] = saved - Real(epsilon);
      const double minus = eval();
      p->value[i] = saved;
      numeric[i] = (plus - minus) / (2.0 * epsilon);
      pc.max_abs_analytic = std::max(pc.max_abs_analytic, std::abs(analytic[i]));
      pc.max_abs_numeric = std::max(pc.max_abs_numeric, std::abs(numeric[i]));
    }
    pc.structurally_zero = pc.max_abs_analytic < 1e-12 && pc.max_abs_numeric < 1e-8;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      const double err = relative_error(analytic[i], numeric[i]);
      pc.max_relative_error = std::max(pc.max_relative_error, err);
      if (!pc.structurally_zero && err > report.max_relative_error) {
        report.max_relative_error = err;
        report.worst = p->name + "[" + std::to_string(i) + "]";
      }
    }
    if (!pc.structurally_zero) report.checked_entries += analytic.size();
    report.parameters.push_back(pc);
  }
  report.checked_entries += x.numel();
  return report;
}

template ModelGradCheckReport model_grad_check<float>(const ModelConfig&, bool, std::uint64_t, double);
template ModelGradCheckReport model_grad_check<double>(const ModelConfig&, bool, std::uint64_t, double);

}  // namespace mftnet
