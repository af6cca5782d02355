#pragma once

// EEG-MFTNet and its ablation variants.
//
// Input trials are [B, C, T]. Internally the network works on [B, F, C, T]
// feature maps; the Transformer stream sees each time step as a C-wide
// token.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mftnet/layers.hpp"

namespace mftnet {

enum class Variant { full, no_transformer, no_multiscale, eegnet_baseline };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);  // throws std::invalid_argument
bool has_transformer(Variant v);
bool has_multiscale(Variant v);

struct ModelConfig {
  std::size_t electrodes = 32;
  std::size_t samples = 1000;
  std::size_t classes = 2;
  std::vector<std::size_t> branch_kernels{5, 9, 13, 29, 61, 125};
  std::size_t branch_filters = 8;
  double branch_dropout = 0.5;
  std::size_t attention_heads = 2;
  std::size_t ff_dim = 32;
  double transformer_dropout = 0.2;
  std::size_t depth_multiplier = 2;
  std::size_t pool1 = 4;
  std::size_t pool2 = 8;
  std::size_t separable_kernel = 16;
  std::size_t separable_filters = 16;
  double spatial_dropout = 0.3;
  double dense_max_norm = 0.25;
  // Temporal kernel of the single-scale block used by no-multiscale.
  std::size_t single_scale_kernel = 125;
  // Temporal kernel of the EEGNet baseline (147 reproduces its 3,274
  // trainable parameters).
  std::size_t baseline_kernel = 147;
  Variant variant = Variant::full;

  // Throws std::invalid_argument naming the offending field.
  void validate() const;

  std::size_t pooled_samples() const { return samples / pool1 / pool2; }
  std::size_t flat_features() const { return separable_filters * pooled_samples(); }
  // Fused-channel width entering the spatial stage.
  std::size_t fused_width() const;
};

std::string model_config_to_json(const ModelConfig& cfg, int indent = 2);
// Missing keys keep their defaults; unknown keys are rejected.
ModelConfig model_config_from_json(std::string_view text);

// Reduced configuration for end-to-end gradient checks (C=4, T=32).
ModelConfig gradcheck_config(Variant v = Variant::full);

struct ForwardContext {
  layers::Mode mode = layers::Mode::infer;
  // In train mode, dropout can be switched off so batch-norm still uses batch
  // moments but the pass is deterministic.
  bool dropout = true;
  layers::Rng* rng = nullptr;
  // Full variant only: drop the Transformer channel from the fusion and run
  // the spatial stage on the leading slices of its weights.
  bool exclude_transformer = false;

  bool dropout_active() const { return mode == layers::Mode::train && dropout; }
};

template <typename Real>
struct ForwardResult {
  Var<Real> logits;       // [B, N]
  Var<Real> probs;        // [B, N]
  Var<Real> conv_stream;  // [B, 48, C, T] (or the single-scale/baseline block)
  Var<Real> transformer;  // [B, 1, C, T]; invalid without a Transformer
  Var<Real> fused;        // [B, W, C, T] after layer norm
  Var<Real> spatial;      // [B, W*D, 1, T / pool1] after the first pooling
  Var<Real> flat;         // [B, flat_features]
  Var<Real> attention;    // [B, H, T, T]; invalid without a Transformer
};

struct ParameterEntry {
  std::string name;
  Shape shape;
  std::size_t count;
  bool trainable;
};

struct ParameterCount {
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
  std::vector<ParameterEntry> breakdown;
};

template <typename Real>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::vector<layers::LayerParams<Real>> layers);

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }

  std::vector<layers::LayerParams<Real>>& layers() { return layers_; }
  const std::vector<layers::LayerParams<Real>>& layers() const { return layers_; }
  bool has_layer(std::string_view name) const;
  layers::LayerParams<Real>& layer(std::string_view name);
  const layers::LayerParams<Real>& layer(std::string_view name) const;

  // Every trainable parameter, in construction order.
  std::vector<Parameter<Real>*> trainable_parameters();
  // Trainable weights followed by non-trainable buffers, in construction
  // order. The checkpoint and snapshot order.
  std::vector<Parameter<Real>*> all_parameters();
  std::vector<const Parameter<Real>*> all_parameters() const;
  Parameter<Real>& parameter(std::string_view full_name);

  // x: [B, C, T].
  ForwardResult<Real> forward(Graph<Real>& g, Var<Real> x, const ForwardContext& ctx);

  // Inference convenience (no tape): returns probabilities [B, N].
  Tensor<Real> predict(const Tensor<Real>& x);
  Tensor<Real> predict_logits(const Tensor<Real>& x);

  // Copies of every parameter value, in all_parameters() order.
  std::vector<Tensor<Real>> snapshot() const;
  void restore(const std::vector<Tensor<Real>>& values);

  // Applies each constrained weight's max-norm projection.
  void apply_constraints();

 private:
  ModelConfig config_;
  std::vector<layers::LayerParams<Real>> layers_;
};

template <typename Real>
Model<Real> build_model(const ModelConfig& config, std::uint64_t seed);

// build_model with `variant` substituted into the config.
template <typename Real>
Model<Real> build_ablation(ModelConfig config, Variant variant, std::uint64_t seed);

template <typename Real>
ParameterCount count_parameters(const Model<Real>& model);

// Trainable count derived from the config alone through the per-layer
// analytic formulas (no model is constructed).
std::size_t analytic_parameter_count(const ModelConfig& config);

// Stages, exposed for structural tests. x is [B, 1, C, T].
template <typename Real>
Var<Real> multi_scale_block(Model<Real>& model, Graph<Real>& g, Var<Real> x, const ForwardContext& ctx);
template <typename Real>
Var<Real> single_branch(Model<Real>& model, Graph<Real>& g, Var<Real> x, std::size_t branch,
                        const ForwardContext& ctx);
// Returns the scaled stream output [B, 1, C, T]; attention weights via out.
template <typename Real>
Var<Real> transformer_stream(Model<Real>& model, Graph<Real>& g, Var<Real> x, const ForwardContext& ctx,
                             Var<Real>* attention = nullptr);
template <typename Real>
Var<Real> fuse(Model<Real>& model, Graph<Real>& g, Var<Real> conv_out, Var<Real> trans_out);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace mftnet
