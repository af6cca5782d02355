#pragma once

// Layer primitives with hand-written backward rules.
//
// Activation layout throughout is maps-first: [B, F, C, T] (batch, feature
// map, electrode, time), so the time axis is contiguous and the temporal
// convolutions run over unit-stride rows. Transformer tokens are [B, T, d].

#include <cstddef>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "mftnet/autodiff.hpp"

namespace mftnet::layers {

using Rng = std::mt19937_64;

enum class Mode { train, infer };
enum class DropoutStyle { element, spatial };
enum class GeluMode { erf, tanh };

// Global GELU definition switch. erf is the default.
void set_gelu_mode(GeluMode mode);
GeluMode gelu_mode();

inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kBatchNormEps = 1e-3;
inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kEluAlpha = 1.0;

// "Same" padding for a length-k kernel: total k-1, left (k-1)/2, right the
// remainder. Odd k pads symmetrically; k=16 pads 7 left and 8 right.
inline std::size_t same_pad_left(std::size_t k) { return (k - 1) / 2; }

// One layer's parameters. `weights` are trainable, `state` holds
// non-trainable buffers (batch-norm running moments).
template <typename Real>
struct LayerParams {
  std::string name;
  std::string kind;
  std::vector<Parameter<Real>> weights;
  std::vector<Parameter<Real>> state;
  std::map<std::string, double> hyper;

  Parameter<Real>& weight(std::string_view short_name);
  const Parameter<Real>& weight(std::string_view short_name) const;
  Parameter<Real>& buffer(std::string_view short_name);
  std::size_t trainable_count() const;
  std::size_t state_count() const;
};

// Trainable-parameter count as a function of kind, hyperparameters and
// input shape ([B, F, C, T] for convolutional kinds, [..., features] for
// dense kinds) alone. Independent of any constructed LayerParams.
std::size_t analytic_trainable_count(std::string_view kind, const std::map<std::string, double>& hyper,
                                     const Shape& input_shape);

// Factories. Kernels and dense weights use a fan-based truncated Gaussian
// (std = sqrt(2 / (fan_in + fan_out)), resampled beyond two std); biases and
// norm shifts start at 0, norm scales at 1.
template <typename Real>
LayerParams<Real> make_conv_temporal(std::string name, std::size_t in_maps, std::size_t filters,
                                     std::size_t kernel, Rng& rng);
template <typename Real>
LayerParams<Real> make_depthwise_spatial(std::string name, std::size_t in_maps, std::size_t depth,
                                         std::size_t electrodes, Rng& rng);
template <typename Real>
LayerParams<Real> make_separable_temporal(std::string name, std::size_t in_maps, std::size_t out_maps,
                                          std::size_t kernel, Rng& rng);
template <typename Real>
LayerParams<Real> make_batch_norm(std::string name, std::size_t maps);
template <typename Real>
LayerParams<Real> make_layer_norm(std::string name, std::size_t width);
template <typename Real>
LayerParams<Real> make_dense(std::string name, std::size_t in_features, std::size_t units, bool bias,
                             double max_norm, Rng& rng);
template <typename Real>
LayerParams<Real> make_attention(std::string name, std::size_t model_dim, std::size_t heads, Rng& rng);
template <typename Real>
LayerParams<Real> make_scalars(std::string name, const std::vector<std::string>& names, Real init);

// --- Convolutions -------------------------------------------------------

// x [B, Fin, C, T], kernel [F, Fin, k] -> [B, F, C, T]. The same 1 x k
// kernel slides along time at every electrode row; zero "same" padding.
// Requires odd k <= T.
template <typename Real>
Var<Real> conv_temporal(Var<Real> x, Var<Real> kernel);

// x [B, Fin, C, T], kernel [Fin, D, C] -> [B, Fin*D, 1, T]. Output map
// f*D + d is the kernel-weighted sum over electrodes of input map f.
template <typename Real>
Var<Real> depthwise_conv_spatial(Var<Real> x, Var<Real> kernel);

// x [B, F, H, T], kernel [F, k] -> [B, F, H, T]; per-map temporal filter,
// any k <= T, same padding.
template <typename Real>
Var<Real> depthwise_conv_temporal(Var<Real> x, Var<Real> kernel);

// x [B, Fin, H, T], kernel [Fout, Fin] -> [B, Fout, H, T].
template <typename Real>
Var<Real> pointwise_conv(Var<Real> x, Var<Real> kernel);

// Depthwise [F, k] followed by pointwise [Fout, F]. Requires T >= k.
template <typename Real>
Var<Real> separable_conv_temporal(Var<Real> x, Var<Real> depthwise, Var<Real> pointwise);

// --- Normalization ------------------------------------------------------

// Normalizes each feature map (axis 1) with statistics pooled over every
// other axis. Train mode uses batch moments (biased variance) and updates the
// running moments with `momentum`; infer mode uses the running moments.
template <typename Real>
Var<Real> batch_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Tensor<Real>& running_mean,
                     Tensor<Real>& running_var, Mode mode, double momentum = kBatchNormMomentum,
                     double eps = kBatchNormEps);

// Zero mean / unit variance over `axis` at every other position, then the
// per-entry affine gamma/beta (both of extent shape[axis]).
template <typename Real>
Var<Real> layer_norm(Var<Real> x, std::size_t axis, Var<Real> gamma, Var<Real> beta,
                     double eps = kLayerNormEps);

// --- Activations --------------------------------------------------------

template <typename Real>
Var<Real> elu(Var<Real> x);
template <typename Real>
Var<Real> gelu(Var<Real> x);
// Max-subtracted softmax over the last axis.
template <typename Real>
Var<Real> softmax(Var<Real> x);

// --- Pooling / regularization ------------------------------------------

// Non-overlapping windows of length p along the last axis; trailing
// remainder samples are dropped.
template <typename Real>
Var<Real> avg_pool_temporal(Var<Real> x, std::size_t pool);

// Inverted dropout. Infer mode and rate 0 return x unchanged. Spatial style
// zeroes whole maps (one draw per leading (batch, map) pair of a rank-4
// tensor); element style draws per entry.
template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Mode mode, DropoutStyle style, Rng& rng);

// --- Dense --------------------------------------------------------------

// x [..., in], weight [out, in], bias [out] -> [..., out]. Pass an invalid
// Var for no bias.
template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> weight, Var<Real> bias);

// Rescales each row of a [units, in] weight whose L2 norm exceeds c onto the
// ball of radius c.
template <typename Real>
void project_max_norm(Tensor<Real>& weight, double c);

// --- Attention ----------------------------------------------------------

template <typename Real>
struct AttentionResult {
  Var<Real> output;   // [B, T, d]
  Var<Real> weights;  // [B, H, T, T], rows sum to one
};

// Multi-head self-attention over tokens [B, T, d] using the projections of
// a make_attention() layer: per-head dimension d/H, softmax over keys scaled
// by 1/sqrt(d/H), concatenated heads through the output projection. No
// positional encoding.
template <typename Real>
AttentionResult<Real> multi_head_attention(Var<Real> tokens, LayerParams<Real>& attn);

}  // namespace mftnet::layers
