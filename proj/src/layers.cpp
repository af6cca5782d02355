#include "mftnet/layers.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "mftnet/kernels.hpp"

namespace mftnet::layers {

namespace {
std::atomic<GeluMode> g_gelu_mode{GeluMode::erf};

std::string shapes(std::string_view kind, const Shape& a, const Shape& b) {
  return std::string(kind) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
}

template <typename Real>
Graph<Real>& graph_of(Var<Real> a, Var<Real> b) {
  if (&a.graph() != &b.graph()) throw AutodiffError("operands recorded on different graphs");
  return a.graph();
}

template <typename Real>
Tensor<Real> truncated_gaussian(Shape shape, double fan_in, double fan_out, Rng& rng) {
  const double stddev = std::sqrt(2.0 / (fan_in + fan_out));
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor<Real> t(std::move(shape));
  for (auto& v : t.values()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<Real>(z * stddev);
  }
  return t;
}

template <typename Real>
Parameter<Real> trainable(std::string layer, std::string_view name, Tensor<Real> value, double max_norm = 0.0) {
  return Parameter<Real>{layer + "." + std::string(name), std::move(value), true, max_norm};
}

template <typename Real>
Parameter<Real> buffer_param(std::string layer, std::string_view name, Tensor<Real> value) {
  return Parameter<Real>{layer + "." + std::string(name), std::move(value), false, 0.0};
}

// out[t] += sum_j w[j] * x[t + j - pad_left], zero outside [0, T).
template <typename Real>
void correlate_same(const Real* x, const Real* w, std::size_t k, Real* out, std::size_t T) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(same_pad_left(k));
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(T);
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(len, len - shift);
    if (t1 > t0) kernels::axpy(w[j], x + t0 + shift, out + t0, static_cast<std::size_t>(t1 - t0));
  }
}

// Backward of correlate_same: gx += w (*) gout, gw[j] += <gout, shifted x>.
template <typename Real>
void correlate_same_backward(const Real* x, const Real* w, std::size_t k, const Real* gout, std::size_t T,
                             Real* gx, Real* gw) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(same_pad_left(k));
  const std::ptrdiff_t len = static_cast<std::ptrdiff_t>(T);
  for (std::size_t j = 0; j < k; ++j) {
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
    const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
    const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(len, len - shift);
    if (t1 <= t0) continue;
    const std::size_t n = static_cast<std::size_t>(t1 - t0);
    if (gx) kernels::axpy(w[j], gout + t0, gx + t0 + shift, n);
    if (gw) gw[j] += kernels::dot(gout + t0, x + t0 + shift, n);
  }
}

}  // namespace

void set_gelu_mode(GeluMode mode) { g_gelu_mode.store(mode); }
GeluMode gelu_mode() { return g_gelu_mode.load(); }

// ---------------------------------------------------------------------------
// LayerParams

template <typename Real>
Parameter<Real>& LayerParams<Real>::weight(std::string_view short_name) {
  const std::string full = name + "." + std::string(short_name);
  for (auto& p : weights) {
    if (p.name == full) return p;
  }
  throw std::out_of_range("layer " + name + " has no weight '" + std::string(short_name) + "'");
}

template <typename Real>
const Parameter<Real>& LayerParams<Real>::weight(std::string_view short_name) const {
  return const_cast<LayerParams*>(this)->weight(short_name);
}

template <typename Real>
Parameter<Real>& LayerParams<Real>::buffer(std::string_view short_name) {
  const std::string full = name + "." + std::string(short_name);
  for (auto& p : state) {
    if (p.name == full) return p;
  }
  throw std::out_of_range("layer " + name + " has no buffer '" + std::string(short_name) + "'");
}

template <typename Real>
std::size_t LayerParams<Real>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : weights) n += p.trainable ? p.value.numel() : 0;
  return n;
}

template <typename Real>
std::size_t LayerParams<Real>::state_count() const {
  std::size_t n = 0;
  for (const auto& p : state) n += p.value.numel();
  return n;
}

std::size_t analytic_trainable_count(std::string_view kind, const std::map<std::string, double>& hyper,
                                     const Shape& input_shape) {
  auto h = [&](const char* key) {
    auto it = hyper.find(key);
    if (it == hyper.end()) throw std::invalid_argument(std::string(kind) + ": missing hyperparameter " + key);
    return static_cast<std::size_t>(it->second);
  };
  auto in_dim = [&](std::size_t axis) {
    if (axis >= input_shape.size()) throw ShapeError(std::string(kind) + ": input rank too small");
    return input_shape[axis];
  };
  if (kind == "conv_temporal") return in_dim(1) * h("filters") * h("kernel");
  if (kind == "depthwise_spatial") return in_dim(1) * h("depth") * in_dim(2);
  if (kind == "separable_temporal") return in_dim(1) * h("kernel") + in_dim(1) * h("filters");
  if (kind == "batch_norm") return 2 * in_dim(1);
  if (kind == "layer_norm") return 2 * in_dim(static_cast<std::size_t>(h("axis")));
  if (kind == "dense") return input_shape.back() * h("units") + (h("bias") ? h("units") : 0);
  if (kind == "attention") {
    const std::size_t d = input_shape.back();
    return 4 * (d * d + d);
  }
  if (kind == "scalars") return h("count");
  throw std::invalid_argument("unknown layer kind '" + std::string(kind) + "'");
}

template <typename Real>
LayerParams<Real> make_conv_temporal(std::string name, std::size_t in_maps, std::size_t filters,
                                     std::size_t kernel, Rng& rng) {
  LayerParams<Real> l{name, "conv_temporal", {}, {}, {{"filters", double(filters)}, {"kernel", double(kernel)}}};
  l.weights.push_back(trainable(name, "kernel",
                                truncated_gaussian<Real>({filters, in_maps, kernel}, double(in_maps * kernel),
                                                         double(filters * kernel), rng)));
  return l;
}

template <typename Real>
LayerParams<Real> make_depthwise_spatial(std::string name, std::size_t in_maps, std::size_t depth,
                                         std::size_t electrodes, Rng& rng) {
  LayerParams<Real> l{name, "depthwise_spatial", {}, {}, {{"depth", double(depth)}}};
  l.weights.push_back(trainable(
      name, "kernel", truncated_gaussian<Real>({in_maps, depth, electrodes}, double(electrodes), double(depth * electrodes), rng)));
  return l;
}

template <typename Real>
LayerParams<Real> make_separable_temporal(std::string name, std::size_t in_maps, std::size_t out_maps,
                                          std::size_t kernel, Rng& rng) {
  LayerParams<Real> l{name, "separable_temporal", {}, {}, {{"filters", double(out_maps)}, {"kernel", double(kernel)}}};
  l.weights.push_back(trainable(name, "depthwise",
                                truncated_gaussian<Real>({in_maps, kernel}, double(kernel), double(kernel), rng)));
  l.weights.push_back(trainable(
      name, "pointwise", truncated_gaussian<Real>({out_maps, in_maps}, double(in_maps), double(out_maps), rng)));
  return l;
}

template <typename Real>
LayerParams<Real> make_batch_norm(std::string name, std::size_t maps) {
  LayerParams<Real> l{name, "batch_norm", {}, {}, {{"momentum", kBatchNormMomentum}, {"eps", kBatchNormEps}}};
  l.weights.push_back(trainable(name, "gamma", Tensor<Real>({maps}, Real(1))));
  l.weights.push_back(trainable(name, "beta", Tensor<Real>({maps}, Real(0))));
  l.state.push_back(buffer_param(name, "running_mean", Tensor<Real>({maps}, Real(0))));
  l.state.push_back(buffer_param(name, "running_var", Tensor<Real>({maps}, Real(1))));
  return l;
}

template <typename Real>
LayerParams<Real> make_layer_norm(std::string name, std::size_t width) {
  LayerParams<Real> l{name, "layer_norm", {}, {}, {{"eps", kLayerNormEps}}};
  l.weights.push_back(trainable(name, "gamma", Tensor<Real>({width}, Real(1))));
  l.weights.push_back(trainable(name, "beta", Tensor<Real>({width}, Real(0))));
  return l;
}

template <typename Real>
LayerParams<Real> make_dense(std::string name, std::size_t in_features, std::size_t units, bool bias,
                             double max_norm, Rng& rng) {
  LayerParams<Real> l{name, "dense", {}, {}, {{"units", double(units)}, {"bias", bias ? 1.0 : 0.0}, {"max_norm", max_norm}}};
  l.weights.push_back(trainable(
      name, "weight", truncated_gaussian<Real>({units, in_features}, double(in_features), double(units), rng), max_norm));
  if (bias) l.weights.push_back(trainable(name, "bias", Tensor<Real>({units}, Real(0))));
  return l;
}

template <typename Real>
LayerParams<Real> make_attention(std::string name, std::size_t model_dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || model_dim % heads != 0) {
    throw std::invalid_argument("attention: model dimension " + std::to_string(model_dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  LayerParams<Real> l{name, "attention", {}, {}, {{"heads", double(heads)}, {"head_dim", double(model_dim / heads)}}};
  for (const char* proj : {"query", "key", "value", "output"}) {
    const std::string p(proj);
    l.weights.push_back(trainable(
        name, p + ".weight", truncated_gaussian<Real>({model_dim, model_dim}, double(model_dim), double(model_dim), rng)));
    l.weights.push_back(trainable(name, p + ".bias", Tensor<Real>({model_dim}, Real(0))));
  }
  return l;
}

template <typename Real>
LayerParams<Real> make_scalars(std::string name, const std::vector<std::string>& names, Real init) {
  LayerParams<Real> l{name, "scalars", {}, {}, {{"count", double(names.size())}}};
  for (const auto& n : names) l.weights.push_back(trainable(name, n, Tensor<Real>::scalar(init)));
  return l;
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename Real>
Var<Real> conv_temporal(Var<Real> x, Var<Real> kernel) {
  Graph<Real>& g = graph_of(x, kernel);
  const Shape& sx = x.shape();
  const Shape& sw = kernel.shape();
  if (sx.size() != 4 || sw.size() != 3 || sw[1] != sx[1]) throw ShapeError(shapes("conv-temporal", sx, sw));
  const std::size_t B = sx[0], Fin = sx[1], C = sx[2], T = sx[3];
  const std::size_t F = sw[0], k = sw[2];
  if (k % 2 == 0) throw ShapeError("conv-temporal: kernel length " + std::to_string(k) + " must be odd");
  if (k > T) {
    throw ShapeError("conv-temporal: kernel length " + std::to_string(k) + " exceeds signal length " +
                     std::to_string(T));
  }
  Tensor<Real> out({B, F, C, T});
  const Real* X = x.value().data();
  const Real* W = kernel.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t fi = 0; fi < Fin; ++fi)
        for (std::size_t c = 0; c < C; ++c)
          correlate_same(X + ((b * Fin + fi) * C + c) * T, W + (f * Fin + fi) * k, k,
                         out.data() + ((b * F + f) * C + c) * T, T);
  const std::size_t ix = x.id(), iw = kernel.id();
  return g.record(OpKind::conv_temporal, std::move(out), {ix, iw},
                  [=](Graph<Real>& gr, std::size_t self) {
                    const Real* G = gr.grad(self).data();
                    const Real* X = gr.value(ix).data();
                    const Real* W = gr.value(iw).data();
                    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
                    Real* GW = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t f = 0; f < F; ++f)
                        for (std::size_t fi = 0; fi < Fin; ++fi)
                          for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t xo = ((b * Fin + fi) * C + c) * T;
                            correlate_same_backward(X + xo, W + (f * Fin + fi) * k, k,
                                                    G + ((b * F + f) * C + c) * T, T, GX ? GX + xo : nullptr,
                                                    GW ? GW + (f * Fin + fi) * k : nullptr);
                          }
                  });
}

template <typename Real>
Var<Real> depthwise_conv_spatial(Var<Real> x, Var<Real> kernel) {
  Graph<Real>& g = graph_of(x, kernel);
  const Shape& sx = x.shape();
  const Shape& sw = kernel.shape();
  if (sx.size() != 4 || sw.size() != 3 || sw[0] != sx[1] || sw[2] != sx[2]) {
    throw ShapeError(shapes("depthwise-spatial", sx, sw));
  }
  const std::size_t B = sx[0], Fin = sx[1], C = sx[2], T = sx[3], D = sw[1];
  if (D < 1) throw ShapeError("depthwise-spatial: depth multiplier must be >= 1");
  Tensor<Real> out({B, Fin * D, 1, T});
  const Real* X = x.value().data();
  const Real* W = kernel.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < Fin; ++f)
      for (std::size_t d = 0; d < D; ++d) {
        Real* orow = out.data() + (b * Fin * D + f * D + d) * T;
        for (std::size_t c = 0; c < C; ++c) {
          kernels::axpy(W[(f * D + d) * C + c], X + ((b * Fin + f) * C + c) * T, orow, T);
        }
      }
  const std::size_t ix = x.id(), iw = kernel.id();
  return g.record(OpKind::depthwise_spatial, std::move(out), {ix, iw},
                  [=](Graph<Real>& gr, std::size_t self) {
                    const Real* G = gr.grad(self).data();
                    const Real* X = gr.value(ix).data();
                    const Real* W = gr.value(iw).data();
                    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
                    Real* GW = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t f = 0; f < Fin; ++f)
                        for (std::size_t d = 0; d < D; ++d) {
                          const Real* grow = G + (b * Fin * D + f * D + d) * T;
                          for (std::size_t c = 0; c < C; ++c) {
                            const std::size_t xo = ((b * Fin + f) * C + c) * T;
                            if (GX) kernels::axpy(W[(f * D + d) * C + c], grow, GX + xo, T);
                            if (GW) GW[(f * D + d) * C + c] += kernels::dot(grow, X + xo, T);
                          }
                        }
                  });
}

template <typename Real>
Var<Real> depthwise_conv_temporal(Var<Real> x, Var<Real> kernel) {
  Graph<Real>& g = graph_of(x, kernel);
  const Shape& sx = x.shape();
  const Shape& sw = kernel.shape();
  if (sx.size() != 4 || sw.size() != 2 || sw[0] != sx[1]) throw ShapeError(shapes("depthwise-temporal", sx, sw));
  const std::size_t B = sx[0], F = sx[1], H = sx[2], T = sx[3], k = sw[1];
  if (k > T) {
    throw ShapeError("depthwise-temporal: kernel length " + std::to_string(k) + " exceeds signal length " +
                     std::to_string(T));
  }
  Tensor<Real> out(sx);
  const Real* X = x.value().data();
  const Real* W = kernel.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t o = ((b * F + f) * H + h) * T;
        correlate_same(X + o, W + f * k, k, out.data() + o, T);
      }
  const std::size_t ix = x.id(), iw = kernel.id();
  return g.record(OpKind::depthwise_temporal, std::move(out), {ix, iw},
                  [=](Graph<Real>& gr, std::size_t self) {
                    const Real* G = gr.grad(self).data();
                    const Real* X = gr.value(ix).data();
                    const Real* W = gr.value(iw).data();
                    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
                    Real* GW = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
                    for (std::size_t b = 0; b < B; ++b)
                      for (std::size_t f = 0; f < F; ++f)
                        for (std::size_t h = 0; h < H; ++h) {
                          const std::size_t o = ((b * F + f) * H + h) * T;
                          correlate_same_backward(X + o, W + f * k, k, G + o, T, GX ? GX + o : nullptr,
                                                  GW ? GW + f * k : nullptr);
                        }
                  });
}

template <typename Real>
Var<Real> pointwise_conv(Var<Real> x, Var<Real> kernel) {
  Graph<Real>& g = graph_of(x, kernel);
  const Shape& sx = x.shape();
  const Shape& sw = kernel.shape();
  if (sx.size() != 4 || sw.size() != 2 || sw[1] != sx[1]) throw ShapeError(shapes("pointwise", sx, sw));
  const std::size_t B = sx[0], Fin = sx[1], HT = sx[2] * sx[3], Fout = sw[0];
  Tensor<Real> out({B, Fout, sx[2], sx[3]});
  const Real* X = x.value().data();
  const Real* W = kernel.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < Fout; ++o)
      for (std::size_t i = 0; i < Fin; ++i)
        kernels::axpy(W[o * Fin + i], X + (b * Fin + i) * HT, out.data() + (b * Fout + o) * HT, HT);
  const std::size_t ix = x.id(), iw = kernel.id();
  return g.record(OpKind::pointwise, std::move(out), {ix, iw}, [=](Graph<Real>& gr, std::size_t self) {
    const Real* G = gr.grad(self).data();
    const Real* X = gr.value(ix).data();
    const Real* W = gr.value(iw).data();
    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
    Real* GW = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < Fout; ++o)
        for (std::size_t i = 0; i < Fin; ++i) {
          const Real* grow = G + (b * Fout + o) * HT;
          if (GX) kernels::axpy(W[o * Fin + i], grow, GX + (b * Fin + i) * HT, HT);
          if (GW) GW[o * Fin + i] += kernels::dot(grow, X + (b * Fin + i) * HT, HT);
        }
  });
}

template <typename Real>
Var<Real> separable_conv_temporal(Var<Real> x, Var<Real> depthwise, Var<Real> pointwise) {
  if (x.shape().size() == 4 && depthwise.shape().size() == 2 && x.shape()[3] < depthwise.shape()[1]) {
    throw ShapeError("separable-conv: signal length " + std::to_string(x.shape()[3]) +
                     " is shorter than kernel length " + std::to_string(depthwise.shape()[1]));
  }
  return pointwise_conv(depthwise_conv_temporal(x, depthwise), pointwise);
}

// ---------------------------------------------------------------------------
// Normalization

template <typename Real>
Var<Real> batch_norm(Var<Real> x, Var<Real> gamma, Var<Real> beta, Tensor<Real>& running_mean,
                     Tensor<Real>& running_var, Mode mode, double momentum, double eps) {
  Graph<Real>& g = graph_of(x, gamma);
  graph_of(x, beta);
  const Shape& sx = x.shape();
  if (sx.size() < 2) throw ShapeError("batch-norm: input rank must be >= 2, got " + shape_str(sx));
  const std::size_t B = sx[0], F = sx[1];
  const std::size_t inner = x.numel() / (B * F);
  const Shape fs{F};
  if (gamma.shape() != fs || beta.shape() != fs || running_mean.shape() != fs || running_var.shape() != fs) {
    throw ShapeError(shapes("batch-norm", sx, gamma.shape()));
  }
  const Real* X = x.value().data();
  std::vector<Real> mean(F), inv_std(F);
  if (mode == Mode::train) {
    const double n = double(B * inner);
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) s += kernels::sum(X + (b * F + f) * inner, inner);
      const double mu = s / n;
      double v = 0;
      for (std::size_t b = 0; b < B; ++b) {
        const Real* row = X + (b * F + f) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = double(row[i]) - mu;
          v += d * d;
        }
      }
      v /= n;
      mean[f] = Real(mu);
      inv_std[f] = Real(1.0 / std::sqrt(v + eps));
      running_mean[f] = Real(momentum * running_mean[f] + (1.0 - momentum) * mu);
      running_var[f] = Real(momentum * running_var[f] + (1.0 - momentum) * v);
    }
  } else {
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = running_mean[f];
      inv_std[f] = Real(1.0 / std::sqrt(double(running_var[f]) + eps));
    }
  }
  Tensor<Real> xhat(sx);
  Tensor<Real> out(sx);
  const Real* G = gamma.value().data();
  const Real* Bt = beta.value().data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t o = (b * F + f) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const Real h = (X[o + i] - mean[f]) * inv_std[f];
        xhat[o + i] = h;
        out[o + i] = G[f] * h + Bt[f];
      }
    }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  const bool batch_stats = mode == Mode::train;
  return g.record(OpKind::batch_norm, std::move(out), {ix, ig, ib},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<Real>& gr, std::size_t self) {
                    const Real* GO = gr.grad(self).data();
                    const Real* Gm = gr.value(ig).data();
                    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
                    Real* GG = gr.requires_grad(ig) ? gr.grad_buffer(ig).data() : nullptr;
                    Real* GB = gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
                    const double n = double(B * inner);
                    for (std::size_t f = 0; f < F; ++f) {
                      double sum_g = 0, sum_gh = 0;
                      for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t o = (b * F + f) * inner;
                        sum_g += kernels::sum(GO + o, inner);
                        sum_gh += kernels::dot(GO + o, xhat.data() + o, inner);
                      }
                      if (GG) GG[f] += Real(sum_gh);
                      if (GB) GB[f] += Real(sum_g);
                      if (!GX) continue;
                      const double scale = double(Gm[f]) * double(inv_std[f]);
                      for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t o = (b * F + f) * inner;
                        if (batch_stats) {
                          const double mg = sum_g / n, mgh = sum_gh / n;
                          for (std::size_t i = 0; i < inner; ++i) {
                            GX[o + i] += Real(scale * (double(GO[o + i]) - mg - double(xhat[o + i]) * mgh));
                          }
                        } else {
                          kernels::axpy(Real(scale), GO + o, GX + o, inner);
                        }
                      }
                    }
                  });
}

template <typename Real>
Var<Real> layer_norm(Var<Real> x, std::size_t axis, Var<Real> gamma, Var<Real> beta, double eps) {
  Graph<Real>& g = graph_of(x, gamma);
  graph_of(x, beta);
  const Shape& sx = x.shape();
  if (axis >= sx.size()) throw ShapeError("layer-norm: axis out of range for " + shape_str(sx));
  const std::size_t n = sx[axis];
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) throw ShapeError(shapes("layer-norm", sx, gamma.shape()));
  const std::size_t outer = shape_numel(Shape(sx.begin(), sx.begin() + axis));
  const std::size_t inner = shape_numel(Shape(sx.begin() + axis + 1, sx.end()));
  const Real* X = x.value().data();
  const Real* G = gamma.value().data();
  const Real* Bt = beta.value().data();
  Tensor<Real> xhat(sx), out(sx);
  std::vector<Real> inv_std(outer * inner);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      double mu = 0;
      for (std::size_t j = 0; j < n; ++j) mu += X[base + j * inner];
      mu /= double(n);
      double var = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const double d = X[base + j * inner] - mu;
        var += d * d;
      }
      var /= double(n);
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * inner + in] = Real(is);
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t idx = base + j * inner;
        const Real h = Real((X[idx] - mu) * is);
        xhat[idx] = h;
        out[idx] = G[j] * h + Bt[j];
      }
    }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return g.record(OpKind::layer_norm, std::move(out), {ix, ig, ib},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph<Real>& gr, std::size_t self) {
                    const Real* GO = gr.grad(self).data();
                    const Real* Gm = gr.value(ig).data();
                    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
                    Real* GG = gr.requires_grad(ig) ? gr.grad_buffer(ig).data() : nullptr;
                    Real* GB = gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t in = 0; in < inner; ++in) {
                        const std::size_t base = o * n * inner + in;
                        double m_dy = 0, m_dyh = 0;
                        for (std::size_t j = 0; j < n; ++j) {
                          const std::size_t idx = base + j * inner;
                          if (GG) GG[j] += GO[idx] * xhat[idx];
                          if (GB) GB[j] += GO[idx];
                          const double dy = double(GO[idx]) * Gm[j];
                          m_dy += dy;
                          m_dyh += dy * xhat[idx];
                        }
                        if (!GX) continue;
                        m_dy /= double(n);
                        m_dyh /= double(n);
                        const double is = inv_std[o * inner + in];
                        for (std::size_t j = 0; j < n; ++j) {
                          const std::size_t idx = base + j * inner;
                          const double dy = double(GO[idx]) * Gm[j];
                          GX[idx] += Real(is * (dy - m_dy - double(xhat[idx]) * m_dyh));
                        }
                      }
                  });
}

// ---------------------------------------------------------------------------
// Activations

template <typename Real>
Var<Real> elu(Var<Real> x) {
  Graph<Real>& g = x.graph();
  const Tensor<Real>& X = x.value();
  Tensor<Real> out(X.shape());
  for (std::size_t i = 0; i < X.numel(); ++i) {
    out[i] = X[i] > 0 ? X[i] : Real(kEluAlpha * std::expm1(double(X[i])));
  }
  const std::size_t ix = x.id();
  return g.record(OpKind::elu, std::move(out), {ix}, [ix](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& X = gr.value(ix);
    const Tensor<Real>& Y = gr.value(self);
    const Tensor<Real>& GO = gr.grad(self);
    Tensor<Real>& GX = gr.grad_buffer(ix);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      GX[i] += GO[i] * (X[i] > 0 ? Real(1) : Real(Y[i] + kEluAlpha));
    }
  });
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kSqrt2OverPi = 0.79788456080286535588;
constexpr double kGeluCubic = 0.044715;

double gelu_value(double x, GeluMode mode) {
  if (mode == GeluMode::erf) return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
  return 0.5 * x * (1.0 + std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

double gelu_derivative(double x, GeluMode mode) {
  if (mode == GeluMode::erf) {
    return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
  }
  const double t = std::tanh(kSqrt2OverPi * (x + kGeluCubic * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
}
}  // namespace

template <typename Real>
Var<Real> gelu(Var<Real> x) {
  Graph<Real>& g = x.graph();
  const GeluMode mode = gelu_mode();
  const Tensor<Real>& X = x.value();
  Tensor<Real> out(X.shape());
  for (std::size_t i = 0; i < X.numel(); ++i) out[i] = Real(gelu_value(X[i], mode));
  const std::size_t ix = x.id();
  return g.record(OpKind::gelu, std::move(out), {ix}, [ix, mode](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& X = gr.value(ix);
    const Tensor<Real>& GO = gr.grad(self);
    Tensor<Real>& GX = gr.grad_buffer(ix);
    for (std::size_t i = 0; i < X.numel(); ++i) GX[i] += GO[i] * Real(gelu_derivative(X[i], mode));
  });
}

template <typename Real>
Var<Real> softmax(Var<Real> x) {
  Graph<Real>& g = x.graph();
  const Tensor<Real>& X = x.value();
  const std::size_t n = X.shape().back();
  const std::size_t rows = X.numel() / n;
  Tensor<Real> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = X.data() + r * n;
    Real* yr = out.data() + r * n;
    const Real m = *std::max_element(xr, xr + n);
    double z = 0;
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - m);
      z += yr[j];
    }
    const Real inv = Real(1.0 / z);
    for (std::size_t j = 0; j < n; ++j) yr[j] *= inv;
  }
  const std::size_t ix = x.id();
  return g.record(OpKind::softmax, std::move(out), {ix}, [ix, n, rows](Graph<Real>& gr, std::size_t self) {
    const Real* Y = gr.value(self).data();
    const Real* GO = gr.grad(self).data();
    Real* GX = gr.grad_buffer(ix).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const Real s = kernels::dot(GO + r * n, Y + r * n, n);
      for (std::size_t j = 0; j < n; ++j) GX[r * n + j] += Y[r * n + j] * (GO[r * n + j] - s);
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling, dropout, dense

template <typename Real>
Var<Real> avg_pool_temporal(Var<Real> x, std::size_t pool) {
  Graph<Real>& g = x.graph();
  const Shape& sx = x.shape();
  const std::size_t T = sx.back();
  if (pool == 0 || pool > T) {
    throw ShapeError("avg-pool: pool " + std::to_string(pool) + " invalid for time extent " + std::to_string(T));
  }
  const std::size_t Tout = T / pool;
  const std::size_t rows = x.numel() / T;
  Shape so = sx;
  so.back() = Tout;
  Tensor<Real> out(so);
  const Real* X = x.value().data();
  const Real inv = Real(1) / Real(pool);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < Tout; ++t) out[r * Tout + t] = kernels::sum(X + r * T + t * pool, pool) * inv;
  const std::size_t ix = x.id();
  return g.record(OpKind::avg_pool, std::move(out), {ix}, [=](Graph<Real>& gr, std::size_t self) {
    const Real* GO = gr.grad(self).data();
    Real* GX = gr.grad_buffer(ix).data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < Tout; ++t) {
        const Real v = GO[r * Tout + t] * inv;
        Real* dst = GX + r * T + t * pool;
        for (std::size_t j = 0; j < pool; ++j) dst[j] += v;
      }
  });
}

template <typename Real>
Var<Real> dropout(Var<Real> x, double rate, Mode mode, DropoutStyle style, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  Graph<Real>& g = x.graph();
  const Shape& sx = x.shape();
  const Real keep_scale = Real(1.0 / (1.0 - rate));
  std::bernoulli_distribution keep(1.0 - rate);
  Tensor<Real> mask(sx);
  if (style == DropoutStyle::spatial && sx.size() >= 3) {
    const std::size_t maps = sx[0] * sx[1];
    const std::size_t inner = x.numel() / maps;
    for (std::size_t m = 0; m < maps; ++m) {
      const Real v = keep(rng) ? keep_scale : Real(0);
      std::fill_n(mask.data() + m * inner, inner, v);
    }
  } else {
    for (auto& v : mask.values()) v = keep(rng) ? keep_scale : Real(0);
  }
  Tensor<Real> out(sx);
  kernels::mul(x.value().data(), mask.data(), out.data(), out.numel());
  const std::size_t ix = x.id();
  return g.record(OpKind::dropout, std::move(out), {ix}, [ix, mask = std::move(mask)](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& GO = gr.grad(self);
    Tensor<Real>& GX = gr.grad_buffer(ix);
    for (std::size_t i = 0; i < GO.numel(); ++i) GX[i] += GO[i] * mask[i];
  });
}

template <typename Real>
Var<Real> linear(Var<Real> x, Var<Real> weight, Var<Real> bias) {
  Graph<Real>& g = graph_of(x, weight);
  const Shape& sx = x.shape();
  const Shape& sw = weight.shape();
  if (sw.size() != 2 || sx.back() != sw[1]) throw ShapeError(shapes("linear", sx, sw));
  const std::size_t in = sw[1], units = sw[0], rows = x.numel() / in;
  const bool has_bias = bias.valid();
  if (has_bias) {
    graph_of(x, bias);
    if (bias.shape() != Shape{units}) throw ShapeError(shapes("linear", sw, bias.shape()));
  }
  Shape so = sx;
  so.back() = units;
  Tensor<Real> out(so);
  const Real* X = x.value().data();
  const Real* W = weight.value().data();
  const Real* Bv = has_bias ? bias.value().data() : nullptr;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t u = 0; u < units; ++u) {
      out[r * units + u] = kernels::dot(X + r * in, W + u * in, in) + (Bv ? Bv[u] : Real(0));
    }
  std::vector<std::size_t> ids{x.id(), weight.id()};
  if (has_bias) ids.push_back(bias.id());
  const std::size_t ix = x.id(), iw = weight.id(), ib = has_bias ? bias.id() : 0;
  return g.record(OpKind::linear, std::move(out), ids, [=](Graph<Real>& gr, std::size_t self) {
    const Real* GO = gr.grad(self).data();
    const Real* X = gr.value(ix).data();
    const Real* W = gr.value(iw).data();
    Real* GX = gr.requires_grad(ix) ? gr.grad_buffer(ix).data() : nullptr;
    Real* GW = gr.requires_grad(iw) ? gr.grad_buffer(iw).data() : nullptr;
    Real* GB = has_bias && gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t u = 0; u < units; ++u) {
        const Real go = GO[r * units + u];
        if (GX) kernels::axpy(go, W + u * in, GX + r * in, in);
        if (GW) kernels::axpy(go, X + r * in, GW + u * in, in);
        if (GB) GB[u] += go;
      }
  });
}

template <typename Real>
void project_max_norm(Tensor<Real>& weight, double c) {
  if (weight.rank() != 2) throw ShapeError("max-norm: weight must be 2-D, got " + shape_str(weight.shape()));
  const std::size_t units = weight.dim(0), in = weight.dim(1);
  for (std::size_t u = 0; u < units; ++u) {
    Real* row = weight.data() + u * in;
    double sq = 0;
    for (std::size_t i = 0; i < in; ++i) sq += double(row[i]) * double(row[i]);
    const double norm = std::sqrt(sq);
    if (norm > c) {
      const Real s = Real(c / norm);
      for (std::size_t i = 0; i < in; ++i) row[i] *= s;
    }
  }
}

// ---------------------------------------------------------------------------
// Attention

template <typename Real>
AttentionResult<Real> multi_head_attention(Var<Real> tokens, LayerParams<Real>& attn) {
  Graph<Real>& g = tokens.graph();
  const Shape& s = tokens.shape();
  if (s.size() != 3) throw ShapeError("attention: tokens must be [B, T, d], got " + shape_str(s));
  const std::size_t B = s[0], T = s[1], d = s[2];
  const std::size_t H = static_cast<std::size_t>(attn.hyper.at("heads"));
  if (H == 0 || d % H != 0) {
    throw ShapeError("attention: model dimension " + std::to_string(d) + " is not divisible by " +
                     std::to_string(H) + " heads");
  }
  const std::size_t dh = d / H;
  auto project = [&](const char* which) {
    const std::string p(which);
    return linear(tokens, g.parameter(attn.weight(p + ".weight")), g.parameter(attn.weight(p + ".bias")));
  };
  auto heads_first = [&](Var<Real> v) {  // [B, T, d] -> [B, H, T, dh]
    return ops::transpose(ops::reshape(v, {B, T, H, dh}), {0, 2, 1, 3});
  };
  Var<Real> q = heads_first(project("query"));
  Var<Real> k_t = ops::transpose(ops::reshape(project("key"), {B, T, H, dh}), {0, 2, 3, 1});  // [B, H, dh, T]
  Var<Real> v = heads_first(project("value"));
  Var<Real> scores = ops::scale(ops::matmul(q, k_t), Real(1.0 / std::sqrt(double(dh))));
  Var<Real> weights = softmax(scores);
  Var<Real> context = ops::matmul(weights, v);  // [B, H, T, dh]
  Var<Real> merged = ops::reshape(ops::transpose(context, {0, 2, 1, 3}), {B, T, d});
  Var<Real> out = linear(merged, g.parameter(attn.weight("output.weight")), g.parameter(attn.weight("output.bias")));
  return {out, weights};
}

// ---------------------------------------------------------------------------

#define MFTNET_INSTANTIATE_LAYERS(R)                                                                   \
  template struct LayerParams<R>;                                                                      \
  template LayerParams<R> make_conv_temporal<R>(std::string, std::size_t, std::size_t, std::size_t, Rng&); \
  template LayerParams<R> make_depthwise_spatial<R>(std::string, std::size_t, std::size_t, std::size_t, Rng&); \
  template LayerParams<R> make_separable_temporal<R>(std::string, std::size_t, std::size_t, std::size_t, Rng&); \
  template LayerParams<R> make_batch_norm<R>(std::string, std::size_t);                                \
  template LayerParams<R> make_layer_norm<R>(std::string, std::size_t);                                \
  template LayerParams<R> make_dense<R>(std::string, std::size_t, std::size_t, bool, double, Rng&);    \
  template LayerParams<R> make_attention<R>(std::string, std::size_t, std::size_t, Rng&);              \
  template LayerParams<R> make_scalars<R>(std::string, const std::vector<std::string>&, R);            \
  template Var<R> conv_temporal(Var<R>, Var<R>);                                                       \
  template Var<R> depthwise_conv_spatial(Var<R>, Var<R>);                                              \
  template Var<R> depthwise_conv_temporal(Var<R>, Var<R>);                                             \
  template Var<R> pointwise_conv(Var<R>, Var<R>);                                                      \
  template Var<R> separable_conv_temporal(Var<R>, Var<R>, Var<R>);                                     \
  template Var<R> batch_norm(Var<R>, Var<R>, Var<R>, Tensor<R>&, Tensor<R>&, Mode, double, double);    \
  template Var<R> layer_norm(Var<R>, std::size_t, Var<R>, Var<R>, double);                             \
  template Var<R> elu(Var<R>);                                                                         \
  template Var<R> gelu(Var<R>);                                                                        \
  template Var<R> softmax(Var<R>);                                                                     \
  template Var<R> avg_pool_temporal(Var<R>, std::size_t);                                              \
  template Var<R> dropout(Var<R>, double, Mode, DropoutStyle, Rng&);                                   \
  template Var<R> linear(Var<R>, Var<R>, Var<R>);                                                      \
  template void project_max_norm(Tensor<R>&, double);                                                  \
  template AttentionResult<R> multi_head_attention(Var<R>, LayerParams<R>&);

MFTNET_INSTANTIATE_LAYERS(float)
MFTNET_INSTANTIATE_LAYERS(double)

}  // namespace mftnet::layers
