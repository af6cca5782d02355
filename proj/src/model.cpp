#include "mftnet/model.hpp"

#include <algorithm>
#include <stdexcept>

#include "json.hpp"

namespace mftnet {

using layers::LayerParams;
using layers::Mode;

namespace {

constexpr const char* kVariantNames[] = {"full", "no-transformer", "no-multiscale", "eegnet-baseline"};

std::string branch_name(std::size_t i) { return "msb.branch" + std::to_string(i); }

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("model config: " + message);
}

std::vector<std::string> scalar_names(const ModelConfig& cfg) {
  std::vector<std::string> names;
  switch (cfg.variant) {
    case Variant::full:
    case Variant::no_transformer:
      for (std::size_t i = 0; i < cfg.branch_kernels.size(); ++i) names.push_back("branch" + std::to_string(i));
      break;
    case Variant::no_multiscale:
      names.push_back("branch0");
      break;
    case Variant::eegnet_baseline:
      return names;
  }
  names.push_back("conv_stream");
  if (has_transformer(cfg.variant)) names.push_back("transformer_stream");
  return names;
}

}  // namespace

std::string_view variant_name(Variant v) { return kVariantNames[static_cast<int>(v)]; }

Variant parse_variant(std::string_view name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kVariantNames[i]) return static_cast<Variant>(i);
  }
  throw std::invalid_argument("unknown variant '" + std::string(name) +
                              "' (expected full, no-transformer, no-multiscale or eegnet-baseline)");
}

bool has_transformer(Variant v) { return v == Variant::full || v == Variant::no_multiscale; }
bool has_multiscale(Variant v) { return v == Variant::full || v == Variant::no_transformer; }

std::size_t ModelConfig::fused_width() const {
  switch (variant) {
    case Variant::full:
      return branch_filters * branch_kernels.size() + 1;
    case Variant::no_transformer:
      return branch_filters * branch_kernels.size();
    case Variant::no_multiscale:
      return branch_filters + 1;
    case Variant::eegnet_baseline:
      return branch_filters;
  }
  return 0;
}

void ModelConfig::validate() const {
  require(electrodes > 0, "electrodes must be positive");
  require(samples > 0, "samples must be positive");
  require(classes >= 2, "classes must be >= 2");
  require(branch_filters > 0, "branch_filters must be positive");
  auto check_kernel = [&](std::size_t k, const std::string& field) {
    require(k % 2 == 1, field + " " + std::to_string(k) + " must be odd");
    require(k <= samples, field + " " + std::to_string(k) + " exceeds samples " + std::to_string(samples));
  };
  if (has_multiscale(variant)) {
    require(!branch_kernels.empty(), "branch_kernels must not be empty");
    for (std::size_t k : branch_kernels) check_kernel(k, "branch kernel");
  }
  if (variant == Variant::no_multiscale) check_kernel(single_scale_kernel, "single_scale_kernel");
  if (variant == Variant::eegnet_baseline) check_kernel(baseline_kernel, "baseline_kernel");
  if (has_transformer(variant)) {
    require(attention_heads > 0 && electrodes % attention_heads == 0,
            "electrodes " + std::to_string(electrodes) + " not divisible by attention_heads " +
                std::to_string(attention_heads));
    require(ff_dim > 0, "ff_dim must be positive");
  }
  for (double r : {branch_dropout, transformer_dropout, spatial_dropout}) {
    require(r >= 0.0 && r < 1.0, "dropout rates must lie in [0, 1)");
  }
  require(depth_multiplier > 0, "depth_multiplier must be >= 1");
  require(pool1 > 0 && pool2 > 0, "pool sizes must be positive");
  require(samples / pool1 >= separable_kernel,
          "samples / pool1 = " + std::to_string(samples / pool1) + " is shorter than separable_kernel " +
              std::to_string(separable_kernel));
  require(separable_kernel > 0 && separable_filters > 0, "separable kernel and filters must be positive");
  require(pooled_samples() > 0, "pooling leaves no samples");
  require(dense_max_norm >= 0.0, "dense_max_norm must be non-negative");
}

std::string model_config_to_json(const ModelConfig& c, int indent) {
  nlohmann::ordered_json j;
  j["variant"] = std::string(variant_name(c.variant));
  j["electrodes"] = c.electrodes;
  j["samples"] = c.samples;
  j["classes"] = c.classes;
  j["branch_kernels"] = c.branch_kernels;
  j["branch_filters"] = c.branch_filters;
  j["branch_dropout"] = c.branch_dropout;
  j["attention_heads"] = c.attention_heads;
  j["ff_dim"] = c.ff_dim;
  j["transformer_dropout"] = c.transformer_dropout;
  j["depth_multiplier"] = c.depth_multiplier;
  j["pool1"] = c.pool1;
  j["pool2"] = c.pool2;
  j["separable_kernel"] = c.separable_kernel;
  j["separable_filters"] = c.separable_filters;
  j["spatial_dropout"] = c.spatial_dropout;
  j["dense_max_norm"] = c.dense_max_norm;
  j["single_scale_kernel"] = c.single_scale_kernel;
  j["baseline_kernel"] = c.baseline_kernel;
  return j.dump(indent);
}

ModelConfig model_config_from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  if (!j.is_object()) throw std::invalid_argument("model config: expected a JSON object");
  ModelConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "variant") c.variant = parse_variant(value.get<std::string>());
    else if (key == "electrodes") c.electrodes = value.get<std::size_t>();
    else if (key == "samples") c.samples = value.get<std::size_t>();
    else if (key == "classes") c.classes = value.get<std::size_t>();
    else if (key == "branch_kernels") c.branch_kernels = value.get<std::vector<std::size_t>>();
    else if (key == "branch_filters") c.branch_filters = value.get<std::size_t>();
    else if (key == "branch_dropout") c.branch_dropout = value.get<double>();
    else if (key == "attention_heads") c.attention_heads = value.get<std::size_t>();
    else if (key == "ff_dim") c.ff_dim = value.get<std::size_t>();
    else if (key == "transformer_dropout") c.transformer_dropout = value.get<double>();
    else if (key == "depth_multiplier") c.depth_multiplier = value.get<std::size_t>();
    else if (key == "pool1") c.pool1 = value.get<std::size_t>();
    else if (key == "pool2") c.pool2 = value.get<std::size_t>();
    else if (key == "separable_kernel") c.separable_kernel = value.get<std::size_t>();
    else if (key == "separable_filters") c.separable_filters = value.get<std::size_t>();
    else if (key == "spatial_dropout") c.spatial_dropout = value.get<double>();
    else if (key == "dense_max_norm") c.dense_max_norm = value.get<double>();
    else if (key == "single_scale_kernel") c.single_scale_kernel = value.get<std::size_t>();
    else if (key == "baseline_kernel") c.baseline_kernel = value.get<std::size_t>();
    else throw std::invalid_argument("model config: unknown key '" + key + "'");
  }
  return c;
}

ModelConfig gradcheck_config(Variant v) {
  ModelConfig c;
  c.electrodes = 4;
  c.samples = 32;
  c.branch_kernels = {5, 9, 13, 17, 25, 29};
  c.ff_dim = 8;
  c.pool1 = 2;
  c.pool2 = 2;
  c.separable_kernel = 4;
  c.separable_filters = 4;
  c.single_scale_kernel = 15;
  c.baseline_kernel = 15;
  c.variant = v;
  return c;
}

// ---------------------------------------------------------------------------

template <typename Real>
Model<Real>::Model(ModelConfig config, std::vector<LayerParams<Real>> layers)
    : config_(std::move(config)), layers_(std::move(layers)) {}

template <typename Real>
bool Model<Real>::has_layer(std::string_view name) const {
  return std::any_of(layers_.begin(), layers_.end(), [&](const auto& l) { return l.name == name; });
}

template <typename Real>
LayerParams<Real>& Model<Real>::layer(std::string_view name) {
  for (auto& l : layers_) {
    if (l.name == name) return l;
  }
  throw std::out_of_range("model has no layer '" + std::string(name) + "'");
}

template <typename Real>
const LayerParams<Real>& Model<Real>::layer(std::string_view name) const {
  return const_cast<Model*>(this)->layer(name);
}

template <typename Real>
std::vector<Parameter<Real>*> Model<Real>::trainable_parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& l : layers_)
    for (auto& p : l.weights)
      if (p.trainable) out.push_back(&p);
  return out;
}

template <typename Real>
std::vector<Parameter<Real>*> Model<Real>::all_parameters() {
  std::vector<Parameter<Real>*> out;
  for (auto& l : layers_) {
    for (auto& p : l.weights) out.push_back(&p);
    for (auto& p : l.state) out.push_back(&p);
  }
  return out;
}

template <typename Real>
std::vector<const Parameter<Real>*> Model<Real>::all_parameters() const {
  std::vector<const Parameter<Real>*> out;
  for (const auto& l : layers_) {
    for (const auto& p : l.weights) out.push_back(&p);
    for (const auto& p : l.state) out.push_back(&p);
  }
  return out;
}

template <typename Real>
Parameter<Real>& Model<Real>::parameter(std::string_view full_name) {
  for (Parameter<Real>* p : all_parameters()) {
    if (p->name == full_name) return *p;
  }
  throw std::out_of_range("model has no parameter '" + std::string(full_name) + "'");
}

template <typename Real>
std::vector<Tensor<Real>> Model<Real>::snapshot() const {
  std::vector<Tensor<Real>> out;
  for (const Parameter<Real>* p : all_parameters()) out.push_back(p->value);
  return out;
}

template <typename Real>
void Model<Real>::restore(const std::vector<Tensor<Real>>& values) {
  auto params = all_parameters();
  if (values.size() != params.size()) throw std::invalid_argument("restore: snapshot size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].shape() != params[i]->value.shape()) {
      throw ShapeError("restore: shape mismatch for " + params[i]->name);
    }
    params[i]->value = values[i];
  }
}

template <typename Real>
void Model<Real>::apply_constraints() {
  for (Parameter<Real>* p : trainable_parameters()) {
    if (p->max_norm > 0.0) layers::project_max_norm(p->value, p->max_norm);
  }
}

template <typename Real>
Tensor<Real> Model<Real>::predict(const Tensor<Real>& x) {
  Graph<Real> g(false);
  return forward(g, g.constant(x), ForwardContext{}).probs.value();
}

template <typename Real>
Tensor<Real> Model<Real>::predict_logits(const Tensor<Real>& x) {
  Graph<Real> g(false);
  return forward(g, g.constant(x), ForwardContext{}).logits.value();
}

// ---------------------------------------------------------------------------
// Stages

namespace {

template <typename Real>
Var<Real> dropout_if(Var<Real> x, double rate, const ForwardContext& ctx, layers::DropoutStyle style) {
  if (!ctx.dropout_active() || rate == 0.0) return x;
  if (!ctx.rng) throw std::invalid_argument("forward: dropout in train mode needs a random generator");
  return layers::dropout(x, rate, Mode::train, style, *ctx.rng);
}

template <typename Real>
Var<Real> fusion_scalar(Model<Real>& model, Graph<Real>& g, const std::string& name) {
  return g.parameter(model.layer("fusion").weight(name));
}

template <typename Real>
Var<Real> bn(Graph<Real>& g, LayerParams<Real>& l, Var<Real> x, const ForwardContext& ctx) {
  return layers::batch_norm(x, g.parameter(l.weight("gamma")), g.parameter(l.weight("beta")),
                            l.buffer("running_mean").value, l.buffer("running_var").value, ctx.mode);
}

// Batch norm over the leading `width` maps of a wider layer.
template <typename Real>
Var<Real> bn_sliced(Graph<Real>& g, LayerParams<Real>& l, Var<Real> x, std::size_t width, const ForwardContext& ctx) {
  const std::size_t full = l.weight("gamma").value.numel();
  if (width == full) return bn(g, l, x, ctx);
  auto head = [&](const Tensor<Real>& t) {
    return Tensor<Real>({width}, std::vector<Real>(t.data(), t.data() + width));
  };
  Tensor<Real> mean = head(l.buffer("running_mean").value);
  Tensor<Real> var = head(l.buffer("running_var").value);
  return layers::batch_norm(x, ops::slice(g.parameter(l.weight("gamma")), 0, 0, width),
                            ops::slice(g.parameter(l.weight("beta")), 0, 0, width), mean, var, ctx.mode);
}

template <typename Real>
Var<Real> slice_to(Var<Real> v, std::size_t axis, std::size_t width) {
  return v.dim(axis) == width ? v : ops::slice(v, axis, 0, width);
}

// Depthwise spatial filter through classifier. x: [B, W, C, T].
template <typename Real>
ForwardResult<Real> spatial_head(Model<Real>& model, Graph<Real>& g, Var<Real> x, const ForwardContext& ctx) {
  const ModelConfig& cfg = model.config();
  const std::size_t W = x.dim(1);
  const std::size_t WD = W * cfg.depth_multiplier;
  ForwardResult<Real> r;
  {
    typename Graph<Real>::Scope s(g, "spatial.depthwise");
    auto& dw = model.layer("spatial.depthwise");
    x = layers::depthwise_conv_spatial(x, slice_to(g.parameter(dw.weight("kernel")), 0, W));
    x = bn_sliced(g, model.layer("spatial.bn1"), x, WD, ctx);
    x = layers::elu(x);
    x = layers::avg_pool_temporal(x, cfg.pool1);
    x = dropout_if(x, cfg.spatial_dropout, ctx, layers::DropoutStyle::element);
    r.spatial = x;
  }
  {
    typename Graph<Real>::Scope s(g, "spatial.separable");
    auto& sep = model.layer("spatial.separable");
    x = layers::separable_conv_temporal(x, slice_to(g.parameter(sep.weight("depthwise")), 0, WD),
                                        slice_to(g.parameter(sep.weight("pointwise")), 1, WD));
    x = bn(g, model.layer("spatial.bn2"), x, ctx);
    x = layers::elu(x);
    x = layers::avg_pool_temporal(x, cfg.pool2);
    x = dropout_if(x, cfg.spatial_dropout, ctx, layers::DropoutStyle::element);
  }
  typename Graph<Real>::Scope s(g, "classifier");
  r.flat = ops::reshape(x, {x.dim(0), x.numel() / x.dim(0)});
  auto& dense = model.layer("classifier");
  r.logits = layers::linear(r.flat, g.parameter(dense.weight("weight")), g.parameter(dense.weight("bias")));
  r.probs = layers::softmax(r.logits);
  return r;
}

template <typename Real>
Var<Real> conv_bn(Graph<Real>& g, Model<Real>& model, const std::string& prefix, Var<Real> x,
                  const ForwardContext& ctx) {
  x = layers::conv_temporal(x, g.parameter(model.layer(prefix + ".conv").weight("kernel")));
  return bn(g, model.layer(prefix + ".bn"), x, ctx);
}

}  // namespace

template <typename Real>
Var<Real> single_branch(Model<Real>& model, Graph<Real>& g, Var<Real> x, std::size_t branch,
                        const ForwardContext& ctx) {
  typename Graph<Real>::Scope s(g, branch_name(branch));
  x = layers::elu(conv_bn(g, model, branch_name(branch), x, ctx));
  return dropout_if(x, model.config().branch_dropout, ctx, layers::DropoutStyle::spatial);
}

template <typename Real>
Var<Real> multi_scale_block(Model<Real>& model, Graph<Real>& g, Var<Real> x, const ForwardContext& ctx) {
  if (!has_multiscale(model.variant())) throw std::logic_error("multi_scale_block: variant has no multi-scale block");
  std::vector<Var<Real>> parts;
  for (std::size_t i = 0; i < model.config().branch_kernels.size(); ++i) {
    Var<Real> b = single_branch(model, g, x, i, ctx);
    parts.push_back(ops::scale(b, fusion_scalar(model, g, "branch" + std::to_string(i))));
  }
  Var<Real> out = ops::concat<Real>(parts, 1);
  return ops::scale(out, fusion_scalar(model, g, "conv_stream"));
}

template <typename Real>
Var<Real> transformer_stream(Model<Real>& model, Graph<Real>& g, Var<Real> x, const ForwardContext& ctx,
                             Var<Real>* attention) {
  if (!has_transformer(model.variant())) throw std::logic_error("transformer_stream: variant has no Transformer");
  typename Graph<Real>::Scope s(g, "transformer");
  const std::size_t B = x.dim(0), C = x.dim(2), T = x.dim(3);
  const double rate = model.config().transformer_dropout;
  Var<Real> tokens = ops::transpose(ops::reshape(x, {B, C, T}), {0, 2, 1});  // [B, T, C]

  auto attn = layers::multi_head_attention(tokens, model.layer("transformer.attention"));
  if (attention) *attention = attn.weights;
  Var<Real> h = ops::add(tokens, dropout_if(attn.output, rate, ctx, layers::DropoutStyle::element));
  auto& n1 = model.layer("transformer.norm1");
  h = layers::layer_norm(h, 2, g.parameter(n1.weight("gamma")), g.parameter(n1.weight("beta")));

  auto& ff1 = model.layer("transformer.ff1");
  auto& ff2 = model.layer("transformer.ff2");
  Var<Real> f = layers::gelu(layers::linear(h, g.parameter(ff1.weight("weight")), g.parameter(ff1.weight("bias"))));
  f = layers::linear(f, g.parameter(ff2.weight("weight")), g.parameter(ff2.weight("bias")));
  h = ops::add(h, dropout_if(f, rate, ctx, layers::DropoutStyle::element));
  auto& n2 = model.layer("transformer.norm2");
  h = layers::layer_norm(h, 2, g.parameter(n2.weight("gamma")), g.parameter(n2.weight("beta")));

  Var<Real> back = ops::reshape(ops::transpose(h, {0, 2, 1}), {B, 1, C, T});
  return ops::scale(back, fusion_scalar(model, g, "transformer_stream"));
}

template <typename Real>
Var<Real> fuse(Model<Real>& model, Graph<Real>& g, Var<Real> conv_out, Var<Real> trans_out) {
  const Shape& a = conv_out.shape();
  const Shape& b = trans_out.shape();
  if (a.size() != 4 || b.size() != 4 || a[0] != b[0] || a[2] != b[2] || a[3] != b[3]) {
    throw ShapeError("fuse: incompatible streams " + shape_str(a) + " and " + shape_str(b));
  }
  typename Graph<Real>::Scope s(g, "fusion");
  std::vector<Var<Real>> parts{conv_out, trans_out};
  Var<Real> cat = ops::concat<Real>(parts, 1);
  auto& ln = model.layer("fusion.norm");
  return layers::layer_norm(cat, 1, g.parameter(ln.weight("gamma")), g.parameter(ln.weight("beta")));
}

template <typename Real>
ForwardResult<Real> Model<Real>::forward(Graph<Real>& g, Var<Real> x, const ForwardContext& ctx) {
  const Shape& s = x.shape();
  if (s.size() != 3 || s[1] != config_.electrodes || s[2] != config_.samples) {
    throw ShapeError("forward: expected input [B, " + std::to_string(config_.electrodes) + ", " +
                     std::to_string(config_.samples) + "], got " + shape_str(s));
  }
  if (ctx.exclude_transformer && config_.variant != Variant::full) {
    throw std::invalid_argument("forward: exclude_transformer applies to the full variant only");
  }
  Var<Real> x4 = ops::reshape(x, {s[0], 1, s[1], s[2]});
  Var<Real> conv, trans, attention, fused;

  switch (config_.variant) {
    case Variant::full:
    case Variant::no_transformer:
      conv = multi_scale_block(*this, g, x4, ctx);
      break;
    case Variant::no_multiscale: {
      Var<Real> b = single_branch(*this, g, x4, 0, ctx);
      conv = ops::scale(ops::scale(b, fusion_scalar(*this, g, "branch0")), fusion_scalar(*this, g, "conv_stream"));
      break;
    }
    case Variant::eegnet_baseline: {
      typename Graph<Real>::Scope sc(g, "temporal");
      conv = conv_bn(g, *this, "temporal", x4, ctx);
      break;
    }
  }

  if (has_transformer(config_.variant) && !ctx.exclude_transformer) {
    trans = transformer_stream(*this, g, x4, ctx, &attention);
    fused = fuse(*this, g, conv, trans);
  } else if (config_.variant == Variant::eegnet_baseline) {
    fused = conv;
  } else {
    typename Graph<Real>::Scope sc(g, "fusion");
    auto& ln = layer("fusion.norm");
    const std::size_t W = conv.dim(1);
    fused = layers::layer_norm(conv, 1, slice_to(g.parameter(ln.weight("gamma")), 0, W),
                               slice_to(g.parameter(ln.weight("beta")), 0, W));
  }

  ForwardResult<Real> r = spatial_head(*this, g, fused, ctx);
  r.conv_stream = conv;
  r.transformer = trans;
  r.fused = fused;
  r.attention = attention;
  return r;
}

// ---------------------------------------------------------------------------
// Construction

template <typename Real>
Model<Real> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  layers::Rng rng(seed);
  std::vector<LayerParams<Real>> ls;
  const std::size_t C = cfg.electrodes;
  const std::size_t F = cfg.branch_filters;

  switch (cfg.variant) {
    case Variant::full:
    case Variant::no_transformer:
      for (std::size_t i = 0; i < cfg.branch_kernels.size(); ++i) {
        ls.push_back(layers::make_conv_temporal<Real>(branch_name(i) + ".conv", 1, F, cfg.branch_kernels[i], rng));
        ls.push_back(layers::make_batch_norm<Real>(branch_name(i) + ".bn", F));
      }
      break;
    case Variant::no_multiscale:
      ls.push_back(layers::make_conv_temporal<Real>(branch_name(0) + ".conv", 1, F, cfg.single_scale_kernel, rng));
      ls.push_back(layers::make_batch_norm<Real>(branch_name(0) + ".bn", F));
      break;
    case Variant::eegnet_baseline:
      ls.push_back(layers::make_conv_temporal<Real>("temporal.conv", 1, F, cfg.baseline_kernel, rng));
      ls.push_back(layers::make_batch_norm<Real>("temporal.bn", F));
      break;
  }
  if (has_transformer(cfg.variant)) {
    ls.push_back(layers::make_attention<Real>("transformer.attention", C, cfg.attention_heads, rng));
    ls.push_back(layers::make_layer_norm<Real>("transformer.norm1", C));
    ls.push_back(layers::make_dense<Real>("transformer.ff1", C, cfg.ff_dim, true, 0.0, rng));
    ls.push_back(layers::make_dense<Real>("transformer.ff2", cfg.ff_dim, C, true, 0.0, rng));
    ls.push_back(layers::make_layer_norm<Real>("transformer.norm2", C));
  }
  const std::size_t W = cfg.fused_width();
  if (cfg.variant != Variant::eegnet_baseline) {
    ls.push_back(layers::make_scalars<Real>("fusion", scalar_names(cfg), Real(1)));
    ls.push_back(layers::make_layer_norm<Real>("fusion.norm", W));
  }
  const std::size_t WD = W * cfg.depth_multiplier;
  ls.push_back(layers::make_depthwise_spatial<Real>("spatial.depthwise", W, cfg.depth_multiplier, C, rng));
  ls.push_back(layers::make_batch_norm<Real>("spatial.bn1", WD));
  ls.push_back(layers::make_separable_temporal<Real>("spatial.separable", WD, cfg.separable_filters,
                                                     cfg.separable_kernel, rng));
  ls.push_back(layers::make_batch_norm<Real>("spatial.bn2", cfg.separable_filters));
  ls.push_back(layers::make_dense<Real>("classifier", cfg.flat_features(), cfg.classes, true, cfg.dense_max_norm, rng));
  return Model<Real>(cfg, std::move(ls));
}

template <typename Real>
Model<Real> build_ablation(ModelConfig config, Variant variant, std::uint64_t seed) {
  config.variant = variant;
  return build_model<Real>(config, seed);
}

template <typename Real>
ParameterCount count_parameters(const Model<Real>& model) {
  ParameterCount c;
  for (const auto& l : model.layers()) {
    for (const auto& p : l.weights) {
      const std::size_t n = p.value.numel();
      (p.trainable ? c.trainable : c.non_trainable) += n;
      c.breakdown.push_back({p.name, p.value.shape(), n, p.trainable});
    }
    for (const auto& p : l.state) {
      c.non_trainable += p.value.numel();
      c.breakdown.push_back({p.name, p.value.shape(), p.value.numel(), false});
    }
  }
  return c;
}

std::size_t analytic_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  using layers::analytic_trainable_count;
  const double C = double(cfg.electrodes);
  const std::size_t Ci = cfg.electrodes, Ti = cfg.samples, F = cfg.branch_filters;
  const Shape raw{1, 1, Ci, Ti};
  std::size_t total = 0;
  auto temporal = [&](std::size_t k) {
    total += analytic_trainable_count("conv_temporal", {{"filters", double(F)}, {"kernel", double(k)}}, raw);
    total += analytic_trainable_count("batch_norm", {}, {1, F, Ci, Ti});
  };
  switch (cfg.variant) {
    case Variant::full:
    case Variant::no_transformer:
      for (std::size_t k : cfg.branch_kernels) temporal(k);
      break;
    case Variant::no_multiscale:
      temporal(cfg.single_scale_kernel);
      break;
    case Variant::eegnet_baseline:
      temporal(cfg.baseline_kernel);
      break;
  }
  if (has_transformer(cfg.variant)) {
    const Shape tokens{1, Ti, Ci};
    total += analytic_trainable_count("attention", {{"heads", double(cfg.attention_heads)}}, tokens);
    total += 2 * analytic_trainable_count("layer_norm", {{"axis", 2}}, tokens);
    total += analytic_trainable_count("dense", {{"units", double(cfg.ff_dim)}, {"bias", 1}}, tokens);
    total += analytic_trainable_count("dense", {{"units", C}, {"bias", 1}}, {1, Ti, cfg.ff_dim});
  }
  const std::size_t W = cfg.fused_width();
  if (cfg.variant != Variant::eegnet_baseline) {
    total += analytic_trainable_count("scalars", {{"count", double(scalar_names(cfg).size())}}, {});
    total += analytic_trainable_count("layer_norm", {{"axis", 1}}, {1, W, Ci, Ti});
  }
  const std::size_t WD = W * cfg.depth_multiplier;
  total += analytic_trainable_count("depthwise_spatial", {{"depth", double(cfg.depth_multiplier)}}, {1, W, Ci, Ti});
  total += analytic_trainable_count("batch_norm", {}, {1, WD, 1, Ti});
  total += analytic_trainable_count(
      "separable_temporal", {{"filters", double(cfg.separable_filters)}, {"kernel", double(cfg.separable_kernel)}},
      {1, WD, 1, Ti / cfg.pool1});
  total += analytic_trainable_count("batch_norm", {}, {1, cfg.separable_filters, 1, cfg.pooled_samples()});
  total += analytic_trainable_count("dense", {{"units", double(cfg.classes)}, {"bias", 1}}, {1, cfg.flat_features()});
  return total;
}

#define MFTNET_INSTANTIATE_MODEL(R)                                                                           \
  template class Model<R>;                                                                                    \
  template Model<R> build_model<R>(const ModelConfig&, std::uint64_t);                                       \
  template Model<R> build_ablation<R>(ModelConfig, Variant, std::uint64_t);                                  \
  template ParameterCount count_parameters(const Model<R>&);                                                  \
  template Var<R> multi_scale_block(Model<R>&, Graph<R>&, Var<R>, const ForwardContext&);                     \
  template Var<R> single_branch(Model<R>&, Graph<R>&, Var<R>, std::size_t, const ForwardContext&);            \
  template Var<R> transformer_stream(Model<R>&, Graph<R>&, Var<R>, const ForwardContext&, Var<R>*);           \
  template Var<R> fuse(Model<R>&, Graph<R>&, Var<R>, Var<R>);

MFTNET_INSTANTIATE_MODEL(float)
MFTNET_INSTANTIATE_MODEL(double)

}  // namespace mftnet
