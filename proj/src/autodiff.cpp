#include "mftnet/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>

#include "mftnet/kernels.hpp"

namespace mftnet {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::matmul: return "matmul";
    case OpKind::concat: return "concat";
    case OpKind::slice: return "slice";
    case OpKind::reshape: return "reshape";
    case OpKind::transpose: return "transpose";
    case OpKind::reduce_mean: return "reduce-mean";
    case OpKind::reduce_sum: return "reduce-sum";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::tanh: return "tanh";
    case OpKind::erf: return "erf";
    case OpKind::max: return "max";
    case OpKind::broadcast_scale: return "broadcast-scale";
    case OpKind::conv_temporal: return "conv-temporal";
    case OpKind::depthwise_spatial: return "depthwise-spatial";
    case OpKind::depthwise_temporal: return "depthwise-temporal";
    case OpKind::pointwise: return "pointwise";
    case OpKind::batch_norm: return "batch-norm";
    case OpKind::layer_norm: return "layer-norm";
    case OpKind::elu: return "elu";
    case OpKind::gelu: return "gelu";
    case OpKind::softmax: return "softmax";
    case OpKind::avg_pool: return "avg-pool";
    case OpKind::dropout: return "dropout";
    case OpKind::linear: return "linear";
    case OpKind::cross_entropy: return "cross-entropy";
  }
  return "unknown";
}

namespace {
std::atomic<bool> g_debug_checks{false};
}

void set_debug_checks(bool enabled) { g_debug_checks.store(enabled); }
bool debug_checks() { return g_debug_checks.load(); }

// ---------------------------------------------------------------------------
// Var / Graph

template <typename Real>
Graph<Real>& Var<Real>::graph() const {
  if (!graph_) throw AutodiffError("use of an unbound Var");
  return *graph_;
}

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return graph().value(id_);
}

template <typename Real>
const typename Graph<Real>::Node& Graph<Real>::node(std::size_t id) const {
  if (id >= nodes_.size()) throw AutodiffError("node id out of range");
  return nodes_[id];
}

template <typename Real>
typename Graph<Real>::Node& Graph<Real>::node(std::size_t id) {
  if (id >= nodes_.size()) throw AutodiffError("node id out of range");
  return nodes_[id];
}

template <typename Real>
std::string Graph<Real>::scope() const {
  std::string s;
  for (const auto& part : scopes_) {
    if (!s.empty()) s += '/';
    s += part;
  }
  return s;
}

template <typename Real>
Var<Real> Graph<Real>::constant(Tensor<Real> value) {
  if (value.is_null()) throw AutodiffError("constant: null tensor");
  nodes_.push_back(Node{OpKind::constant, std::move(value), {}, {}, {}, false, {}});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Graph<Real>::input(Tensor<Real> value, std::string name) {
  if (value.is_null()) throw AutodiffError("input: null tensor");
  nodes_.push_back(Node{OpKind::leaf, std::move(value), {}, {}, {}, grad_enabled_, std::move(name)});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Graph<Real>::parameter(Parameter<Real>& param) {
  if (auto it = bound_params_.find(&param); it != bound_params_.end()) {
    return Var<Real>(this, it->second);
  }
  Var<Real> v = param.trainable ? input(param.value, param.name) : constant(param.value);
  bound_params_.emplace(&param, v.id());
  return v;
}

template <typename Real>
Var<Real> Graph<Real>::record(OpKind kind, Tensor<Real> value, std::vector<std::size_t> inputs,
                              BackwardFn backward) {
  if (backward_done_) throw AutodiffError("graph already differentiated; record a new graph");
  if (debug_checks() && !value.all_finite()) {
    std::string where = scope();
    throw NonFiniteError("non-finite output from " + std::string(op_name(kind)) +
                         (where.empty() ? std::string() : " in " + where));
  }
  bool needs = false;
  if (grad_enabled_) {
    for (std::size_t in : inputs) needs = needs || node(in).requires_grad;
  }
  if (!needs) backward = nullptr;
  nodes_.push_back(Node{kind, std::move(value), {}, std::move(inputs), std::move(backward), needs, {}});
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad_buffer(std::size_t id) {
  Node& n = node(id);
  if (n.grad.is_null()) n.grad = Tensor<Real>(n.value.shape());
  return n.grad;
}

template <typename Real>
GradientMap<Real> Graph<Real>::backward(Var<Real> root) {
  if (&root.graph() != this) throw AutodiffError("backward: root belongs to another graph");
  if (backward_done_) throw AutodiffError("backward called twice on the same recording");
  if (!grad_enabled_) throw AutodiffError("backward on a graph recorded without gradients");
  if (root.numel() != 1) {
    throw AutodiffError("backward root must be scalar, got shape " + shape_str(root.shape()));
  }
  backward_done_ = true;

  const std::size_t rid = root.id();
  std::vector<char> reachable(rid + 1, 0);
  reachable[rid] = node(rid).requires_grad ? 1 : 0;
  for (std::size_t i = rid + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    for (std::size_t in : nodes_[i].inputs) {
      if (nodes_[in].requires_grad) reachable[in] = 1;
    }
  }

  GradientMap<Real> out;
  if (!reachable[rid]) return out;
  grad_buffer(rid).fill(Real(1));
  for (std::size_t i = rid + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!reachable[i] || n.grad.is_null() || !n.backward) continue;
    n.backward(*this, i);
  }
  for (std::size_t i = 0; i <= rid; ++i) {
    Node& n = nodes_[i];
    if (reachable[i] && n.kind == OpKind::leaf && !n.leaf_name.empty()) {
      out.emplace(n.leaf_name, n.grad.is_null() ? Tensor<Real>(n.value.shape()) : n.grad);
    }
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;
template class Var<float>;
template class Var<double>;

// ---------------------------------------------------------------------------
// Primitives

namespace ops {
namespace {

template <typename Real>
Graph<Real>& same_graph(std::initializer_list<Var<Real>> vars) {
  Graph<Real>* g = nullptr;
  for (const auto& v : vars) {
    if (!g) g = &v.graph();
    else if (&v.graph() != g) throw AutodiffError("operands recorded on different graphs");
  }
  return *g;
}

std::string mismatch(std::string_view kind, const Shape& a, const Shape& b, std::string_view why = {}) {
  std::string msg = std::string(kind) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b);
  if (!why.empty()) msg += " (" + std::string(why) + ")";
  return msg;
}

struct BroadcastPlan {
  Shape out;
  Shape a_strides;  // 0 on broadcast axes
  Shape b_strides;
};

BroadcastPlan plan_broadcast(std::string_view kind, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(rank, 1);
  p.a_strides.assign(rank, 0);
  p.b_strides.assign(rank, 0);
  const Shape sa = row_major_strides(a);
  const Shape sb = row_major_strides(b);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t ra = rank - a.size();
    const std::size_t rb = rank - b.size();
    const std::size_t da = i >= ra ? a[i - ra] : 1;
    const std::size_t db = i >= rb ? b[i - rb] : 1;
    if (da != db && da != 1 && db != 1) throw ShapeError(mismatch(kind, a, b));
    p.out[i] = std::max(da, db);
    if (i >= ra && da != 1) p.a_strides[i] = sa[i - ra];
    if (i >= rb && db != 1) p.b_strides[i] = sb[i - rb];
  }
  return p;
}

// Calls fn(out_index, a_offset, b_offset) for each output element in
// row-major order.
template <typename Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t rank = p.out.size();
  const std::size_t n = shape_numel(p.out);
  std::vector<std::size_t> coord(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t i = 0; i < n; ++i) {
    fn(i, ia, ib);
    for (std::size_t ax = rank; ax-- > 0;) {
      ++coord[ax];
      ia += p.a_strides[ax];
      ib += p.b_strides[ax];
      if (coord[ax] < p.out[ax]) break;
      ia -= p.a_strides[ax] * coord[ax];
      ib -= p.b_strides[ax] * coord[ax];
      coord[ax] = 0;
    }
  }
}

template <typename Real, typename F, typename D>
Var<Real> unary(Var<Real> a, OpKind kind, F f, D dfdx) {
  Graph<Real>& g = a.graph();
  const Tensor<Real>& x = a.value();
  Tensor<Real> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id();
  return g.record(kind, std::move(y), {ia}, [ia, dfdx](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& x = gr.value(ia);
    const Tensor<Real>& y = gr.value(self);
    const Tensor<Real>& gy = gr.grad(self);
    Tensor<Real>& gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph({a, b});
  const Tensor<Real>& x = a.value();
  const Tensor<Real>& y = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  if (x.shape() == y.shape()) {
    Tensor<Real> out = x;
    kernels::axpy(Real(1), y.data(), out.data(), out.numel());
    return g.record(OpKind::add, std::move(out), {ia, ib}, [ia, ib](Graph<Real>& gr, std::size_t self) {
      const Tensor<Real>& go = gr.grad(self);
      if (gr.requires_grad(ia)) kernels::axpy(Real(1), go.data(), gr.grad_buffer(ia).data(), go.numel());
      if (gr.requires_grad(ib)) kernels::axpy(Real(1), go.data(), gr.grad_buffer(ib).data(), go.numel());
    });
  }
  BroadcastPlan plan = plan_broadcast("add", x.shape(), y.shape());
  Tensor<Real> out(plan.out);
  for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = x[oa] + y[ob]; });
  return g.record(OpKind::add, std::move(out), {ia, ib},
                  [ia, ib, plan](Graph<Real>& gr, std::size_t self) {
                    const Tensor<Real>& go = gr.grad(self);
                    const bool ga_on = gr.requires_grad(ia), gb_on = gr.requires_grad(ib);
                    Tensor<Real>* ga = ga_on ? &gr.grad_buffer(ia) : nullptr;
                    Tensor<Real>* gb = gb_on ? &gr.grad_buffer(ib) : nullptr;
                    for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                      if (ga) (*ga)[oa] += go[i];
                      if (gb) (*gb)[ob] += go[i];
                    });
                  });
}

template <typename Real>
Var<Real> sub(Var<Real> a, Var<Real> b) {
  return add(a, scale(b, Real(-1)));
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph({a, b});
  const Tensor<Real>& x = a.value();
  const Tensor<Real>& y = b.value();
  const std::size_t ia = a.id(), ib = b.id();
  BroadcastPlan plan = plan_broadcast("mul", x.shape(), y.shape());
  Tensor<Real> out(plan.out);
  if (x.shape() == y.shape()) {
    kernels::mul(x.data(), y.data(), out.data(), out.numel());
  } else {
    for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) { out[i] = x[oa] * y[ob]; });
  }
  return g.record(OpKind::mul, std::move(out), {ia, ib},
                  [ia, ib, plan](Graph<Real>& gr, std::size_t self) {
                    const Tensor<Real>& go = gr.grad(self);
                    const Tensor<Real>& x = gr.value(ia);
                    const Tensor<Real>& y = gr.value(ib);
                    Tensor<Real>* ga = gr.requires_grad(ia) ? &gr.grad_buffer(ia) : nullptr;
                    Tensor<Real>* gb = gr.requires_grad(ib) ? &gr.grad_buffer(ib) : nullptr;
                    for_each_broadcast(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
                      if (ga) (*ga)[oa] += go[i] * y[ob];
                      if (gb) (*gb)[ob] += go[i] * x[oa];
                    });
                  });
}

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Graph<Real>& g = same_graph({a, b});
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) throw ShapeError(mismatch("matmul", sa, sb, "operands need rank >= 2"));
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], n = sb.back();
  if (k != kb) throw ShapeError(mismatch("matmul", sa, sb, "inner extents differ"));
  const bool shared = sb.size() == 2;
  if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
    throw ShapeError(mismatch("matmul", sa, sb, "batch extents differ"));
  }
  const std::size_t batch = shape_numel(Shape(sa.begin(), sa.end() - 2));
  Shape out_shape(sa.begin(), sa.end() - 1);
  out_shape.push_back(n);
  Tensor<Real> out(out_shape);
  const Real* A = a.value().data();
  const Real* B = b.value().data();
  for (std::size_t bi = 0; bi < batch; ++bi) {
    const Real* Ab = A + bi * m * k;
    const Real* Bb = shared ? B : B + bi * k * n;
    Real* Cb = out.data() + bi * m * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t kk = 0; kk < k; ++kk) kernels::axpy(Ab[i * k + kk], Bb + kk * n, Cb + i * n, n);
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return g.record(OpKind::matmul, std::move(out), {ia, ib},
                  [ia, ib, batch, m, k, n, shared](Graph<Real>& gr, std::size_t self) {
                    const Real* G = gr.grad(self).data();
                    const Real* A = gr.value(ia).data();
                    const Real* B = gr.value(ib).data();
                    Real* GA = gr.requires_grad(ia) ? gr.grad_buffer(ia).data() : nullptr;
                    Real* GB = gr.requires_grad(ib) ? gr.grad_buffer(ib).data() : nullptr;
                    for (std::size_t bi = 0; bi < batch; ++bi) {
                      const Real* Gb = G + bi * m * n;
                      const Real* Ab = A + bi * m * k;
                      const Real* Bb = shared ? B : B + bi * k * n;
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t kk = 0; kk < k; ++kk) {
                          if (GA) GA[bi * m * k + i * k + kk] += kernels::dot(Gb + i * n, Bb + kk * n, n);
                          if (GB) {
                            Real* GBb = shared ? GB : GB + bi * k * n;
                            kernels::axpy(Ab[i * k + kk], Gb + i * n, GBb + kk * n, n);
                          }
                        }
                      }
                    }
                  });
}

template <typename Real>
Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Graph<Real>& g = parts[0].graph();
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids, widths;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw AutodiffError("concat: operands recorded on different graphs");
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError(mismatch("concat", first, s, "rank differs"));
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) throw ShapeError(mismatch("concat", first, s));
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id());
    widths.push_back(s[axis]);
  }
  const std::size_t outer = shape_numel(Shape(first.begin(), first.begin() + axis));
  const std::size_t inner = shape_numel(Shape(first.begin() + axis + 1, first.end()));
  Tensor<Real> out(out_shape);
  const std::size_t total = out_shape[axis];
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Real* src = parts[p].value().data();
    const std::size_t w = widths[p] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * w, w, out.data() + (o * total + offset) * inner);
    }
    offset += widths[p];
  }
  return g.record(OpKind::concat, std::move(out), ids,
                  [ids, widths, outer, inner, total](Graph<Real>& gr, std::size_t self) {
                    const Real* go = gr.grad(self).data();
                    std::size_t offset = 0;
                    for (std::size_t p = 0; p < ids.size(); ++p) {
                      const std::size_t w = widths[p] * inner;
                      if (gr.requires_grad(ids[p])) {
                        Real* dst = gr.grad_buffer(ids[p]).data();
                        for (std::size_t o = 0; o < outer; ++o) {
                          kernels::axpy(Real(1), go + (o * total + offset) * inner, dst + o * w, w);
                        }
                      }
                      offset += widths[p];
                    }
                  });
}

template <typename Real>
Var<Real> slice(Var<Real> a, std::size_t axis, std::size_t start, std::size_t length) {
  Graph<Real>& g = a.graph();
  const Shape& s = a.shape();
  if (axis >= s.size() || length == 0 || start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") on axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  Shape out_shape = s;
  out_shape[axis] = length;
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t full = s[axis];
  Tensor<Real> out(out_shape);
  const Real* src = a.value().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(src + (o * full + start) * inner, length * inner, out.data() + o * length * inner);
  }
  const std::size_t ia = a.id();
  return g.record(OpKind::slice, std::move(out), {ia},
                  [ia, outer, inner, full, start, length](Graph<Real>& gr, std::size_t self) {
                    const Real* go = gr.grad(self).data();
                    Real* gx = gr.grad_buffer(ia).data();
                    for (std::size_t o = 0; o < outer; ++o) {
                      kernels::axpy(Real(1), go + o * length * inner, gx + (o * full + start) * inner,
                                    length * inner);
                    }
                  });
}

template <typename Real>
Var<Real> reshape(Var<Real> a, Shape shape) {
  Graph<Real>& g = a.graph();
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError(mismatch("reshape", a.shape(), shape, "element counts differ"));
  }
  const std::size_t ia = a.id();
  return g.record(OpKind::reshape, a.value().reshaped(std::move(shape)), {ia},
                  [ia](Graph<Real>& gr, std::size_t self) {
                    const Tensor<Real>& go = gr.grad(self);
                    kernels::axpy(Real(1), go.data(), gr.grad_buffer(ia).data(), go.numel());
                  });
}

template <typename Real>
Var<Real> transpose(Var<Real> a, std::vector<std::size_t> perm) {
  Graph<Real>& g = a.graph();
  const Shape& s = a.shape();
  std::vector<std::size_t> check = perm;
  std::sort(check.begin(), check.end());
  std::vector<std::size_t> iota(s.size());
  std::iota(iota.begin(), iota.end(), 0);
  if (check != iota) {
    throw ShapeError("transpose: permutation does not match rank of " + shape_str(s));
  }
  const Shape in_strides = row_major_strides(s);
  BroadcastPlan plan;  // reuse the odometer: "a" walks the input, "b" is unused
  plan.out.resize(s.size());
  plan.a_strides.resize(s.size());
  plan.b_strides.assign(s.size(), 0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    plan.out[i] = s[perm[i]];
    plan.a_strides[i] = in_strides[perm[i]];
  }
  Tensor<Real> out(plan.out);
  const Real* src = a.value().data();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = src[ia]; });
  const std::size_t ia = a.id();
  return g.record(OpKind::transpose, std::move(out), {ia}, [ia, plan](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& go = gr.grad(self);
    Tensor<Real>& gx = gr.grad_buffer(ia);
    for_each_broadcast(plan, [&](std::size_t i, std::size_t off, std::size_t) { gx[off] += go[i]; });
  });
}

namespace {

template <typename Real>
Var<Real> reduce_impl(Var<Real> a, std::vector<std::size_t> axes, bool average, OpKind kind) {
  Graph<Real>& g = a.graph();
  const Shape& s = a.shape();
  Shape out_shape = s;
  for (std::size_t ax : axes) {
    if (ax >= s.size()) throw ShapeError(std::string(op_name(kind)) + ": axis out of range for " + shape_str(s));
    out_shape[ax] = 1;
  }
  const std::size_t count = a.numel() / shape_numel(out_shape);
  // Walk the input; the output offset uses zero strides on reduced axes.
  BroadcastPlan plan;
  plan.out = s;
  plan.a_strides = row_major_strides(s);
  plan.b_strides = row_major_strides(out_shape);
  for (std::size_t ax : axes) plan.b_strides[ax] = 0;
  Tensor<Real> out(out_shape);
  const Tensor<Real>& x = a.value();
  for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t o) { out[o] += x[i]; });
  const Real factor = average ? Real(1) / static_cast<Real>(count) : Real(1);
  if (average) kernels::scal(factor, out.data(), out.numel());
  const std::size_t ia = a.id();
  return g.record(kind, std::move(out), {ia}, [ia, plan, factor](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& go = gr.grad(self);
    Tensor<Real>& gx = gr.grad_buffer(ia);
    for_each_broadcast(plan, [&](std::size_t i, std::size_t, std::size_t o) { gx[i] += factor * go[o]; });
  });
}

template <typename Real>
std::vector<std::size_t> all_axes(const Var<Real>& a) {
  std::vector<std::size_t> axes(a.shape().size());
  std::iota(axes.begin(), axes.end(), 0);
  return axes;
}

}  // namespace

template <typename Real>
Var<Real> reduce_sum(Var<Real> a, std::vector<std::size_t> axes) {
  return reduce_impl(a, std::move(axes), false, OpKind::reduce_sum);
}

template <typename Real>
Var<Real> reduce_mean(Var<Real> a, std::vector<std::size_t> axes) {
  return reduce_impl(a, std::move(axes), true, OpKind::reduce_mean);
}

template <typename Real>
Var<Real> sum(Var<Real> a) {
  return reshape(reduce_sum(a, all_axes(a)), Shape{1});
}

template <typename Real>
Var<Real> mean(Var<Real> a) {
  return reshape(reduce_mean(a, all_axes(a)), Shape{1});
}

template <typename Real>
Var<Real> exp(Var<Real> a) {
  return unary(a, OpKind::exp, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <typename Real>
Var<Real> log(Var<Real> a) {
  return unary(a, OpKind::log, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Var<Real> tanh(Var<Real> a) {
  return unary(a, OpKind::tanh, [](Real x) { return std::tanh(x); },
               [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Var<Real> erf(Var<Real> a) {
  return unary(a, OpKind::erf, [](Real x) { return std::erf(x); }, [](Real x, Real) {
    return static_cast<Real>(2.0 / std::sqrt(M_PI)) * std::exp(-x * x);
  });
}

template <typename Real>
Var<Real> reduce_max(Var<Real> a, std::size_t axis) {
  Graph<Real>& g = a.graph();
  const Shape& s = a.shape();
  if (axis >= s.size()) throw ShapeError("max: axis out of range for " + shape_str(s));
  const std::size_t outer = shape_numel(Shape(s.begin(), s.begin() + axis));
  const std::size_t inner = shape_numel(Shape(s.begin() + axis + 1, s.end()));
  const std::size_t len = s[axis];
  Shape out_shape = s;
  out_shape[axis] = 1;
  Tensor<Real> out(out_shape);
  std::vector<std::size_t> argmax(outer * inner);
  const Tensor<Real>& x = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      std::size_t best = o * len * inner + in;
      for (std::size_t j = 1; j < len; ++j) {
        const std::size_t idx = (o * len + j) * inner + in;
        if (x[idx] > x[best]) best = idx;
      }
      out[o * inner + in] = x[best];
      argmax[o * inner + in] = best;
    }
  }
  const std::size_t ia = a.id();
  return g.record(OpKind::max, std::move(out), {ia},
                  [ia, argmax = std::move(argmax)](Graph<Real>& gr, std::size_t self) {
                    const Tensor<Real>& go = gr.grad(self);
                    Tensor<Real>& gx = gr.grad_buffer(ia);
                    for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += go[i];
                  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Var<Real> s) {
  Graph<Real>& g = same_graph({a, s});
  if (s.numel() != 1) throw ShapeError(mismatch("broadcast-scale", a.shape(), s.shape(), "scale must hold one value"));
  Tensor<Real> out = a.value();
  kernels::scal(s.value()[0], out.data(), out.numel());
  const std::size_t ia = a.id(), is = s.id();
  return g.record(OpKind::broadcast_scale, std::move(out), {ia, is},
                  [ia, is](Graph<Real>& gr, std::size_t self) {
                    const Tensor<Real>& go = gr.grad(self);
                    const Tensor<Real>& x = gr.value(ia);
                    if (gr.requires_grad(ia)) {
                      kernels::axpy(gr.value(is)[0], go.data(), gr.grad_buffer(ia).data(), go.numel());
                    }
                    if (gr.requires_grad(is)) {
                      gr.grad_buffer(is)[0] += kernels::dot(go.data(), x.data(), go.numel());
                    }
                  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, Real s) {
  Graph<Real>& g = a.graph();
  Tensor<Real> out = a.value();
  kernels::scal(s, out.data(), out.numel());
  const std::size_t ia = a.id();
  return g.record(OpKind::broadcast_scale, std::move(out), {ia}, [ia, s](Graph<Real>& gr, std::size_t self) {
    const Tensor<Real>& go = gr.grad(self);
    kernels::axpy(s, go.data(), gr.grad_buffer(ia).data(), go.numel());
  });
}

#define MFTNET_INSTANTIATE_OPS(R)                                                        \
  template Var<R> add(Var<R>, Var<R>);                                                   \
  template Var<R> sub(Var<R>, Var<R>);                                                   \
  template Var<R> mul(Var<R>, Var<R>);                                                   \
  template Var<R> matmul(Var<R>, Var<R>);                                                \
  template Var<R> concat(std::span<const Var<R>>, std::size_t);                          \
  template Var<R> slice(Var<R>, std::size_t, std::size_t, std::size_t);                  \
  template Var<R> reshape(Var<R>, Shape);                                                \
  template Var<R> transpose(Var<R>, std::vector<std::size_t>);                           \
  template Var<R> reduce_sum(Var<R>, std::vector<std::size_t>);                          \
  template Var<R> reduce_mean(Var<R>, std::vector<std::size_t>);                         \
  template Var<R> sum(Var<R>);                                                           \
  template Var<R> mean(Var<R>);                                                          \
  template Var<R> exp(Var<R>);                                                           \
  template Var<R> log(Var<R>);                                                           \
  template Var<R> tanh(Var<R>);                                                          \
  template Var<R> erf(Var<R>);                                                           \
  template Var<R> reduce_max(Var<R>, std::size_t);                                       \
  template Var<R> scale(Var<R>, Var<R>);                                                 \
  template Var<R> scale(Var<R>, R);

MFTNET_INSTANTIATE_OPS(float)
MFTNET_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace mftnet
