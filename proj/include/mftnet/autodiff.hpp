#pragma once

// Tape-based reverse-mode automatic differentiation.
//
// A Graph records one node per primitive evaluated while building a forward
// pass. Nodes are appended in evaluation order, so the tape is always in
// topological order and backward() is a single reverse sweep. Every Var is a
// (graph, node) handle; a Graph must outlive the Vars it hands out.

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <deque>
#include <unordered_map>
#include <vector>

#include "mftnet/tensor.hpp"

namespace mftnet {

enum class OpKind {
  leaf,
  constant,
  add,
  mul,
  matmul,
  concat,
  slice,
  reshape,
  transpose,
  reduce_mean,
  reduce_sum,
  exp,
  log,
  tanh,
  erf,
  max,
  broadcast_scale,
  // Fused layer primitives (see layers.hpp).
  conv_temporal,
  depthwise_spatial,
  depthwise_temporal,
  pointwise,
  batch_norm,
  layer_norm,
  elu,
  gelu,
  softmax,
  avg_pool,
  dropout,
  linear,
  cross_entropy,
};

std::string_view op_name(OpKind kind);

// Misuse of the tape: backward on a non-scalar, a second backward, mixing
// graphs.
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf produced by a node while debug checks are on.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// When enabled, every recorded node is scanned for NaN/Inf and a
// NonFiniteError naming the op (and the enclosing scope label) is thrown.
void set_debug_checks(bool enabled);
bool debug_checks();

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
  // Post-step L2 projection radius for each row (unit) of a 2-D weight;
  // 0 disables the constraint.
  double max_norm = 0.0;
};

template <typename Real>
class Graph;

template <typename Real>
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph<Real>& graph() const;
  std::size_t id() const noexcept { return id_; }
  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  std::size_t numel() const { return value().numel(); }

 private:
  friend class Graph<Real>;
  Var(Graph<Real>* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph<Real>* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Gradients of named leaves (parameters and differentiable inputs) that are
// reachable from the root. Unreachable leaves are absent.
template <typename Real>
using GradientMap = std::map<std::string, Tensor<Real>>;

template <typename Real>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var<Real> constant(Tensor<Real> value);
  // Differentiable leaf reported in the gradient map under `name`.
  Var<Real> input(Tensor<Real> value, std::string name);
  // Binds a parameter. Binding the same parameter twice returns the same
  // node, so reuse accumulates gradient contributions in recording order.
  // Non-trainable parameters bind as constants.
  Var<Real> parameter(Parameter<Real>& param);

  // Appends a node. The backward function is kept only if gradient mode is
  // on and at least one input requires a gradient.
  Var<Real> record(OpKind kind, Tensor<Real> value, std::vector<std::size_t> inputs,
                   BackwardFn backward);

  GradientMap<Real> backward(Var<Real> root);

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(std::size_t id) const { return node(id).kind; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return node(id).inputs; }
  const Tensor<Real>& value(std::size_t id) const { return node(id).value; }
  bool requires_grad(std::size_t id) const { return node(id).requires_grad; }

  // Gradient after backward(); null tensor if the node received none.
  const Tensor<Real>& grad(std::size_t id) const { return node(id).grad; }
  const Tensor<Real>& grad(Var<Real> v) const { return grad(v.id()); }

  // Zero-initialized on first access. For use inside backward functions.
  Tensor<Real>& grad_buffer(std::size_t id);

  void push_scope(std::string label) { scopes_.push_back(std::move(label)); }
  void pop_scope() { scopes_.pop_back(); }
  std::string scope() const;

  class Scope {
   public:
    Scope(Graph& g, std::string label) : g_(g) { g_.push_scope(std::move(label)); }
    ~Scope() { g_.pop_scope(); }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph& g_;
  };

 private:
  struct Node {
    OpKind kind;
    Tensor<Real> value;
    Tensor<Real> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    std::string leaf_name;
  };

  const Node& node(std::size_t id) const;
  Node& node(std::size_t id);

  bool grad_enabled_;
  bool backward_done_ = false;
  std::deque<Node> nodes_;  // deque: references stay valid as the tape grows
  std::unordered_map<const Parameter<Real>*, std::size_t> bound_params_;
  std::vector<std::string> scopes_;
};

// Primitive operations. Binary elementwise ops broadcast numpy-style
// (right-aligned; each extent equal or 1).
namespace ops {

template <typename Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> sub(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> mul(Var<Real> a, Var<Real> b);
// a: [..., M, K]; b: [K, N] (shared) or [..., K, N] with a's batch prefix.
template <typename Real> Var<Real> matmul(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> concat(std::span<const Var<Real>> parts, std::size_t axis);
template <typename Real> Var<Real> slice(Var<Real> a, std::size_t axis, std::size_t start, std::size_t length);
template <typename Real> Var<Real> reshape(Var<Real> a, Shape shape);
template <typename Real> Var<Real> transpose(Var<Real> a, std::vector<std::size_t> perm);
// Reductions keep reduced axes with extent 1.
template <typename Real> Var<Real> reduce_sum(Var<Real> a, std::vector<std::size_t> axes);
template <typename Real> Var<Real> reduce_mean(Var<Real> a, std::vector<std::size_t> axes);
// Full reductions to shape [1].
template <typename Real> Var<Real> sum(Var<Real> a);
template <typename Real> Var<Real> mean(Var<Real> a);
template <typename Real> Var<Real> exp(Var<Real> a);
template <typename Real> Var<Real> log(Var<Real> a);
template <typename Real> Var<Real> tanh(Var<Real> a);
template <typename Real> Var<Real> erf(Var<Real> a);
// Max along one axis (kept with extent 1); the gradient flows to the first
// maximal element.
template <typename Real> Var<Real> reduce_max(Var<Real> a, std::size_t axis);
// a * s where s holds a single value.
template <typename Real> Var<Real> scale(Var<Real> a, Var<Real> s);
template <typename Real> Var<Real> scale(Var<Real> a, Real s);

}  // namespace ops

extern template class Graph<float>;
extern template class Graph<double>;
extern template class Var<float>;
extern template class Var<double>;

}  // namespace mftnet
