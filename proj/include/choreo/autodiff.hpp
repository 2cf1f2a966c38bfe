#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "choreo/params.hpp"
#include "choreo/tensor.hpp"

namespace choreo {

class Tape;

// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode tape. Nodes are appended in evaluation order, so the reverse of
// insertion order is a valid topological order for backward().
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a named parameter; repeated calls return the same node.
  Var param(const ParamSet& params, const std::string& name);
  // Parameters of a frozen set enter the tape as constants (no gradient work).
  void freeze(const ParamSet& params) { frozen_.push_back(&params); }

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const char* op_name(Var v) const { return nodes_[v.id].op; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Computes d(output)/d(node) for every node. Output must be 1x1.
  void backward(Var output);
  // Gradient of the last backward() output w.r.t. v (zeros if v did not contribute).
  Tensor grad(Var v) const;
  // Gradients for every parameter of `params`; parameters that were never put on
  // the tape, or did not contribute, get zero tensors.
  Gradients gradients(const ParamSet& params) const;
  Gradients backward(Var output, const ParamSet& params) {
    backward(output);
    return gradients(params);
  }

  // Used by op implementations.
  Var record(Tensor value, const char* op, std::initializer_list<Var> parents, BackwardFn fn);
  Var record(Tensor value, const char* op, std::span<const Var> parents, BackwardFn fn);
  const Tensor& upstream(std::size_t id) const { return grads_[id]; }
  Tensor& grad_ref(std::size_t id);
  const Tensor& node_value(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    const char* op;
    bool requires_grad;
    BackwardFn backward;
  };
  struct ParamBinding {
    const ParamSet* set;
    std::string name;
    std::size_t id;
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<ParamBinding> bindings_;
  std::vector<const ParamSet*> frozen_;
};

// Differentiable primitives. Binary elementwise ops broadcast along any
// dimension of size 1 (e.g. [m,n] with [1,n], [m,1] or [1,1]).
namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var tanh(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var square(Var a);

// Row-wise softmax / log-softmax over the columns.
Var softmax(Var a);
Var log_softmax(Var a);

Var sum(Var a);       // -> [1,1]
Var mean(Var a);      // -> [1,1]
Var sum_cols(Var a);  // [m,n] -> [m,1]
Var l2_norm(Var a);   // row-wise, [m,n] -> [m,1]; zero subgradient at 0

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
Var slice_rows(Var a, std::size_t begin, std::size_t end);
Var gather_rows(Var a, std::span<const std::size_t> rows);
Var reshape(Var a, std::size_t rows, std::size_t cols);

Var stop_gradient(Var a);
// Forward value is `value`, backward passes the upstream gradient to `surrogate`
// unchanged (straight-through estimator). Shapes must match.
Var straight_through(Tensor value, Var surrogate);
// Clip to [lo, hi] in the forward pass, identity gradient.
Var clip_straight_through(Var a, double lo, double hi);

}  // namespace ops

// Constant one-hot rows: result(r, indices[r]) = 1.
Tensor one_hot(std::span<const std::size_t> indices, std::size_t classes);

inline Var operator+(Var a, Var b) { return ops::add(a, b); }
inline Var operator-(Var a, Var b) { return ops::sub(a, b); }
inline Var operator*(Var a, Var b) { return ops::mul(a, b); }
inline Var operator-(Var a) { return ops::neg(a); }
inline Var operator*(double s, Var a) { return ops::scale(a, s); }

}  // namespace choreo
