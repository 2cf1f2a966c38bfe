#include "choreo/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "choreo/errors.hpp"

namespace choreo {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap view(const Tensor& t) { return ConstMap(t.data().data(), t.rows(), t.cols()); }
MutMap view(Tensor& t) { return MutMap(t.data().data(), t.rows(), t.cols()); }

Tensor as_matrix(Tensor t) {
  if (t.rank() == 2) return t;
  const auto r = t.rows();
  const auto c = t.cols();
  return t.reshaped({r, c});
}

struct Broadcast {
  std::size_t rows, cols;
  std::size_t ar, ac, br, bc;

  std::size_t a_index(std::size_t r, std::size_t c) const { return (ar == 1 ? 0 : r) * ac + (ac == 1 ? 0 : c); }
  std::size_t b_index(std::size_t r, std::size_t c) const { return (br == 1 ? 0 : r) * bc + (bc == 1 ? 0 : c); }
};

Broadcast broadcast(const Tensor& a, const Tensor& b, const char* op) {
  Broadcast bc{0, 0, a.rows(), a.cols(), b.rows(), b.cols()};
  auto dim = [&](std::size_t x, std::size_t y) {
    if (x != y && x != 1 && y != 1)
      throw ContractViolation(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                              b.shape_string());
    return std::max(x, y);
  };
  bc.rows = dim(bc.ar, bc.br);
  bc.cols = dim(bc.ac, bc.bc);
  return bc;
}

// Elementwise unary op whose derivative can be written from (x, y).
template <class F, class D>
Var elementwise(Var a, const char* op, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t pa = a.id;
  return a.tape->record(std::move(y), op, {a}, [pa, dfdx](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.node_value(pa);
    const Tensor& y = t.node_value(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
  });
}

void require_same_tape(Var a, Var b) {
  CHOREO_REQUIRE(a.tape != nullptr && a.tape == b.tape, "vars belong to different tapes");
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::constant(Tensor value) {
  value = as_matrix(std::move(value));
  if (!value.all_finite()) throw NumericFault("constant");
  nodes_.push_back(Node{std::move(value), "constant", false, {}});
  grads_.emplace_back();
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(const ParamSet& params, const std::string& name) {
  for (const auto& b : bindings_)
    if (b.set == &params && b.name == name) return Var{this, b.id};
  Tensor value = as_matrix(params.at(name));
  if (!value.all_finite()) throw NumericFault("param:" + name);
  const bool frozen = std::find(frozen_.begin(), frozen_.end(), &params) != frozen_.end();
  nodes_.push_back(Node{std::move(value), "param", !frozen, {}});
  grads_.emplace_back();
  bindings_.push_back(ParamBinding{&params, name, nodes_.size() - 1});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, const char* op, std::initializer_list<Var> parents, BackwardFn fn) {
  return record(std::move(value), op, std::span<const Var>(parents.begin(), parents.size()), std::move(fn));
}

Var Tape::record(Tensor value, const char* op, std::span<const Var> parents, BackwardFn fn) {
  if (!value.all_finite()) throw NumericFault(op);
  bool needs = false;
  for (const auto& p : parents) {
    CHOREO_REQUIRE(p.tape == this, std::string(op) + ": var from a different tape");
    needs = needs || nodes_[p.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), op, needs, needs ? std::move(fn) : BackwardFn{}});
  grads_.emplace_back();
  return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_ref(std::size_t id) {
  Tensor& g = grads_[id];
  if (g.empty() && !nodes_[id].value.empty()) g = Tensor::zeros_like(nodes_[id].value);
  return g;
}

void Tape::backward(Var output) {
  CHOREO_REQUIRE(output.tape == this, "backward on a var from another tape");
  const Tensor& out = nodes_[output.id].value;
  if (out.size() != 1)
    throw ContractViolation("backward() requires a scalar output, got shape " + out.shape_string());
  for (auto& g : grads_) g = Tensor{};
  grad_ref(output.id)[0] = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    if (grads_[i].empty() || !nodes_[i].backward) continue;
    if (!grads_[i].all_finite()) throw NumericFault(std::string(nodes_[i].op) + " (backward)");
    nodes_[i].backward(*this, i);
  }
  for (const auto& b : bindings_)
    if (!grads_[b.id].empty() && !grads_[b.id].all_finite()) throw NumericFault("param:" + b.name + " (backward)");
}

Tensor Tape::grad(Var v) const {
  const Tensor& g = grads_[v.id];
  if (g.empty()) return Tensor::zeros_like(nodes_[v.id].value);
  return g;
}

Gradients Tape::gradients(const ParamSet& params) const {
  Gradients out = params.zero_gradients();
  for (const auto& b : bindings_) {
    if (b.set != &params) continue;
    const Tensor& g = grads_[b.id];
    if (g.empty()) continue;
    Tensor& dst = out.at(b.name);
    dst = g.reshaped(dst.shape());
  }
  return out;
}

Tensor one_hot(std::span<const std::size_t> indices, std::size_t classes) {
  Tensor t = Tensor::zeros(indices.size(), classes);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    CHOREO_REQUIRE(indices[r] < classes, "one_hot index out of range");
    t(r, indices[r]) = 1.0;
  }
  return t;
}

namespace ops {

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows())
    throw ContractViolation("matmul: shapes " + x.shape_string() + " and " + y.shape_string());
  Tensor out = Tensor::zeros(x.rows(), y.cols());
  view(out).noalias() = view(x) * view(y);
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->record(std::move(out), "matmul", {a, b}, [pa, pb](Tape& t, std::size_t self) {
    auto g = view(t.upstream(self));
    if (t.requires_grad(pa)) view(t.grad_ref(pa)).noalias() += g * view(t.node_value(pb)).transpose();
    if (t.requires_grad(pb)) view(t.grad_ref(pb)).noalias() += view(t.node_value(pa)).transpose() * g;
  });
}

namespace {

template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA dfa, DB dfb) {
  require_same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const Broadcast bc = broadcast(x, y, op);
  Tensor out = Tensor::zeros(bc.rows, bc.cols);
  for (std::size_t r = 0; r < bc.rows; ++r)
    for (std::size_t c = 0; c < bc.cols; ++c) out(r, c) = f(x[bc.a_index(r, c)], y[bc.b_index(r, c)]);
  const std::size_t pa = a.id, pb = b.id;
  return a.tape->record(std::move(out), op, {a, b}, [pa, pb, bc, dfa, dfb](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& x = t.node_value(pa);
    const Tensor& y = t.node_value(pb);
    if (t.requires_grad(pa)) {
      Tensor& ga = t.grad_ref(pa);
      for (std::size_t r = 0; r < bc.rows; ++r)
        for (std::size_t c = 0; c < bc.cols; ++c) {
          const auto ia = bc.a_index(r, c), ib = bc.b_index(r, c);
          ga[ia] += g(r, c) * dfa(x[ia], y[ib]);
        }
    }
    if (t.requires_grad(pb)) {
      Tensor& gb = t.grad_ref(pb);
      for (std::size_t r = 0; r < bc.rows; ++r)
        for (std::size_t c = 0; c < bc.cols; ++c) {
          const auto ia = bc.a_index(r, c), ib = bc.b_index(r, c);
          gb[ib] += g(r, c) * dfb(x[ia], y[ib]);
        }
    }
  });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var neg(Var a) {
  return elementwise(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double s) {
  return elementwise(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return elementwise(a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var tanh(Var a) {
  return elementwise(
      a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return elementwise(
      a, "sigmoid",
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var exp(Var a) {
  return elementwise(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return elementwise(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var square(Var a) {
  return elementwise(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax(Var a) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto out = y.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) z += (out[c] = std::exp(in[c] - m));
    for (double& v : out) v /= z;
  }
  const std::size_t pa = a.id;
  return a.tape->record(std::move(y), "softmax", {a}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& s = t.node_value(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < s.cols(); ++c) dot += g(r, c) * s(r, c);
      for (std::size_t c = 0; c < s.cols(); ++c) ga(r, c) += s(r, c) * (g(r, c) - dot);
    }
  });
}

Var log_softmax(Var a) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto out = y.row_span(r);
    const double m = *std::max_element(in.begin(), in.end());
    double z = 0.0;
    for (double v : in) z += std::exp(v - m);
    const double lse = m + std::log(z);
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = in[c] - lse;
  }
  const std::size_t pa = a.id;
  return a.tape->record(std::move(y), "log_softmax", {a}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& ls = t.node_value(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t r = 0; r < ls.rows(); ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < ls.cols(); ++c) gsum += g(r, c);
      for (std::size_t c = 0; c < ls.cols(); ++c) ga(r, c) += g(r, c) - std::exp(ls(r, c)) * gsum;
    }
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t pa = a.id;
  return a.tape->record(Tensor::scalar(s), "sum", {a}, [pa](Tape& t, std::size_t self) {
    const double g = t.upstream(self)[0];
    for (double& v : t.grad_ref(pa).values()) v += g;
  });
}

Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_cols(Var a) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (double v : x.row_span(r)) y[r] += v;
  const std::size_t pa = a.id;
  return a.tape->record(std::move(y), "sum_cols", {a}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (double& v : ga.row_span(r)) v += g[r];
  });
}

Var l2_norm(Var a) {
  const Tensor& x = a.value();
  Tensor y = Tensor::zeros(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    for (double v : x.row_span(r)) s += v * v;
    y[r] = std::sqrt(s);
  }
  const std::size_t pa = a.id;
  return a.tape->record(std::move(y), "l2_norm", {a}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    const Tensor& n = t.node_value(self);
    const Tensor& x = t.node_value(pa);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      if (n[r] == 0.0) continue;
      const double k = g[r] / n[r];
      for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += k * x(r, c);
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var concat_cols(std::span<const Var> parts) {
  CHOREO_REQUIRE(!parts.empty(), "concat_cols of nothing");
  Tape* tape = parts.front().tape;
  const std::size_t rows = parts.front().rows();
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> ids;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    CHOREO_REQUIRE(p.rows() == rows, "concat_cols row mismatch");
    offsets.push_back(cols);
    ids.push_back(p.id);
    cols += p.cols();
  }
  Tensor out = Tensor::zeros(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& x = parts[k].value();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.row_span(r).begin(), x.row_span(r).end(), out.row_span(r).begin() + offsets[k]);
  }
  return tape->record(std::move(out), "concat_cols", parts, [ids, offsets](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& gk = t.grad_ref(ids[k]);
      for (std::size_t r = 0; r < gk.rows(); ++r)
        for (std::size_t c = 0; c < gk.cols(); ++c) gk(r, c) += g(r, offsets[k] + c);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  CHOREO_REQUIRE(!parts.empty(), "concat_rows of nothing");
  std::vector<Tensor> values;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    values.push_back(p.value());
    ids.push_back(p.id);
  }
  Tensor out = choreo::concat_rows(values);
  return parts.front().tape->record(std::move(out), "concat_rows", parts, [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    std::size_t offset = 0;
    for (auto id : ids) {
      const std::size_t n = t.node_value(id).size();
      if (t.requires_grad(id)) {
        Tensor& gk = t.grad_ref(id);
        for (std::size_t i = 0; i < n; ++i) gk[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  CHOREO_REQUIRE(begin <= end && end <= x.cols(), "slice_cols out of range");
  Tensor out = Tensor::zeros(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  const std::size_t pa = a.id;
  return a.tape->record(std::move(out), "slice_cols", {a}, [pa, begin](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  CHOREO_REQUIRE(begin <= end && end <= x.rows(), "slice_rows out of range");
  const std::size_t cols = x.cols();
  Tensor out = Tensor::matrix(end - begin, cols,
                              std::vector<double>(x.values().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                                  x.values().begin() + static_cast<std::ptrdiff_t>(end * cols)));
  const std::size_t pa = a.id;
  return a.tape->record(std::move(out), "slice_rows", {a}, [pa, begin, cols](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
  });
}

Var gather_rows(Var a, std::span<const std::size_t> rows) {
  const Tensor& x = a.value();
  const std::size_t cols = x.cols();
  Tensor out = Tensor::zeros(rows.size(), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHOREO_REQUIRE(rows[i] < x.rows(), "gather_rows index out of range");
    std::copy(x.row_span(rows[i]).begin(), x.row_span(rows[i]).end(), out.row_span(i).begin());
  }
  const std::size_t pa = a.id;
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  return a.tape->record(std::move(out), "gather_rows", {a}, [pa, idx = std::move(idx)](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(idx[i], c) += g(i, c);
  });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
  const Tensor& x = a.value();
  CHOREO_REQUIRE(rows * cols == x.size(), "reshape size mismatch");
  const std::size_t pa = a.id;
  return a.tape->record(x.reshaped({rows, cols}), "reshape", {a}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var stop_gradient(Var a) { return a.tape->constant(a.value()); }

Var straight_through(Tensor value, Var surrogate) {
  value = as_matrix(std::move(value));
  CHOREO_REQUIRE(value.rows() == surrogate.rows() && value.cols() == surrogate.cols(),
                 "straight_through shape mismatch");
  const std::size_t pa = surrogate.id;
  return surrogate.tape->record(std::move(value), "straight_through", {surrogate}, [pa](Tape& t, std::size_t self) {
    const Tensor& g = t.upstream(self);
    Tensor& ga = t.grad_ref(pa);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

Var clip_straight_through(Var a, double lo, double hi) {
  Tensor v = a.value();
  for (double& x : v.values()) x = std::clamp(x, lo, hi);
  return straight_through(std::move(v), a);
}

}  // namespace ops

}  // namespace choreo
