#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cgrl/error.hpp"
#include "cgrl/rng.hpp"
#include "cgrl/tensor.hpp"

namespace cgrl {

inline Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double stddev) {
  Tensor t = Tensor::zeros({r, c});
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

inline Tensor random_vector(std::size_t n, Rng& rng, double stddev) {
  Tensor t = Tensor::zeros({n});
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

// A named trainable tensor with a persistent gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)) {
    grad = Tensor::zeros(value.shape);
  }

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

// Ordered parameter registry. Insertion order is the canonical iteration
// order everywhere: updates, checkpoints, gradient checks. Addresses are
// stable for the lifetime of the store.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    items_.push_back(std::make_unique<Parameter>(name, std::move(init)));
    index_[name] = items_.size() - 1;
    return *items_.back();
  }

  Parameter* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : items_[it->second].get();
  }

  Parameter& at(const std::string& name) {
    Parameter* p = find(name);
    if (!p) throw ConfigError("unknown parameter: " + name);
    return *p;
  }

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return *items_[i]; }
  const Parameter& operator[](std::size_t i) const { return *items_[i]; }

  void zero_grads() {
    for (auto& p : items_) p->zero_grad();
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Recorded computation: nodes in topological (creation) order, each with the
// adjoint rule that pulls its output gradient back into its parents.
class Tape {
 public:
  using BackFn = std::function<void(Tape&, int)>;

  Var constant(Tensor v) { return {this, push(std::move(v), {}, nullptr, nullptr)}; }

  // One leaf per parameter per tape; repeated calls return the same node.
  // The node aliases the parameter value instead of copying it.
  Var param(Parameter& p) {
    auto it = param_nodes_.find(&p);
    if (it != param_nodes_.end()) return {this, it->second};
    int id = push(Tensor{}, {}, nullptr, &p);
    param_nodes_[&p] = id;
    return {this, id};
  }

  const Tensor& val(Var x) const { return value_of(x.id); }
  Tensor& grad(Var x) { return nodes_[x.id].grad; }

  std::size_t node_count() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    param_nodes_.clear();
  }

  // Reverse sweep from a scalar loss. Populates Parameter::grad (accumulating)
  // for every parameter leaf reachable below the loss node.
  void backward(Var loss) {
    if (loss.tape != this) throw ShapeError("loss belongs to a different tape");
    if (!value_of(loss.id).is_scalar()) {
      throw ShapeError("backward requires a scalar loss, got shape " +
                       shape_str(value_of(loss.id)));
    }
    for (int i = 0; i <= loss.id; ++i) {
      nodes_[i].grad = Tensor::zeros(value_of(i).shape);
    }
    nodes_[loss.id].grad.data[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this, i);
    }
    for (int i = 0; i <= loss.id; ++i) {
      Node& n = nodes_[i];
      if (n.param) {
        for (std::size_t k = 0; k < n.grad.size(); ++k) n.param->grad.data[k] += n.grad.data[k];
      }
    }
  }

  // --- used by op implementations ---
  int push(Tensor value, std::vector<int> parents, BackFn back, Parameter* p) {
    Node n;
    n.value = std::move(value);
    n.parents = std::move(parents);
    n.back = std::move(back);
    n.param = p;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  const Tensor& value_of(int id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  Tensor& grad_of(int id) { return nodes_[id].grad; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<int> parents;
    BackFn back;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
};

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ShapeError("operands live on different tapes");
}

// Elementwise binary ops broadcast a scalar operand against any shape.
inline void check_elementwise(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b) && !a.is_scalar() && !b.is_scalar()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace detail

// ---- elementwise arithmetic ----

inline Var add(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  detail::check_elementwise(va, vb, "add");
  const bool sa = va.is_scalar() && !vb.is_scalar();
  const bool sb = vb.is_scalar() && !va.is_scalar();
  Tensor out = Tensor::zeros(sa ? vb.shape : va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = (sa ? va.data[0] : va.data[i]) + (sb ? vb.data[0] : vb.data[i]);
  }
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), {ia, ib},
                  [ia, ib, sa, sb](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& ga = tp.grad_of(ia);
                    Tensor& gb = tp.grad_of(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga.data[sa ? 0 : i] += g.data[i];
                      gb.data[sb ? 0 : i] += g.data[i];
                    }
                  },
                  nullptr);
  return {&t, id};
}

inline Var sub(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  detail::check_elementwise(va, vb, "sub");
  const bool sa = va.is_scalar() && !vb.is_scalar();
  const bool sb = vb.is_scalar() && !va.is_scalar();
  Tensor out = Tensor::zeros(sa ? vb.shape : va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = (sa ? va.data[0] : va.data[i]) - (sb ? vb.data[0] : vb.data[i]);
  }
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), {ia, ib},
                  [ia, ib, sa, sb](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& ga = tp.grad_of(ia);
                    Tensor& gb = tp.grad_of(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga.data[sa ? 0 : i] += g.data[i];
                      gb.data[sb ? 0 : i] -= g.data[i];
                    }
                  },
                  nullptr);
  return {&t, id};
}

inline Var mul(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  detail::check_elementwise(va, vb, "mul");
  const bool sa = va.is_scalar() && !vb.is_scalar();
  const bool sb = vb.is_scalar() && !va.is_scalar();
  Tensor out = Tensor::zeros(sa ? vb.shape : va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data[i] = (sa ? va.data[0] : va.data[i]) * (sb ? vb.data[0] : vb.data[i]);
  }
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), {ia, ib},
                  [ia, ib, sa, sb](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    const Tensor& va2 = tp.value_of(ia);
                    const Tensor& vb2 = tp.value_of(ib);
                    Tensor& ga = tp.grad_of(ia);
                    Tensor& gb = tp.grad_of(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      ga.data[sa ? 0 : i] += g.data[i] * (sb ? vb2.data[0] : vb2.data[i]);
                      gb.data[sb ? 0 : i] += g.data[i] * (sa ? va2.data[0] : va2.data[i]);
                    }
                  },
                  nullptr);
  return {&t, id};
}

inline Var scale(Var x, double c) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  Tensor out = v;
  for (double& d : out.data) d *= c;
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, c](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += c * g.data[i];
                  },
                  nullptr);
  return {&t, id};
}

inline Var neg(Var x) { return scale(x, -1.0); }

inline Var add_const(Var x, double c) {
  Tape& t = *x.tape;
  Tensor out = t.val(x);
  for (double& d : out.data) d += c;
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
                  },
                  nullptr);
  return {&t, id};
}

// ---- matmul: [m,k]x[k,n] -> [m,n] or [m,k]x[k] -> [m] ----

inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  if (va.rank() != 2) throw ShapeError("matmul: left operand must be 2-D, got " + shape_str(va));
  const std::size_t m = va.shape[0], k = va.shape[1];
  const bool vec_rhs = vb.rank() == 1;
  const std::size_t kb = vec_rhs ? vb.shape[0] : vb.shape[0];
  const std::size_t n = vec_rhs ? 1 : vb.shape[1];
  if (vb.rank() > 2 || kb != k) {
    throw ShapeError("matmul: shape mismatch " + shape_str(va) + " vs " + shape_str(vb));
  }
  Tensor out = vec_rhs ? Tensor::zeros({m}) : Tensor::zeros({m, n});
  {
    const double* A = va.data.data();
    const double* B = vb.data.data();
    double* C = out.data.data();
    if (vec_rhs) {
      // Matrix-vector: unit-stride dot product per output row.
      for (std::size_t i = 0; i < m; ++i) {
        const double* Ai = A + i * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += Ai[p] * B[p];
        C[i] = acc;
      }
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = A[i * k + p];
          const double* Bp = B + p * n;
          double* Ci = C + i * n;
          for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
      }
    }
  }
  int ia = a.id, ib = b.id;
  int id = t.push(std::move(out), {ia, ib},
                  [ia, ib, m, k, n, vec_rhs](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    const Tensor& va2 = tp.value_of(ia);
                    const Tensor& vb2 = tp.value_of(ib);
                    Tensor& ga = tp.grad_of(ia);
                    Tensor& gb = tp.grad_of(ib);
                    const double* G = g.data.data();
                    const double* A = va2.data.data();
                    const double* B = vb2.data.data();
                    if (vec_rhs) {
                      // dA = g (outer) x, dB = A^T g, both unit stride.
                      for (std::size_t i = 0; i < m; ++i) {
                        const double gi = G[i];
                        double* ga_i = ga.data.data() + i * k;
                        const double* Ai = A + i * k;
                        double* gbp = gb.data.data();
                        for (std::size_t p = 0; p < k; ++p) {
                          ga_i[p] += gi * B[p];
                          gbp[p] += gi * Ai[p];
                        }
                      }
                    } else {
                      // dA = G B^T
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) {
                          const double gij = G[i * n + j];
                          for (std::size_t p = 0; p < k; ++p) {
                            ga.data[i * k + p] += gij * B[p * n + j];
                          }
                        }
                      }
                      // dB = A^T G
                      for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                          const double aip = A[i * k + p];
                          for (std::size_t j = 0; j < n; ++j) {
                            gb.data[p * n + j] += aip * G[i * n + j];
                          }
                        }
                      }
                    }
                  },
                  nullptr);
  return {&t, id};
}

// ---- structural ops ----

inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat: empty input list");
  Tape& t = *parts[0].tape;
  std::size_t total = 0;
  std::vector<int> ids;
  ids.reserve(parts.size());
  for (Var p : parts) {
    detail::require_same_tape(parts[0], p);
    const Tensor& v = t.val(p);
    if (v.rank() != 1) throw ShapeError("concat: 1-D operands required, got " + shape_str(v));
    total += v.size();
    ids.push_back(p.id);
  }
  Tensor out = Tensor::zeros({total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = t.val(p);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + off);
    off += v.size();
  }
  int id = t.push(std::move(out), ids,
                  [ids](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    std::size_t off2 = 0;
                    for (int pid : ids) {
                      Tensor& gp = tp.grad_of(pid);
                      for (std::size_t i = 0; i < gp.size(); ++i) gp.data[i] += g.data[off2 + i];
                      off2 += gp.size();
                    }
                  },
                  nullptr);
  return {&t, id};
}

inline Var slice(Var x, std::size_t start, std::size_t len) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  if (v.rank() != 1 || start + len > v.size()) {
    throw ShapeError("slice: out of range for shape " + shape_str(v));
  }
  Tensor out = Tensor::zeros({len});
  std::copy(v.data.begin() + start, v.data.begin() + start + len, out.data.begin());
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, start, len](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t i = 0; i < len; ++i) gx.data[start + i] += g.data[i];
                  },
                  nullptr);
  return {&t, id};
}

// Scalar pick by flat index.
inline Var element(Var x, std::size_t i) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  if (i >= v.size()) throw ShapeError("element: index out of range for " + shape_str(v));
  Tensor out = Tensor::scalar(v.data[i]);
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, i](Tape& tp, int self) {
                    tp.grad_of(ix).data[i] += tp.grad_of(self).data[0];
                  },
                  nullptr);
  return {&t, id};
}

// Row slice of a 2-D tensor; the basic embedding lookup for one id.
inline Var row(Var x, std::size_t r) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  if (v.rank() != 2) throw ShapeError("row: 2-D operand required, got " + shape_str(v));
  if (r >= v.shape[0]) throw DataError("row: index " + std::to_string(r) + " out of range");
  const std::size_t c = v.shape[1];
  Tensor out = Tensor::zeros({c});
  std::copy(v.data.begin() + r * c, v.data.begin() + (r + 1) * c, out.data.begin());
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, r, c](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t i = 0; i < c; ++i) gx.data[r * c + i] += g.data[i];
                  },
                  nullptr);
  return {&t, id};
}

inline Var embedding_lookup(Var table, const std::vector<int>& ids) {
  Tape& t = *table.tape;
  const Tensor& v = t.val(table);
  if (v.rank() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
  const std::size_t rows = v.shape[0], c = v.shape[1];
  if (ids.empty()) throw ShapeError("embedding_lookup: empty id list");
  for (int i : ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= rows) {
      throw DataError("embedding_lookup: label " + std::to_string(i) + " out of range [0," +
                      std::to_string(rows) + ")");
    }
  }
  Tensor out = Tensor::zeros({ids.size(), c});
  for (std::size_t k = 0; k < ids.size(); ++k) {
    std::copy(v.data.begin() + ids[k] * c, v.data.begin() + (ids[k] + 1) * c,
              out.data.begin() + k * c);
  }
  int it = table.id;
  std::vector<int> ids_copy = ids;
  int id = t.push(std::move(out), {it},
                  [it, ids_copy, c](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    Tensor& gt = tp.grad_of(it);
                    for (std::size_t k = 0; k < ids_copy.size(); ++k) {
                      for (std::size_t i = 0; i < c; ++i) {
                        gt.data[ids_copy[k] * c + i] += g.data[k * c + i];
                      }
                    }
                  },
                  nullptr);
  return {&t, id};
}

// ---- reductions ----

inline Var sum(Var x) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  double s = 0.0;
  for (double d : v.data) s += d;
  int ix = x.id;
  int id = t.push(Tensor::scalar(s), {ix},
                  [ix](Tape& tp, int self) {
                    const double g = tp.grad_of(self).data[0];
                    Tensor& gx = tp.grad_of(ix);
                    for (double& d : gx.data) d += g;
                  },
                  nullptr);
  return {&t, id};
}

inline Var mean(Var x) {
  Tape& t = *x.tape;
  const std::size_t n = t.val(x).size();
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

// ---- unary nonlinearities ----

namespace detail {

template <class Fwd, class Back>
Var unary_op(Var x, Fwd fwd, Back back) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  Tensor out = Tensor::zeros(v.shape);
  for (std::size_t i = 0; i < v.size(); ++i) out.data[i] = fwd(v.data[i]);
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, back](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    const Tensor& y = tp.value_of(self);
                    const Tensor& v2 = tp.value_of(ix);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      gx.data[i] += g.data[i] * back(v2.data[i], y.data[i]);
                    }
                  },
                  nullptr);
  return {&t, id};
}

}  // namespace detail

inline Var relu(Var x) {
  return detail::unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Var tanh(Var x) {
  return detail::unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var x) {
  return detail::unary_op(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var exp(Var x) {
  return detail::unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(Var x) {
  const Tensor& v = x.tape->val(x);
  for (double d : v.data) {
    if (d <= 0.0) {
      throw MathDomainError("log: non-positive input " + std::to_string(d));
    }
  }
  return detail::unary_op(
      x, [](double v2) { return std::log(v2); }, [](double v2, double) { return 1.0 / v2; });
}

// Gradient passes through only on the strict interior. NaN propagates.
inline Var clamp(Var x, double lo, double hi) {
  return detail::unary_op(
      x,
      [lo, hi](double v) {
        if (std::isnan(v)) return v;
        return std::min(hi, std::max(lo, v));
      },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---- softmax over the last dimension (1-D vector or 2-D rows) ----

inline Var softmax(Var x) {
  Tape& t = *x.tape;
  const Tensor& v = t.val(x);
  if (v.rank() < 1 || v.rank() > 2) throw ShapeError("softmax: 1-D or 2-D operand required");
  const std::size_t cols = v.shape.back();
  const std::size_t rows = v.size() / cols;
  Tensor out = Tensor::zeros(v.shape);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = v.data.data() + r * cols;
    double* o = out.data.data() + r * cols;
    double mx = in[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      o[j] = std::exp(in[j] - mx);
      z += o[j];
    }
    for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
  }
  int ix = x.id;
  int id = t.push(std::move(out), {ix},
                  [ix, rows, cols](Tape& tp, int self) {
                    const Tensor& g = tp.grad_of(self);
                    const Tensor& y = tp.value_of(self);
                    Tensor& gx = tp.grad_of(ix);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const double* gr = g.data.data() + r * cols;
                      const double* yr = y.data.data() + r * cols;
                      double dot = 0.0;
                      for (std::size_t j = 0; j < cols; ++j) dot += gr[j] * yr[j];
                      for (std::size_t j = 0; j < cols; ++j) {
                        gx.data[r * cols + j] += yr[j] * (gr[j] - dot);
                      }
                    }
                  },
                  nullptr);
  return {&t, id};
}

// ---- cosine similarity of two vectors; zero vectors yield 0 ----

inline Var cosine_similarity(Var a, Var b) {
  detail::require_same_tape(a, b);
  Tape& t = *a.tape;
  const Tensor& va = t.val(a);
  const Tensor& vb = t.val(b);
  if (va.rank() != 1 || vb.rank() != 1 || va.size() != vb.size()) {
    throw ShapeError("cosine_similarity: equal-length vectors required, got " + shape_str(va) +
                     " vs " + shape_str(vb));
  }
  double dot = 0.0, na2 = 0.0, nb2 = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    dot += va.data[i] * vb.data[i];
    na2 += va.data[i] * va.data[i];
    nb2 += vb.data[i] * vb.data[i];
  }
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const bool degenerate = (na == 0.0 || nb == 0.0);
  const double cosv = degenerate ? 0.0 : dot / (na * nb);
  int ia = a.id, ib = b.id;
  int id = t.push(Tensor::scalar(cosv), {ia, ib},
                  [ia, ib, na, nb, cosv, degenerate](Tape& tp, int self) {
                    if (degenerate) return;
                    const double g = tp.grad_of(self).data[0];
                    const Tensor& va2 = tp.value_of(ia);
                    const Tensor& vb2 = tp.value_of(ib);
                    Tensor& ga = tp.grad_of(ia);
                    Tensor& gb = tp.grad_of(ib);
                    for (std::size_t i = 0; i < va2.size(); ++i) {
                      ga.data[i] += g * (vb2.data[i] / (na * nb) - cosv * va2.data[i] / (na * na));
                      gb.data[i] += g * (va2.data[i] / (na * nb) - cosv * vb2.data[i] / (nb * nb));
                    }
                  },
                  nullptr);
  return {&t, id};
}

// Dot product of two vectors.
inline Var dot(Var a, Var b) { return sum(mul(a, b)); }

inline Var affine(Tape& tape, Parameter& w, Parameter& b, Var x) {
  return add(matmul(tape.param(w), x), tape.param(b));
}

inline Var affine_relu(Tape& tape, Parameter& w, Parameter& b, Var x) {
  return relu(affine(tape, w, b, x));
}

// ---- finite-difference gradient verification ----
//
// loss_fn(with_grad) rebuilds the computation over the live parameter values
// and returns the scalar loss, running backward() when with_grad is set. The
// result is max over all checked entries of
//   |analytic - numeric| / max(1, |analytic|, |numeric|).
inline double gradient_check(const std::function<double(bool)>& loss_fn,
                             std::span<Parameter* const> params, double step) {
  if (!(step > 0.0 && step <= 1e-3)) {
    throw ConfigError("gradient_check: step must be in (0, 1e-3]");
  }
  for (Parameter* p : params) p->zero_grad();
  loss_fn(true);
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) analytic.push_back(p->grad);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value.data[i];
      p->value.data[i] = saved + step;
      const double f_plus = loss_fn(false);
      p->value.data[i] = saved - step;
      const double f_minus = loss_fn(false);
      p->value.data[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[pi].data[i];
      const double rel = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace cgrl
