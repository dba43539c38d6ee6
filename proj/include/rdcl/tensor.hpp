#pragma once

// Dense f64 tensor with reverse-mode automatic differentiation.
//
// A Tensor is a value-type handle onto a graph node. Operations build an
// acyclic compute graph (children hold shared_ptrs to parents); backward()
// runs a deterministic reverse topological sweep and accumulates gradients
// additively into every requires_grad leaf. Reduction order is fixed
// (row-major) so runs are bit-reproducible.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace rdcl {

using Shape = std::vector<std::size_t>;

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& what) : std::runtime_error(what) {}
};

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Accumulates this node's grad into its parents' grads. Empty for leaves.
  std::function<void(const Node&)> pull;

  std::size_t numel() const { return value.size(); }
  bool is_leaf() const { return !pull; }
};

using NodePtr = std::shared_ptr<Node>;

inline NodePtr make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : node_(detail::make_node({0}, {})) {}

  static Tensor from(Shape shape, std::vector<double> data,
                     bool requires_grad = false) {
    if (shape_numel(shape) != data.size())
      throw TensorError("Tensor::from: shape " + shape_str(shape) +
                        " does not match data length " +
                        std::to_string(data.size()));
    auto n = detail::make_node(std::move(shape), std::move(data));
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, v));
  }

  static Tensor scalar(double v) { return from({1}, {v}); }

  // Trainable leaf.
  static Tensor param(Shape shape, std::vector<double> data) {
    return from(std::move(shape), std::move(data), /*requires_grad=*/true);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->numel(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<double>& data() const { return node_->value; }
  // Mutating values is only legal on leaves (graphs memoize nothing else).
  std::vector<double>& data_mut() {
    if (!node_->is_leaf())
      throw TensorError("Tensor: cannot mutate a non-leaf node");
    return node_->value;
  }

  double operator[](std::size_t i) const { return node_->value.at(i); }
  double item() const {
    if (numel() != 1) throw TensorError("Tensor::item: not a scalar");
    return node_->value[0];
  }

  const std::vector<double>& grad() const {
    if (node_->grad.size() != node_->numel())
      throw TensorError("Tensor::grad: no gradient populated");
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() == node_->numel(); }
  void zero_grad() { node_->grad.assign(node_->numel(), 0.0); }

  // Same values, severed from the graph.
  Tensor detach() const {
    return Tensor(detail::make_node(node_->shape, node_->value));
  }

  bool all_finite() const {
    for (double v : node_->value)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Reverse-mode sweep from a scalar output. Gradients of interior nodes are
  // reset; leaf gradients accumulate (call zero_grad on leaves between
  // unrelated passes).
  void backward() const {
    if (numel() != 1)
      throw TensorError("backward: output must be scalar, got " +
                        shape_str(shape()));
    if (!node_->requires_grad) return;  // constant graph, nothing to do
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    topo(node_.get(), seen, order);
    for (auto* n : order) {
      if (!n->is_leaf() || n->grad.size() != n->numel())
        n->grad.assign(n->numel(), 0.0);
    }
    node_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->pull) (*it)->pull(**it);
    }
  }

  detail::NodePtr node() const { return node_; }
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

 private:
  static void topo(detail::Node* n, std::unordered_set<detail::Node*>& seen,
                   std::vector<detail::Node*>& order) {
    if (!n->requires_grad || seen.count(n)) return;
    seen.insert(n);
    // Iterative DFS; sequences make recursion depth unbounded.
    struct Frame {
      detail::Node* node;
      std::size_t next;
    };
    std::vector<Frame> stack{{n, 0}};
    seen.insert(n);
    while (!stack.empty()) {
      auto& f = stack.back();
      if (f.next < f.node->parents.size()) {
        detail::Node* p = f.node->parents[f.next++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.push_back({p, 0});
        }
      } else {
        order.push_back(f.node);
        stack.pop_back();
      }
    }
  }

  detail::NodePtr node_;
};

namespace detail {

inline Tensor unary(const Tensor& a, Shape out_shape,
                    std::vector<double> out_value,
                    std::function<void(const Node&, Node&)> pull_into_a) {
  auto n = make_node(std::move(out_shape), std::move(out_value));
  if (a.requires_grad()) {
    n->requires_grad = true;
    n->parents = {a.node()};
    NodePtr ap = a.node();
    n->pull = [ap, fn = std::move(pull_into_a)](const Node& self) {
      fn(self, *ap);
    };
  }
  return Tensor(n);
}

inline Tensor binary(const Tensor& a, const Tensor& b, Shape out_shape,
                     std::vector<double> out_value,
                     std::function<void(const Node&, Node&, Node&)> pull) {
  auto n = make_node(std::move(out_shape), std::move(out_value));
  if (a.requires_grad() || b.requires_grad()) {
    n->requires_grad = true;
    n->parents = {a.node(), b.node()};
    NodePtr ap = a.node(), bp = b.node();
    n->pull = [ap, bp, fn = std::move(pull)](const Node& self) {
      fn(self, *ap, *bp);
    };
  }
  return Tensor(n);
}

// Broadcast support is deliberately narrow: equal shapes, or one side scalar.
enum class Bcast { kEqual, kLeftScalar, kRightScalar };

inline Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kEqual;
  if (a.numel() == 1) return Bcast::kLeftScalar;
  if (b.numel() == 1) return Bcast::kRightScalar;
  throw TensorError(std::string(op) + ": shapes " + shape_str(a.shape()) +
                    " and " + shape_str(b.shape()) + " do not broadcast");
}

inline void accumulate(Node& dst, const std::vector<double>& g) {
  if (!dst.requires_grad) return;
  if (dst.grad.size() != dst.numel()) dst.grad.assign(dst.numel(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

inline void accumulate_scalar(Node& dst, double g) {
  if (!dst.requires_grad) return;
  if (dst.grad.size() != dst.numel()) dst.grad.assign(dst.numel(), 0.0);
  dst.grad[0] += g;
}

}  // namespace detail

// ---- elementwise binary ops -------------------------------------------

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  using detail::Bcast;
  const Bcast k = detail::bcast_kind(a, b, "add");
  const Shape& os = (k == Bcast::kLeftScalar) ? b.shape() : a.shape();
  const std::size_t n = shape_numel(os);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = (k == Bcast::kLeftScalar) ? a[0] : a[i];
    const double bv = (k == Bcast::kRightScalar) ? b[0] : b[i];
    out[i] = av + bv;
  }
  return detail::binary(
      a, b, os, std::move(out),
      [k](const detail::Node& self, detail::Node& an, detail::Node& bn) {
        if (an.requires_grad) {
          if (k == Bcast::kLeftScalar) {
            double s = 0;
            for (double g : self.grad) s += g;
            detail::accumulate_scalar(an, s);
          } else {
            detail::accumulate(an, self.grad);
          }
        }
        if (bn.requires_grad) {
          if (k == Bcast::kRightScalar) {
            double s = 0;
            for (double g : self.grad) s += g;
            detail::accumulate_scalar(bn, s);
          } else {
            detail::accumulate(bn, self.grad);
          }
        }
      });
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  using detail::Bcast;
  const Bcast k = detail::bcast_kind(a, b, "sub");
  const Shape& os = (k == Bcast::kLeftScalar) ? b.shape() : a.shape();
  const std::size_t n = shape_numel(os);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = (k == Bcast::kLeftScalar) ? a[0] : a[i];
    const double bv = (k == Bcast::kRightScalar) ? b[0] : b[i];
    out[i] = av - bv;
  }
  return detail::binary(
      a, b, os, std::move(out),
      [k](const detail::Node& self, detail::Node& an, detail::Node& bn) {
        if (an.requires_grad) {
          if (k == Bcast::kLeftScalar) {
            double s = 0;
            for (double g : self.grad) s += g;
            detail::accumulate_scalar(an, s);
          } else {
            detail::accumulate(an, self.grad);
          }
        }
        if (bn.requires_grad) {
          if (k == Bcast::kRightScalar) {
            double s = 0;
            for (double g : self.grad) s += g;
            detail::accumulate_scalar(bn, -s);
          } else {
            std::vector<double> g(self.grad.size());
            for (std::size_t i = 0; i < g.size(); ++i) g[i] = -self.grad[i];
            detail::accumulate(bn, g);
          }
        }
      });
}

inline Tensor operator*(const Tensor& a, const Tensor& b) {
  using detail::Bcast;
  const Bcast k = detail::bcast_kind(a, b, "mul");
  const Shape& os = (k == Bcast::kLeftScalar) ? b.shape() : a.shape();
  const std::size_t n = shape_numel(os);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = (k == Bcast::kLeftScalar) ? a[0] : a[i];
    const double bv = (k == Bcast::kRightScalar) ? b[0] : b[i];
    out[i] = av * bv;
  }
  return detail::binary(
      a, b, os, std::move(out),
      [k](const detail::Node& self, detail::Node& an, detail::Node& bn) {
        const std::size_t n = self.grad.size();
        if (an.requires_grad) {
          if (k == Bcast::kLeftScalar) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += self.grad[i] * bn.value[i];
            detail::accumulate_scalar(an, s);
          } else {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i)
              g[i] = self.grad[i] *
                     (k == Bcast::kRightScalar ? bn.value[0] : bn.value[i]);
            detail::accumulate(an, g);
          }
        }
        if (bn.requires_grad) {
          if (k == Bcast::kRightScalar) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += self.grad[i] * an.value[i];
            detail::accumulate_scalar(bn, s);
          } else {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i)
              g[i] = self.grad[i] *
                     (k == Bcast::kLeftScalar ? an.value[0] : an.value[i]);
            detail::accumulate(bn, g);
          }
        }
      });
}

inline Tensor operator/(const Tensor& a, const Tensor& b) {
  using detail::Bcast;
  const Bcast k = detail::bcast_kind(a, b, "div");
  const Shape& os = (k == Bcast::kLeftScalar) ? b.shape() : a.shape();
  const std::size_t n = shape_numel(os);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double av = (k == Bcast::kLeftScalar) ? a[0] : a[i];
    const double bv = (k == Bcast::kRightScalar) ? b[0] : b[i];
    if (bv == 0.0) throw TensorError("div: division by zero");
    out[i] = av / bv;
  }
  return detail::binary(
      a, b, os, std::move(out),
      [k](const detail::Node& self, detail::Node& an, detail::Node& bn) {
        const std::size_t n = self.grad.size();
        auto bval = [&](std::size_t i) {
          return k == Bcast::kRightScalar ? bn.value[0] : bn.value[i];
        };
        auto aval = [&](std::size_t i) {
          return k == Bcast::kLeftScalar ? an.value[0] : an.value[i];
        };
        if (an.requires_grad) {
          if (k == Bcast::kLeftScalar) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i) s += self.grad[i] / bval(i);
            detail::accumulate_scalar(an, s);
          } else {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i) g[i] = self.grad[i] / bval(i);
            detail::accumulate(an, g);
          }
        }
        if (bn.requires_grad) {
          if (k == Bcast::kRightScalar) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
              s += -self.grad[i] * aval(i) / (bval(i) * bval(i));
            detail::accumulate_scalar(bn, s);
          } else {
            std::vector<double> g(n);
            for (std::size_t i = 0; i < n; ++i)
              g[i] = -self.grad[i] * aval(i) / (bval(i) * bval(i));
            detail::accumulate(bn, g);
          }
        }
      });
}

inline Tensor operator+(const Tensor& a, double c) { return a + Tensor::scalar(c); }
inline Tensor operator+(double c, const Tensor& a) { return Tensor::scalar(c) + a; }
inline Tensor operator-(const Tensor& a, double c) { return a - Tensor::scalar(c); }
inline Tensor operator-(double c, const Tensor& a) { return Tensor::scalar(c) - a; }
inline Tensor operator*(const Tensor& a, double c) { return a * Tensor::scalar(c); }
inline Tensor operator*(double c, const Tensor& a) { return Tensor::scalar(c) * a; }
inline Tensor operator/(const Tensor& a, double c) { return a / Tensor::scalar(c); }
inline Tensor operator/(double c, const Tensor& a) { return Tensor::scalar(c) / a; }
inline Tensor operator-(const Tensor& a) { return Tensor::scalar(0.0) - a; }

// ---- elementwise unary ops --------------------------------------------

inline Tensor exp(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a[i]);
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = self.grad[i] * self.value[i];
                         detail::accumulate(an, g);
                       });
}

inline Tensor log(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a[i] <= 0.0) throw TensorError("log: nonpositive input");
    out[i] = std::log(a[i]);
  }
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = self.grad[i] / an.value[i];
                         detail::accumulate(an, g);
                       });
}

inline Tensor sqrt(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (a[i] < 0.0) throw TensorError("sqrt: negative input");
    out[i] = std::sqrt(a[i]);
  }
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = self.grad[i] * 0.5 / self.value[i];
                         detail::accumulate(an, g);
                       });
}

inline Tensor tanh(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a[i]);
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = self.grad[i] *
                                  (1.0 - self.value[i] * self.value[i]);
                         detail::accumulate(an, g);
                       });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = self.grad[i] * self.value[i] *
                                  (1.0 - self.value[i]);
                         detail::accumulate(an, g);
                       });
}

inline Tensor relu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::unary(a, a.shape(), std::move(out),
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = an.value[i] > 0.0 ? self.grad[i] : 0.0;
                         detail::accumulate(an, g);
                       });
}

// max(a, c) elementwise; subgradient 0 at the kink.
inline Tensor max_with_scalar(const Tensor& a, double c) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a[i], c);
  return detail::unary(a, a.shape(), std::move(out),
                       [c](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(self.grad.size());
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] = an.value[i] > c ? self.grad[i] : 0.0;
                         detail::accumulate(an, g);
                       });
}

// ---- shape ops ---------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw TensorError("reshape: numel mismatch " + shape_str(a.shape()) +
                      " -> " + shape_str(shape));
  return detail::unary(a, std::move(shape), a.data(),
                       [](const detail::Node& self, detail::Node& an) {
                         detail::accumulate(an, self.grad);
                       });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw TensorError("transpose: rank-2 tensor required");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::unary(a, {c, r}, std::move(out),
                       [r, c](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(r * c);
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             g[i * c + j] = self.grad[j * r + i];
                         detail::accumulate(an, g);
                       });
}

// Concatenation of rank-1 tensors.
inline Tensor concat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw TensorError("concat: empty input");
  std::size_t total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    if (p.rank() != 1) throw TensorError("concat: rank-1 tensors required");
    total += p.numel();
    any_grad = any_grad || p.requires_grad();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  auto n = detail::make_node({total}, std::move(out));
  if (any_grad) {
    n->requires_grad = true;
    for (const auto& p : parts) n->parents.push_back(p.node());
    n->pull = [](const detail::Node& self) {
      std::size_t off = 0;
      for (const auto& pp : self.parents) {
        if (pp->requires_grad) {
          std::vector<double> g(self.grad.begin() + off,
                                self.grad.begin() + off + pp->numel());
          detail::accumulate(*pp, g);
        }
        off += pp->numel();
      }
    };
  }
  return Tensor(n);
}

inline Tensor concat(const Tensor& a, const Tensor& b) {
  return concat(std::vector<Tensor>{a, b});
}

inline Tensor slice(const Tensor& a, std::size_t start, std::size_t len) {
  if (a.rank() != 1) throw TensorError("slice: rank-1 tensor required");
  if (start + len > a.numel()) throw TensorError("slice: out of range");
  std::vector<double> out(a.data().begin() + start,
                          a.data().begin() + start + len);
  return detail::unary(a, {len}, std::move(out),
                       [start, len](const detail::Node& self, detail::Node& an) {
                         if (!an.requires_grad) return;
                         if (an.grad.size() != an.numel())
                           an.grad.assign(an.numel(), 0.0);
                         for (std::size_t i = 0; i < len; ++i)
                           an.grad[start + i] += self.grad[i];
                       });
}

// i-th row of a rank-2 tensor as a rank-1 tensor.
inline Tensor row(const Tensor& a, std::size_t i) {
  if (a.rank() != 2) throw TensorError("row: rank-2 tensor required");
  if (i >= a.dim(0)) throw TensorError("row: index out of range");
  const std::size_t c = a.dim(1);
  std::vector<double> out(a.data().begin() + i * c,
                          a.data().begin() + (i + 1) * c);
  return detail::unary(a, {c}, std::move(out),
                       [i, c](const detail::Node& self, detail::Node& an) {
                         if (!an.requires_grad) return;
                         if (an.grad.size() != an.numel())
                           an.grad.assign(an.numel(), 0.0);
                         for (std::size_t j = 0; j < c; ++j)
                           an.grad[i * c + j] += self.grad[j];
                       });
}

// Stack rank-1 tensors of equal length into a rank-2 tensor.
inline Tensor from_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw TensorError("from_rows: empty input");
  const std::size_t c = rows[0].numel();
  bool any_grad = false;
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != c)
      throw TensorError("from_rows: rows must be rank-1 of equal length");
    any_grad = any_grad || r.requires_grad();
  }
  std::vector<double> out;
  out.reserve(rows.size() * c);
  for (const auto& r : rows) out.insert(out.end(), r.data().begin(), r.data().end());
  auto n = detail::make_node({rows.size(), c}, std::move(out));
  if (any_grad) {
    n->requires_grad = true;
    for (const auto& r : rows) n->parents.push_back(r.node());
    n->pull = [c](const detail::Node& self) {
      for (std::size_t i = 0; i < self.parents.size(); ++i) {
        auto& p = *self.parents[i];
        if (!p.requires_grad) continue;
        std::vector<double> g(self.grad.begin() + i * c,
                              self.grad.begin() + (i + 1) * c);
        detail::accumulate(p, g);
      }
    };
  }
  return Tensor(n);
}

// Scalar pick (index select).
inline Tensor pick(const Tensor& a, std::size_t i) {
  if (i >= a.numel()) throw TensorError("pick: index out of range");
  return detail::unary(a, {1}, {a[i]},
                       [i](const detail::Node& self, detail::Node& an) {
                         if (!an.requires_grad) return;
                         if (an.grad.size() != an.numel())
                           an.grad.assign(an.numel(), 0.0);
                         an.grad[i] += self.grad[0];
                       });
}

// ---- reductions and linear algebra --------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0;
  for (double v : a.data()) s += v;
  return detail::unary(a, {1}, {s},
                       [](const detail::Node& self, detail::Node& an) {
                         std::vector<double> g(an.numel(), self.grad[0]);
                         detail::accumulate(an, g);
                       });
}

inline Tensor mean(const Tensor& a) { return sum(a) / static_cast<double>(a.numel()); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2)
    throw TensorError("matmul: rank-2 tensors required");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw TensorError("matmul: inner dimensions disagree " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * b[p * n + j];
    }
  return detail::binary(
      a, b, {m, n}, std::move(out),
      [m, k, n](const detail::Node& self, detail::Node& an, detail::Node& bn) {
        // dA = dC . B^T ; dB = A^T . dC
        if (an.requires_grad) {
          std::vector<double> g(m * k, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
              const double gc = self.grad[i * n + j];
              if (gc == 0.0) continue;
              for (std::size_t p = 0; p < k; ++p)
                g[i * k + p] += gc * bn.value[p * n + j];
            }
          detail::accumulate(an, g);
        }
        if (bn.requires_grad) {
          std::vector<double> g(k * n, 0.0);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t p = 0; p < k; ++p) {
              const double av = an.value[i * k + p];
              if (av == 0.0) continue;
              for (std::size_t j = 0; j < n; ++j)
                g[p * n + j] += av * self.grad[i * n + j];
            }
          detail::accumulate(bn, g);
        }
      });
}

// W [out x in] applied to x [in], returning [out].
inline Tensor matvec(const Tensor& w, const Tensor& x) {
  if (x.rank() != 1) throw TensorError("matvec: rank-1 vector required");
  return reshape(matmul(w, reshape(x, {x.numel(), 1})), {w.dim(0)});
}

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(a * b); }

inline Tensor squared_norm(const Tensor& a) { return sum(a * a); }

inline Tensor norm(const Tensor& a) { return sqrt(squared_norm(a)); }

// Cosine similarity over flattened inputs; errors on zero-norm input.
inline Tensor cosine(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel())
    throw TensorError("cosine: flattened dims disagree");
  double na = 0, nb = 0;
  for (double v : a.data()) na += v * v;
  for (double v : b.data()) nb += v * v;
  if (na == 0.0 || nb == 0.0)
    throw TensorError("cosine: zero-norm vector");
  const Tensor af = a.rank() == 1 ? a : reshape(a, {a.numel()});
  const Tensor bf = b.rank() == 1 ? b : reshape(b, {b.numel()});
  return dot(af, bf) / (norm(af) * norm(bf));
}

// Numerically stable log-sum-exp of scalar tensors (max shift held constant).
inline Tensor logsumexp(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw TensorError("logsumexp: empty input");
  double m = xs[0].item();
  for (const auto& x : xs) m = std::max(m, x.item());
  Tensor acc = Tensor::scalar(0.0);
  for (const auto& x : xs) acc = acc + exp(x - m);
  return log(acc) + m;
}

// ---- spec-surface elementwise dispatcher --------------------------------

enum class ElemOp { kAdd, kSub, kMul, kDiv, kExp, kLog, kTanh, kSigmoid, kRelu, kMaxWithScalar };

inline Tensor elementwise(ElemOp op, const Tensor& a, const Tensor* b = nullptr,
                          double scalar_arg = 0.0) {
  auto need_b = [&]() -> const Tensor& {
    if (!b) throw TensorError("elementwise: binary op requires two operands");
    return *b;
  };
  switch (op) {
    case ElemOp::kAdd: return a + need_b();
    case ElemOp::kSub: return a - need_b();
    case ElemOp::kMul: return a * need_b();
    case ElemOp::kDiv: return a / need_b();
    case ElemOp::kExp: return exp(a);
    case ElemOp::kLog: return log(a);
    case ElemOp::kTanh: return tanh(a);
    case ElemOp::kSigmoid: return sigmoid(a);
    case ElemOp::kRelu: return relu(a);
    case ElemOp::kMaxWithScalar: return max_with_scalar(a, scalar_arg);
  }
  throw TensorError("elementwise: unknown op");
}

}  // namespace rdcl
