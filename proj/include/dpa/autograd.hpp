#pragma once

// Minimal reverse-mode autodiff over Tensor values. Graphs are built eagerly by
// the op functions below and released when the last Var handle goes away.

#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dpa/kernels.hpp"
#include "dpa/tensor.hpp"

namespace dpa::ag {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph construction on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
struct Node {
  Tensor<Real> value;
  Tensor<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<Real>& grad_buffer() {
    if (grad.empty() && !value.empty()) grad = Tensor<Real>(value.shape());
    return grad;
  }
};

template <typename Real>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Real>>;

  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var constant(Tensor<Real> v) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(v);
    return Var(std::move(n));
  }
  static Var leaf(Tensor<Real> v) {
    auto n = std::make_shared<Node<Real>>();
    n->value = std::move(v);
    n->requires_grad = true;
    return Var(std::move(n));
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<Real>& value() const { return node_->value; }
  Tensor<Real>& mutable_value() { return node_->value; }
  const Tensor<Real>& grad() const { return node_->grad; }
  Tensor<Real>& mutable_grad() { return node_->grad_buffer(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const NodePtr& node() const noexcept { return node_; }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(Real(0));
  }

  /// Back-propagates from this scalar. Gradients accumulate into leaves.
  void backward() {
    if (value().size() != 1) throw ShapeError("backward() needs a scalar output");
    if (!requires_grad()) return;
    std::vector<Node<Real>*> order;
    std::unordered_set<Node<Real>*> seen;
    // Iterative post-order DFS; deep residual stacks would overflow recursion.
    std::vector<std::pair<Node<Real>*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node<Real>* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->grad_buffer().fill(Real(0));
    node_->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<Real>* n = *it;
      if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Interior gradients are not needed after the sweep.
    for (Node<Real>* n : order)
      if (n->backward_fn) n->grad = Tensor<Real>();
  }

 private:
  NodePtr node_;
};

namespace detail {
template <typename Real>
Var<Real> make_result(Tensor<Real> value, std::vector<Var<Real>> inputs, std::function<void(Node<Real>&)> fn) {
  auto n = std::make_shared<Node<Real>>();
  n->value = std::move(value);
  bool needs = false;
  if (grad_mode())
    for (const auto& v : inputs) needs = needs || v.requires_grad();
  if (needs) {
    n->requires_grad = true;
    for (auto& v : inputs) n->parents.push_back(v.node());
    n->backward_fn = std::move(fn);
  }
  return Var<Real>(std::move(n));
}

template <typename Real>
Tensor<Real>* grad_of(Node<Real>& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->grad_buffer() : nullptr;
}
}  // namespace detail

// --- layers -----------------------------------------------------------------

template <typename Real>
Var<Real> conv2d(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b) {
  return detail::make_result<Real>(kernels::conv2d(x.value(), w.value(), b.value()), {x, w, b}, [](Node<Real>& self) {
    kernels::conv2d_backward(self.parents[0]->value, self.parents[1]->value, self.grad, detail::grad_of(self, 0),
                             detail::grad_of(self, 1), detail::grad_of(self, 2));
  });
}

template <typename Real>
Var<Real> dense(const Var<Real>& x, const Var<Real>& w, const Var<Real>& b) {
  return detail::make_result<Real>(kernels::dense(x.value(), w.value(), b.value()), {x, w, b}, [](Node<Real>& self) {
    kernels::dense_backward(self.parents[0]->value, self.parents[1]->value, self.grad, detail::grad_of(self, 0),
                            detail::grad_of(self, 1), detail::grad_of(self, 2));
  });
}

template <typename Real>
Var<Real> leaky_relu(const Var<Real>& x, Real slope) {
  Tensor<Real> y = x.value();
  for (auto& v : y.storage()) v = v > Real(0) ? v : slope * v;
  return detail::make_result<Real>(std::move(y), {x}, [slope](Node<Real>& self) {
    const auto& in = self.parents[0]->value;
    auto& gx = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < in.size(); ++i) gx[i] += in[i] > Real(0) ? self.grad[i] : slope * self.grad[i];
  });
}

template <typename Real>
Var<Real> relu(const Var<Real>& x) {
  return leaky_relu(x, Real(0));
}

template <typename Real>
Var<Real> avg_pool2(const Var<Real>& x) {
  return detail::make_result<Real>(kernels::avg_pool2(x.value()), {x}, [](Node<Real>& self) {
    kernels::avg_pool2_backward(self.grad, self.parents[0]->grad_buffer());
  });
}

template <typename Real>
Var<Real> upsample_nearest2(const Var<Real>& x) {
  return detail::make_result<Real>(kernels::upsample_nearest2(x.value()), {x}, [](Node<Real>& self) {
    kernels::upsample_nearest2_backward(self.grad, self.parents[0]->grad_buffer());
  });
}

template <typename Real>
Var<Real> upsample_bilinear2(const Var<Real>& x) {
  return detail::make_result<Real>(kernels::upsample_bilinear2(x.value()), {x}, [](Node<Real>& self) {
    kernels::upsample_bilinear2_backward(self.grad, self.parents[0]->grad_buffer());
  });
}

// --- elementwise ------------------------------------------------------------

template <typename Real>
Var<Real> add(const Var<Real>& a, const Var<Real>& b) {
  if (!a.value().same_shape(b.value())) throw ShapeError("add: shape mismatch");
  Tensor<Real> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  return detail::make_result<Real>(std::move(y), {a, b}, [](Node<Real>& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (auto* g = detail::grad_of(self, p))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
  });
}

template <typename Real>
Var<Real> scale(const Var<Real>& a, Real s) {
  Tensor<Real> y = a.value();
  for (auto& v : y.storage()) v *= s;
  return detail::make_result<Real>(std::move(y), {a}, [s](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

/// alpha * a + (1 - alpha) * b with a constant alpha.
template <typename Real>
Var<Real> lerp(const Var<Real>& a, const Var<Real>& b, Real alpha) {
  if (!a.value().same_shape(b.value())) throw ShapeError("lerp: shape mismatch");
  const Real beta = Real(1) - alpha;
  Tensor<Real> y(a.value().shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = alpha * a.value()[i] + beta * b.value()[i];
  return detail::make_result<Real>(std::move(y), {a, b}, [alpha, beta](Node<Real>& self) {
    if (auto* g = detail::grad_of(self, 0))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += alpha * self.grad[i];
    if (auto* g = detail::grad_of(self, 1))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += beta * self.grad[i];
  });
}

template <typename Real>
Var<Real> reshape(const Var<Real>& x, typename Tensor<Real>::Shape shape) {
  return detail::make_result<Real>(x.value().reshaped(shape), {x}, [](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// y[:, c] = (x[:, c] - shift[c]) * inv_scale[c].
template <typename Real>
Var<Real> channel_affine(const Var<Real>& x, std::vector<Real> shift, std::vector<Real> inv_scale) {
  const auto& in = x.value();
  if (static_cast<int>(shift.size()) != in.c() || static_cast<int>(inv_scale.size()) != in.c())
    throw ShapeError("channel_affine: channel count mismatch");
  Tensor<Real> y(in.shape());
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      auto src = in.plane(n, c);
      auto dst = y.plane(n, c);
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = (src[i] - shift[c]) * inv_scale[c];
    }
  return detail::make_result<Real>(std::move(y), {x}, [inv = std::move(inv_scale)](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (int n = 0; n < g.n(); ++n)
      for (int c = 0; c < g.c(); ++c) {
        auto gy = self.grad.plane(n, c);
        auto gx = g.plane(n, c);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * inv[c];
      }
  });
}

// --- reductions used by the losses --------------------------------------------

/// Per item: sum|target - x| / (sum|target| + eps). Returns [n, 1, 1, 1].
template <typename Real>
Var<Real> relative_l1(const Tensor<Real>& target, const Var<Real>& x, Real eps) {
  const auto& xv = x.value();
  if (!target.same_shape(xv)) throw ShapeError("relative_l1: shape mismatch " + shape_string(target) + " vs " + shape_string(xv));
  Tensor<Real> y(xv.n(), 1, 1, 1);
  std::vector<Real> denom(static_cast<std::size_t>(xv.n()));
  for (int n = 0; n < xv.n(); ++n) {
    auto t = target.item(n);
    auto r = xv.item(n);
    Real num = 0, den = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      num += std::abs(t[i] - r[i]);
      den += std::abs(t[i]);
    }
    denom[n] = den + eps;
    y[n] = num / denom[n];
  }
  return detail::make_result<Real>(std::move(y), {x}, [target, denom = std::move(denom)](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& xv = self.parents[0]->value;
    for (int n = 0; n < g.n(); ++n) {
      const Real s = self.grad[n] / denom[n];
      auto t = target.item(n);
      auto r = xv.item(n);
      auto gx = g.item(n);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const Real d = r[i] - t[i];
        gx[i] += d > Real(0) ? s : (d < Real(0) ? -s : Real(0));
      }
    }
  });
}

/// Per item mean |target - x|. Returns [n, 1, 1, 1].
template <typename Real>
Var<Real> mean_abs_diff(const Tensor<Real>& target, const Var<Real>& x) {
  const auto& xv = x.value();
  if (!target.same_shape(xv)) throw ShapeError("mean_abs_diff: shape mismatch");
  Tensor<Real> y(xv.n(), 1, 1, 1);
  const Real inv = Real(1) / static_cast<Real>(xv.item_size());
  for (int n = 0; n < xv.n(); ++n) {
    auto t = target.item(n);
    auto r = xv.item(n);
    Real s = 0;
    for (std::size_t i = 0; i < t.size(); ++i) s += std::abs(t[i] - r[i]);
    y[n] = s * inv;
  }
  return detail::make_result<Real>(std::move(y), {x}, [target, inv](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    const auto& xv = self.parents[0]->value;
    for (int n = 0; n < g.n(); ++n) {
      const Real s = self.grad[n] * inv;
      auto t = target.item(n);
      auto r = xv.item(n);
      auto gx = g.item(n);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const Real d = r[i] - t[i];
        gx[i] += d > Real(0) ? s : (d < Real(0) ? -s : Real(0));
      }
    }
  });
}

/// Mean of all entries as a [1,1,1,1] scalar.
template <typename Real>
Var<Real> mean(const Var<Real>& x) {
  Real s = 0;
  for (auto v : x.value().storage()) s += v;
  const Real inv = Real(1) / static_cast<Real>(x.value().size());
  return detail::make_result<Real>(Tensor<Real>(1, 1, 1, 1, s * inv), {x}, [inv](Node<Real>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * inv;
  });
}

/// Wraps an external function y = f(x) whose vector-Jacobian product is supplied by the caller.
template <typename Real>
Var<Real> custom(const Var<Real>& x, Tensor<Real> y, std::function<Tensor<Real>(const Tensor<Real>&)> vjp) {
  return detail::make_result<Real>(std::move(y), {x}, [vjp = std::move(vjp)](Node<Real>& self) {
    Tensor<Real> gx = vjp(self.grad);
    auto& g = self.parents[0]->grad_buffer();
    if (!gx.same_shape(g)) throw ShapeError("custom op: vjp returned wrong shape");
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += gx[i];
  });
}

}  // namespace dpa::ag
