#pragma once

// Reverse-mode differentiation over Tensor values. A Var is a shared handle
// to a graph node; differentiable ops record their parents and a closure that
// pushes the output gradient back into them. backward() walks the recorded
// graph once and releases it.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "maf/ops.hpp"

namespace maf {

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;  // empty until something flows in
  bool requires_grad = false;
  bool leaf = true;
  bool released = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Tensor<Scalar>& g) {
    if (!(grad.shape() == value.shape())) {
      grad = g;
    } else {
      grad.data() += g.data();
    }
  }
  Node& parent(std::size_t i) { return *parents[i]; }
};

namespace detail {
bool& grad_enabled_flag() noexcept;
std::string& corrupt_backward_op() noexcept;
}  // namespace detail

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() noexcept { return detail::grad_enabled_flag(); }

/// Test hook: when set, the backward pass of the named op is scaled by 1.5,
/// producing a gradient that finite differences must reject. Empty disables it.
inline void set_corrupt_backward(std::string op) { detail::corrupt_backward_op() = std::move(op); }

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  /// In-place access for optimizer updates and weight loading.
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->grad.shape() == shape(); }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }
  const std::string& op() const { return node_->op; }
  const NodePtr& node() const noexcept { return node_; }

 private:
  NodePtr node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

/// Wraps a computed value into a Var, recording the graph edge when any
/// parent participates in differentiation and recording is enabled.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, const char* op, std::vector<Var<Scalar>> parents,
                        std::function<void(Node<Scalar>&)> backward) {
  check_finite(value, op);
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs && grad_enabled()) {
    node->requires_grad = true;
    node->leaf = false;
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var<Scalar>(std::move(node));
}

/// Populates grad of every participating leaf with d(loss)/d(leaf), then
/// releases the graph so intermediate values can be freed.
template <typename Scalar>
void backward(const Var<Scalar>& loss) {
  if (!loss.defined()) throw StateError("backward: undefined loss");
  if (loss.value().numel() != 1) {
    throw StateError("backward: loss must be a scalar, got shape " + loss.shape().str());
  }
  auto root = loss.node();
  if (root->released) {
    throw StateError("backward: graph already released (double backward is unsupported)");
  }
  if (!root->requires_grad) {
    throw StateError("backward: loss does not depend on any tensor that requires grad");
  }
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->grad = Tensor<Scalar>::ones(root->value.shape());
  const std::string& corrupt = detail::corrupt_backward_op();
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* node = *it;
    if (!node->backward || node->grad.numel() == 0) continue;
    if (!corrupt.empty() && node->op == corrupt) node->grad.data() *= Scalar(1.5);
    node->backward(*node);
  }
  for (Node<Scalar>* node : order) {
    if (node->leaf) continue;
    node->parents.clear();
    node->backward = nullptr;
    node->grad = Tensor<Scalar>();
    node->released = true;
  }
}

// ---------------------------------------------------------------------------
// Differentiable operators

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const Var<Scalar>* bias,
                   const ConvSpec& spec) {
  Tensor<Scalar> y = conv2d<Scalar>(x.value(), w.value(), bias ? &bias->value() : nullptr, spec);
  std::vector<Var<Scalar>> parents{x, w};
  if (bias) parents.push_back(*bias);
  return make_result<Scalar>(std::move(y), "conv2d", std::move(parents),
                             [spec](Node<Scalar>& n) {
                               Node<Scalar>& x = n.parent(0);
                               Node<Scalar>& w = n.parent(1);
                               if (x.requires_grad)
                                 x.accumulate(conv2d_grad_input(n.grad, w.value, spec, x.value.shape()));
                               if (w.requires_grad) w.accumulate(conv2d_grad_weight(n.grad, x.value, spec));
                               if (n.parents.size() > 2 && n.parent(2).requires_grad)
                                 n.parent(2).accumulate(channel_sum(n.grad));
                             });
}

template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& w, const ConvSpec& spec) {
  return conv2d<Scalar>(x, w, nullptr, spec);
}

/// Inference-mode batch norm with learnable gamma/beta (c,1,1,1) and fixed statistics.
template <typename Scalar>
Var<Scalar> batchnorm_infer(const Var<Scalar>& x, const Var<Scalar>& gamma,
                            const Var<Scalar>& beta, const BatchNormParams<Scalar>& stats) {
  BatchNormParams<Scalar> bn = stats;
  bn.gamma = gamma.value().data();
  bn.beta = beta.value().data();
  Tensor<Scalar> y = batchnorm_infer<Scalar>(x.value(), bn);
  return make_result<Scalar>(
      std::move(y), "batchnorm", {x, gamma, beta}, [bn](Node<Scalar>& n) {
        Node<Scalar>& x = n.parent(0);
        const Shape s = x.value.shape();
        const auto inv = (Scalar(1) / (bn.running_var + bn.eps).sqrt()).eval();
        Tensor<Scalar> gx(s);
        Tensor<Scalar> gg = Tensor<Scalar>::vector(s.c), gb = Tensor<Scalar>::vector(s.c);
        for (Index b = 0; b < s.n; ++b) {
          for (Index c = 0; c < s.c; ++c) {
            const Index o = x.value.offset(b, c, 0, 0);
            const auto gy = n.grad.data().segment(o, s.plane());
            gx.data().segment(o, s.plane()) = gy * (bn.gamma[c] * inv[c]);
            gg[c] += (gy * (x.value.data().segment(o, s.plane()) - bn.running_mean[c])).sum() * inv[c];
            gb[c] += gy.sum();
          }
        }
        if (x.requires_grad) x.accumulate(gx);
        if (n.parent(1).requires_grad) n.parent(1).accumulate(gg);
        if (n.parent(2).requires_grad) n.parent(2).accumulate(gb);
      });
}

template <typename Scalar>
struct BatchStats {
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean;
  Eigen::Array<Scalar, Eigen::Dynamic, 1> var;  // biased
  Index count = 0;
};

/// Training-mode batch norm: normalizes with the statistics of this batch.
template <typename Scalar>
Var<Scalar> batchnorm_train(const Var<Scalar>& x, const Var<Scalar>& gamma,
                            const Var<Scalar>& beta, Scalar eps, BatchStats<Scalar>* stats_out) {
  const Shape s = x.shape();
  if (gamma.value().numel() != s.c) {
    throw ShapeError("batchnorm_train", "channels", gamma.value().numel(), s.c);
  }
  const Index m = s.n * s.plane();
  if (m == 0) throw ShapeError("batchnorm_train", "empty batch");
  Eigen::Array<Scalar, Eigen::Dynamic, 1> mean = Eigen::Array<Scalar, Eigen::Dynamic, 1>::Zero(s.c);
  Eigen::Array<Scalar, Eigen::Dynamic, 1> var = mean;
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c)
      mean[c] += x.value().data().segment(x.value().offset(b, c, 0, 0), s.plane()).sum();
  mean /= Scalar(m);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c)
      var[c] += (x.value().data().segment(x.value().offset(b, c, 0, 0), s.plane()) - mean[c])
                    .square()
                    .sum();
  var /= Scalar(m);
  if (stats_out) *stats_out = {mean, var, m};
  const auto inv = (Scalar(1) / (var + eps).sqrt()).eval();
  Tensor<Scalar> xhat(s);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      const Index o = xhat.offset(b, c, 0, 0);
      xhat.data().segment(o, s.plane()) =
          (x.value().data().segment(o, s.plane()) - mean[c]) * inv[c];
    }
  Tensor<Scalar> y(s);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) {
      const Index o = y.offset(b, c, 0, 0);
      y.data().segment(o, s.plane()) =
          xhat.data().segment(o, s.plane()) * gamma.value()[c] + beta.value()[c];
    }
  return make_result<Scalar>(
      std::move(y), "batchnorm_train", {x, gamma, beta},
      [xhat = std::move(xhat), inv, m](Node<Scalar>& n) {
        Node<Scalar>& x = n.parent(0);
        const Shape s = x.value.shape();
        Tensor<Scalar> gg = Tensor<Scalar>::vector(s.c), gb = Tensor<Scalar>::vector(s.c);
        for (Index b = 0; b < s.n; ++b)
          for (Index c = 0; c < s.c; ++c) {
            const Index o = xhat.offset(b, c, 0, 0);
            const auto gy = n.grad.data().segment(o, s.plane());
            gb[c] += gy.sum();
            gg[c] += (gy * xhat.data().segment(o, s.plane())).sum();
          }
        if (x.requires_grad) {
          const auto& gamma = n.parent(1).value;
          Tensor<Scalar> gx(s);
          for (Index b = 0; b < s.n; ++b)
            for (Index c = 0; c < s.c; ++c) {
              const Index o = xhat.offset(b, c, 0, 0);
              gx.data().segment(o, s.plane()) =
                  gamma[c] * inv[c] / Scalar(m) *
                  (Scalar(m) * n.grad.data().segment(o, s.plane()) - gb[c] -
                   xhat.data().segment(o, s.plane()) * gg[c]);
            }
          x.accumulate(gx);
        }
        if (n.parent(1).requires_grad) n.parent(1).accumulate(gg);
        if (n.parent(2).requires_grad) n.parent(2).accumulate(gb);
      });
}

template <typename Scalar>
Var<Scalar> silu(const Var<Scalar>& x) {
  return make_result<Scalar>(silu(x.value()), "silu", {x}, [](Node<Scalar>& n) {
    n.parent(0).accumulate(silu_grad(n.parent(0).value, n.grad));
  });
}

template <typename Scalar>
Var<Scalar> upsample_nearest2x(const Var<Scalar>& x) {
  return make_result<Scalar>(upsample_nearest2x(x.value()), "upsample", {x},
                             [](Node<Scalar>& n) {
                               n.parent(0).accumulate(upsample_nearest2x_grad(n.grad));
                             });
}

template <typename Scalar>
Var<Scalar> avg_pool2x(const Var<Scalar>& x) {
  return make_result<Scalar>(avg_pool2x(x.value()), "avg_pool", {x}, [](Node<Scalar>& n) {
    Tensor<Scalar> g = upsample_nearest2x(n.grad);
    g.data() *= Scalar(0.25);
    const Shape xs = n.parent(0).value.shape();
    if (g.shape() == xs) {
      n.parent(0).accumulate(g);
      return;
    }
    Tensor<Scalar> full(xs);
    for (Index b = 0; b < xs.n; ++b)
      for (Index c = 0; c < xs.c; ++c)
        for (Index i = 0; i < g.shape().h; ++i)
          for (Index j = 0; j < g.shape().w; ++j) full(b, c, i, j) = g(b, c, i, j);
    n.parent(0).accumulate(full);
  });
}

template <typename Scalar>
Var<Scalar> concat_channels(const std::vector<Var<Scalar>>& xs) {
  std::vector<const Tensor<Scalar>*> ptrs;
  for (const auto& v : xs) ptrs.push_back(&v.value());
  Tensor<Scalar> y = concat_channels<Scalar>(std::span<const Tensor<Scalar>* const>(ptrs));
  return make_result<Scalar>(std::move(y), "concat", xs, [](Node<Scalar>& n) {
    Index c0 = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      Node<Scalar>& p = n.parent(i);
      const Index c = p.value.shape().c;
      if (p.requires_grad) p.accumulate(slice_channels(n.grad, c0, c));
      c0 += c;
    }
  });
}

template <typename Scalar>
std::vector<Var<Scalar>> split_channels(const Var<Scalar>& x, std::span<const Index> sizes) {
  check_split_sizes(x.shape().c, sizes);
  std::vector<Var<Scalar>> out;
  Index c0 = 0;
  for (Index v : sizes) {
    out.push_back(make_result<Scalar>(
        slice_channels(x.value(), c0, v), "split", {x}, [c0, v](Node<Scalar>& n) {
          Node<Scalar>& p = n.parent(0);
          const Shape s = p.value.shape();
          if (p.grad.shape() != s) p.grad = Tensor<Scalar>(s);
          for (Index b = 0; b < s.n; ++b)
            p.grad.data().segment(p.grad.offset(b, c0, 0, 0), v * s.plane()) +=
                n.grad.data().segment(n.grad.offset(b, 0, 0, 0), v * s.plane());
        }));
    c0 += v;
  }
  return out;
}

template <typename Scalar>
Var<Scalar> add(const std::vector<Var<Scalar>>& xs) {
  if (xs.empty()) throw ConfigError("add: empty input list");
  Tensor<Scalar> y = xs.front().value();
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (!(xs[i].shape() == y.shape())) {
      throw ShapeError("add", "shape " + y.shape().str() + " vs " + xs[i].shape().str());
    }
    y.data() += xs[i].value().data();
  }
  return make_result<Scalar>(std::move(y), "add", xs, [](Node<Scalar>& n) {
    for (std::size_t i = 0; i < n.parents.size(); ++i)
      if (n.parent(i).requires_grad) n.parent(i).accumulate(n.grad);
  });
}

template <typename Scalar>
Var<Scalar> global_avg_pool(const Var<Scalar>& x) {
  return make_result<Scalar>(global_avg_pool(x.value()), "global_avg_pool", {x},
                             [](Node<Scalar>& n) {
                               Node<Scalar>& p = n.parent(0);
                               const Shape s = p.value.shape();
                               Tensor<Scalar> g(s);
                               for (Index b = 0; b < s.n; ++b)
                                 for (Index c = 0; c < s.c; ++c)
                                   g.data().segment(g.offset(b, c, 0, 0), s.plane()).setConstant(
                                       n.grad(b, c, 0, 0) / Scalar(s.plane()));
                               p.accumulate(g);
                             });
}

/// Sum of all elements as a (1,1,1,1) scalar.
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& x) {
  Tensor<Scalar> y = Tensor<Scalar>::constant({1, 1, 1, 1}, x.value().data().sum());
  return make_result<Scalar>(std::move(y), "sum", {x}, [](Node<Scalar>& n) {
    Node<Scalar>& p = n.parent(0);
    p.accumulate(Tensor<Scalar>::constant(p.value.shape(), n.grad[0]));
  });
}

/// Scalar <x, r> against a fixed weighting tensor.
template <typename Scalar>
Var<Scalar> dot(const Var<Scalar>& x, const Tensor<Scalar>& r) {
  if (!(x.shape() == r.shape())) {
    throw ShapeError("dot", "shape " + x.shape().str() + " vs " + r.shape().str());
  }
  Tensor<Scalar> y = Tensor<Scalar>::constant({1, 1, 1, 1}, (x.value().data() * r.data()).sum());
  return make_result<Scalar>(std::move(y), "dot", {x}, [r](Node<Scalar>& n) {
    Tensor<Scalar> g = r;
    g.data() *= n.grad[0];
    n.parent(0).accumulate(g);
  });
}

/// Sum over batch and channels of the activations at spatial location (row, col).
template <typename Scalar>
Var<Scalar> pick_sum(const Var<Scalar>& x, Index row, Index col) {
  const Shape s = x.shape();
  if (row < 0 || row >= s.h || col < 0 || col >= s.w) {
    throw ShapeError("pick_sum", "location outside " + s.str());
  }
  Scalar acc(0);
  for (Index b = 0; b < s.n; ++b)
    for (Index c = 0; c < s.c; ++c) acc += x.value()(b, c, row, col);
  return make_result<Scalar>(Tensor<Scalar>::constant({1, 1, 1, 1}, acc), "pick_sum", {x},
                             [row, col](Node<Scalar>& n) {
                               Node<Scalar>& p = n.parent(0);
                               const Shape s = p.value.shape();
                               Tensor<Scalar> g(s);
                               for (Index b = 0; b < s.n; ++b)
                                 for (Index c = 0; c < s.c; ++c) g(b, c, row, col) = n.grad[0];
                               p.accumulate(g);
                             });
}

/// Mean softmax cross-entropy of logits (n,k,1,1) against integer labels.
template <typename Scalar>
Var<Scalar> softmax_cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  const Shape s = logits.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("softmax_cross_entropy", "logits must be (n,k,1,1)");
  if (static_cast<Index>(labels.size()) != s.n) {
    throw ShapeError("softmax_cross_entropy", "label count", s.n, static_cast<Index>(labels.size()));
  }
  Tensor<Scalar> probs(s);
  Scalar loss(0);
  for (Index b = 0; b < s.n; ++b) {
    const auto z = logits.value().data().segment(b * s.c, s.c);
    const Scalar zmax = z.maxCoeff();
    const auto e = (z - zmax).exp().eval();
    const Scalar total = e.sum();
    probs.data().segment(b * s.c, s.c) = e / total;
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= s.c) throw ConfigError("softmax_cross_entropy: label out of range");
    loss += std::log(total) + zmax - z[label];
  }
  loss /= Scalar(s.n);
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<Scalar>(
      Tensor<Scalar>::constant({1, 1, 1, 1}, loss), "softmax_cross_entropy", {logits},
      [probs = std::move(probs), lab = std::move(lab)](Node<Scalar>& n) {
        Tensor<Scalar> g = probs;
        const Shape s = g.shape();
        for (Index b = 0; b < s.n; ++b) g[b * s.c + lab[static_cast<std::size_t>(b)]] -= Scalar(1);
        g.data() *= n.grad[0] / Scalar(s.n);
        n.parent(0).accumulate(g);
      });
}

}  // namespace maf
