#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>

#include "mfm/core.hpp"

namespace mfm {

// A named model weight. Gradients never live here: they are read back from the tape
// that recorded the forward pass, so evaluation stays const over parameters.
template <class T>
struct Param {
  Mat<T> value;
  bool trainable = true;
};

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& value() const { return tape->value(id); }
  bool requires_grad() const { return tape->requires_grad(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode recorder. Nodes are appended in evaluation order, so reverse creation
// order is a valid topological order for the backward sweep.
template <class T>
class Tape {
 public:
  // Called as back(tape, output_grad, output_value).
  using Backward = std::function<void(Tape&, const Mat<T>&, const Mat<T>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Mat<T> v) { return push(std::move(v), false, nullptr); }

  // Leaf whose gradient is collected (e.g. an input video for a finite-difference check).
  Var<T> input(Mat<T> v) { return push(std::move(v), grad_enabled_, nullptr); }

  Var<T> param(const Param<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
    Node n;
    n.external = &p.value;
    n.requires_grad = grad_enabled_ && p.trainable;
    nodes_.push_back(std::move(n));
    const int id = static_cast<int>(nodes_.size()) - 1;
    param_nodes_.emplace(&p, id);
    return {this, id};
  }

  // Records an op result. `back` receives the output gradient and must accumulate
  // into the inputs via accumulate(); it is dropped when nothing upstream needs it.
  Var<T> record(Mat<T> v, bool needs_grad, Backward back) {
    const bool keep = grad_enabled_ && needs_grad;
    return push(std::move(v), keep, keep ? std::move(back) : Backward{});
  }

  const Mat<T>& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  template <class Expr>
  void accumulate(Var<T> v, const Expr& g) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Gradient buffer of a node, or nullptr when nothing reached it.
  const Mat<T>* grad(Var<T> v) const {
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.grad.size() ? &n.grad : nullptr;
  }

  const Mat<T>* grad_of(const Param<T>& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end()) return nullptr;
    return grad(Var<T>{const_cast<Tape*>(this), it->second});
  }

  // Whether the forward pass touched a parameter at all.
  bool uses(const Param<T>& p) const { return param_nodes_.count(&p) != 0; }

  void backward(Var<T> root) {
    Node& r = nodes_[static_cast<std::size_t>(root.id)];
    if (!r.requires_grad) return;
    const Mat<T>& rv = value(root.id);
    r.grad = Mat<T>::Ones(rv.rows(), rv.cols());
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.back || n.grad.size() == 0) continue;
      n.back(*this, n.grad, n.value);
      // Interior gradients are not needed after propagation.
      n.grad.resize(0, 0);
    }
  }

  // Rough arithmetic counter (multiply-adds x2) maintained by the heavy ops.
  std::uint64_t flops = 0;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* external = nullptr;
    Mat<T> grad;
    bool requires_grad = false;
    Backward back;
  };

  Var<T> push(Mat<T> v, bool requires_grad, Backward back) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Param<T>*, int> param_nodes_;
};

}  // namespace mfm
