#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "dsaf/error.hpp"
#include "dsaf/tensor.hpp"

namespace dsaf {

// A trainable (or frozen) tensor owned by a model. Gradients accumulate into
// `grad` across backward passes until zero_grad() is called.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <class T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return tape->value(*this).shape(); }
};

// Records executed operations in order; backward() replays them in exact
// reverse order. Single use: a second backward() on the same tape throws.
template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Var<T> self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value) { return add_node(std::move(value), false, nullptr, {}); }

  Var<T> input(Tensor<T> value, bool requires_grad = true) {
    return add_node(std::move(value), requires_grad, nullptr, {});
  }

  // Leaf bound to a parameter; its gradient is added to param.grad on backward.
  Var<T> parameter(Parameter<T>& param) {
    return add_node(param.value, param.trainable, &param, {});
  }

  // Appends an op result. The node requires grad iff any input does; `fn`
  // receives the result's own handle, reads grad(self) and accumulates into
  // grad(input) for inputs that require it.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn,
                const char* op_name) {
    return record(std::move(value), std::vector<Var<T>>(inputs), std::move(fn), op_name);
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn,
                const char* op_name) {
    if (!value.all_finite()) {
      throw NumericalError(std::string("non-finite value produced by ") + op_name);
    }
    bool needs = false;
    for (const Var<T>& v : inputs) {
      check_owned(v);
      needs = needs || nodes_[v.id].requires_grad;
    }
    return add_node(std::move(value), needs, nullptr, needs ? std::move(fn) : BackwardFn{});
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of a node, allocated (zero) on first access.
  Tensor<T>& grad(Var<T> v) {
    Node& node = nodes_.at(v.id);
    if (node.grad.size() != node.value.size()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  bool has_grad(Var<T> v) const { return nodes_.at(v.id).grad.size() == nodes_.at(v.id).value.size(); }

  std::size_t size() const { return nodes_.size(); }
  // Distinct parameters bound to this tape, in first-use order.
  std::vector<Parameter<T>*> bound_parameters() const {
    std::vector<Parameter<T>*> out;
    for (const Node& node : nodes_) {
      if (node.param != nullptr && std::find(out.begin(), out.end(), node.param) == out.end()) out.push_back(node.param);
    }
    return out;
  }
  bool backward_done() const { return backward_done_; }

  void backward(Var<T> loss) {
    check_owned(loss);
    if (backward_done_) throw Error("backward() already ran on this tape; build a new tape");
    if (value(loss).size() != 1) {
      throw ShapeError("backward() needs a scalar loss, got " + to_string(value(loss).shape()));
    }
    if (!nodes_[loss.id].requires_grad) {
      throw Error("loss is detached: no trainable input reaches it");
    }
    backward_done_ = true;
    for (Node& node : nodes_) {
      if (node.requires_grad) node.grad = Tensor<T>(node.value.shape());
    }
    nodes_[loss.id].grad[0] = T(1);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& node = nodes_[i];
      if (node.backward) node.backward(*this, Var<T>{this, i});
    }
    for (Node& node : nodes_) {
      if (node.param == nullptr || !node.requires_grad) continue;
      auto dst = node.param->grad.data();
      auto src = node.grad.data();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> add_node(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn fn) {
    nodes_.push_back(Node{std::move(value), Tensor<T>{}, requires_grad, param, std::move(fn)});
    return Var<T>{this, nodes_.size() - 1};
  }

  void check_owned(Var<T> v) const {
    if (v.tape != this || v.id >= nodes_.size()) throw Error("variable does not belong to this tape");
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace dsaf
