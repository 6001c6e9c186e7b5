#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mva/array.hpp"
#include "mva/errors.hpp"

namespace mva {

template <class S>
class Tape;

// A value in the computation: an immutable array, optionally tracked as a
// node on a tape. Untracked values are constants and record nothing.
template <class S>
class Value {
 public:
  Value() = default;

  static Value constant(ArrayD<S> v) {
    Value out;
    out.val_ = std::make_shared<const ArrayD<S>>(std::move(v));
    return out;
  }
  static Value constant(std::shared_ptr<const ArrayD<S>> v) {
    Value out;
    out.val_ = std::move(v);
    return out;
  }

  const ArrayD<S>& val() const { return *val_; }
  std::shared_ptr<const ArrayD<S>> ptr() const { return val_; }
  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  Tape<S>* tape() const { return tape_; }
  bool empty() const { return !val_; }

  const Shape& shape() const { return val_->shape; }
  int64_t size() const { return val_->size(); }
  // Scalar convenience for [1]-shaped values.
  S item() const {
    if (val_->size() != 1) throw ValidationError("item() on non-scalar value " + shape_str(val_->shape));
    return val_->data[0];
  }

 private:
  friend class Tape<S>;
  std::shared_ptr<const ArrayD<S>> val_;
  Tape<S>* tape_ = nullptr;
  int node_ = -1;
};

template <class S>
using GradTable = std::unordered_map<int, ArrayD<S>>;

// Reverse-mode tape. Nodes are recorded in execution order, which is a
// topological order by construction; backward visits each node once in
// reverse, so gradient accumulation order is fixed and runs reproduce.
template <class S>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const ArrayD<S>&)>;

  Value<S> leaf(ArrayD<S> v, bool is_param) {
    check_finite(v, is_param ? "param-leaf" : "leaf");
    return push(std::make_shared<const ArrayD<S>>(std::move(v)), nullptr, is_param);
  }

  // Used by op implementations: records `out` with its backward rule.
  Value<S> record(ArrayD<S> out, BackwardFn bwd) {
    return push(std::make_shared<const ArrayD<S>>(std::move(out)), std::move(bwd), false);
  }

  const ArrayD<S>& val(int id) const { return *nodes_[static_cast<size_t>(id)].value; }
  size_t num_nodes() const { return nodes_.size(); }
  bool is_param(int id) const { return nodes_[static_cast<size_t>(id)].param; }

  // Accumulation target for a node's gradient; zero on first touch.
  ArrayD<S>& grad_buf(int id, const Shape& shape) {
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot) slot = std::make_unique<ArrayD<S>>(ArrayD<S>::zeros(shape));
    return *slot;
  }
  bool has_grad(int id) const { return grads_[static_cast<size_t>(id)] != nullptr; }

  // Gradients of a scalar loss w.r.t. every parameter leaf, keyed by node
  // id. Non-parameter leaves are skipped. May be called repeatedly (e.g.
  // for independent losses); each call starts from clean gradients.
  GradTable<S> backward(const Value<S>& loss) {
    if (!loss.tracked() || loss.tape() != this)
      throw ValidationError("backward: loss is not tracked on this tape");
    if (loss.size() != 1)
      throw ValidationError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    grads_.clear();
    grads_.resize(nodes_.size());
    grad_buf(loss.node(), loss.shape()).data[0] = S(1);
    for (int i = loss.node(); i >= 0; --i) {
      auto& node = nodes_[static_cast<size_t>(i)];
      if (!grads_[static_cast<size_t>(i)] || !node.backward) continue;
      node.backward(*this, *grads_[static_cast<size_t>(i)]);
    }
    GradTable<S> table;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].param && grads_[i]) table.emplace(static_cast<int>(i), std::move(*grads_[i]));
    }
    grads_.clear();
    return table;
  }

 private:
  struct Node {
    std::shared_ptr<const ArrayD<S>> value;
    BackwardFn backward;  // null for leaves
    bool param = false;
  };

  Value<S> push(std::shared_ptr<const ArrayD<S>> v, BackwardFn bwd, bool param) {
    Node n;
    n.value = std::move(v);
    n.backward = std::move(bwd);
    n.param = param;
    nodes_.push_back(std::move(n));
    Value<S> out;
    out.val_ = nodes_.back().value;
    out.tape_ = this;
    out.node_ = static_cast<int>(nodes_.size()) - 1;
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<std::unique_ptr<ArrayD<S>>> grads_;
};

// Tape of the first tracked operand; null when all operands are constants.
template <class S>
inline Tape<S>* result_tape(std::initializer_list<const Value<S>*> operands) {
  Tape<S>* t = nullptr;
  for (const Value<S>* v : operands) {
    if (!v->tracked()) continue;
    if (!t)
      t = v->tape();
    else if (t != v->tape())
      throw ValidationError("operands belong to different tapes");
  }
  return t;
}

}  // namespace mva
