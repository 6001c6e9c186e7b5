#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mva/ops.hpp"
#include "mva/rng.hpp"
#include "mva/tape.hpp"

namespace mva {

// Adam with bias correction. Moments are zero-initialized; `t` is the
// per-parameter step count and must be >= 1 on the first call.
template <class S>
struct AdamState {
  ArrayD<S> m, v;
  int64_t t = 0;
};

template <class S>
void adam_step(ArrayD<S>& param, const ArrayD<S>& grad, AdamState<S>& state, S lr,
               S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8)) {
  if (!same_shape(param, grad))
    throw ValidationError("adam_step: param " + shape_str(param.shape) + " vs grad " +
                          shape_str(grad.shape));
  if (state.m.size() == 0) {
    state.m = ArrayD<S>::zeros(param.shape);
    state.v = ArrayD<S>::zeros(param.shape);
  }
  state.t += 1;
  const S bc1 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta1), static_cast<double>(state.t)));
  const S bc2 = S(1) - static_cast<S>(std::pow(static_cast<double>(beta2), static_cast<double>(state.t)));
  for (size_t i = 0; i < param.data.size(); ++i) {
    const S g = grad.data[i];
    state.m.data[i] = beta1 * state.m.data[i] + (S(1) - beta1) * g;
    state.v.data[i] = beta2 * state.v.data[i] + (S(1) - beta2) * g * g;
    const S mhat = state.m.data[i] / bc1;
    const S vhat = state.v.data[i] / bc2;
    param.data[i] -= lr * mhat / (static_cast<S>(std::sqrt(static_cast<double>(vhat))) + eps);
  }
}

// Named learnable arrays plus their optimizer state. Names are hierarchical
// ("field.coarse.f0.l0.W"); everything under "warp." belongs to the warp
// learning-rate group.
template <class S>
class ParamStore {
 public:
  ArrayD<S>& create(const std::string& name, ArrayD<S> init) {
    if (params_.count(name)) throw ValidationError("parameter already exists: " + name);
    auto& e = params_[name];
    e.value = std::move(init);
    return e.value;
  }

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  ArrayD<S>& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second.value;
  }
  const ArrayD<S>& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second.value;
  }
  AdamState<S>& adam(const std::string& name) { return params_.at(name).adam; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& kv : params_) out.push_back(kv.first);
    return out;  // std::map iterates sorted
  }

  size_t size() const { return params_.size(); }

  // Applies one optimizer step per parameter that has a gradient.
  void apply(const std::map<std::string, ArrayD<S>>& grads, S lr_main, S lr_warp) {
    for (const auto& kv : grads) {
      const bool warp_group = kv.first.rfind("warp.", 0) == 0;
      adam_step(get(kv.first), kv.second, params_.at(kv.first).adam,
                warp_group ? lr_warp : lr_main);
    }
  }

 private:
  struct Entry {
    ArrayD<S> value;
    AdamState<S> adam;
  };
  std::map<std::string, Entry> params_;
};

// Per-tape registration of every parameter, in sorted-name order so node
// ids (and hence gradient accumulation order) are reproducible.
template <class S>
class Binding {
 public:
  Binding() = default;

  // Training binding: leaves on the tape.
  Binding(ParamStore<S>& store, Tape<S>& tape) {
    for (const auto& name : store.names()) {
      Value<S> v = tape.leaf(store.get(name), /*is_param=*/true);
      by_node_[v.node()] = name;
      values_.emplace(name, std::move(v));
    }
  }

  // Evaluation binding: constants, records nothing.
  explicit Binding(const ParamStore<S>& store) {
    for (const auto& name : store.names())
      values_.emplace(name, Value<S>::constant(store.get(name)));
  }

  const Value<S>& operator[](const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw ValidationError("binding: unknown parameter " + name);
    return it->second;
  }
  bool has(const std::string& name) const { return values_.count(name) != 0; }

  // Converts a node-keyed gradient table to a name-keyed one.
  std::map<std::string, ArrayD<S>> to_named(GradTable<S>&& table) const {
    std::map<std::string, ArrayD<S>> out;
    for (auto& kv : table) {
      auto it = by_node_.find(kv.first);
      if (it != by_node_.end()) out.emplace(it->second, std::move(kv.second));
    }
    return out;
  }

 private:
  std::map<std::string, Value<S>> values_;
  std::map<int, std::string> by_node_;
};

// Ordered reduction of shard gradient tables: shards are merged in index
// order, names in sorted order.
template <class S>
std::map<std::string, ArrayD<S>> merge_grads(std::vector<std::map<std::string, ArrayD<S>>>& shards) {
  std::map<std::string, ArrayD<S>> out;
  for (auto& shard : shards) {
    for (auto& kv : shard) {
      auto it = out.find(kv.first);
      if (it == out.end()) {
        out.emplace(kv.first, std::move(kv.second));
      } else {
        ArrayD<S>& acc = it->second;
        for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += kv.second.data[i];
      }
    }
  }
  return out;
}

}  // namespace mva
