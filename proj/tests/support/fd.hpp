#pragma once

// Central-finite-difference oracle for gradient checks. Independent of the
// tape's backward rules: forward values are recomputed from perturbed
// constant inputs, so nothing recorded is reused.

#include <functional>
#include <vector>

#include "mva/ops.hpp"
#include "mva/tape.hpp"

namespace mva::testing {

using BuildFn =
    std::function<Value<double>(const std::vector<Value<double>>&)>;

inline double forward_only(const BuildFn& build, const std::vector<ArrayD<double>>& inputs) {
  std::vector<Value<double>> consts;
  consts.reserve(inputs.size());
  for (const auto& a : inputs) consts.push_back(Value<double>::constant(a));
  return build(consts).item();
}

// Max relative error between tape gradients and central differences over
// every element of every input. Relative error uses a unit floor:
// |a - f| / max(1, |a|, |f|).
inline double max_rel_err(const BuildFn& build, std::vector<ArrayD<double>> inputs,
                          double h = 1e-6) {
  Tape<double> tape;
  std::vector<Value<double>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& a : inputs) leaves.push_back(tape.leaf(a, /*is_param=*/true));
  Value<double> loss = build(leaves);
  GradTable<double> grads = tape.backward(loss);

  double worst = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    auto it = grads.find(leaves[i].node());
    for (int64_t e = 0; e < inputs[i].size(); ++e) {
      const double analytic = it == grads.end() ? 0.0 : it->second.data[static_cast<size_t>(e)];
      const double keep = inputs[i].data[static_cast<size_t>(e)];
      inputs[i].data[static_cast<size_t>(e)] = keep + h;
      const double up = forward_only(build, inputs);
      inputs[i].data[static_cast<size_t>(e)] = keep - h;
      const double dn = forward_only(build, inputs);
      inputs[i].data[static_cast<size_t>(e)] = keep;
      const double fd = (up - dn) / (2.0 * h);
      const double err = std::abs(analytic - fd) /
                         std::max({1.0, std::abs(analytic), std::abs(fd)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

inline ArrayD<double> random_array(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  ArrayD<double> a = ArrayD<double>::zeros(std::move(shape));
  for (double& v : a.data) v = rng.uniform(lo, hi);
  return a;
}

}  // namespace mva::testing
