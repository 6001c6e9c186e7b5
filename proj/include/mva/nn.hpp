#pragma once

#include <string>
#include <vector>

#include "mva/optim.hpp"

namespace mva {

enum class Init { he, xavier, zero };

// Declares a dense layer's weight [in x out] and bias [out]. Each parameter
// draws from its own name-derived stream, so initialization is independent
// of declaration order.
template <class S>
void declare_dense(ParamStore<S>& ps, const std::string& name, int in, int out, const Rng& rng,
                   Init scheme) {
  ArrayD<S> w = ArrayD<S>::zeros({in, out});
  if (scheme != Init::zero) {
    Rng r = rng.fork(name + ".W");
    const double std = scheme == Init::he ? std::sqrt(2.0 / in) : std::sqrt(1.0 / in);
    for (S& v : w.data) v = static_cast<S>(r.normal(0.0, std));
  }
  ps.create(name + ".W", std::move(w));
  ps.create(name + ".b", ArrayD<S>::zeros({out}));
}

template <class S>
Value<S> dense(const Binding<S>& b, const std::string& name, const Value<S>& x) {
  return add_bias(matmul(x, b[name + ".W"]), b[name + ".b"]);
}

// Declares `widths.size()` dense layers named prefix.l0, prefix.l1, ...
template <class S>
void declare_mlp(ParamStore<S>& ps, const std::string& prefix, int in, const std::vector<int>& widths,
                 const Rng& rng, Init last = Init::he) {
  for (size_t i = 0; i < widths.size(); ++i) {
    const Init scheme = (i + 1 == widths.size()) ? last : Init::he;
    declare_dense(ps, prefix + ".l" + std::to_string(i), in, widths[i], rng, scheme);
    in = widths[i];
  }
}

// ReLU MLP: activation after every layer except (optionally) the last.
template <class S>
Value<S> mlp_forward(const Binding<S>& b, const std::string& prefix, Value<S> x, int n_layers,
                     bool relu_last) {
  for (int i = 0; i < n_layers; ++i) {
    x = dense(b, prefix + ".l" + std::to_string(i), x);
    if (relu_last || i + 1 < n_layers) x = relu(x);
  }
  return x;
}

// Declares a conv kernel [F x C x k x k] (+ bias [F]).
template <class S>
void declare_conv(ParamStore<S>& ps, const std::string& name, int in_ch, int out_ch, int k,
                  const Rng& rng, Init scheme) {
  ArrayD<S> w = ArrayD<S>::zeros({out_ch, in_ch, k, k});
  if (scheme != Init::zero) {
    Rng r = rng.fork(name + ".W");
    const double fan_in = static_cast<double>(in_ch) * k * k;
    const double std = scheme == Init::he ? std::sqrt(2.0 / fan_in) : std::sqrt(1.0 / fan_in);
    for (S& v : w.data) v = static_cast<S>(r.normal(0.0, std));
  }
  ps.create(name + ".W", std::move(w));
  ps.create(name + ".b", ArrayD<S>::zeros({out_ch}));
}

// Transposed-conv kernel layout is [Cin x Cout x k x k].
template <class S>
void declare_conv_transpose(ParamStore<S>& ps, const std::string& name, int in_ch, int out_ch, int k,
                            const Rng& rng) {
  ArrayD<S> w = ArrayD<S>::zeros({in_ch, out_ch, k, k});
  Rng r = rng.fork(name + ".W");
  const double fan_in = static_cast<double>(in_ch) * k * k;
  const double std = std::sqrt(2.0 / fan_in);
  for (S& v : w.data) v = static_cast<S>(r.normal(0.0, std));
  ps.create(name + ".W", std::move(w));
  ps.create(name + ".b", ArrayD<S>::zeros({out_ch}));
}

// Adds a per-channel bias to a [C x H x W] grid.
template <class S>
Value<S> add_channel_bias(const Value<S>& x, const Value<S>& b) {
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  Value<S> flat = reshape(x, {C, H * W});
  Value<S> biased = add_bias(transpose2d(flat), b);  // [HW x C] + b
  return reshape(transpose2d(biased), {C, H, W});
}

template <class S>
Value<S> conv_layer(const Binding<S>& b, const std::string& name, const Value<S>& x, int stride,
                    int pad) {
  Value<S> y = conv2d(x, b[name + ".W"], stride, pad);
  return add_channel_bias(y, b[name + ".b"]);
}

template <class S>
Value<S> conv_transpose_layer(const Binding<S>& b, const std::string& name, const Value<S>& x,
                              int stride) {
  Value<S> y = conv2d_transpose(x, b[name + ".W"], stride);
  return add_channel_bias(y, b[name + ".b"]);
}

}  // namespace mva
