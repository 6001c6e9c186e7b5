#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mva/kernels.hpp"
#include "mva/tape.hpp"

// Differentiable operations over Value<S>. Any operand may be an untracked
// constant; a result is recorded only when at least one operand is tracked.

namespace mva {

namespace detail {

template <class S>
Value<S> emit(Tape<S>* t, ArrayD<S> out, const char* name, typename Tape<S>::BackwardFn bwd) {
  check_finite(out, name);
  if (!t) return Value<S>::constant(std::move(out));
  return t->record(std::move(out), std::move(bwd));
}

template <class S>
void accum(Tape<S>& t, const Value<S>& v, const ArrayD<S>& contrib) {
  if (!v.tracked()) return;
  ArrayD<S>& g = t.grad_buf(v.node(), v.shape());
  for (int64_t i = 0; i < contrib.size(); ++i) g.data[static_cast<size_t>(i)] += contrib.data[static_cast<size_t>(i)];
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise kinds. Forward f(x); derivative df(x, y) with y = f(x).

enum class Ew {
  relu,
  leaky_relu,  // slope fixed at 0.2
  sigmoid,
  softplus,
  sine,
  cosine,
  exp,
  square,
  sqrt,       // derivative guarded at 0
  recip,
  neg,
  cos_sqrt,        // cos(sqrt(x)), smooth in x near 0
  sinc_sqrt,       // sin(sqrt(x))/sqrt(x), smooth in x near 0
  sinc_sqrt_deriv  // d/dx sinc_sqrt(x)
};

namespace detail {

template <class S>
struct EwFns {
  static constexpr S kLeaky = S(0.2);
  // series cutovers: the closed forms cancel near zero
  static constexpr S kSeriesCut = sizeof(S) == 4 ? S(1e-3) : S(1e-9);

  static S sigmoid_f(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  }
  static S softplus_f(S x) { return x > S(30) ? x : std::log1p(std::exp(x)); }

  static S sinc_sqrt_f(S s) {
    if (s < kSeriesCut) return S(1) - s / S(6) + s * s / S(120);
    const S r = std::sqrt(s);
    return std::sin(r) / r;
  }
  static S cos_sqrt_f(S s) { return std::cos(std::sqrt(std::max(s, S(0)))); }
  static S sinc_sqrt_d(S s) {
    if (s < kSeriesCut) return S(-1.0 / 6.0) + s / S(60) - s * s / S(1680);
    return (cos_sqrt_f(s) - sinc_sqrt_f(s)) / (S(2) * s);
  }
  static S sinc_sqrt_d2(S s) {
    if (s < kSeriesCut) return S(1.0 / 60.0) - s / S(840) + s * s / S(30240);
    const S f = cos_sqrt_f(s), h = sinc_sqrt_f(s);
    return -(h * s + S(3) * (f - h)) / (S(4) * s * s);
  }

  static S f(Ew k, S x) {
    switch (k) {
      case Ew::relu: return x > S(0) ? x : S(0);
      case Ew::leaky_relu: return x > S(0) ? x : kLeaky * x;
      case Ew::sigmoid: return sigmoid_f(x);
      case Ew::softplus: return softplus_f(x);
      case Ew::sine: return std::sin(x);
      case Ew::cosine: return std::cos(x);
      case Ew::exp: return std::exp(x);
      case Ew::square: return x * x;
      case Ew::sqrt: return std::sqrt(x);
      case Ew::recip: return S(1) / x;
      case Ew::neg: return -x;
      case Ew::cos_sqrt: return cos_sqrt_f(x);
      case Ew::sinc_sqrt: return sinc_sqrt_f(x);
      case Ew::sinc_sqrt_deriv: return sinc_sqrt_d(x);
    }
    return S(0);
  }

  static S df(Ew k, S x, S y) {
    switch (k) {
      case Ew::relu: return x > S(0) ? S(1) : S(0);
      case Ew::leaky_relu: return x > S(0) ? S(1) : kLeaky;
      case Ew::sigmoid: return y * (S(1) - y);
      case Ew::softplus: return sigmoid_f(x);
      case Ew::sine: return std::cos(x);
      case Ew::cosine: return -std::sin(x);
      case Ew::exp: return y;
      case Ew::square: return S(2) * x;
      case Ew::sqrt: return S(0.5) / std::max(y, S(1e-12));
      case Ew::recip: return -y * y;
      case Ew::neg: return S(-1);
      case Ew::cos_sqrt: return S(-0.5) * sinc_sqrt_f(x);
      case Ew::sinc_sqrt: return sinc_sqrt_d(x);
      case Ew::sinc_sqrt_deriv: return sinc_sqrt_d2(x);
    }
    return S(0);
  }
};

inline const char* ew_name(Ew k) {
  switch (k) {
    case Ew::relu: return "relu";
    case Ew::leaky_relu: return "leaky_relu";
    case Ew::sigmoid: return "sigmoid";
    case Ew::softplus: return "softplus";
    case Ew::sine: return "sin";
    case Ew::cosine: return "cos";
    case Ew::exp: return "exp";
    case Ew::square: return "square";
    case Ew::sqrt: return "sqrt";
    case Ew::recip: return "recip";
    case Ew::neg: return "neg";
    case Ew::cos_sqrt: return "cos_sqrt";
    case Ew::sinc_sqrt: return "sinc_sqrt";
    case Ew::sinc_sqrt_deriv: return "sinc_sqrt_deriv";
  }
  return "ew";
}

}  // namespace detail

template <class S>
Value<S> elementwise(Ew kind, const Value<S>& a) {
  using F = detail::EwFns<S>;
  ArrayD<S> out = ArrayD<S>::zeros(a.shape());
  for (int64_t i = 0; i < a.size(); ++i)
    out.data[static_cast<size_t>(i)] = F::f(kind, a.val().data[static_cast<size_t>(i)]);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), detail::ew_name(kind),
                      [a, kind](Tape<S>& tp, const ArrayD<S>& g) {
                        if (!a.tracked()) return;
                        ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
                        const ArrayD<S>& x = a.val();
                        for (int64_t i = 0; i < g.size(); ++i) {
                          const size_t k = static_cast<size_t>(i);
                          const S xv = x.data[k];
                          ga.data[k] += g.data[k] * detail::EwFns<S>::df(kind, xv, detail::EwFns<S>::f(kind, xv));
                        }
                      });
}

enum class EwBin { add, sub, mul, div };

template <class S>
Value<S> elementwise(EwBin kind, const Value<S>& a, const Value<S>& b) {
  detail::require(a.shape() == b.shape(), std::string("elementwise: shape mismatch ") +
                                              shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  ArrayD<S> out = ArrayD<S>::zeros(a.shape());
  const auto& x = a.val().data;
  const auto& y = b.val().data;
  for (size_t i = 0; i < out.data.size(); ++i) {
    switch (kind) {
      case EwBin::add: out.data[i] = x[i] + y[i]; break;
      case EwBin::sub: out.data[i] = x[i] - y[i]; break;
      case EwBin::mul: out.data[i] = x[i] * y[i]; break;
      case EwBin::div: out.data[i] = x[i] / y[i]; break;
    }
  }
  Tape<S>* t = result_tape<S>({&a, &b});
  const char* name = kind == EwBin::add   ? "add"
                     : kind == EwBin::sub ? "sub"
                     : kind == EwBin::mul ? "mul"
                                          : "div";
  return detail::emit(t, std::move(out), name, [a, b, kind](Tape<S>& tp, const ArrayD<S>& g) {
    const auto& x = a.val().data;
    const auto& y = b.val().data;
    if (a.tracked()) {
      ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
      for (size_t i = 0; i < x.size(); ++i) {
        switch (kind) {
          case EwBin::add:
          case EwBin::sub: ga.data[i] += g.data[i]; break;
          case EwBin::mul: ga.data[i] += g.data[i] * y[i]; break;
          case EwBin::div: ga.data[i] += g.data[i] / y[i]; break;
        }
      }
    }
    if (b.tracked()) {
      ArrayD<S>& gb = tp.grad_buf(b.node(), b.shape());
      for (size_t i = 0; i < y.size(); ++i) {
        switch (kind) {
          case EwBin::add: gb.data[i] += g.data[i]; break;
          case EwBin::sub: gb.data[i] -= g.data[i]; break;
          case EwBin::mul: gb.data[i] += g.data[i] * x[i]; break;
          case EwBin::div: gb.data[i] -= g.data[i] * x[i] / (y[i] * y[i]); break;
        }
      }
    }
  });
}

template <class S> Value<S> add(const Value<S>& a, const Value<S>& b) { return elementwise(EwBin::add, a, b); }
template <class S> Value<S> sub(const Value<S>& a, const Value<S>& b) { return elementwise(EwBin::sub, a, b); }
template <class S> Value<S> mul(const Value<S>& a, const Value<S>& b) { return elementwise(EwBin::mul, a, b); }
template <class S> Value<S> div(const Value<S>& a, const Value<S>& b) { return elementwise(EwBin::div, a, b); }
template <class S> Value<S> relu(const Value<S>& a) { return elementwise(Ew::relu, a); }
template <class S> Value<S> leaky_relu(const Value<S>& a) { return elementwise(Ew::leaky_relu, a); }
template <class S> Value<S> sigmoid(const Value<S>& a) { return elementwise(Ew::sigmoid, a); }
template <class S> Value<S> softplus(const Value<S>& a) { return elementwise(Ew::softplus, a); }
template <class S> Value<S> sin(const Value<S>& a) { return elementwise(Ew::sine, a); }
template <class S> Value<S> cos(const Value<S>& a) { return elementwise(Ew::cosine, a); }
template <class S> Value<S> exp(const Value<S>& a) { return elementwise(Ew::exp, a); }
template <class S> Value<S> square(const Value<S>& a) { return elementwise(Ew::square, a); }
template <class S> Value<S> sqrt(const Value<S>& a) { return elementwise(Ew::sqrt, a); }
template <class S> Value<S> recip(const Value<S>& a) { return elementwise(Ew::recip, a); }
template <class S> Value<S> neg(const Value<S>& a) { return elementwise(Ew::neg, a); }

// y = c * x
template <class S>
Value<S> scale(const Value<S>& a, S c) {
  ArrayD<S> out = a.val();
  for (S& v : out.data) v *= c;
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "scale", [a, c](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i] * c;
  });
}

template <class S>
Value<S> add_const(const Value<S>& a, S c) {
  ArrayD<S> out = a.val();
  for (S& v : out.data) v += c;
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "add_const", [a](Tape<S>& tp, const ArrayD<S>& g) {
    detail::accum(tp, a, g);
  });
}

// y = max(x, c); derivative 0 at and below the clamp
template <class S>
Value<S> clamp_min(const Value<S>& a, S c) {
  ArrayD<S> out = a.val();
  for (S& v : out.data) v = std::max(v, c);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "clamp_min", [a, c](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    const auto& x = a.val().data;
    for (size_t i = 0; i < g.data.size(); ++i)
      if (x[i] > c) ga.data[i] += g.data[i];
  });
}

// ---------------------------------------------------------------------------
// Matrix ops

template <class S>
Value<S> matmul(const Value<S>& a, const Value<S>& b) {
  detail::require(a.shape().size() == 2 && b.shape().size() == 2 && a.shape()[1] == b.shape()[0],
                  "matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({m, n});
  kern::mm_nn(a.val().data.data(), b.val().data.data(), out.data.data(), m, k, n);
  Tape<S>* t = result_tape<S>({&a, &b});
  return detail::emit(t, std::move(out), "matmul", [a, b, m, k, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (a.tracked()) {
      ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
      kern::mm_nt(g.data.data(), b.val().data.data(), ga.data.data(), m, n, k);
    }
    if (b.tracked()) {
      ArrayD<S>& gb = tp.grad_buf(b.node(), b.shape());
      kern::mm_tn(a.val().data.data(), g.data.data(), gb.data.data(), m, k, n);
    }
  });
}

template <class S>
Value<S> add_bias(const Value<S>& a, const Value<S>& b) {
  detail::require(a.shape().size() == 2 && b.size() == a.shape()[1],
                  "add_bias: bias length does not match columns");
  const int m = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = a.val();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] += b.val().data[static_cast<size_t>(j)];
  Tape<S>* t = result_tape<S>({&a, &b});
  return detail::emit(t, std::move(out), "add_bias", [a, b, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (a.tracked()) detail::accum(tp, a, g);
    if (b.tracked()) {
      ArrayD<S>& gb = tp.grad_buf(b.node(), b.shape());
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i) * n + j];
    }
  });
}

// y[i,:] = a[i,:] * s[i]
template <class S>
Value<S> scale_rows(const Value<S>& a, const Value<S>& s) {
  detail::require(a.shape().size() == 2 && s.size() == a.shape()[0],
                  "scale_rows: scale length does not match rows");
  const int m = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = a.val();
  for (int i = 0; i < m; ++i) {
    const S sv = s.val().data[static_cast<size_t>(i)];
    for (int j = 0; j < n; ++j) out.data[static_cast<size_t>(i) * n + j] *= sv;
  }
  Tape<S>* t = result_tape<S>({&a, &s});
  return detail::emit(t, std::move(out), "scale_rows", [a, s, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (a.tracked()) {
      ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
      for (int i = 0; i < m; ++i) {
        const S sv = s.val().data[static_cast<size_t>(i)];
        for (int j = 0; j < n; ++j) ga.data[static_cast<size_t>(i) * n + j] += g.data[static_cast<size_t>(i) * n + j] * sv;
      }
    }
    if (s.tracked()) {
      ArrayD<S>& gs = tp.grad_buf(s.node(), s.shape());
      for (int i = 0; i < m; ++i) {
        S acc = S(0);
        for (int j = 0; j < n; ++j)
          acc += g.data[static_cast<size_t>(i) * n + j] * a.val().data[static_cast<size_t>(i) * n + j];
        gs.data[static_cast<size_t>(i)] += acc;
      }
    }
  });
}

template <class S>
Value<S> sum_cols(const Value<S>& a) {  // [m x n] -> [m x 1]
  detail::require(a.shape().size() == 2, "sum_cols: expects a matrix");
  const int m = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({m, 1});
  for (int i = 0; i < m; ++i) {
    S acc = S(0);
    for (int j = 0; j < n; ++j) acc += a.val().data[static_cast<size_t>(i) * n + j];
    out.data[static_cast<size_t>(i)] = acc;
  }
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "sum_cols", [a, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.data[static_cast<size_t>(i) * n + j] += g.data[static_cast<size_t>(i)];
  });
}

// [(p*k) x n] -> [p x n]: sums each run of k consecutive rows.
template <class S>
Value<S> sum_groups(const Value<S>& a, int k) {
  detail::require(a.shape().size() == 2 && a.shape()[0] % k == 0,
                  "sum_groups: rows not divisible by group size");
  const int p = a.shape()[0] / k, n = a.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({p, n});
  for (int i = 0; i < p; ++i)
    for (int r = 0; r < k; ++r)
      for (int j = 0; j < n; ++j)
        out.data[static_cast<size_t>(i) * n + j] += a.val().data[(static_cast<size_t>(i) * k + r) * n + j];
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "sum_groups", [a, p, k, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (int i = 0; i < p; ++i)
      for (int r = 0; r < k; ++r)
        for (int j = 0; j < n; ++j)
          ga.data[(static_cast<size_t>(i) * k + r) * n + j] += g.data[static_cast<size_t>(i) * n + j];
  });
}

// [p x n] -> [(p*k) x n]: row i is repeated k times consecutively.
template <class S>
Value<S> repeat_rows(const Value<S>& a, int k) {
  detail::require(a.shape().size() == 2, "repeat_rows: expects a matrix");
  const int p = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({p * k, n});
  for (int i = 0; i < p; ++i)
    for (int r = 0; r < k; ++r)
      std::copy_n(a.val().data.begin() + static_cast<int64_t>(i) * n, n,
                  out.data.begin() + (static_cast<int64_t>(i) * k + r) * n);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "repeat_rows", [a, p, k, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (int i = 0; i < p; ++i)
      for (int r = 0; r < k; ++r)
        for (int j = 0; j < n; ++j)
          ga.data[static_cast<size_t>(i) * n + j] += g.data[(static_cast<size_t>(i) * k + r) * n + j];
  });
}

template <class S>
Value<S> gather_rows(const Value<S>& a, std::vector<int> idx) {
  detail::require(a.shape().size() == 2, "gather_rows: expects a matrix");
  const int N = a.shape()[0], n = a.shape()[1];
  for (int i : idx)
    detail::require(i >= 0 && i < N, "gather_rows: index " + std::to_string(i) + " out of range");
  ArrayD<S> out = ArrayD<S>::zeros({static_cast<int>(idx.size()), n});
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy_n(a.val().data.begin() + static_cast<int64_t>(idx[r]) * n, n, out.data.begin() + static_cast<int64_t>(r) * n);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "gather_rows",
                      [a, idx = std::move(idx), n](Tape<S>& tp, const ArrayD<S>& g) {
                        if (!a.tracked()) return;
                        ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
                        for (size_t r = 0; r < idx.size(); ++r)
                          for (int j = 0; j < n; ++j)
                            ga.data[static_cast<size_t>(idx[r]) * n + j] += g.data[r * static_cast<size_t>(n) + j];
                      });
}

// out[m,:] = sum_j w[m][j] * a[idx[m][j], :]; idx entries of -1 contribute 0.
// Fixed-sparsity linear map; carries UV rasterization and bilinear sampling.
template <class S>
Value<S> weighted_gather(const Value<S>& a, std::shared_ptr<const std::vector<int>> idx,
                         std::shared_ptr<const std::vector<S>> w, int k) {
  detail::require(a.shape().size() == 2, "weighted_gather: expects a matrix");
  detail::require(idx->size() == w->size() && idx->size() % static_cast<size_t>(k) == 0,
                  "weighted_gather: index/weight table mismatch");
  const int M = static_cast<int>(idx->size()) / k;
  const int N = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({M, n});
  for (int m = 0; m < M; ++m) {
    S* dst = out.data.data() + static_cast<int64_t>(m) * n;
    for (int j = 0; j < k; ++j) {
      const int src = (*idx)[static_cast<size_t>(m) * k + j];
      if (src < 0) continue;
      detail::require(src < N, "weighted_gather: index out of range");
      const S wv = (*w)[static_cast<size_t>(m) * k + j];
      const S* srcp = a.val().data.data() + static_cast<int64_t>(src) * n;
      for (int c = 0; c < n; ++c) dst[c] += wv * srcp[c];
    }
  }
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "weighted_gather",
                      [a, idx, w, k, n, M](Tape<S>& tp, const ArrayD<S>& g) {
                        if (!a.tracked()) return;
                        ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
                        for (int m = 0; m < M; ++m) {
                          const S* gm = g.data.data() + static_cast<int64_t>(m) * n;
                          for (int j = 0; j < k; ++j) {
                            const int src = (*idx)[static_cast<size_t>(m) * k + j];
                            if (src < 0) continue;
                            const S wv = (*w)[static_cast<size_t>(m) * k + j];
                            S* dst = ga.data.data() + static_cast<int64_t>(src) * n;
                            for (int c = 0; c < n; ++c) dst[c] += wv * gm[c];
                          }
                        }
                      });
}

template <class S>
Value<S> transpose2d(const Value<S>& a) {
  detail::require(a.shape().size() == 2, "transpose2d: expects a matrix");
  const int m = a.shape()[0], n = a.shape()[1];
  ArrayD<S> out = ArrayD<S>::zeros({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data[static_cast<size_t>(j) * m + i] = a.val().data[static_cast<size_t>(i) * n + j];
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "transpose2d", [a, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) ga.data[static_cast<size_t>(i) * n + j] += g.data[static_cast<size_t>(j) * m + i];
  });
}

template <class S>
Value<S> concat_cols(const std::vector<Value<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty list");
  const int m = parts[0].shape()[0];
  int n = 0;
  for (const auto& p : parts) {
    detail::require(p.shape().size() == 2 && p.shape()[0] == m, "concat_cols: row mismatch");
    n += p.shape()[1];
  }
  ArrayD<S> out = ArrayD<S>::zeros({m, n});
  int off = 0;
  for (const auto& p : parts) {
    const int pn = p.shape()[1];
    for (int i = 0; i < m; ++i)
      std::copy_n(p.val().data.begin() + static_cast<int64_t>(i) * pn, pn,
                  out.data.begin() + static_cast<int64_t>(i) * n + off);
    off += pn;
  }
  Tape<S>* t = nullptr;
  for (const auto& p : parts)
    if (p.tracked()) {
      detail::require(!t || t == p.tape(), "concat_cols: operands on different tapes");
      t = p.tape();
    }
  return detail::emit(t, std::move(out), "concat_cols", [parts, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    int off = 0;
    for (const auto& p : parts) {
      const int pn = p.shape()[1];
      if (p.tracked()) {
        ArrayD<S>& gp = tp.grad_buf(p.node(), p.shape());
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < pn; ++j)
            gp.data[static_cast<size_t>(i) * pn + j] += g.data[static_cast<size_t>(i) * n + off + j];
      }
      off += pn;
    }
  });
}

template <class S>
Value<S> slice_cols(const Value<S>& a, int c0, int c1) {
  detail::require(a.shape().size() == 2 && 0 <= c0 && c0 < c1 && c1 <= a.shape()[1],
                  "slice_cols: bad column range");
  const int m = a.shape()[0], n = a.shape()[1], w = c1 - c0;
  ArrayD<S> out = ArrayD<S>::zeros({m, w});
  for (int i = 0; i < m; ++i)
    std::copy_n(a.val().data.begin() + static_cast<int64_t>(i) * n + c0, w,
                out.data.begin() + static_cast<int64_t>(i) * w);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "slice_cols", [a, c0, w, m, n](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        ga.data[static_cast<size_t>(i) * n + c0 + j] += g.data[static_cast<size_t>(i) * w + j];
  });
}

// Concatenation along axis 0; parts must agree on trailing dims.
template <class S>
Value<S> concat_rows(const std::vector<Value<S>>& parts) {
  detail::require(!parts.empty(), "concat_rows: empty list");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  int m = 0;
  for (const auto& p : parts) {
    Shape pt(p.shape().begin() + 1, p.shape().end());
    detail::require(pt == tail, "concat_rows: trailing shape mismatch");
    m += p.shape()[0];
  }
  Shape out_shape = {m};
  out_shape.insert(out_shape.end(), tail.begin(), tail.end());
  ArrayD<S> out = ArrayD<S>::zeros(out_shape);
  int64_t off = 0;
  for (const auto& p : parts) {
    std::copy_n(p.val().data.begin(), p.size(), out.data.begin() + off);
    off += p.size();
  }
  Tape<S>* t = nullptr;
  for (const auto& p : parts)
    if (p.tracked()) {
      detail::require(!t || t == p.tape(), "concat_rows: operands on different tapes");
      t = p.tape();
    }
  return detail::emit(t, std::move(out), "concat_rows", [parts](Tape<S>& tp, const ArrayD<S>& g) {
    int64_t off = 0;
    for (const auto& p : parts) {
      if (p.tracked()) {
        ArrayD<S>& gp = tp.grad_buf(p.node(), p.shape());
        for (int64_t i = 0; i < p.size(); ++i) gp.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(off + i)];
      }
      off += p.size();
    }
  });
}

template <class S>
Value<S> reshape(const Value<S>& a, Shape shape) {
  detail::require(numel(shape) == a.size(), "reshape: element count mismatch " + shape_str(a.shape()) +
                                                " -> " + shape_str(shape));
  ArrayD<S> out(shape, a.val().data);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "reshape", [a](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (size_t i = 0; i < g.data.size(); ++i) ga.data[i] += g.data[i];
  });
}

template <class S>
Value<S> sum_all(const Value<S>& a) {
  S acc = S(0);
  for (S v : a.val().data) acc += v;
  ArrayD<S> out = ArrayD<S>::scalar(acc);
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "sum_all", [a](Tape<S>& tp, const ArrayD<S>& g) {
    if (!a.tracked()) return;
    ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
    for (S& v : ga.data) v += g.data[0];
  });
}

template <class S>
Value<S> mean_all(const Value<S>& a) {
  return scale(sum_all(a), S(1) / static_cast<S>(a.size()));
}

// Exclusive prefix sums within consecutive groups of `k` entries.
template <class S>
Value<S> cumsum_excl_groups(const Value<S>& a, int k) {
  detail::require(a.shape().size() == 2 && a.shape()[1] == 1 && a.shape()[0] % k == 0,
                  "cumsum_excl_groups: expects [(g*k) x 1]");
  const int groups = a.shape()[0] / k;
  ArrayD<S> out = ArrayD<S>::zeros(a.shape());
  for (int gi = 0; gi < groups; ++gi) {
    S acc = S(0);
    for (int i = 0; i < k; ++i) {
      out.data[static_cast<size_t>(gi) * k + i] = acc;
      acc += a.val().data[static_cast<size_t>(gi) * k + i];
    }
  }
  Tape<S>* t = result_tape<S>({&a});
  return detail::emit(t, std::move(out), "cumsum_excl_groups",
                      [a, groups, k](Tape<S>& tp, const ArrayD<S>& g) {
                        if (!a.tracked()) return;
                        ArrayD<S>& ga = tp.grad_buf(a.node(), a.shape());
                        for (int gi = 0; gi < groups; ++gi) {
                          S acc = S(0);
                          for (int i = k - 1; i >= 0; --i) {
                            ga.data[static_cast<size_t>(gi) * k + i] += acc;
                            acc += g.data[static_cast<size_t>(gi) * k + i];
                          }
                        }
                      });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation convention)

template <class S>
Value<S> conv2d(const Value<S>& x, const Value<S>& k, int stride, int pad) {
  detail::require(x.shape().size() == 3 && k.shape().size() == 4,
                  "conv2d: expects input [C x H x W] and kernel [F x C x kh x kw]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int F = k.shape()[0], kh = k.shape()[2], kw = k.shape()[3];
  detail::require(k.shape()[1] == C, "conv2d: kernel channel mismatch");
  detail::require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd");
  detail::require(kh <= H + 2 * pad && kw <= W + 2 * pad, "conv2d: kernel larger than padded input");
  const int Ho = kern::conv_out_extent(H, kh, stride, pad);
  const int Wo = kern::conv_out_extent(W, kw, stride, pad);
  const int ck = C * kh * kw;
  std::vector<S> cols(static_cast<size_t>(ck) * Ho * Wo);
  kern::im2col(x.val().data.data(), C, H, W, kh, kw, stride, pad, pad, cols.data());
  ArrayD<S> out = ArrayD<S>::zeros({F, Ho, Wo});
  kern::mm_nn(k.val().data.data(), cols.data(), out.data.data(), F, ck, Ho * Wo);
  Tape<S>* t = result_tape<S>({&x, &k});
  return detail::emit(
      t, std::move(out), "conv2d",
      [x, k, stride, pad, C, H, W, F, kh, kw, Ho, Wo, ck](Tape<S>& tp, const ArrayD<S>& g) {
        const int hw = Ho * Wo;
        if (k.tracked()) {
          std::vector<S> cols(static_cast<size_t>(ck) * hw);
          kern::im2col(x.val().data.data(), C, H, W, kh, kw, stride, pad, pad, cols.data());
          ArrayD<S>& gk = tp.grad_buf(k.node(), k.shape());
          kern::mm_nt(g.data.data(), cols.data(), gk.data.data(), F, hw, ck);
        }
        if (x.tracked()) {
          std::vector<S> gcols(static_cast<size_t>(ck) * hw, S(0));
          kern::mm_tn(k.val().data.data(), g.data.data(), gcols.data(), F, ck, hw);
          ArrayD<S>& gx = tp.grad_buf(x.node(), x.shape());
          kern::col2im(gcols.data(), C, H, W, kh, kw, stride, pad, pad, gx.data.data());
        }
      });
}

// Transposed convolution: the adjoint of conv2d with "same"-style padding
// (k-1)/2, so the spatial extent is exactly H*stride x W*stride. Kernel
// layout is [Cin x Cout x kh x kw].
template <class S>
Value<S> conv2d_transpose(const Value<S>& x, const Value<S>& k, int stride) {
  detail::require(x.shape().size() == 3 && k.shape().size() == 4,
                  "conv2d_transpose: expects input [C x H x W] and kernel [C x F x kh x kw]");
  const int C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const int F = k.shape()[1], kh = k.shape()[2], kw = k.shape()[3];
  detail::require(k.shape()[0] == C, "conv2d_transpose: kernel channel mismatch");
  const int Ho = H * stride, Wo = W * stride;
  const int pad_h = (kh - 1) / 2, pad_w = (kw - 1) / 2;
  detail::require(kern::conv_out_extent(Ho, kh, stride, pad_h) == H &&
                      kern::conv_out_extent(Wo, kw, stride, pad_w) == W,
                  "conv2d_transpose: geometry does not invert");
  const int fk = F * kh * kw;
  // cols = K^T(as [C x fk]) applied to x rows, then scattered by col2im.
  std::vector<S> cols(static_cast<size_t>(fk) * H * W, S(0));
  kern::mm_tn(k.val().data.data(), x.val().data.data(), cols.data(), C, fk, H * W);
  ArrayD<S> out = ArrayD<S>::zeros({F, Ho, Wo});
  kern::col2im(cols.data(), F, Ho, Wo, kh, kw, stride, pad_h, pad_w, out.data.data());
  Tape<S>* t = result_tape<S>({&x, &k});
  return detail::emit(
      t, std::move(out), "conv2d_transpose",
      [x, k, stride, C, H, W, F, kh, kw, Ho, Wo, pad_h, pad_w, fk](Tape<S>& tp, const ArrayD<S>& g) {
        const int hw = H * W;
        std::vector<S> gcols(static_cast<size_t>(fk) * hw);
        kern::im2col(g.data.data(), F, Ho, Wo, kh, kw, stride, pad_h, pad_w, gcols.data());
        if (x.tracked()) {
          ArrayD<S>& gx = tp.grad_buf(x.node(), x.shape());
          kern::mm_nn(k.val().data.data(), gcols.data(), gx.data.data(), C, fk, hw);
        }
        if (k.tracked()) {
          ArrayD<S>& gk = tp.grad_buf(k.node(), k.shape());
          kern::mm_nt(x.val().data.data(), gcols.data(), gk.data.data(), C, hw, fk);
        }
      });
}

}  // namespace mva
