#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mva/errors.hpp"

namespace mva {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense row-major N-d array. The scalar type is the run's precision mode:
// double for verification, float for training.
template <class S>
struct ArrayD {
  Shape shape;
  std::vector<S> data;

  ArrayD() = default;
  ArrayD(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
    check_invariants();
  }

  static ArrayD zeros(Shape sh) {
    ArrayD a;
    a.shape = std::move(sh);
    a.data.assign(static_cast<size_t>(numel(a.shape)), S(0));
    return a;
  }
  static ArrayD full(Shape sh, S v) {
    ArrayD a;
    a.shape = std::move(sh);
    a.data.assign(static_cast<size_t>(numel(a.shape)), v);
    return a;
  }
  static ArrayD scalar(S v) { return full({1}, v); }
  static ArrayD from(Shape sh, std::initializer_list<S> vals) {
    ArrayD a;
    a.shape = std::move(sh);
    a.data = std::vector<S>(vals);
    a.check_invariants();
    return a;
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // 2-d accessors for the matrix-shaped common case.
  int rows() const { return shape[0]; }
  int cols() const { return shape[1]; }
  S& at(int r, int c) { return data[static_cast<size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return data[static_cast<size_t>(r) * cols() + c]; }

  void check_invariants() const {
    for (int e : shape)
      if (e < 1) throw ValidationError("array extent must be >= 1, got shape " + shape_str(shape));
    if (numel(shape) != size())
      throw ValidationError("array data length " + std::to_string(size()) +
                            " does not match shape " + shape_str(shape));
  }
};

template <class S>
bool same_shape(const ArrayD<S>& a, const ArrayD<S>& b) {
  return a.shape == b.shape;
}

// NaN/Inf anywhere in a forward result is a hard error. A single summed
// accumulator detects it in one vectorizable pass.
template <class S>
void check_finite(const ArrayD<S>& a, const char* op_name) {
  S acc = S(0);
  for (S v : a.data) acc += v;
  if (std::isfinite(static_cast<double>(acc))) return;
  for (size_t i = 0; i < a.data.size(); ++i) {
    if (!std::isfinite(static_cast<double>(a.data[i])))
      throw NumericalError(std::string("non-finite value in '") + op_name + "' output at flat index " +
                           std::to_string(i));
  }
  // Summation overflowed but every entry is finite; acceptable.
}

}  // namespace mva
