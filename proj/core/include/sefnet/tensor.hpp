#pragma once

#include <algorithm>
#include <cassert>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>

#include "sefnet/common.hpp"

namespace sefnet {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  std::size_t n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("tensor extents must be positive");
    n *= static_cast<std::size_t>(e);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense row-major tensor. T is float/double or std::complex thereof; the
/// complex case is the spec's CTensor with (re, im) element pairs.
template <class T>
class TensorT {
 public:
  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(shape_size(shape_), T{}) {}
  TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_))
      throw ShapeError("element count does not match shape " + shape_str(shape_));
  }
  TensorT(Shape shape, std::initializer_list<T> vals)
      : TensorT(std::move(shape), std::vector<T>(vals)) {}

  const Shape& shape() const { return shape_; }
  int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

  std::size_t offset(std::initializer_list<int> idx) const {
    assert(idx.size() == shape_.size());
    std::size_t off = 0;
    auto it = idx.begin();
    for (std::size_t a = 0; a < shape_.size(); ++a, ++it) {
      assert(*it >= 0 && *it < shape_[a]);
      off = off * static_cast<std::size_t>(shape_[a]) + static_cast<std::size_t>(*it);
    }
    return off;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  TensorT reshaped(Shape s) const {
    if (shape_size(s) != size()) throw ShapeError("reshape size mismatch");
    TensorT out;
    out.shape_ = std::move(s);
    out.data_ = data_;
    return out;
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!is_finite(v)) return false;
    return true;
  }

  void check_finite(const char* where) const {
    if (!all_finite()) throw NumericError(std::string("non-finite values in ") + where);
  }

  friend bool operator==(const TensorT& a, const TensorT& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <RealScalar Real>
using Tensor = TensorT<Real>;
template <RealScalar Real>
using CTensor = TensorT<std::complex<Real>>;

template <class T>
TensorT<T> zeros_like(const TensorT<T>& t) {
  return TensorT<T>(t.shape());
}

template <class T>
double max_abs(const TensorT<T>& t) {
  double m = 0;
  for (const T& v : t.data()) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

template <class T>
double l2_norm(const TensorT<T>& t) {
  double s = 0;
  for (const T& v : t.data()) {
    const double a = std::abs(v);
    s += a * a;
  }
  return std::sqrt(s);
}

/// Real inner product; complex tensors use the R^2 view, i.e. Re<a, conj b>.
template <class T>
double dot_r2(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("dot: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if constexpr (std::is_floating_point_v<T>) {
      s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    } else {
      s += static_cast<double>(a[i].real()) * static_cast<double>(b[i].real()) +
           static_cast<double>(a[i].imag()) * static_cast<double>(b[i].imag());
    }
  }
  return s;
}

template <class T>
double max_abs_diff(const TensorT<T>& a, const TensorT<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError("diff: shape mismatch");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  return m;
}

template <RealScalar Real>
Tensor<Real> random_uniform(const Shape& shape, Rng& rng, Real lo = Real(-1), Real hi = Real(1)) {
  Tensor<Real> t(shape);
  std::uniform_real_distribution<Real> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

template <RealScalar Real>
Tensor<Real> random_normal(const Shape& shape, Rng& rng, Real mean = Real(0), Real std = Real(1)) {
  Tensor<Real> t(shape);
  std::normal_distribution<Real> dist(mean, std);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

template <RealScalar From, RealScalar To>
Tensor<To> cast_tensor(const Tensor<From>& t) {
  Tensor<To> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<To>(t[i]);
  return out;
}

}  // namespace sefnet
