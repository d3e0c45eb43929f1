#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ahstgnn/common.hpp"

namespace ahst {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {

struct TensorData {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  bool needs_grad = false;  // set when gradients must flow through this node
};

}  // namespace detail

// Dense row-major 64-bit tensor. Value-semantic handle over shared storage:
// copies alias the same buffer, which is what the tape relies on to reach
// parameters during backward.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return alloc(std::move(shape), 0.0, requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    return alloc(std::move(shape), value, requires_grad);
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorData>();
    t.impl_->shape = std::move(shape);
    t.impl_->values = std::move(values);
    t.impl_->requires_grad = requires_grad;
    t.impl_->needs_grad = requires_grad;
    return t;
  }

  static Tensor scalar(double v) { return from({}, {v}); }

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(impl_->values.size()); }

  // Negative indices count from the end.
  int64_t dim(int i) const {
    const int nd = ndim();
    if (i < 0) i += nd;
    return impl_->shape[static_cast<size_t>(i)];
  }

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  double* data() { return impl_->values.data(); }
  const double* data() const { return impl_->values.data(); }

  double at(std::initializer_list<int64_t> idx) const {
    int64_t flat = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      flat = flat * impl_->shape[d] + i;
      ++d;
    }
    return impl_->values[static_cast<size_t>(flat)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  bool needs_grad() const { return impl_->needs_grad; }
  void set_needs_grad(bool v) { impl_->needs_grad = v; }

  bool has_grad() const { return !impl_->grad.empty(); }

  std::vector<double>& ensure_grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
    return impl_->grad;
  }

  std::vector<double>& grad() { return impl_->grad; }
  const std::vector<double>& grad() const { return impl_->grad; }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  void release_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }

  // Deep copy; the clone starts without gradient storage.
  Tensor clone() const {
    Tensor t = from(impl_->shape, impl_->values, impl_->requires_grad);
    return t;
  }

  std::shared_ptr<detail::TensorData> impl() const { return impl_; }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  static void check_shape(const Shape& s) {
    for (int64_t d : s) {
      if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    }
  }

  static Tensor alloc(Shape shape, double fill, bool requires_grad) {
    check_shape(shape);
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorData>();
    const int64_t n = shape_numel(shape);
    t.impl_->shape = std::move(shape);
    t.impl_->values.assign(static_cast<size_t>(n), fill);
    t.impl_->requires_grad = requires_grad;
    t.impl_->needs_grad = requires_grad;
    return t;
  }

  std::shared_ptr<detail::TensorData> impl_;
};

// Trailing-dimension broadcast (a dimension of size 1 stretches).
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int nd = static_cast<int>(std::max(a.size(), b.size()));
  Shape out(static_cast<size_t>(nd));
  for (int i = 0; i < nd; ++i) {
    const int off_a = nd - static_cast<int>(a.size());
    const int off_b = nd - static_cast<int>(b.size());
    const int64_t da = i < off_a ? 1 : a[static_cast<size_t>(i - off_a)];
    const int64_t db = i < off_b ? 1 : b[static_cast<size_t>(i - off_b)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[static_cast<size_t>(i)] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Row-major strides of `s` against iteration shape `iter`; broadcast
// dimensions get stride 0.
inline std::vector<int64_t> bcast_strides(const Shape& s, const Shape& iter) {
  const int nd = static_cast<int>(iter.size());
  const int off = nd - static_cast<int>(s.size());
  std::vector<int64_t> st(static_cast<size_t>(nd), 0);
  int64_t stride = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(off + i)] = (s[static_cast<size_t>(i)] == 1) ? 0 : stride;
    stride *= s[static_cast<size_t>(i)];
  }
  return st;
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size(), 0);
  int64_t stride = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = stride;
    stride *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Odometer walk over `iter` tracking two strided flat offsets.
template <class F>
inline void for_each_pair(const Shape& iter, const std::vector<int64_t>& sa,
                          const std::vector<int64_t>& sb, F&& f) {
  const int nd = static_cast<int>(iter.size());
  if (nd == 0) {
    f(0, 0, 0);
    return;
  }
  std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
  const int64_t total = shape_numel(iter);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < total; ++io) {
    f(io, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[static_cast<size_t>(d)];
      ia += sa[static_cast<size_t>(d)];
      ib += sb[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < iter[static_cast<size_t>(d)]) break;
      ia -= sa[static_cast<size_t>(d)] * iter[static_cast<size_t>(d)];
      ib -= sb[static_cast<size_t>(d)] * iter[static_cast<size_t>(d)];
      idx[static_cast<size_t>(d)] = 0;
    }
  }
}

template <class F>
inline void for_each_strided(const Shape& iter, const std::vector<int64_t>& sa, F&& f) {
  for_each_pair(iter, sa, sa, [&](int64_t io, int64_t ia, int64_t) { f(io, ia); });
}

}  // namespace detail

}  // namespace ahst
