#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "volnet/errors.hpp"
#include "volnet/rng.hpp"

namespace volnet {

using index_t = std::int64_t;
using Shape = std::vector<index_t>;
using NodeId = std::int64_t;

template <typename Scalar>
class Tape;

inline index_t numel(const Shape& shape) {
  index_t n = 1;
  for (index_t d : shape) n *= d;
  return n;
}

inline Shape row_major_strides(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Dense row-major N-d array. Rank 0 with one element is a scalar. Copies
// share storage; tensors are immutable once built except for the
// optimizer's in-place parameter update. A tensor may carry a handle into
// a Tape, in which case gradients flow to it through backward().
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;  // undefined tensor (no storage); used for "absent"

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_ = std::make_shared<std::vector<Scalar>>(static_cast<std::size_t>(numel(shape_)), Scalar(0));
  }

  Tensor(Shape shape, std::vector<Scalar> values) : shape_(std::move(shape)) {
    check_dims(shape_);
    if (static_cast<index_t>(values.size()) != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<Scalar>>(std::move(values));
  }

  static Tensor scalar(Scalar v) { return Tensor(Shape{}, std::vector<Scalar>{v}); }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, Scalar v) {
    Tensor t(std::move(shape));
    std::fill(t.mutable_data(), t.mutable_data() + t.size(), v);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), Scalar(1)); }

  static Tensor uniform(Shape shape, Scalar lo, Scalar hi, Rng& rng) {
    Tensor t(std::move(shape));
    Scalar* p = t.mutable_data();
    for (index_t i = 0; i < t.size(); ++i) p[i] = static_cast<Scalar>(rand_uniform(rng, lo, hi));
    return t;
  }

  bool defined() const { return static_cast<bool>(data_); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  index_t dim(std::size_t i) const { return shape_.at(i); }
  index_t size() const { return defined() ? static_cast<index_t>(data_->size()) : 0; }
  bool is_scalar() const { return defined() && data_->size() == 1; }

  const Scalar* data() const { return data_->data(); }
  // For kernels filling a freshly built tensor and for the optimizer's
  // in-place update. Storage may be shared; callers own that contract.
  Scalar* mutable_data() { return data_->data(); }

  Scalar at_flat(index_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  template <typename... Ix>
  Scalar operator()(Ix... ix) const {
    const std::array<index_t, sizeof...(Ix)> idx{static_cast<index_t>(ix)...};
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
    const Shape strides = row_major_strides(shape_);
    index_t flat = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) flat += idx[i] * strides[i];
    return (*data_)[static_cast<std::size_t>(flat)];
  }

  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<Scalar>>(*data_);
    return t;
  }

  // Same storage, new shape; element count must match.
  Tensor viewed_as(Shape shape) const {
    if (numel(shape) != size()) {
      throw ShapeError("cannot view " + shape_str(shape_) + " as " + shape_str(shape));
    }
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    std::vector<Other> out(static_cast<std::size_t>(size()));
    for (index_t i = 0; i < size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<Other>((*data_)[i]);
    return Tensor<Other>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (Scalar v : *data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  // --- autodiff handle ---
  Tape<Scalar>* tape() const { return tape_; }
  NodeId node() const { return node_; }
  bool tracked() const { return tape_ != nullptr; }
  void detach() {
    tape_ = nullptr;
    node_ = -1;
  }

 private:
  static void check_dims(const Shape& shape) {
    for (index_t d : shape) {
      if (d <= 0) throw ShapeError("non-positive dim in shape " + shape_str(shape));
    }
  }

  Shape shape_;
  std::shared_ptr<std::vector<Scalar>> data_;
  Tape<Scalar>* tape_ = nullptr;
  NodeId node_ = -1;

  friend class Tape<Scalar>;
};

// Trailing-dimension broadcast: shapes align at the last axis, a dim of 1
// stretches, missing leading dims count as 1.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const index_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const index_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Strides for reading `from` at indices of the broadcast shape `to`
// (0 where a dim stretches).
inline Shape broadcast_strides(const Shape& from, const Shape& to) {
  const Shape strides = row_major_strides(from);
  Shape out(to.size(), 0);
  const std::size_t off = to.size() - from.size();
  for (std::size_t i = 0; i < from.size(); ++i) {
    out[off + i] = from[i] == 1 && to[off + i] != 1 ? 0 : strides[i];
  }
  return out;
}

}  // namespace volnet
