#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <utility>
#include <vector>

#include "volnet/parallel.hpp"
#include "volnet/tape.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

namespace detail {

template <typename S>
using EigenMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Opt-in per-op assertion that finite inputs produced finite outputs.
template <typename S>
void check_finite(const Tensor<S>& t, const char* op) {
  if (!kernel_settings().check_finite) return;
  if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
}

// Elementwise map over the broadcast of a and b.
template <typename S, typename F>
Tensor<S> broadcast_map(const Tensor<S>& a, const Tensor<S>& b, F f) {
  if (a.shape() == b.shape()) {
    Tensor<S> out(a.shape());
    S* po = out.mutable_data();
    const S* pa = a.data();
    const S* pb = b.data();
    for (index_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const Shape out_shape = broadcast_shape(a.shape(), b.shape());
  const Shape sa = broadcast_strides(a.shape(), out_shape);
  const Shape sb = broadcast_strides(b.shape(), out_shape);
  Tensor<S> out(out_shape);
  S* po = out.mutable_data();
  const S* pa = a.data();
  const S* pb = b.data();
  const std::size_t rank = out_shape.size();
  Shape idx(rank, 0);
  index_t ia = 0, ib = 0;
  const index_t n = numel(out_shape);
  for (index_t i = 0; i < n; ++i) {
    po[i] = f(pa[ia], pb[ib]);
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      ia -= sa[d] * out_shape[d];
      ib -= sb[d] * out_shape[d];
    }
  }
  return out;
}

// Sums g over the axes that were broadcast to reach g.shape() from target.
template <typename S>
Tensor<S> reduce_to_shape(const Tensor<S>& g, const Shape& target) {
  if (g.shape() == target) return g;
  Tensor<S> out(target);
  const Shape st = broadcast_strides(target, g.shape());
  S* po = out.mutable_data();
  const S* pg = g.data();
  const std::size_t rank = g.shape().size();
  Shape idx(rank, 0);
  index_t it = 0;
  const index_t n = g.size();
  for (index_t i = 0; i < n; ++i) {
    po[it] += pg[i];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      it += st[d];
      if (idx[d] < g.shape()[d]) break;
      idx[d] = 0;
      it -= st[d] * g.shape()[d];
    }
  }
  return out;
}

template <typename S>
Tensor<S> permute_data(const Tensor<S>& x, const std::vector<std::size_t>& perm) {
  const std::size_t rank = x.rank();
  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = x.shape()[perm[i]];
  Tensor<S> out(out_shape);
  const Shape in_strides = row_major_strides(x.shape());
  Shape src_strides(rank);  // stride in x per axis of out
  for (std::size_t i = 0; i < rank; ++i) src_strides[i] = in_strides[perm[i]];
  S* po = out.mutable_data();
  const S* px = x.data();
  Shape idx(rank, 0);
  index_t is = 0;
  const index_t n = x.size();
  for (index_t i = 0; i < n; ++i) {
    po[i] = px[is];
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      is += src_strides[d];
      if (idx[d] < out_shape[d]) break;
      idx[d] = 0;
      is -= src_strides[d] * out_shape[d];
    }
  }
  return out;
}

template <typename S>
Tensor<S> slice_data(const Tensor<S>& x, std::size_t axis, index_t start, index_t len) {
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  Tensor<S> out(out_shape);
  index_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.shape()[i];
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.shape()[i];
  const index_t in_axis = x.shape()[axis];
  S* po = out.mutable_data();
  const S* px = x.data();
  for (index_t o = 0; o < outer; ++o) {
    std::memcpy(po + o * len * inner, px + (o * in_axis + start) * inner,
                static_cast<std::size_t>(len * inner) * sizeof(S));
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::broadcast_map(a, b, [](S x, S y) { return x + y; });
  if (Tape<S>* tape = detail::result_tape<S>({&a, &b})) {
    const bool need_a = a.tracked(), need_b = b.tracked();
    std::vector<NodeId> ids;
    if (need_a) ids.push_back(a.node());
    if (need_b) ids.push_back(b.node());
    tape->attach(out, "add", std::move(ids),
                 [need_a, need_b, sa = a.shape(), sb = b.shape()](const Tensor<S>& g) {
                   std::vector<Tensor<S>> grads;
                   if (need_a) grads.push_back(detail::reduce_to_shape(g, sa));
                   if (need_b) grads.push_back(detail::reduce_to_shape(g, sb));
                   return grads;
                 });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  Tensor<S> out = detail::broadcast_map(a, b, [](S x, S y) { return x * y; });
  if (Tape<S>* tape = detail::result_tape<S>({&a, &b})) {
    const bool need_a = a.tracked(), need_b = b.tracked();
    std::vector<NodeId> ids;
    if (need_a) ids.push_back(a.node());
    if (need_b) ids.push_back(b.node());
    tape->attach(out, "mul", std::move(ids), [need_a, need_b, a, b](const Tensor<S>& g) {
      std::vector<Tensor<S>> grads;
      if (need_a) {
        grads.push_back(detail::reduce_to_shape(
            detail::broadcast_map(g, b, [](S x, S y) { return x * y; }), a.shape()));
      }
      if (need_b) {
        grads.push_back(detail::reduce_to_shape(
            detail::broadcast_map(g, a, [](S x, S y) { return x * y; }), b.shape()));
      }
      return grads;
    });
  }
  return out;
}

// relu'(0) is defined as 0; finite-difference checks skip kink points.
template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  S* po = out.mutable_data();
  const S* px = x.data();
  for (index_t i = 0; i < x.size(); ++i) po[i] = px[i] > S(0) ? px[i] : S(0);
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "relu", {x.node()}, [x](const Tensor<S>& g) {
      Tensor<S> gx(x.shape());
      S* pg = gx.mutable_data();
      const S* px = x.data();
      const S* pu = g.data();
      for (index_t i = 0; i < x.size(); ++i) pg[i] = px[i] > S(0) ? pu[i] : S(0);
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
  Tensor<S> out(x.shape());
  S* po = out.mutable_data();
  const S* px = x.data();
  for (index_t i = 0; i < x.size(); ++i) po[i] = px[i] * c;
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "scale", {x.node()}, [c, shape = x.shape()](const Tensor<S>& g) {
      Tensor<S> gx(shape);
      S* pg = gx.mutable_data();
      const S* pu = g.data();
      for (index_t i = 0; i < gx.size(); ++i) pg[i] = pu[i] * c;
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

// Sum of all elements -> rank-0 scalar. The default path accumulates in a
// fixed order; fast_reductions switches to thread-count-dependent chunked
// partial sums.
template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  S total(0);
  const S* px = x.data();
  const index_t n = x.size();
  if (kernel_settings().fast_reductions && n > 4096) {
    const int chunks = max_threads();
    std::vector<S> partial(static_cast<std::size_t>(chunks), S(0));
    const index_t step = (n + chunks - 1) / chunks;
    parallel_for(chunks, [&](index_t c) {
      S acc(0);
      const index_t hi = std::min(n, (c + 1) * step);
      for (index_t i = c * step; i < hi; ++i) acc += px[i];
      partial[static_cast<std::size_t>(c)] = acc;
    });
    for (S p : partial) total += p;
  } else {
    for (index_t i = 0; i < n; ++i) total += px[i];
  }
  Tensor<S> out = Tensor<S>::scalar(total);
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "sum", {x.node()}, [shape = x.shape()](const Tensor<S>& g) {
      return std::vector<Tensor<S>>{Tensor<S>::full(shape, g.at_flat(0))};
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  S* po = out.mutable_data();
  const S* px = x.data();
  for (index_t i = 0; i < x.size(); ++i) {
    const S v = px[i];
    if (v >= S(0)) {
      po[i] = S(1) / (S(1) + std::exp(-v));
    } else {
      const S e = std::exp(v);
      po[i] = e / (S(1) + e);
    }
  }
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "sigmoid", {x.node()}, [y = out](const Tensor<S>& g) {
      Tensor<S> gx(y.shape());
      S* pg = gx.mutable_data();
      const S* py = y.data();
      const S* pu = g.data();
      for (index_t i = 0; i < y.size(); ++i) pg[i] = pu[i] * py[i] * (S(1) - py[i]);
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// softmax
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  const int rank = static_cast<int>(x.rank());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  index_t outer = 1, inner = 1;
  const index_t n = x.shape()[static_cast<std::size_t>(axis)];
  for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < rank; ++i) inner *= x.shape()[static_cast<std::size_t>(i)];

  Tensor<S> out(x.shape());
  S* po = out.mutable_data();
  const S* px = x.data();
  parallel_for(outer, [&](index_t o) {
    for (index_t in = 0; in < inner; ++in) {
      const index_t base = o * n * inner + in;
      S mx = px[base];
      for (index_t i = 1; i < n; ++i) mx = std::max(mx, px[base + i * inner]);
      S total(0);
      for (index_t i = 0; i < n; ++i) {
        const S e = std::exp(px[base + i * inner] - mx);
        po[base + i * inner] = e;
        total += e;
      }
      const S inv = S(1) / total;
      for (index_t i = 0; i < n; ++i) po[base + i * inner] *= inv;
    }
  });
  detail::check_finite(out, "softmax");

  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "softmax", {x.node()}, [y = out, outer, n, inner](const Tensor<S>& g) {
      Tensor<S> gx(y.shape());
      S* pg = gx.mutable_data();
      const S* py = y.data();
      const S* pu = g.data();
      for (index_t o = 0; o < outer; ++o) {
        for (index_t in = 0; in < inner; ++in) {
          const index_t base = o * n * inner + in;
          S dot(0);
          for (index_t i = 0; i < n; ++i) dot += pu[base + i * inner] * py[base + i * inner];
          for (index_t i = 0; i < n; ++i) {
            const index_t k = base + i * inner;
            pg[k] = py[k] * (pu[k] - dot);
          }
        }
      }
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix products (Eigen-backed)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const index_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<S> out(Shape{m, n});
  using Map = Eigen::Map<detail::EigenMat<S>>;
  using CMap = Eigen::Map<const detail::EigenMat<S>>;
  Map(out.mutable_data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);

  if (Tape<S>* tape = detail::result_tape<S>({&a, &b})) {
    const bool need_a = a.tracked(), need_b = b.tracked();
    std::vector<NodeId> ids;
    if (need_a) ids.push_back(a.node());
    if (need_b) ids.push_back(b.node());
    tape->attach(out, "matmul", std::move(ids), [need_a, need_b, a, b, m, k, n](const Tensor<S>& g) {
      CMap G(g.data(), m, n);
      std::vector<Tensor<S>> grads;
      if (need_a) {
        Tensor<S> da(a.shape());
        Map(da.mutable_data(), m, k).noalias() = G * CMap(b.data(), k, n).transpose();
        grads.push_back(std::move(da));
      }
      if (need_b) {
        Tensor<S> db(b.shape());
        Map(db.mutable_data(), k, n).noalias() = CMap(a.data(), m, k).transpose() * G;
        grads.push_back(std::move(db));
      }
      return grads;
    });
  }
  return out;
}

// Batched matmul over the leading dim: [B,m,k] x [B,k,n] -> [B,m,n].
template <typename S>
Tensor<S> bmm(const Tensor<S>& a, const Tensor<S>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]) {
    throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const index_t B = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  Tensor<S> out(Shape{B, m, n});
  using Map = Eigen::Map<detail::EigenMat<S>>;
  using CMap = Eigen::Map<const detail::EigenMat<S>>;
  parallel_for(B, [&](index_t i) {
    Map(out.mutable_data() + i * m * n, m, n).noalias() =
        CMap(a.data() + i * m * k, m, k) * CMap(b.data() + i * k * n, k, n);
  });

  if (Tape<S>* tape = detail::result_tape<S>({&a, &b})) {
    const bool need_a = a.tracked(), need_b = b.tracked();
    std::vector<NodeId> ids;
    if (need_a) ids.push_back(a.node());
    if (need_b) ids.push_back(b.node());
    tape->attach(out, "bmm", std::move(ids), [need_a, need_b, a, b, B, m, k, n](const Tensor<S>& g) {
      std::vector<Tensor<S>> grads;
      if (need_a) {
        Tensor<S> da(a.shape());
        parallel_for(B, [&](index_t i) {
          Map(da.mutable_data() + i * m * k, m, k).noalias() =
              CMap(g.data() + i * m * n, m, n) * CMap(b.data() + i * k * n, k, n).transpose();
        });
        grads.push_back(std::move(da));
      }
      if (need_b) {
        Tensor<S> db(b.shape());
        parallel_for(B, [&](index_t i) {
          Map(db.mutable_data() + i * k * n, k, n).noalias() =
              CMap(a.data() + i * m * k, m, k).transpose() * CMap(g.data() + i * m * n, m, n);
        });
        grads.push_back(std::move(db));
      }
      return grads;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// views and layout
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  Tensor<S> out = x.viewed_as(std::move(shape));
  out.detach();
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "reshape", {x.node()}, [shape = x.shape()](const Tensor<S>& g) {
      Tensor<S> gx = g.viewed_as(shape);
      gx.detach();
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, std::vector<std::size_t> perm) {
  if (perm.size() != x.rank()) throw ShapeError("permute: rank mismatch for " + shape_str(x.shape()));
  std::vector<bool> seen(perm.size(), false);
  for (std::size_t p : perm) {
    if (p >= perm.size() || seen[p]) throw ShapeError("permute: invalid axis permutation");
    seen[p] = true;
  }
  Tensor<S> out = detail::permute_data(x, perm);
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    tape->attach(out, "permute", {x.node()}, [inverse](const Tensor<S>& g) {
      return std::vector<Tensor<S>>{detail::permute_data(g, inverse)};
    });
  }
  return out;
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if (axis >= rank) throw ShapeError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (i != axis && p.shape()[i] != parts[0].shape()[i]) {
        throw ShapeError("concat: shape " + shape_str(p.shape()) + " incompatible with " +
                         shape_str(parts[0].shape()) + " along axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += p.shape()[axis];
  }
  Tensor<S> out(out_shape);
  index_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::size_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  S* po = out.mutable_data();
  index_t offset = 0;
  for (const auto& p : parts) {
    const index_t len = p.shape()[axis];
    const S* pp = p.data();
    for (index_t o = 0; o < outer; ++o) {
      std::memcpy(po + (o * out_shape[axis] + offset) * inner, pp + o * len * inner,
                  static_cast<std::size_t>(len * inner) * sizeof(S));
    }
    offset += len;
  }

  Tape<S>* tape = nullptr;
  for (const auto& p : parts) {
    if (p.tracked()) {
      if (tape && tape != p.tape()) throw Error("inputs are tracked on different tapes");
      tape = p.tape();
    }
  }
  if (tape) {
    std::vector<NodeId> ids;
    std::vector<std::pair<index_t, index_t>> spans;  // (start, len) of tracked parts
    index_t pos = 0;
    for (const auto& p : parts) {
      if (p.tracked()) {
        ids.push_back(p.node());
        spans.emplace_back(pos, p.shape()[axis]);
      }
      pos += p.shape()[axis];
    }
    tape->attach(out, "concat", std::move(ids), [spans, axis](const Tensor<S>& g) {
      std::vector<Tensor<S>> grads;
      for (const auto& [start, len] : spans) grads.push_back(detail::slice_data(g, axis, start, len));
      return grads;
    });
  }
  return out;
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, std::size_t axis, index_t start, index_t len) {
  if (axis >= x.rank()) throw ShapeError("slice: axis out of range for " + shape_str(x.shape()));
  if (start < 0 || len <= 0 || start + len > x.shape()[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") out of bounds for " + shape_str(x.shape()) + " axis " + std::to_string(axis));
  }
  Tensor<S> out = detail::slice_data(x, axis, start, len);
  if (Tape<S>* tape = detail::result_tape<S>({&x})) {
    tape->attach(out, "slice", {x.node()},
                 [shape = x.shape(), axis, start, len](const Tensor<S>& g) {
                   Tensor<S> gx(shape);  // zeros, then paste the slice back
                   index_t outer = 1, inner = 1;
                   for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
                   for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
                   S* pg = gx.mutable_data();
                   const S* pu = g.data();
                   for (index_t o = 0; o < outer; ++o) {
                     std::memcpy(pg + (o * shape[axis] + start) * inner, pu + o * len * inner,
                                 static_cast<std::size_t>(len * inner) * sizeof(S));
                   }
                   return std::vector<Tensor<S>>{gx};
                 });
  }
  return out;
}

}  // namespace volnet
