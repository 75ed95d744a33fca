#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <string>
#include <vector>

#include "volnet/ops.hpp"
#include "volnet/parallel.hpp"
#include "volnet/tape.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

using Dims3 = std::array<index_t, 3>;

namespace detail {

struct ConvGeom {
  index_t N, C, D, H, W;
  index_t K, kd, kh, kw;
  index_t sd, sh, sw, pd, ph, pw;
  index_t Do, Ho, Wo;
  index_t rows() const { return C * kd * kh * kw; }       // col-matrix rows
  index_t positions() const { return Do * Ho * Wo; }      // output voxels per sample
};

inline ConvGeom conv3d_geometry(const Shape& input, const Shape& weight, Dims3 stride, Dims3 pad) {
  if (input.size() != 5) throw ShapeError("conv3d: input must be [N,C,D,H,W], got " + shape_str(input));
  if (weight.size() != 5) throw ShapeError("conv3d: weight must be [K,C,kd,kh,kw], got " + shape_str(weight));
  if (input[1] != weight[1]) {
    throw ShapeError("conv3d: input channels " + std::to_string(input[1]) + " do not match weight channels " +
                     std::to_string(weight[1]));
  }
  for (index_t s : stride) {
    if (s < 1) throw ShapeError("conv3d: stride must be >= 1");
  }
  for (index_t p : pad) {
    if (p < 0) throw ShapeError("conv3d: padding must be >= 0");
  }
  ConvGeom g;
  g.N = input[0]; g.C = input[1]; g.D = input[2]; g.H = input[3]; g.W = input[4];
  g.K = weight[0]; g.kd = weight[2]; g.kh = weight[3]; g.kw = weight[4];
  g.sd = stride[0]; g.sh = stride[1]; g.sw = stride[2];
  g.pd = pad[0]; g.ph = pad[1]; g.pw = pad[2];
  g.Do = (g.D + 2 * g.pd - g.kd) / g.sd + 1;
  g.Ho = (g.H + 2 * g.ph - g.kh) / g.sh + 1;
  g.Wo = (g.W + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.D + 2 * g.pd < g.kd || g.H + 2 * g.ph < g.kh || g.W + 2 * g.pw < g.kw) {
    throw ShapeError("conv3d: invalid geometry, kernel " + shape_str(weight) + " does not fit padded input " +
                     shape_str(input) + " (output dims " + std::to_string(g.Do) + "," + std::to_string(g.Ho) +
                     "," + std::to_string(g.Wo) + ")");
  }
  return g;
}

// Patch matrix for output positions [p0, p1) of one sample:
// col[r, p - p0] with r = ((c*kd + zd)*kh + zh)*kw + zw, zero outside the input.
template <typename S>
void im2col_chunk(const S* x, const ConvGeom& g, index_t p0, index_t p1, S* col) {
  const index_t chunk = p1 - p0;
  std::vector<index_t> od(chunk), oh(chunk), ow(chunk);
  for (index_t p = p0; p < p1; ++p) {
    od[p - p0] = p / (g.Ho * g.Wo);
    const index_t rem = p % (g.Ho * g.Wo);
    oh[p - p0] = rem / g.Wo;
    ow[p - p0] = rem % g.Wo;
  }
  index_t r = 0;
  for (index_t c = 0; c < g.C; ++c) {
    const S* xc = x + c * g.D * g.H * g.W;
    for (index_t zd = 0; zd < g.kd; ++zd) {
      for (index_t zh = 0; zh < g.kh; ++zh) {
        for (index_t zw = 0; zw < g.kw; ++zw, ++r) {
          S* row = col + r * chunk;
          for (index_t j = 0; j < chunk; ++j) {
            const index_t id = od[j] * g.sd + zd - g.pd;
            const index_t ih = oh[j] * g.sh + zh - g.ph;
            const index_t iw = ow[j] * g.sw + zw - g.pw;
            row[j] = (id >= 0 && id < g.D && ih >= 0 && ih < g.H && iw >= 0 && iw < g.W)
                         ? xc[(id * g.H + ih) * g.W + iw]
                         : S(0);
          }
        }
      }
    }
  }
}

// Scatter-add of a col-layout gradient back onto one sample's input.
template <typename S>
void col2im_chunk(const S* col, const ConvGeom& g, index_t p0, index_t p1, S* dx) {
  const index_t chunk = p1 - p0;
  index_t r = 0;
  for (index_t c = 0; c < g.C; ++c) {
    S* dc = dx + c * g.D * g.H * g.W;
    for (index_t zd = 0; zd < g.kd; ++zd) {
      for (index_t zh = 0; zh < g.kh; ++zh) {
        for (index_t zw = 0; zw < g.kw; ++zw, ++r) {
          const S* row = col + r * chunk;
          for (index_t j = 0; j < chunk; ++j) {
            const index_t p = p0 + j;
            const index_t id = (p / (g.Ho * g.Wo)) * g.sd + zd - g.pd;
            const index_t rem = p % (g.Ho * g.Wo);
            const index_t ih = (rem / g.Wo) * g.sh + zh - g.ph;
            const index_t iw = (rem % g.Wo) * g.sw + zw - g.pw;
            if (id >= 0 && id < g.D && ih >= 0 && ih < g.H && iw >= 0 && iw < g.W) {
              dc[(id * g.H + ih) * g.W + iw] += row[j];
            }
          }
        }
      }
    }
  }
}

// ~8M scalars of col buffer at most; conv output positions are processed in
// chunks of this many columns.
inline index_t conv_chunk_cols(index_t rows, index_t positions) {
  const index_t budget = index_t(1) << 23;
  return std::max<index_t>(1, std::min(positions, budget / std::max<index_t>(rows, 1)));
}

}  // namespace detail

// 3D convolution, zero padding, floor output dims. The production path
// lowers each sample to patch-matrix x weight-matrix products; the naive
// 7-loop form lives test-side as its oracle.
template <typename S>
Tensor<S> conv3d(const Tensor<S>& input, const Tensor<S>& weight, const Tensor<S>& bias,
                 Dims3 stride, Dims3 pad) {
  const detail::ConvGeom g = detail::conv3d_geometry(input.shape(), weight.shape(), stride, pad);
  if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != g.K)) {
    throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()) + " must be [" + std::to_string(g.K) + "]");
  }
  const index_t R = g.rows(), P = g.positions();
  const index_t chunk_cols = detail::conv_chunk_cols(R, P);
  Tensor<S> out(Shape{g.N, g.K, g.Do, g.Ho, g.Wo});

  using CMap = Eigen::Map<const detail::EigenMat<S>>;
  using StridedMap = Eigen::Map<detail::EigenMat<S>, 0, Eigen::OuterStride<>>;
  parallel_for(g.N, [&](index_t n) {
    std::vector<S> col(static_cast<std::size_t>(R * chunk_cols));
    const S* x = input.data() + n * g.C * g.D * g.H * g.W;
    for (index_t p0 = 0; p0 < P; p0 += chunk_cols) {
      const index_t p1 = std::min(P, p0 + chunk_cols);
      detail::im2col_chunk(x, g, p0, p1, col.data());
      StridedMap block(out.mutable_data() + n * g.K * P + p0, g.K, p1 - p0, Eigen::OuterStride<>(P));
      block.noalias() = CMap(weight.data(), g.K, R) * CMap(col.data(), R, p1 - p0);
      if (bias.defined()) {
        block.colwise() += Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>>(bias.data(), g.K);
      }
    }
  });

  Tape<S>* tape = detail::result_tape<S>(
      bias.defined() ? std::initializer_list<const Tensor<S>*>{&input, &weight, &bias}
                     : std::initializer_list<const Tensor<S>*>{&input, &weight});
  if (tape) {
    const bool need_x = input.tracked(), need_w = weight.tracked();
    const bool need_b = bias.defined() && bias.tracked();
    std::vector<NodeId> ids;
    if (need_x) ids.push_back(input.node());
    if (need_w) ids.push_back(weight.node());
    if (need_b) ids.push_back(bias.node());
    tape->attach(out, "conv3d", std::move(ids),
                 [need_x, need_w, need_b, input, weight, g, R, P, chunk_cols](const Tensor<S>& gout) {
                   using Map = Eigen::Map<detail::EigenMat<S>>;
                   using ConstStrided = Eigen::Map<const detail::EigenMat<S>, 0, Eigen::OuterStride<>>;
                   Tensor<S> dx = need_x ? Tensor<S>(input.shape()) : Tensor<S>();
                   Tensor<S> dw = need_w ? Tensor<S>(weight.shape()) : Tensor<S>();
                   Tensor<S> db = need_b ? Tensor<S>(Shape{g.K}) : Tensor<S>();
                   std::vector<S> col(static_cast<std::size_t>(R * chunk_cols));
                   std::vector<S> colgrad(need_x ? static_cast<std::size_t>(R * chunk_cols) : 0);
                   // fixed n-then-chunk order keeps the weight/bias
                   // accumulation deterministic
                   for (index_t n = 0; n < g.N; ++n) {
                     const S* x = input.data() + n * g.C * g.D * g.H * g.W;
                     for (index_t p0 = 0; p0 < P; p0 += chunk_cols) {
                       const index_t p1 = std::min(P, p0 + chunk_cols);
                       ConstStrided gblock(gout.data() + n * g.K * P + p0, g.K, p1 - p0,
                                           Eigen::OuterStride<>(P));
                       if (need_w) {
                         detail::im2col_chunk(x, g, p0, p1, col.data());
                         Map(dw.mutable_data(), g.K, R).noalias() +=
                             gblock * CMap(col.data(), R, p1 - p0).transpose();
                       }
                       if (need_x) {
                         Map(colgrad.data(), R, p1 - p0).noalias() =
                             CMap(weight.data(), g.K, R).transpose() * gblock;
                         detail::col2im_chunk(colgrad.data(), g, p0, p1,
                                              dx.mutable_data() + n * g.C * g.D * g.H * g.W);
                       }
                       if (need_b) {
                         Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>>(db.mutable_data(), g.K).noalias() +=
                             gblock.rowwise().sum();
                       }
                     }
                   }
                   std::vector<Tensor<S>> grads;
                   if (need_x) grads.push_back(std::move(dx));
                   if (need_w) grads.push_back(std::move(dw));
                   if (need_b) grads.push_back(std::move(db));
                   return grads;
                 });
  }
  return out;
}

template <typename S>
Tensor<S> conv3d(const Tensor<S>& input, const Tensor<S>& weight, Dims3 stride, Dims3 pad) {
  return conv3d(input, weight, Tensor<S>(), stride, pad);
}

// Mean over all spatial positions: [N,C,D,H,W] -> [N,C].
template <typename S>
Tensor<S> avgpool3d_global(const Tensor<S>& input) {
  if (input.rank() != 5) throw ShapeError("avgpool3d_global: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  const index_t N = input.shape()[0], C = input.shape()[1];
  const index_t M = input.shape()[2] * input.shape()[3] * input.shape()[4];
  Tensor<S> out(Shape{N, C});
  S* po = out.mutable_data();
  const S* px = input.data();
  const bool fast = kernel_settings().fast_reductions && M > 4096;
  parallel_for(N * C, [&](index_t i) {
    const S* block = px + i * M;
    S acc(0);
    if (fast) {
      const int chunks = max_threads();
      const index_t step = (M + chunks - 1) / chunks;
      for (int c = 0; c < chunks; ++c) {
        S part(0);
        const index_t hi = std::min(M, (c + 1) * step);
        for (index_t j = c * step; j < hi; ++j) part += block[j];
        acc += part;
      }
    } else {
      for (index_t j = 0; j < M; ++j) acc += block[j];
    }
    po[i] = acc / static_cast<S>(M);
  });

  if (Tape<S>* tape = detail::result_tape<S>({&input})) {
    tape->attach(out, "avgpool3d_global", {input.node()}, [shape = input.shape(), N, C, M](const Tensor<S>& g) {
      Tensor<S> gx(shape);
      S* pg = gx.mutable_data();
      const S* pu = g.data();
      for (index_t i = 0; i < N * C; ++i) {
        const S v = pu[i] / static_cast<S>(M);
        S* block = pg + i * M;
        for (index_t j = 0; j < M; ++j) block[j] = v;
      }
      return std::vector<Tensor<S>>{gx};
    });
  }
  return out;
}

}  // namespace volnet
