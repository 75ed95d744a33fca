#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>

#include "volnet/batchnorm.hpp"
#include "volnet/conv.hpp"
#include "volnet/ops.hpp"
#include "volnet/rng.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

// Visits every named tensor of a layer tree. `trainable` is false for
// batchnorm running statistics, which checkpoint but do not receive
// gradients.
template <typename S>
using TensorVisitor = std::function<void(const std::string&, Tensor<S>&, bool trainable)>;

namespace init {

// Kaiming-uniform for conv weights feeding relu: bound sqrt(6/fan_in),
// elementwise variance 2/fan_in.
template <typename S>
Tensor<S> kaiming_uniform(Shape shape, index_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  return Tensor<S>::uniform(std::move(shape), static_cast<S>(-bound), static_cast<S>(bound), rng);
}

// Plain scaled uniform for projection/classifier weights: bound sqrt(1/fan_in).
template <typename S>
Tensor<S> scaled_uniform(Shape shape, index_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return Tensor<S>::uniform(std::move(shape), static_cast<S>(-bound), static_cast<S>(bound), rng);
}

}  // namespace init

// 3D convolution without bias (batchnorm always follows).
template <typename S>
struct Conv3dLayer {
  Tensor<S> w;  // [Co, Ci, kd, kh, kw]
  Dims3 stride{1, 1, 1};
  Dims3 pad{0, 0, 0};

  static Conv3dLayer make(index_t co, index_t ci, Dims3 kernel, Dims3 stride, Dims3 pad, Rng& rng) {
    Conv3dLayer layer;
    const index_t fan_in = ci * kernel[0] * kernel[1] * kernel[2];
    layer.w = init::kaiming_uniform<S>(Shape{co, ci, kernel[0], kernel[1], kernel[2]}, fan_in, rng);
    layer.stride = stride;
    layer.pad = pad;
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return conv3d(x, w, stride, pad); }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) { fn(prefix + ".w", w, true); }
};

template <typename S>
struct BatchNorm3dLayer {
  Tensor<S> gamma, beta;
  BNState<S> state;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNorm3dLayer make(index_t channels) {
    BatchNorm3dLayer layer;
    layer.gamma = Tensor<S>::ones(Shape{channels});
    layer.beta = Tensor<S>::zeros(Shape{channels});
    layer.state = BNState<S>::init(channels);
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) { return batchnorm3d(x, gamma, beta, state, mode, momentum, eps); }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".gamma", gamma, true);
    fn(prefix + ".beta", beta, true);
    fn(prefix + ".running_mean", state.running_mean, false);
    fn(prefix + ".running_var", state.running_var, false);
  }
};

// y = x · w + b for x [M, In], w [In, Out], b [Out]
template <typename S>
struct LinearLayer {
  Tensor<S> w, b;

  static LinearLayer make(index_t in, index_t out, Rng& rng) {
    LinearLayer layer;
    layer.w = init::scaled_uniform<S>(Shape{in, out}, in, rng);
    layer.b = Tensor<S>::zeros(Shape{out});
    return layer;
  }

  Tensor<S> forward(const Tensor<S>& x) const { return add(matmul(x, w), b); }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".w", w, true);
    fn(prefix + ".b", b, true);
  }
};

// conv3x3x3 -> bn -> relu -> conv3x3x3 -> bn, plus shortcut (identity, or
// 1x1x1 strided conv + bn when shape changes), then relu.
template <typename S>
struct BasicBlock {
  Conv3dLayer<S> conv1, conv2;
  BatchNorm3dLayer<S> bn1, bn2;
  bool downsample = false;
  Conv3dLayer<S> down_conv;
  BatchNorm3dLayer<S> down_bn;

  static BasicBlock make(index_t in_ch, index_t out_ch, index_t stride, Rng& rng) {
    BasicBlock block;
    const Dims3 s{stride, stride, stride};
    block.conv1 = Conv3dLayer<S>::make(out_ch, in_ch, {3, 3, 3}, s, {1, 1, 1}, rng);
    block.bn1 = BatchNorm3dLayer<S>::make(out_ch);
    block.conv2 = Conv3dLayer<S>::make(out_ch, out_ch, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}, rng);
    block.bn2 = BatchNorm3dLayer<S>::make(out_ch);
    block.downsample = stride != 1 || in_ch != out_ch;
    if (block.downsample) {
      block.down_conv = Conv3dLayer<S>::make(out_ch, in_ch, {1, 1, 1}, s, {0, 0, 0}, rng);
      block.down_bn = BatchNorm3dLayer<S>::make(out_ch);
    }
    return block;
  }

  Tensor<S> forward(const Tensor<S>& x, Mode mode) {
    Tensor<S> y = bn1.forward(conv1.forward(x), mode);
    y = relu(y);
    y = bn2.forward(conv2.forward(y), mode);
    Tensor<S> shortcut = downsample ? down_bn.forward(down_conv.forward(x), mode) : x;
    return relu(add(y, shortcut));
  }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    conv1.visit(prefix + ".conv1", fn);
    bn1.visit(prefix + ".bn1", fn);
    conv2.visit(prefix + ".conv2", fn);
    bn2.visit(prefix + ".bn2", fn);
    if (downsample) {
      down_conv.visit(prefix + ".down.conv", fn);
      down_bn.visit(prefix + ".down.bn", fn);
    }
  }
};

// Multi-head self-attention over tokens [N, T, E] with a residual
// connection: out = x + Wo(concat_heads(softmax(QK^T/sqrt(dh)) V)).
// Q/K/V projections are bias-free; only the output projection has a bias.
template <typename S>
struct MHABlock {
  index_t heads = 4;
  Tensor<S> wq, wk, wv, wo, bo;  // all weights [E, E], bias [E]

  static MHABlock make(index_t embed_dim, index_t heads, Rng& rng) {
    if (heads < 1 || embed_dim % heads != 0) {
      throw ShapeError("attention embed dim " + std::to_string(embed_dim) + " not divisible by " +
                       std::to_string(heads) + " heads");
    }
    MHABlock block;
    block.heads = heads;
    block.wq = init::scaled_uniform<S>(Shape{embed_dim, embed_dim}, embed_dim, rng);
    block.wk = init::scaled_uniform<S>(Shape{embed_dim, embed_dim}, embed_dim, rng);
    block.wv = init::scaled_uniform<S>(Shape{embed_dim, embed_dim}, embed_dim, rng);
    block.wo = init::scaled_uniform<S>(Shape{embed_dim, embed_dim}, embed_dim, rng);
    block.bo = Tensor<S>::zeros(Shape{embed_dim});
    return block;
  }

  index_t param_count() const { return 4 * wq.shape()[0] * wq.shape()[0] + wq.shape()[0]; }

  Tensor<S> forward(const Tensor<S>& x) const {
    if (x.rank() != 3) throw ShapeError("attention expects [N,T,E], got " + shape_str(x.shape()));
    const index_t n = x.shape()[0], t = x.shape()[1], e = x.shape()[2];
    if (e != wq.shape()[0]) {
      throw ShapeError("attention embed dim mismatch: tokens " + shape_str(x.shape()) + " vs weights " +
                       shape_str(wq.shape()));
    }
    const index_t dh = e / heads;
    auto split_heads = [&](const Tensor<S>& m) {
      // [N·T, E] -> [N·heads, T, dh]
      Tensor<S> y = reshape(m, Shape{n, t, heads, dh});
      y = permute(y, {0, 2, 1, 3});
      return reshape(y, Shape{n * heads, t, dh});
    };
    Tensor<S> flat = reshape(x, Shape{n * t, e});
    Tensor<S> q = split_heads(matmul(flat, wq));
    Tensor<S> k = split_heads(matmul(flat, wk));
    Tensor<S> v = split_heads(matmul(flat, wv));
    Tensor<S> scores = scale(bmm(q, permute(k, {0, 2, 1})), static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
    Tensor<S> attn = softmax(scores, 2);
    Tensor<S> ctx = bmm(attn, v);  // [N·heads, T, dh]
    ctx = reshape(ctx, Shape{n, heads, t, dh});
    ctx = reshape(permute(ctx, {0, 2, 1, 3}), Shape{n * t, e});
    Tensor<S> proj = add(matmul(ctx, wo), bo);
    return add(x, reshape(proj, Shape{n, t, e}));
  }

  void visit(const std::string& prefix, const TensorVisitor<S>& fn) {
    fn(prefix + ".wq", wq, true);
    fn(prefix + ".wk", wk, true);
    fn(prefix + ".wv", wv, true);
    fn(prefix + ".wo", wo, true);
    fn(prefix + ".bo", bo, true);
  }
};

}  // namespace volnet
