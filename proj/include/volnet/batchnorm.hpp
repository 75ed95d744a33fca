#pragma once

#include <cmath>
#include <vector>

#include "volnet/parallel.hpp"
#include "volnet/tape.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

enum class Mode { train, eval };

// Running statistics, one entry per channel. Mutated only by train-mode
// forward passes, on the training thread.
template <typename S>
struct BNState {
  Tensor<S> running_mean;
  Tensor<S> running_var;

  static BNState init(index_t channels) {
    return BNState{Tensor<S>::zeros(Shape{channels}), Tensor<S>::ones(Shape{channels})};
  }
};

// Batch normalization over (N,D,H,W) per channel. Train mode normalizes by
// biased batch statistics and folds the unbiased variance into the running
// stats (the cited backbone family's convention); eval mode normalizes by
// the running stats.
template <typename S>
Tensor<S> batchnorm3d(const Tensor<S>& input, const Tensor<S>& gamma, const Tensor<S>& beta,
                      BNState<S>& state, Mode mode, double momentum, double eps) {
  if (input.rank() != 5) throw ShapeError("batchnorm3d: input must be [N,C,D,H,W], got " + shape_str(input.shape()));
  const index_t N = input.shape()[0], C = input.shape()[1];
  const index_t M = input.shape()[2] * input.shape()[3] * input.shape()[4];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw ShapeError("batchnorm3d: gamma/beta must be [" + std::to_string(C) + "]");
  }
  if (state.running_mean.shape() != Shape{C} || state.running_var.shape() != Shape{C}) {
    throw ShapeError("batchnorm3d: running stats must be [" + std::to_string(C) + "]");
  }
  if (!(eps > 0)) throw ShapeError("batchnorm3d: eps must be > 0");

  const index_t count = N * M;
  std::vector<S> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
  if (mode == Mode::train) {
    std::vector<S> var(static_cast<std::size_t>(C));
    const S* px = input.data();
    parallel_for(C, [&](index_t c) {
      S sum(0), sum_sq(0);
      for (index_t n = 0; n < N; ++n) {
        const S* block = px + (n * C + c) * M;
        for (index_t j = 0; j < M; ++j) {
          sum += block[j];
          sum_sq += block[j] * block[j];
        }
      }
      const S mu = sum / static_cast<S>(count);
      mean[static_cast<std::size_t>(c)] = mu;
      var[static_cast<std::size_t>(c)] = std::max<S>(sum_sq / static_cast<S>(count) - mu * mu, S(0));
      inv_std[static_cast<std::size_t>(c)] = S(1) / std::sqrt(var[static_cast<std::size_t>(c)] + static_cast<S>(eps));
    });
    S* rm = state.running_mean.mutable_data();
    S* rv = state.running_var.mutable_data();
    const S mom = static_cast<S>(momentum);
    for (index_t c = 0; c < C; ++c) {
      const S v_unbiased =
          count > 1 ? var[static_cast<std::size_t>(c)] * static_cast<S>(count) / static_cast<S>(count - 1)
                    : var[static_cast<std::size_t>(c)];
      rm[c] = (S(1) - mom) * rm[c] + mom * mean[static_cast<std::size_t>(c)];
      rv[c] = (S(1) - mom) * rv[c] + mom * v_unbiased;
    }
  } else {
    const S* rm = state.running_mean.data();
    const S* rv = state.running_var.data();
    for (index_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = rm[c];
      inv_std[static_cast<std::size_t>(c)] = S(1) / std::sqrt(rv[c] + static_cast<S>(eps));
    }
  }

  Tensor<S> out(input.shape());
  {
    S* po = out.mutable_data();
    const S* px = input.data();
    const S* pg = gamma.data();
    const S* pb = beta.data();
    parallel_for(N * C, [&](index_t i) {
      const index_t c = i % C;
      const S mu = mean[static_cast<std::size_t>(c)];
      const S sc = pg[c] * inv_std[static_cast<std::size_t>(c)];
      const S sh = pb[c];
      const S* in = px + i * M;
      S* o = po + i * M;
      for (index_t j = 0; j < M; ++j) o[j] = (in[j] - mu) * sc + sh;
    });
  }

  Tape<S>* tape = detail::result_tape<S>({&input, &gamma, &beta});
  if (tape) {
    const bool need_x = input.tracked(), need_g = gamma.tracked(), need_b = beta.tracked();
    std::vector<NodeId> ids;
    if (need_x) ids.push_back(input.node());
    if (need_g) ids.push_back(gamma.node());
    if (need_b) ids.push_back(beta.node());
    tape->attach(out, "batchnorm3d", std::move(ids),
                 [need_x, need_g, need_b, input, gamma, mean, inv_std, mode, N, C, M](const Tensor<S>& g) {
                   const index_t count = N * M;
                   const S* px = input.data();
                   const S* pu = g.data();
                   const S* pg = gamma.data();
                   std::vector<S> sum_g(static_cast<std::size_t>(C), S(0));
                   std::vector<S> sum_gx(static_cast<std::size_t>(C), S(0));
                   parallel_for(C, [&](index_t c) {
                     S sg(0), sgx(0);
                     for (index_t n = 0; n < N; ++n) {
                       const index_t base = (n * C + c) * M;
                       for (index_t j = 0; j < M; ++j) {
                         const S xh = (px[base + j] - mean[static_cast<std::size_t>(c)]) *
                                      inv_std[static_cast<std::size_t>(c)];
                         sg += pu[base + j];
                         sgx += pu[base + j] * xh;
                       }
                     }
                     sum_g[static_cast<std::size_t>(c)] = sg;
                     sum_gx[static_cast<std::size_t>(c)] = sgx;
                   });

                   std::vector<Tensor<S>> grads;
                   if (need_x) {
                     Tensor<S> dx(input.shape());
                     S* pdx = dx.mutable_data();
                     parallel_for(N * C, [&](index_t i) {
                       const index_t c = i % C;
                       const S mu = mean[static_cast<std::size_t>(c)];
                       const S inv = inv_std[static_cast<std::size_t>(c)];
                       const S gsc = pg[c] * inv;
                       const S mg = sum_g[static_cast<std::size_t>(c)] / static_cast<S>(count);
                       const S mgx = sum_gx[static_cast<std::size_t>(c)] / static_cast<S>(count);
                       const index_t base = i * M;
                       for (index_t j = 0; j < M; ++j) {
                         if (mode == Mode::train) {
                           const S xh = (px[base + j] - mu) * inv;
                           pdx[base + j] = gsc * (pu[base + j] - mg - xh * mgx);
                         } else {
                           pdx[base + j] = gsc * pu[base + j];
                         }
                       }
                     });
                     grads.push_back(std::move(dx));
                   }
                   if (need_g) grads.push_back(Tensor<S>(Shape{C}, std::vector<S>(sum_gx)));
                   if (need_b) grads.push_back(Tensor<S>(Shape{C}, std::vector<S>(sum_g)));
                   return grads;
                 });
  }
  return out;
}

}  // namespace volnet
