#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "volnet/tape.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

struct Hyperparams {
  double lr = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  index_t batch_size = 4;
  index_t epochs = 50;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw ConfigError("betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("eps must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
  }
};

template <typename S>
using ParamList = std::vector<std::pair<std::string, Tensor<S>*>>;

template <typename S>
struct AdamState {
  index_t t = 0;
  std::unordered_map<std::string, Tensor<S>> m, v;

  Tensor<S>& moment(std::unordered_map<std::string, Tensor<S>>& store, const std::string& name, const Shape& shape) {
    auto it = store.find(name);
    if (it == store.end()) it = store.emplace(name, Tensor<S>::zeros(shape)).first;
    if (it->second.shape() != shape) {
      throw ShapeError("optimizer state for " + name + " has shape " + shape_str(it->second.shape()) +
                       ", parameter has " + shape_str(shape));
    }
    return it->second;
  }
};

// One in-place Adam update. Parameters must have been watched on the tape
// whose backward produced `grads`, so each carries the node id to look up.
template <typename S>
void adam_step(ParamList<S>& params, const GradMap<S>& grads, AdamState<S>& state, const Hyperparams& hp) {
  hp.validate();
  state.t += 1;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  for (auto& [name, param] : params) {
    if (!param->tracked() || !grads.has(param->node())) {
      throw Error("adam_step: missing gradient for parameter " + name);
    }
    const Tensor<S>& g = grads.at(param->node());
    Tensor<S>& m = state.moment(state.m, name, param->shape());
    Tensor<S>& v = state.moment(state.v, name, param->shape());
    S* mp = m.mutable_data();
    S* vp = v.mutable_data();
    S* p = param->mutable_data();
    const S* gp = g.data();
    for (index_t i = 0; i < param->size(); ++i) {
      const double gi = static_cast<double>(gp[i]);
      const double mi = hp.beta1 * static_cast<double>(mp[i]) + (1.0 - hp.beta1) * gi;
      const double vi = hp.beta2 * static_cast<double>(vp[i]) + (1.0 - hp.beta2) * gi * gi;
      mp[i] = static_cast<S>(mi);
      vp[i] = static_cast<S>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      p[i] = static_cast<S>(static_cast<double>(p[i]) - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
  }
}

// Mean over the batch of the numerically stable binary cross-entropy
//   (1-y)·x + (1 + (w-1)·y) · (max(-x, 0) + log1p(exp(-|x|)))
// which reduces to max(x,0) - x·y + log1p(exp(-|x|)) at pos_weight w = 1.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const Tensor<S>& targets, S pos_weight = S(1)) {
  if (logits.rank() != 1 || logits.shape() != targets.shape()) {
    throw ShapeError("bce_with_logits: logits " + shape_str(logits.shape()) + " and targets " +
                     shape_str(targets.shape()) + " must be equal-length vectors");
  }
  if (!(pos_weight > 0)) throw Error("bce_with_logits: pos_weight must be > 0");
  const index_t n = logits.size();
  const S* x = logits.data();
  const S* y = targets.data();
  double total = 0;
  for (index_t i = 0; i < n; ++i) {
    if (y[i] < S(0) || y[i] > S(1)) throw Error("bce_with_logits: target outside [0,1]");
    const double xi = static_cast<double>(x[i]);
    const double yi = static_cast<double>(y[i]);
    const double w = 1.0 + (static_cast<double>(pos_weight) - 1.0) * yi;
    const double softplus_neg = std::max(-xi, 0.0) + std::log1p(std::exp(-std::abs(xi)));
    total += (1.0 - yi) * xi + w * softplus_neg;
  }
  Tensor<S> out = Tensor<S>::scalar(static_cast<S>(total / static_cast<double>(n)));
  if (Tape<S>* tape = detail::result_tape<S>({&logits})) {
    Tensor<S> xs = logits;
    Tensor<S> ys = targets;
    tape->attach(out, "bce_with_logits", {logits.node()},
                 [xs, ys, pos_weight, n](const Tensor<S>& g) -> std::vector<Tensor<S>> {
                   // d/dx = (1-y) - (1 + (w-1)y)·sigmoid(-x), the stable
                   // form of (sigmoid(x) - y) generalized to pos_weight
                   Tensor<S> dx(xs.shape());
                   S* d = dx.mutable_data();
                   const S* xp = xs.data();
                   const S* yp = ys.data();
                   const double scale = static_cast<double>(g.at_flat(0)) / static_cast<double>(n);
                   for (index_t i = 0; i < n; ++i) {
                     const double xi = static_cast<double>(xp[i]);
                     const double yi = static_cast<double>(yp[i]);
                     const double w = 1.0 + (static_cast<double>(pos_weight) - 1.0) * yi;
                     const double sig_neg = xi >= 0 ? std::exp(-xi) / (1.0 + std::exp(-xi)) : 1.0 / (1.0 + std::exp(xi));
                     d[i] = static_cast<S>(((1.0 - yi) - w * sig_neg) * scale);
                   }
                   return {dx};
                 });
  }
  return out;
}

}  // namespace volnet
