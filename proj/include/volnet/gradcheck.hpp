#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "volnet/rng.hpp"
#include "volnet/tape.hpp"
#include "volnet/tensor.hpp"

namespace volnet {

// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// Verification oracle; the 64-bit instantiation is the checking path.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x, double h = 1e-3) {
  if (!(h > 0)) throw Error("finite_diff_grad: h must be > 0");
  Tensor<S> grad(x.shape());
  Tensor<S> probe = x.clone();
  S* p = probe.mutable_data();
  S* g = grad.mutable_data();
  for (index_t i = 0; i < x.size(); ++i) {
    const S orig = p[i];
    p[i] = orig + static_cast<S>(h);
    const S fp = f(probe);
    p[i] = orig - static_cast<S>(h);
    const S fm = f(probe);
    p[i] = orig;
    g[i] = (fp - fm) / static_cast<S>(2 * h);
  }
  return grad;
}

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-3;
  // |a - n| / max(|a|, |n|, rel_floor); the floor turns the comparison
  // absolute for near-zero gradients, where FD noise dominates any ratio.
  double rel_floor = 1e-2;
  index_t max_coords = 0;       // 0 = every coordinate
  std::uint64_t sample_seed = 1;
  // skip coordinates whose second difference |f+ - 2f0 + f-| exceeds this:
  // a kink (relu) within h of the evaluation point
  double kink_second_diff = 1e-7;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  index_t worst_coord = -1;
  index_t checked = 0;
  index_t skipped_kinks = 0;

  bool passed(double tol) const { return checked > 0 && max_rel_err < tol; }
};

// Compares an analytic gradient against central finite differences on a
// sampled (or full) set of coordinates.
template <typename S>
GradCheckResult compare_gradients(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x,
                                  const Tensor<S>& analytic, const GradCheckOptions& opt = {}) {
  if (analytic.shape() != x.shape()) {
    throw ShapeError("compare_gradients: analytic gradient shape " + shape_str(analytic.shape()) +
                     " does not match input " + shape_str(x.shape()));
  }
  std::vector<index_t> coords;
  if (opt.max_coords > 0 && opt.max_coords < x.size()) {
    // partial Fisher-Yates over the index range
    std::vector<index_t> all(static_cast<std::size_t>(x.size()));
    for (index_t i = 0; i < x.size(); ++i) all[static_cast<std::size_t>(i)] = i;
    Rng rng(opt.sample_seed);
    for (index_t i = 0; i < opt.max_coords; ++i) {
      const index_t j = i + static_cast<index_t>(rand_index(rng, static_cast<std::uint64_t>(x.size() - i)));
      std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
    }
    coords.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(opt.max_coords));
  } else {
    coords.resize(static_cast<std::size_t>(x.size()));
    for (index_t i = 0; i < x.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
  }

  Tensor<S> probe = x.clone();
  S* p = probe.mutable_data();
  const S f0 = f(probe);
  const S h = static_cast<S>(opt.h);

  GradCheckResult result;
  for (index_t i : coords) {
    const S orig = p[i];
    p[i] = orig + h;
    const S fp = f(probe);
    p[i] = orig - h;
    const S fm = f(probe);
    p[i] = orig;
    if (std::abs(static_cast<double>(fp - 2 * f0 + fm)) > opt.kink_second_diff) {
      ++result.skipped_kinks;
      continue;
    }
    const double numeric = static_cast<double>(fp - fm) / (2.0 * opt.h);
    const double a = static_cast<double>(analytic.at_flat(i));
    const double denom = std::max({std::abs(a), std::abs(numeric), opt.rel_floor});
    const double rel = std::abs(a - numeric) / denom;
    ++result.checked;
    if (rel > result.max_rel_err) {
      result.max_rel_err = rel;
      result.worst_coord = i;
    }
  }
  return result;
}

// Runs one tape backward against finite differences for `build`, a tracked
// graph builder mapping the input to a scalar loss. The same builder serves
// as the FD evaluation path: with an untracked input nothing records.
template <typename S>
GradCheckResult check_gradient(const std::function<Tensor<S>(const Tensor<S>&)>& build, const Tensor<S>& x0,
                               const GradCheckOptions& opt = {}) {
  Tape<S> tape;
  Tensor<S> x = x0.clone();
  tape.watch(x);
  Tensor<S> loss = build(x);
  GradMap<S> grads = tape.backward(loss);
  Tensor<S> analytic = grads.has(x.node()) ? grads.at(x.node()) : Tensor<S>::zeros(x0.shape());
  auto f = [&build](const Tensor<S>& probe) { return build(probe).at_flat(0); };
  return compare_gradients<S>(f, x0, analytic, opt);
}

}  // namespace volnet
