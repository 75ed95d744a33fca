#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "volnet/gradcheck.hpp"
#include "volnet/model.hpp"
#include "volnet/optim.hpp"

namespace volnet {

struct NamedCheck {
  std::string name;
  std::function<GradCheckResult()> run;
};

// Finite-difference checks for every differentiable kernel and layer at tiny
// sizes, all on the 64-bit path. Losses are sum(mul(y, m)) with a fixed
// random weighting m so upstream gradients are non-uniform.
inline std::vector<NamedCheck> gradient_checks(std::uint64_t seed) {
  using T = Tensor<double>;
  using Build = std::function<T(const T&)>;
  std::vector<NamedCheck> checks;
  Rng rng(seed);

  auto uni = [&rng](Shape shape, double lo, double hi) { return T::uniform(std::move(shape), lo, hi, rng); };
  auto weighted_sum = [](const T& y, const T& m) { return sum(mul(y, m)); };
  auto add_check = [&checks](std::string name, T x0, Build build, index_t max_coords = 0) {
    GradCheckOptions opt;
    opt.max_coords = max_coords;
    checks.push_back(
        {std::move(name), [build = std::move(build), x0 = std::move(x0), opt] { return check_gradient<double>(build, x0, opt); }});
  };

  {
    T b = uni({4, 1}, -1, 1), m = uni({2, 4, 3}, -1, 1);
    add_check("add", uni({2, 4, 3}, -1, 1), [b, m, weighted_sum](const T& x) { return weighted_sum(add(x, b), m); });
    add_check("mul", uni({2, 4, 3}, -1, 1), [b, m, weighted_sum](const T& x) { return weighted_sum(mul(x, b), m); });
  }
  {
    T m = uni({3, 5}, -1, 1);
    add_check("relu", uni({3, 5}, -1, 1), [m, weighted_sum](const T& x) { return weighted_sum(relu(x), m); });
    add_check("scale", uni({3, 5}, -1, 1), [m, weighted_sum](const T& x) { return weighted_sum(scale(x, 2.5), m); });
    add_check("sigmoid", uni({3, 5}, -4, 4), [m, weighted_sum](const T& x) { return weighted_sum(sigmoid(x), m); });
    add_check("sum", uni({3, 5}, -1, 1), [](const T& x) { return sum(x); });
  }
  {
    T m = uni({3, 4, 5}, -1, 1);
    add_check("softmax", uni({3, 4, 5}, -2, 2),
              [m, weighted_sum](const T& x) { return weighted_sum(softmax(x, 1), m); });
  }
  {
    T a = uni({4, 3}, -1, 1), b = uni({3, 5}, -1, 1), m = uni({4, 5}, -1, 1);
    add_check("matmul.a", a, [b, m, weighted_sum](const T& x) { return weighted_sum(matmul(x, b), m); });
    add_check("matmul.b", b, [a, m, weighted_sum](const T& x) { return weighted_sum(matmul(a, x), m); });
  }
  {
    T a = uni({3, 4, 2}, -1, 1), b = uni({3, 2, 5}, -1, 1), m = uni({3, 4, 5}, -1, 1);
    add_check("bmm.a", a, [b, m, weighted_sum](const T& x) { return weighted_sum(bmm(x, b), m); });
    add_check("bmm.b", b, [a, m, weighted_sum](const T& x) { return weighted_sum(bmm(a, x), m); });
  }
  {
    T m = uni({30}, -1, 1);
    add_check("reshape", uni({5, 6}, -1, 1),
              [m, weighted_sum](const T& x) { return weighted_sum(reshape(x, Shape{30}), m); });
  }
  {
    T m = uni({4, 2, 3}, -1, 1);
    add_check("permute", uni({2, 3, 4}, -1, 1),
              [m, weighted_sum](const T& x) { return weighted_sum(permute(x, {2, 0, 1}), m); });
  }
  {
    T other = uni({2, 3}, -1, 1), m = uni({4, 3}, -1, 1);
    add_check("concat", uni({2, 3}, -1, 1), [other, m, weighted_sum](const T& x) {
      return weighted_sum(concat<double>({x, other}, 0), m);
    });
    T ms = uni({4, 2}, -1, 1);
    add_check("slice", uni({4, 3}, -1, 1),
              [ms, weighted_sum](const T& x) { return weighted_sum(slice(x, 1, 1, 2), ms); });
  }
  {
    const Dims3 stride{1, 2, 2}, pad{1, 1, 1};
    T input = uni({2, 2, 5, 6, 7}, -1, 1);
    T weight = uni({3, 2, 3, 3, 3}, -0.5, 0.5);
    T bias = uni({3}, -0.5, 0.5);
    T m = uni({2, 3, 5, 3, 4}, -1, 1);
    add_check("conv3d.input", input, [weight, bias, m, stride, pad, weighted_sum](const T& x) {
      return weighted_sum(conv3d(x, weight, bias, stride, pad), m);
    }, 80);
    add_check("conv3d.weight", weight, [input, bias, m, stride, pad, weighted_sum](const T& w) {
      return weighted_sum(conv3d(input, w, bias, stride, pad), m);
    }, 80);
    add_check("conv3d.bias", bias, [input, weight, m, stride, pad, weighted_sum](const T& b) {
      return weighted_sum(conv3d(input, weight, b, stride, pad), m);
    });
  }
  {
    T input = uni({2, 3, 2, 3, 4}, -1, 1), m = uni({2, 3}, -1, 1);
    add_check("avgpool", input, [m, weighted_sum](const T& x) { return weighted_sum(avgpool3d_global(x), m); });
  }
  {
    T input = uni({3, 2, 2, 3, 3}, -1, 1);
    T gamma = uni({2}, 0.5, 1.5), beta = uni({2}, -0.5, 0.5);
    T m = uni({3, 2, 2, 3, 3}, -1, 1);
    auto bn = [](const T& x, const T& g, const T& b) {
      BNState<double> state = BNState<double>::init(2);
      return batchnorm3d(x, g, b, state, Mode::train, 0.1, 1e-5);
    };
    add_check("batchnorm.input", input,
              [gamma, beta, m, bn, weighted_sum](const T& x) { return weighted_sum(bn(x, gamma, beta), m); }, 80);
    add_check("batchnorm.gamma", gamma,
              [input, beta, m, bn, weighted_sum](const T& g) { return weighted_sum(bn(input, g, beta), m); });
    add_check("batchnorm.beta", beta,
              [input, gamma, m, bn, weighted_sum](const T& b) { return weighted_sum(bn(input, gamma, b), m); });
  }
  {
    Rng block_rng(seed + 17);
    BasicBlock<double> block = BasicBlock<double>::make(2, 3, 2, block_rng);
    T input = uni({2, 2, 4, 6, 6}, -1, 1);
    T m = uni({2, 3, 2, 3, 3}, -1, 1);
    add_check("basic_block.input", input, [block, m, weighted_sum](const T& x) mutable {
      return weighted_sum(block.forward(x, Mode::train), m);
    }, 80);
    T w0 = block.conv1.w.clone();
    add_check("basic_block.conv1_w", w0, [block, input, m, weighted_sum](const T& w) mutable {
      block.conv1.w = w;
      return weighted_sum(block.forward(input, Mode::train), m);
    }, 80);
  }
  {
    Rng mha_rng(seed + 29);
    MHABlock<double> mha = MHABlock<double>::make(8, 4, mha_rng);
    T tokens = uni({2, 5, 8}, -1, 1);
    T m = uni({2, 5, 8}, -1, 1);
    add_check("mha.input", tokens,
              [mha, m, weighted_sum](const T& x) { return weighted_sum(mha.forward(x), m); }, 80);
    T wq0 = mha.wq.clone();
    add_check("mha.wq", wq0, [mha, tokens, m, weighted_sum](const T& w) mutable {
      mha.wq = w;
      return weighted_sum(mha.forward(tokens), m);
    });
    T wo0 = mha.wo.clone();
    add_check("mha.wo", wo0, [mha, tokens, m, weighted_sum](const T& w) mutable {
      mha.wo = w;
      return weighted_sum(mha.forward(tokens), m);
    });
  }
  {
    T logits = uni({5}, -3, 3);
    T targets(Shape{5}, {1, 0, 1, 1, 0});
    add_check("bce_logits", logits, [targets](const T& x) { return bce_with_logits(x, targets); });
  }
  {
    Model<double> model = build_model<double>(ModelConfig::tiny(Variant::with_mha), seed + 41);
    T input = uni({2, 1, 8, 16, 16}, -1, 1);
    T targets(Shape{2}, {1, 0});
    auto loss_of = [model, targets](const T& x) mutable {
      return bce_with_logits(model.forward(x, Mode::train), targets);
    };
    add_check("model.input", input, loss_of, 48);
    T fcw0 = model.fc.w.clone();
    add_check("model.fc_w", fcw0, [model, input, targets](const T& w) mutable {
      model.fc.w = w;
      return bce_with_logits(model.forward(input, Mode::train), targets);
    });
  }
  return checks;
}

}  // namespace volnet
