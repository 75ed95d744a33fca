#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "volnet/model.hpp"

using namespace volnet;

namespace {

std::vector<float> to_vec(const Tensor<float>& t) {
  std::vector<float> out(static_cast<std::size_t>(t.size()));
  for (index_t i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = t.at_flat(i);
  return out;
}

oracle::dvec to_dvec(const Tensor<float>& t) {
  oracle::dvec out(static_cast<std::size_t>(t.size()));
  for (index_t i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = t.at_flat(i);
  return out;
}

// Closed-form parameter count, written independently of the layer classes.
std::int64_t expected_params(bool with_mha, std::int64_t in_ch, std::int64_t stem,
                             const std::vector<std::int64_t>& ch, const std::vector<std::int64_t>& strides) {
  std::int64_t total = stem * in_ch * 3 * 7 * 7 + 2 * stem;
  std::int64_t prev = stem;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    for (int j = 0; j < 2; ++j) {
      const std::int64_t in = j == 0 ? prev : ch[i];
      const std::int64_t stride = j == 0 ? strides[i] : 1;
      total += ch[i] * in * 27 + 2 * ch[i];      // conv1 + bn1
      total += ch[i] * ch[i] * 27 + 2 * ch[i];   // conv2 + bn2
      if (stride != 1 || in != ch[i]) total += ch[i] * in + 2 * ch[i];
    }
    prev = ch[i];
  }
  const std::int64_t e = ch.back();
  if (with_mha) total += 4 * e * e + e;
  return total + e + 1;  // classifier
}

std::int64_t out_dim(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  return (in + 2 * p - k) / s + 1;
}

std::map<std::string, Tensor<float>*> named_tensors(Model<float>& m) {
  std::map<std::string, Tensor<float>*> out;
  m.visit([&out](const std::string& name, Tensor<float>& t, bool) { out[name] = &t; });
  return out;
}

}  // namespace

TEST_CASE("parameter counts match closed-form arithmetic") {
  const std::vector<std::int64_t> ch{64, 128, 256, 512};
  const std::vector<std::int64_t> strides{1, 2, 2, 2};
  Model<float> plain = build_model<float>(ModelConfig::resnet18(Variant::plain), 0);
  Model<float> attn = build_model<float>(ModelConfig::resnet18(Variant::with_mha), 0);
  CHECK(plain.param_count() == expected_params(false, 1, 64, ch, strides));
  CHECK(attn.param_count() == expected_params(true, 1, 64, ch, strides));
  CHECK(plain.param_count() == 33147969);
  CHECK(attn.param_count() == 34197057);
  CHECK(attn.param_count() - plain.param_count() == 4 * 512 * 512 + 512);
  CHECK(attn.mha.param_count() == 4 * 512 * 512 + 512);
  CHECK(plain.weighted_layer_count() == 18);

  const std::vector<std::int64_t> tiny_ch{4, 8, 16, 32};
  Model<float> tiny = build_model<float>(ModelConfig::tiny(Variant::plain), 0);
  Model<float> tiny_attn = build_model<float>(ModelConfig::tiny(Variant::with_mha), 0);
  CHECK(tiny.param_count() == expected_params(false, 1, 4, tiny_ch, strides));
  CHECK(tiny_attn.param_count() - tiny.param_count() == 4 * 32 * 32 + 32);
  CHECK(tiny.weighted_layer_count() == 18);
}

TEST_CASE("model construction is deterministic in the seed") {
  Model<float> a = build_model<float>(ModelConfig::tiny(Variant::with_mha), 9);
  Model<float> b = build_model<float>(ModelConfig::tiny(Variant::with_mha), 9);
  Model<float> c = build_model<float>(ModelConfig::tiny(Variant::with_mha), 10);
  auto na = named_tensors(a), nb = named_tensors(b), nc = named_tensors(c);
  REQUIRE(na.size() == nb.size());
  bool any_diff_seed = false;
  for (auto& [name, t] : na) {
    CHECK(to_vec(*t) == to_vec(*nb.at(name)));
    if (to_vec(*t) != to_vec(*nc.at(name))) any_diff_seed = true;
  }
  CHECK(any_diff_seed);
}

TEST_CASE("config validation rejects bad head counts") {
  ModelConfig cfg = ModelConfig::resnet18(Variant::with_mha);
  cfg.heads = 5;
  CHECK_THROWS_AS(build_model<float>(cfg, 0), ConfigError);
}

TEST_CASE("stage geometry: 50x112x112 reaches a 7x7x7 grid") {
  // stem: depth k3 s1 p1, spatial k7 s2 p3; stages use k3 p1 with strides 1,2,2,2
  std::int64_t d = out_dim(50, 3, 1, 1), h = out_dim(112, 7, 2, 3);
  const std::int64_t strides[4] = {1, 2, 2, 2};
  for (std::int64_t s : strides) {
    d = out_dim(d, 3, s, 1);
    h = out_dim(h, 3, s, 1);
  }
  CHECK(d == 7);
  CHECK(h == 7);
}

TEST_CASE("canonical input dims produce one logit per volume") {
  Rng rng(11);
  ModelConfig cfg = ModelConfig::tiny(Variant::with_mha);
  Model<float> m = build_model<float>(cfg, 3);
  Tensor<float> x = Tensor<float>::uniform(Shape{4, 1, 50, 112, 112}, -1.0f, 1.0f, rng);
  Tensor<float> logits = m.forward(x, Mode::eval);
  REQUIRE(logits.shape() == Shape{4});
  CHECK(logits.all_finite());
}

TEST_CASE("full-width model runs the canonical geometry") {
  Rng rng(12);
  Model<float> m = build_model<float>(ModelConfig::resnet18(Variant::plain), 1);
  Tensor<float> x = Tensor<float>::uniform(Shape{1, 1, 50, 112, 112}, -1.0f, 1.0f, rng);
  Tensor<float> logits = m.forward(x, Mode::eval);
  REQUIRE(logits.shape() == Shape{1});
  CHECK(logits.all_finite());
}

TEST_CASE("forward rejects malformed inputs") {
  Model<float> m = build_model<float>(ModelConfig::tiny(Variant::plain), 0);
  CHECK_THROWS_AS(m.forward(Tensor<float>(Shape{2, 1, 8, 16}), Mode::eval), ShapeError);
  CHECK_THROWS_AS(m.forward(Tensor<float>(Shape{1, 2, 8, 16, 16}), Mode::eval), ShapeError);
}

TEST_CASE("zeroed convolutions pass only the classifier bias through") {
  Model<float> m = build_model<float>(ModelConfig::tiny(Variant::plain), 5);
  m.visit([](const std::string& name, Tensor<float>& t, bool) {
    if (name.size() >= 2 && name.compare(name.size() - 2, 2, ".w") == 0) t = Tensor<float>::zeros(t.shape());
    if (name == "fc.b") t = Tensor<float>(Shape{1}, {0.37f});
  });
  Rng rng(6);
  Tensor<float> x = Tensor<float>::uniform(Shape{3, 1, 8, 16, 16}, -1.0f, 1.0f, rng);
  Tensor<float> logits = m.forward(x, Mode::eval);
  for (index_t i = 0; i < 3; ++i) CHECK(logits.at_flat(i) == 0.37f);
}

TEST_CASE("attention block with zeroed output projection is an exact identity") {
  ModelConfig pc = ModelConfig::tiny(Variant::plain);
  ModelConfig ac = ModelConfig::tiny(Variant::with_mha);
  Model<float> plain = build_model<float>(pc, 21);
  Model<float> attn = build_model<float>(ac, 22);
  auto src = named_tensors(plain);
  auto dst = named_tensors(attn);
  for (auto& [name, t] : src) *dst.at(name) = t->clone();
  attn.mha.wo = Tensor<float>::zeros(attn.mha.wo.shape());
  attn.mha.bo = Tensor<float>::zeros(attn.mha.bo.shape());

  Rng rng(23);
  Tensor<float> x = Tensor<float>::uniform(Shape{2, 1, 8, 16, 16}, -1.0f, 1.0f, rng);
  CHECK(to_vec(plain.forward(x, Mode::eval)) == to_vec(attn.forward(x, Mode::eval)));
}

TEST_CASE("attention block matches the loop oracle over random geometries") {
  Rng rng(31);
  for (int trial = 0; trial < 110; ++trial) {
    const index_t heads = index_t{1} << rand_index(rng, 3);  // 1, 2, or 4
    const index_t dh = 1 + static_cast<index_t>(rand_index(rng, 4));
    const index_t e = heads * dh;
    const index_t n = 1 + static_cast<index_t>(rand_index(rng, 3));
    const index_t t = 1 + static_cast<index_t>(rand_index(rng, 6));
    MHABlock<float> block = MHABlock<float>::make(e, heads, rng);
    Tensor<float> x = Tensor<float>::uniform(Shape{n, t, e}, -1.0f, 1.0f, rng);
    Tensor<float> y = block.forward(x);
    REQUIRE(y.shape() == x.shape());
    const oracle::dvec ref = oracle::mha(to_dvec(x), to_dvec(block.wq), to_dvec(block.wk), to_dvec(block.wv),
                                         to_dvec(block.wo), to_dvec(block.bo), n, t, e, heads);
    const oracle::dvec got = to_dvec(y);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(got[i] - ref[i]) < 1e-4);
  }
}

TEST_CASE("attention output is equivariant to token order") {
  Rng rng(41);
  const index_t n = 2, t = 7, e = 8;
  MHABlock<float> block = MHABlock<float>::make(e, 4, rng);
  Tensor<float> x = Tensor<float>::uniform(Shape{n, t, e}, -1.0f, 1.0f, rng);
  const std::vector<std::size_t> perm = shuffled_indices(static_cast<std::size_t>(t), rng());

  Tensor<float> xp(Shape{n, t, e});
  float* xpd = xp.mutable_data();
  for (index_t b = 0; b < n; ++b)
    for (index_t i = 0; i < t; ++i)
      for (index_t f = 0; f < e; ++f)
        xpd[(b * t + i) * e + f] = x.at_flat((b * t + static_cast<index_t>(perm[static_cast<std::size_t>(i)])) * e + f);

  Tensor<float> y = block.forward(x);
  Tensor<float> yp = block.forward(xp);
  for (index_t b = 0; b < n; ++b)
    for (index_t i = 0; i < t; ++i)
      for (index_t f = 0; f < e; ++f) {
        const float expect = y.at_flat((b * t + static_cast<index_t>(perm[i])) * e + f);
        CHECK(yp.at_flat((b * t + i) * e + f) == doctest::Approx(expect).epsilon(1e-4));
      }
}

TEST_CASE("predict applies the logistic function to eval-mode logits") {
  Model<float> m = build_model<float>(ModelConfig::tiny(Variant::plain), 51);
  Rng rng(52);
  Tensor<float> x = Tensor<float>::uniform(Shape{3, 1, 8, 16, 16}, -1.0f, 1.0f, rng);
  Tensor<float> logits = m.forward(x, Mode::eval);
  Tensor<float> probs = m.predict(x);
  REQUIRE(probs.shape() == Shape{3});
  for (index_t i = 0; i < 3; ++i) {
    const double expect = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.at_flat(i))));
    CHECK(std::abs(probs.at_flat(i) - expect) < 1e-6);
  }
  // saturation stays inside [0, 1] and is finite
  Tensor<float> hot(Shape{2}, {100.0f, -100.0f});
  Tensor<float> sig = sigmoid(hot);
  CHECK(sig.at_flat(0) == doctest::Approx(1.0));
  CHECK(sig.at_flat(1) == doctest::Approx(0.0));
  CHECK(sig.all_finite());
}

TEST_CASE("eval mode is idempotent and leaves running stats untouched") {
  Model<float> m = build_model<float>(ModelConfig::tiny(Variant::with_mha), 61);
  Rng rng(62);
  Tensor<float> x = Tensor<float>::uniform(Shape{2, 1, 8, 16, 16}, -1.0f, 1.0f, rng);

  std::map<std::string, std::vector<float>> stats_before;
  m.visit([&](const std::string& name, Tensor<float>& t, bool trainable) {
    if (!trainable) stats_before[name] = to_vec(t);
  });
  Tensor<float> y1 = m.forward(x, Mode::eval);
  Tensor<float> y2 = m.forward(x, Mode::eval);
  CHECK(to_vec(y1) == to_vec(y2));
  m.visit([&](const std::string& name, Tensor<float>& t, bool trainable) {
    if (!trainable) CHECK(to_vec(t) == stats_before.at(name));
  });
}
