#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "volnet/check_registry.hpp"
#include "volnet/checkpoint.hpp"
#include "volnet/config.hpp"
#include "volnet/metrics.hpp"

using namespace volnet;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  fs::path dir = fs::temp_directory_path() / ("volnet_" + tag);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
}

std::vector<float> to_vec(const Tensor<float>& t) {
  std::vector<float> out(static_cast<std::size_t>(t.size()));
  for (index_t i = 0; i < t.size(); ++i) out[static_cast<std::size_t>(i)] = t.at_flat(i);
  return out;
}

// long double so that log(1 - sigmoid) keeps enough precision at |x| ~ 20
double naive_bce(double x, double y, double w) {
  const long double sig = 1.0L / (1.0L + std::exp(static_cast<long double>(-x)));
  return static_cast<double>(-(w * y * std::log(sig) + (1.0L - y) * std::log(1.0L - sig)));
}

// One Adam step against a fresh tape; returns the new parameter value.
double adam_square_step(Tensor<double>& theta, AdamState<double>& state, const Hyperparams& hp) {
  Tape<double> tape;
  tape.watch(theta);
  Tensor<double> loss = sum(mul(theta, theta));
  GradMap<double> grads = tape.backward(loss);
  ParamList<double> params{{"theta", &theta}};
  adam_step(params, grads, state, hp);
  theta.detach();
  return theta.at_flat(0);
}

}  // namespace

TEST_CASE("confusion counts follow the >= threshold rule") {
  Tensor<float> probs(Shape{6}, {0.9f, 0.5f, 0.49f, 0.1f, 0.7f, 0.5f});
  const std::vector<int> labels{1, 1, 1, 0, 0, 0};
  const Confusion c = confusion(probs, labels, 0.5);
  CHECK(c.tp == 2);  // 0.9 and the exactly-at-threshold 0.5
  CHECK(c.fn == 1);
  CHECK(c.fp == 2);
  CHECK(c.tn == 1);

  Rng rng(33);
  Tensor<float> p = Tensor<float>::uniform(Shape{200}, 0.0f, 1.0f, rng);
  std::vector<int> y(200);
  for (auto& v : y) v = static_cast<int>(rand_index(rng, 2));
  const Confusion big = confusion(p, y, 0.4);
  index_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (index_t i = 0; i < 200; ++i) {
    const bool pred = p.at_flat(i) >= 0.4f;
    const bool pos = y[static_cast<std::size_t>(i)] == 1;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
    tn += !pred && !pos;
  }
  CHECK(big.tp == tp);
  CHECK(big.fp == fp);
  CHECK(big.fn == fn);
  CHECK(big.tn == tn);
  CHECK(big.total() == 200);
}

TEST_CASE("confusion validates inputs") {
  CHECK_THROWS_AS(confusion(Tensor<float>(Shape{2, 2}), std::vector<int>(4, 0), 0.5), ShapeError);
  CHECK_THROWS_AS(confusion(Tensor<float>(Shape{3}), std::vector<int>(4, 0), 0.5), ShapeError);
  CHECK_THROWS_AS(confusion(Tensor<float>(Shape{1}, {1.5f}), std::vector<int>{0}, 0.5), Error);
  CHECK_THROWS_AS(confusion(Tensor<float>(Shape{1}, {0.5f}), std::vector<int>{2}, 0.5), Error);
}

TEST_CASE("macro F1 fixture: tp=3 fp=1 fn=1 tn=5") {
  const MetricsReport r = macro_f1(Confusion{3, 1, 1, 5});
  CHECK(r.recall_pos == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.precision_pos == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.f1_pos == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(r.recall_neg == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(r.precision_neg == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(std::abs(r.macro_f1 - 0.791667) < 1e-6 + 5e-7);
  CHECK(r.macro_f1 == doctest::Approx((0.75 + 5.0 / 6.0) / 2).epsilon(1e-12));
  CHECK_FALSE(r.zero_division);

  // swapping the class labels swaps the per-class metrics and keeps the mean
  const MetricsReport s = macro_f1(Confusion{5, 1, 1, 3});
  CHECK(s.f1_pos == doctest::Approx(r.f1_neg).epsilon(1e-12));
  CHECK(s.f1_neg == doctest::Approx(r.f1_pos).epsilon(1e-12));
  CHECK(s.macro_f1 == doctest::Approx(r.macro_f1).epsilon(1e-12));
}

TEST_CASE("perfect predictions score macro F1 1.0") {
  Tensor<float> probs(Shape{4}, {0.9f, 0.8f, 0.1f, 0.2f});
  const MetricsReport r = macro_f1(confusion(probs, {1, 1, 0, 0}, 0.5));
  CHECK(r.macro_f1 == 1.0);
  CHECK(r.f1_pos == 1.0);
  CHECK(r.f1_neg == 1.0);
}

TEST_CASE("empty classes produce zero ratios and raise the flag") {
  // everything predicted positive: no true or predicted negatives
  const MetricsReport r = macro_f1(confusion(Tensor<float>(Shape{4}, {0.5f, 0.6f, 0.7f, 0.5f}), {1, 1, 1, 1}, 0.5));
  CHECK(r.f1_pos == 1.0);
  CHECK(r.recall_neg == 0.0);
  CHECK(r.precision_neg == 0.0);
  CHECK(r.f1_neg == 0.0);
  CHECK(r.macro_f1 == 0.5);
  CHECK(r.zero_division);

  // all-negative ground truth scored correctly
  const MetricsReport s = macro_f1(confusion(Tensor<float>(Shape{3}, {0.1f, 0.2f, 0.3f}), {0, 0, 0}, 0.5));
  CHECK(s.f1_pos == 0.0);
  CHECK(s.f1_neg == 1.0);
  CHECK(s.macro_f1 == 0.5);
  CHECK(s.zero_division);
}

TEST_CASE("json report carries exactly the documented keys") {
  const MetricsReport r = macro_f1(Confusion{3, 1, 1, 5}, 0.25);
  const nlohmann::json j = nlohmann::json::parse(report_json(r));
  const std::set<std::string> expected{"recall_pos", "precision_pos", "f1_pos", "recall_neg", "precision_neg",
                                       "f1_neg",     "macro_f1",      "threshold", "tp", "fp", "fn", "tn"};
  std::set<std::string> got;
  for (auto it = j.begin(); it != j.end(); ++it) got.insert(it.key());
  CHECK(got == expected);
  CHECK(j["tp"] == 3);
  CHECK(j["fp"] == 1);
  CHECK(j["fn"] == 1);
  CHECK(j["tn"] == 5);
  CHECK(j["threshold"] == doctest::Approx(0.25));
  CHECK(j["macro_f1"] == doctest::Approx(r.macro_f1));

  const std::string text = report_text(r);
  CHECK(text.find("macro_f1: ") != std::string::npos);
  CHECK(text.find("tp: 3") != std::string::npos);
}

TEST_CASE("Adam reproduces the frozen quadratic-descent trajectory") {
  const double expect[5] = {0.90000000049999995, 0.80041222869179285, 0.70158627294603026, 0.60393906057374602,
                            0.50796365926434195};
  Tensor<double> theta(Shape{1}, {1.0});
  AdamState<double> state;
  Hyperparams hp;
  hp.lr = 0.1;
  for (int step = 0; step < 5; ++step) {
    const double value = adam_square_step(theta, state, hp);
    CHECK(std::abs(value - expect[step]) <= 1e-15);
  }
  CHECK(state.t == 5);
}

TEST_CASE("the first Adam step scales linearly with the learning rate") {
  for (const double lr : {0.1, 0.2}) {
    Tensor<double> theta(Shape{1}, {0.7});
    AdamState<double> state;
    Hyperparams hp;
    hp.lr = lr;
    adam_square_step(theta, state, hp);
    const double delta = 0.7 - theta.at_flat(0);
    // first step: lr * g / (|g| + eps), g = 1.4
    CHECK(delta == doctest::Approx(lr * 1.4 / (1.4 + 1e-8)).epsilon(1e-12));
  }
}

TEST_CASE("zero gradients leave parameters unchanged but advance the step count") {
  Tensor<double> theta(Shape{3}, {1.0, -2.0, 3.0});
  AdamState<double> state;
  Hyperparams hp;
  Tape<double> tape;
  tape.watch(theta);
  Tensor<double> loss = sum(mul(theta, Tensor<double>::zeros(Shape{3})));
  GradMap<double> grads = tape.backward(loss);
  ParamList<double> params{{"theta", &theta}};
  adam_step(params, grads, state, hp);
  theta.detach();
  CHECK(theta.at_flat(0) == 1.0);
  CHECK(theta.at_flat(1) == -2.0);
  CHECK(theta.at_flat(2) == 3.0);
  CHECK(state.t == 1);
}

TEST_CASE("a parameter without a gradient is an error") {
  Tensor<double> used(Shape{2}, {1.0, 2.0});
  Tensor<double> unused(Shape{2}, {3.0, 4.0});
  Tape<double> tape;
  tape.watch(used);
  tape.watch(unused);
  GradMap<double> grads = tape.backward(sum(mul(used, used)));
  AdamState<double> state;
  Hyperparams hp;
  ParamList<double> params{{"used", &used}, {"spare", &unused}};
  CHECK_THROWS_WITH_AS(adam_step(params, grads, state, hp), doctest::Contains("spare"), Error);
  used.detach();
  unused.detach();
}

TEST_CASE("binary cross-entropy fixtures") {
  using T = Tensor<double>;
  // zero logit costs ln 2 regardless of the target
  CHECK(bce_with_logits(T(Shape{1}, {0.0}), T(Shape{1}, {1.0})).at_flat(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(bce_with_logits(T(Shape{1}, {0.0}), T(Shape{1}, {0.0})).at_flat(0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // confident and correct: vanishing loss
  CHECK(bce_with_logits(T(Shape{1}, {100.0}), T(Shape{1}, {1.0})).at_flat(0) < 1e-10);
  // confident and wrong: the raw margin
  CHECK(bce_with_logits(T(Shape{1}, {-100.0}), T(Shape{1}, {1.0})).at_flat(0) == doctest::Approx(100.0).epsilon(1e-9));
  CHECK(bce_with_logits(T(Shape{1}, {100.0}), T(Shape{1}, {0.0})).at_flat(0) == doctest::Approx(100.0).epsilon(1e-9));
  // the mean reduction
  CHECK(bce_with_logits(T(Shape{2}, {3.0, 3.0}), T(Shape{2}, {1.0, 1.0})).at_flat(0) ==
        doctest::Approx(bce_with_logits(T(Shape{1}, {3.0}), T(Shape{1}, {1.0})).at_flat(0)).epsilon(1e-12));
}

TEST_CASE("binary cross-entropy agrees with the naive formula in its stable range") {
  Rng rng(71);
  for (int trial = 0; trial < 200; ++trial) {
    const double x = rand_uniform(rng, -20.0, 20.0);
    const double y = static_cast<double>(rand_index(rng, 2));
    const double got = bce_with_logits(Tensor<double>(Shape{1}, {x}), Tensor<double>(Shape{1}, {y})).at_flat(0);
    CHECK(std::abs(got - naive_bce(x, y, 1.0)) < 1e-10);

    const double w = 3.5;
    const double gw =
        bce_with_logits(Tensor<double>(Shape{1}, {x}), Tensor<double>(Shape{1}, {y}), w).at_flat(0);
    CHECK(std::abs(gw - naive_bce(x, y, w)) < 1e-10);
  }
}

TEST_CASE("binary cross-entropy survives extreme logits") {
  Tensor<float> logits(Shape{4}, {1e4f, -1e4f, 1e4f, -1e4f});
  Tensor<float> targets(Shape{4}, {1.0f, 1.0f, 0.0f, 0.0f});
  Tensor<float> loss = bce_with_logits(logits, targets);
  CHECK(loss.all_finite());
  CHECK(loss.at_flat(0) == doctest::Approx(0.5e4).epsilon(1e-5));
}

TEST_CASE("binary cross-entropy validates its inputs") {
  using T = Tensor<double>;
  CHECK_THROWS_AS(bce_with_logits(T(Shape{2, 1}), T(Shape{2, 1})), ShapeError);
  CHECK_THROWS_AS(bce_with_logits(T(Shape{2}), T(Shape{3})), ShapeError);
  CHECK_THROWS_AS(bce_with_logits(T(Shape{1}, {0.0}), T(Shape{1}, {1.5})), Error);
  CHECK_THROWS_AS(bce_with_logits(T(Shape{1}, {0.0}), T(Shape{1}, {-0.1})), Error);
  CHECK_THROWS_AS(bce_with_logits(T(Shape{1}, {0.0}), T(Shape{1}, {1.0}), -1.0), Error);
}

TEST_CASE("binary cross-entropy gradient matches sigmoid(x) - y") {
  Tensor<double> x(Shape{3}, {0.3, -1.2, 2.0});
  Tensor<double> y(Shape{3}, {1.0, 0.0, 1.0});
  Tape<double> tape;
  tape.watch(x);
  GradMap<double> grads = tape.backward(bce_with_logits(x, y));
  const Tensor<double>& d = grads.at(x);
  for (index_t i = 0; i < 3; ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-x.at_flat(i)));
    CHECK(d.at_flat(i) == doctest::Approx((sig - y.at_flat(i)) / 3.0).epsilon(1e-12));
  }
  x.detach();
}

TEST_CASE("checkpoints round trip bit-exactly") {
  const fs::path dir = fresh_dir("ckpt");
  Checkpoint ckpt;
  Rng rng(3);
  ckpt.tensors["model.a"] = Tensor<float>::uniform(Shape{2, 3}, -5.0f, 5.0f, rng);
  ckpt.tensors["model.b"] = Tensor<float>(Shape{4}, {0.1f, -0.0f, 1e-45f, 3.4e38f});
  ckpt.put_meta("epoch", 7);
  ckpt.put_meta("best_macro_f1", 0.875);

  save_checkpoint(dir / "x.vnck", ckpt);
  const Checkpoint back = load_checkpoint(dir / "x.vnck");
  REQUIRE(back.tensors.size() == ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    REQUIRE(back.has(name));
    const Tensor<float>& r = back.get(name);
    REQUIRE(r.shape() == t.shape());
    for (index_t i = 0; i < t.size(); ++i) {
      CHECK(std::bit_cast<std::uint32_t>(r.at_flat(i)) == std::bit_cast<std::uint32_t>(t.at_flat(i)));
    }
  }
  CHECK(back.meta("epoch") == 7.0);
  CHECK(back.meta_or("missing", -1.0) == -1.0);
  CHECK_THROWS_AS(back.meta("missing"), DataError);

  // two saves of the same content are byte-identical
  save_checkpoint(dir / "y.vnck", ckpt);
  std::ifstream fa(dir / "x.vnck", std::ios::binary), fb(dir / "y.vnck", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  const std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(ba == bb);
}

TEST_CASE("checkpoint reader rejects malformed files") {
  const fs::path dir = fresh_dir("ckpt_bad");
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.vnck"), DataError);

  Checkpoint ckpt;
  ckpt.tensors["model.a"] = Tensor<float>::ones(Shape{3});
  save_checkpoint(dir / "ok.vnck", ckpt);

  std::ifstream in(dir / "ok.vnck", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::string bad = bytes;
  bad[0] = 'X';
  write_text(dir / "magic.vnck", bad);
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "magic.vnck"), doctest::Contains("magic"), DataError);

  write_text(dir / "short.vnck", bytes.substr(0, bytes.size() - 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.vnck"), DataError);

  write_text(dir / "trailing.vnck", bytes + "junk");
  CHECK_THROWS_WITH_AS(load_checkpoint(dir / "trailing.vnck"), doctest::Contains("trailing"), DataError);
}

TEST_CASE("model state survives a checkpoint round trip") {
  Model<float> m = build_model<float>(ModelConfig::tiny(Variant::with_mha), 13);
  Rng rng(14);
  Tensor<float> warm = Tensor<float>::uniform(Shape{2, 1, 8, 16, 16}, -1.0f, 1.0f, rng);
  (void)m.forward(warm, Mode::train);  // move the BN running stats off init

  Checkpoint ckpt;
  pack_model(ckpt, m);
  const fs::path dir = fresh_dir("ckpt_model");
  save_checkpoint(dir / "m.vnck", ckpt);

  Model<float> fresh = build_model<float>(ModelConfig::tiny(Variant::with_mha), 99);
  const Checkpoint back = load_checkpoint(dir / "m.vnck");
  unpack_model(fresh, back);

  Tensor<float> x = Tensor<float>::uniform(Shape{3, 1, 8, 16, 16}, -1.0f, 1.0f, rng);
  CHECK(to_vec(m.predict(x)) == to_vec(fresh.predict(x)));
}

TEST_CASE("optimizer state survives a checkpoint round trip") {
  AdamState<float> state;
  state.t = 3;
  Rng rng(15);
  state.m.emplace("fc.w", Tensor<float>::uniform(Shape{4, 1}, -1.0f, 1.0f, rng));
  state.v.emplace("fc.w", Tensor<float>::uniform(Shape{4, 1}, 0.0f, 1.0f, rng));

  Checkpoint ckpt;
  pack_adam(ckpt, state);
  const fs::path dir = fresh_dir("ckpt_adam");
  save_checkpoint(dir / "o.vnck", ckpt);

  AdamState<float> back;
  unpack_adam(back, load_checkpoint(dir / "o.vnck"));
  CHECK(back.t == 3);
  REQUIRE(back.m.count("fc.w") == 1);
  CHECK(to_vec(back.m.at("fc.w")) == to_vec(state.m.at("fc.w")));
  CHECK(to_vec(back.v.at("fc.w")) == to_vec(state.v.at("fc.w")));

  // a checkpoint without optimizer tensors leaves the state untouched
  AdamState<float> empty;
  unpack_adam(empty, Checkpoint{});
  CHECK(empty.t == 0);
  CHECK(empty.m.empty());
}

TEST_CASE("an empty config file yields the stock defaults") {
  const fs::path dir = fresh_dir("config");
  write_text(dir / "empty.cfg", "");
  const RunConfig cfg = parse_config(dir / "empty.cfg");
  CHECK(cfg.hp.lr == 0.0001);
  CHECK(cfg.hp.batch_size == 4);
  CHECK(cfg.hp.epochs == 50);
  CHECK(cfg.hp.beta1 == 0.9);
  CHECK(cfg.hp.beta2 == 0.999);
  CHECK(cfg.variant == Variant::plain);
  CHECK_FALSE(cfg.tiny);
  CHECK(cfg.threshold == 0.5);
  CHECK(cfg.pos_weight == 1.0);
  CHECK(cfg.eval_split == "val");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config parsing: comments, whitespace, and overrides") {
  const fs::path dir = fresh_dir("config_parse");
  write_text(dir / "run.cfg",
             "# training setup\n"
             "  lr = 0.001   # bumped\n"
             "variant = with_mha\n"
             "tiny = true\n"
             "batch_size=2\n"
             "\n"
             "out_dir = runs/exp1\n");
  const RunConfig cfg = parse_config(dir / "run.cfg");
  CHECK(cfg.hp.lr == 0.001);
  CHECK(cfg.variant == Variant::with_mha);
  CHECK(cfg.tiny);
  CHECK(cfg.hp.batch_size == 2);
  CHECK(cfg.out_dir == "runs/exp1");
}

TEST_CASE("config parsing failures carry the offending line") {
  const fs::path dir = fresh_dir("config_bad");
  CHECK_THROWS_AS(parse_config(dir / "missing.cfg"), ConfigError);

  write_text(dir / "unknown.cfg", "lr = 0.1\nbogus = 1\n");
  CHECK_THROWS_WITH_AS(parse_config(dir / "unknown.cfg"), doctest::Contains("bogus"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(dir / "unknown.cfg"), doctest::Contains(":2"), ConfigError);

  write_text(dir / "type.cfg", "epochs = soon\n");
  CHECK_THROWS_WITH_AS(parse_config(dir / "type.cfg"), doctest::Contains("integer"), ConfigError);

  write_text(dir / "noeq.cfg", "just a line\n");
  CHECK_THROWS_AS(parse_config(dir / "noeq.cfg"), ConfigError);

  write_text(dir / "variant.cfg", "variant = resnet\n");
  CHECK_THROWS_AS(parse_config(dir / "variant.cfg"), ConfigError);
}

TEST_CASE("the shipped default config text parses back to the defaults") {
  const fs::path dir = fresh_dir("config_default");
  write_text(dir / "default.cfg", default_config_text());
  const RunConfig cfg = parse_config(dir / "default.cfg");
  const RunConfig stock;
  CHECK(cfg.hp.lr == stock.hp.lr);
  CHECK(cfg.hp.beta1 == stock.hp.beta1);
  CHECK(cfg.hp.beta2 == stock.hp.beta2);
  CHECK(cfg.hp.eps == stock.hp.eps);
  CHECK(cfg.hp.batch_size == stock.hp.batch_size);
  CHECK(cfg.hp.epochs == stock.hp.epochs);
  CHECK(cfg.variant == stock.variant);
  CHECK(cfg.tiny == stock.tiny);
  CHECK(cfg.seed == stock.seed);
  CHECK(cfg.workers == stock.workers);
  CHECK(cfg.checkpoint_interval == stock.checkpoint_interval);
  CHECK(cfg.early_stop_macro_f1 == stock.early_stop_macro_f1);
  CHECK(cfg.pos_weight == stock.pos_weight);
  CHECK(cfg.threshold == stock.threshold);
  CHECK(cfg.manifest == stock.manifest);
  CHECK(cfg.out_dir == stock.out_dir);
  CHECK(cfg.eval_split == stock.eval_split);
  CHECK(cfg.scope == stock.scope);
  CHECK(cfg.synth_dir == stock.synth_dir);
  CHECK(cfg.n_train_per_class == stock.n_train_per_class);
  CHECK(cfg.n_val_per_class == stock.n_val_per_class);
  CHECK(cfg.noise == stock.noise);
  CHECK(cfg.lesion_min == stock.lesion_min);
  CHECK(cfg.lesion_max == stock.lesion_max);
}

TEST_CASE("config validation catches out-of-range values") {
  RunConfig cfg;
  cfg.threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.hp.lr = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RunConfig{};
  cfg.eval_split = "test";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("every registered gradient check passes") {
  for (const NamedCheck& check : gradient_checks(2026)) {
    const GradCheckResult result = check.run();
    INFO("check ", check.name, ": max rel err ", result.max_rel_err, " at coord ", result.worst_coord);
    CHECK(result.passed(1e-3));
    CHECK(result.checked > 0);
  }
}
