#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

#include "doctest.h"
#include "gradcheck.hpp"
#include "jebgfn/ndmath/adam.hpp"
#include "jebgfn/ndmath/checkpoint.hpp"
#include "jebgfn/ndmath/nn.hpp"
#include "jebgfn/ndmath/ops.hpp"

using namespace jebgfn::nd;

namespace {

Tensor random_constant(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = u(rng);
  return Tensor::constant(std::move(shape), std::move(v));
}

std::vector<double> to_vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

}  // namespace

TEST_CASE("relu clips negatives") {
  const Tensor r = relu(Tensor::constant({3}, {-1.0, 0.0, 2.0}));
  CHECK(to_vec(r) == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("matmul with identity returns the other operand") {
  const Tensor eye = Tensor::constant({2, 2}, {1, 0, 0, 1});
  const Tensor a = Tensor::constant({2, 2}, {0.5, -3.0, 7.25, 1e-3});
  CHECK(to_vec(matmul(eye, a)) == to_vec(a));
}

TEST_CASE("matmul rows do not depend on batch composition") {
  Rng rng(3);
  const Tensor w = random_constant({37, 29}, rng);
  const Tensor x = random_constant({9, 37}, rng);
  const Tensor full = matmul(x, w);
  for (std::size_t r = 0; r < 9; ++r) {
    const Tensor row = Tensor::constant({1, 37}, {x.values().begin() + r * 37, x.values().begin() + (r + 1) * 37});
    const Tensor one = matmul(row, w);
    for (std::size_t j = 0; j < 29; ++j) CHECK(one.at(j) == full.at(r * 29 + j));
  }
}

TEST_CASE("matmul agrees with a naive triple loop") {
  Rng rng(4);
  const Tensor a = random_constant({5, 70}, rng);
  const Tensor b = random_constant({70, 33}, rng);
  const Tensor c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 33; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 70; ++k) acc += a.at(i * 70 + k) * b.at(k * 33 + j);
      CHECK(c.at(i * 33 + j) == doctest::Approx(acc).epsilon(1e-12));
    }
}

TEST_CASE("log_softmax of equal logits") {
  const Tensor l = log_softmax(Tensor::constant({2}, {0.0, 0.0}), 0);
  CHECK(l.at(0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  CHECK(l.at(1) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("log_softmax is stable for large logits") {
  const Tensor l = log_softmax(Tensor::constant({1, 3}, {1000.0, 1000.0, 0.0}), 1);
  CHECK(l.at(0) == doctest::Approx(-std::log(2.0)));
  CHECK(l.at(2) == doctest::Approx(-1000.0 - std::log(2.0)));
}

TEST_CASE("masked_log_softmax excludes masked entries") {
  const std::vector<std::uint8_t> mask{1, 0, 1, 0, 1, 1};
  const Tensor l = masked_log_softmax(Tensor::constant({2, 3}, {0, 50, 0, 3, 1, 1}), mask);
  CHECK(l.at(0) == doctest::Approx(-std::log(2.0)));
  CHECK(l.at(1) == kMaskedLogProb);
  CHECK(l.at(3) == kMaskedLogProb);
  CHECK(std::exp(l.at(4)) + std::exp(l.at(5)) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS_AS(masked_log_softmax(Tensor::constant({1, 2}, {0, 0}), std::vector<std::uint8_t>{0, 0}),
                  std::invalid_argument);
}

TEST_CASE("shape mismatches and non-finite outputs throw") {
  CHECK_THROWS_AS(add(Tensor::zeros({2}), Tensor::zeros({3})), std::invalid_argument);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(square(Tensor::constant({1}, {1e200})), std::domain_error);
}

TEST_CASE("backward of sum of squares") {
  Tensor w = Tensor::parameter({1}, {3.0});
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum(mul(w, w)));
  }
  REQUIRE(w.has_grad());
  CHECK(w.grad()[0] == 6.0);
}

TEST_CASE("backward contract") {
  Tensor w = Tensor::parameter({2}, {1.0, 2.0});
  Tape tape;
  TapeScope scope(tape);
  SUBCASE("non-scalar loss") { CHECK_THROWS_AS(tape.backward(mul(w, w)), std::invalid_argument); }
  SUBCASE("second call on the same loss") {
    const Tensor loss = sum(w);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
  }
  SUBCASE("constant loss leaves gradients absent") {
    const Tensor c = sum(Tensor::constant({2}, {1.0, 2.0}));
    tape.backward(c);
    CHECK_FALSE(w.has_grad());
    CHECK(tape.empty());
  }
}

TEST_CASE("no-grad scope does not record") {
  Tensor w = Tensor::parameter({1}, {2.0});
  Tape tape;
  TapeScope scope(tape);
  {
    NoGradScope off;
    (void)mul(w, w);
  }
  CHECK(tape.empty());
  (void)mul(w, w);
  CHECK(tape.size() == 1);
}

TEST_CASE("mean of relu(Wx+b) matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    ParamSet params;
    const Linear lin = Linear::make(params, "l", 6, 4, rng);
    const Tensor x = random_constant({3, 6}, rng, -2.0, 2.0);
    const auto r = testsupport::check_gradients(params, [&] { return mean(relu(lin(x))); });
    CHECK(r.max_rel_error < 1e-6);
    CHECK(r.checked == 6 * 4 + 4);
  }
}

TEST_CASE("tanh values and gradient") {
  const Tensor t = jebgfn::nd::tanh(Tensor::constant({3}, {-1.0, 0.0, 0.5}));
  CHECK(to_vec(t) == std::vector<double>{std::tanh(-1.0), 0.0, std::tanh(0.5)});
  Rng rng(13);
  ParamSet params;
  const Linear lin = Linear::make(params, "l", 5, 3, rng);
  const Tensor x = random_constant({4, 5}, rng, -2.0, 2.0);
  const auto r = testsupport::check_gradients(params, [&] { return sum(jebgfn::nd::tanh(lin(x))); });
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("every op's gradient matches finite differences") {
  Rng rng(12);
  ParamSet params;
  Tensor a = params.add("a", random_constant({4, 3}, rng));
  Tensor b = params.add("b", random_constant({4, 3}, rng));
  Tensor bias = params.add("bias", random_constant({3}, rng));
  Tensor table = params.add("table", random_constant({5, 3}, rng));
  const std::vector<std::size_t> idx{4, 0, 4, 2, 1, 3, 0, 0};
  const std::vector<std::size_t> cols{2, 0, 1, 1};
  const std::vector<std::size_t> seg{1, 0, 1, 1};
  const std::vector<std::uint8_t> mask{1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 0, 1};
  auto loss = [&] {
    const Tensor ab = add_bias(sub(mul(a, b), scale(a, 0.3)), bias);
    const Tensor sm = masked_log_softmax(square(add_scalar(ab, 0.1)), mask);
    const Tensor ls = log_softmax(concat(a, b, 0), 1);
    const Tensor bag = embedding_bag(table, idx, 2);  // [4,3]
    const Tensor look = group_sum(embedding_lookup(table, idx), 2);
    const Tensor g = gather_columns(add(bag, a), cols);
    const Tensor s = segment_sum(g, seg, 2);
    Tensor total = add(sum(mul(sm, relu(ab))), mean(ls));
    total = add(total, sum(mul(look, bag)));
    total = add(total, sum(square(s)));
    total = add(total, mean(matmul(a, reshape(b, {3, 4}))));
    total = add(total, sum(concat(a, b, 1)));
    return total;
  };
  const auto r = testsupport::check_gradients(params, loss);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("mlp gradients match finite differences") {
  Rng rng(13);
  ParamSet params;
  const Mlp mlp = Mlp::make(params, "m", {5, 7, 7, 1}, rng);
  const Tensor x = random_constant({4, 5}, rng, -2.0, 2.0);
  const auto r = testsupport::check_gradients(params, [&] { return mean(square(mlp(x))); });
  CHECK(r.max_rel_error < 1e-6);
  CHECK(params.size() == 6);
  CHECK(params.contains("m.2.bias"));
}

TEST_CASE("param set names are unique and ordered") {
  ParamSet p;
  p.add("first", Tensor::zeros({2}));
  p.add("second", Tensor::zeros({1}));
  CHECK_THROWS_AS(p.add("first", Tensor::zeros({1})), std::invalid_argument);
  CHECK(p.begin()->first == "first");
  CHECK(p.scalar_count() == 3);
  p.set_flat_values({1, 2, 3});
  CHECK(p.flat_values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam first step matches the hand-evaluated update") {
  ParamSet p;
  Tensor w = p.add("w", Tensor::parameter({1}, {0.5}));
  AdamState opt = make_adam(p, {.lr = 0.01});
  w.mutable_grad()[0] = 0.2;
  adam_step(p, opt);
  // m = 0.1*0.2 = 0.02, v = 0.001*0.04 = 4e-5; mhat = 0.2, vhat = 0.04.
  const double expected = 0.5 - 0.01 * (0.2 / (0.2 + 1e-8));
  CHECK(w.at(0) == doctest::Approx(expected).epsilon(1e-15));
  CHECK(opt.t == 1);
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("adam second step uses bias-corrected moments") {
  ParamSet p;
  Tensor w = p.add("w", Tensor::parameter({1}, {1.0}));
  AdamState opt = make_adam(p, {.lr = 0.1});
  w.mutable_grad()[0] = 1.0;
  adam_step(p, opt);
  w.mutable_grad()[0] = -2.0;
  adam_step(p, opt);
  const double m = 0.9 * 0.1 + 0.1 * -2.0;
  const double v = 0.999 * 0.001 + 0.001 * 4.0;
  const double mhat = m / (1 - 0.81), vhat = v / (1 - 0.999 * 0.999);
  const double after_first = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
  CHECK(w.at(0) == doctest::Approx(after_first - 0.1 * mhat / (std::sqrt(vhat) + 1e-8)).epsilon(1e-14));
  CHECK(opt.t == 2);
}

TEST_CASE("adam with zero gradient") {
  ParamSet p;
  Tensor w = p.add("w", Tensor::parameter({2}, {0.5, -4.0}));
  SUBCASE("no decay leaves parameters unchanged") {
    AdamState opt = make_adam(p, {.lr = 0.01});
    w.mutable_grad();
    adam_step(p, opt);
    CHECK(w.at(0) == 0.5);
    CHECK(w.at(1) == -4.0);
  }
  SUBCASE("decoupled decay shrinks by lr*lambda*w") {
    AdamState opt = make_adam(p, {.lr = 0.01, .weight_decay = 0.1});
    w.mutable_grad();
    adam_step(p, opt);
    CHECK(w.at(0) == doctest::Approx(0.5 - 0.01 * 0.1 * 0.5).epsilon(1e-15));
    CHECK(w.at(1) == doctest::Approx(-4.0 + 0.01 * 0.1 * 4.0).epsilon(1e-15));
  }
}

TEST_CASE("adam rejects missing gradients and bad configs") {
  ParamSet p;
  p.add("w", Tensor::parameter({1}, {1.0}));
  AdamState opt = make_adam(p, {});
  CHECK_THROWS_AS(adam_step(p, opt), std::logic_error);
  CHECK_THROWS_AS(make_adam(p, {.lr = 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(make_adam(p, {.lr = 1e-3, .weight_decay = -1.0}), std::invalid_argument);
}

TEST_CASE("identical seeds give identical parameter trajectories") {
  auto run = [] {
    Rng rng(77);
    ParamSet p;
    const Mlp mlp = Mlp::make(p, "m", {3, 8, 1}, rng);
    AdamState opt = make_adam(p, {.lr = 1e-2});
    const Tensor x = random_constant({5, 3}, rng);
    for (int i = 0; i < 20; ++i) {
      Tape tape;
      TapeScope scope(tape);
      tape.backward(mean(square(mlp(x))));
      adam_step(p, opt);
    }
    return p.flat_values();
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(5);
  ParamSet p;
  (void)Mlp::make(p, "net", {3, 4, 2}, rng);
  AdamState opt = make_adam(p, {.lr = 3e-4, .weight_decay = 0.02});
  for (auto& [_, t] : p) {
    auto g = t.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.1 * static_cast<double>(i) - 0.3;
  }
  adam_step(p, opt);

  Checkpoint ck;
  ck.strings["kind"] = "test";
  export_params(p, "policy/", ck);
  export_adam(p, opt, "policy_opt/", ck);
  const auto path = std::filesystem::temp_directory_path() / "jebgfn_ckpt_roundtrip.bin";
  save_checkpoint(path, ck);
  const Checkpoint back = load_checkpoint(path);
  CHECK(back == ck);

  ParamSet q;
  Rng other(999);
  (void)Mlp::make(q, "net", {3, 4, 2}, other);
  import_params(q, "policy/", back);
  CHECK(q.flat_values() == p.flat_values());
  const AdamState opt2 = import_adam(q, "policy_opt/", back);
  CHECK(opt2.t == opt.t);
  CHECK(opt2.m == opt.m);
  CHECK(opt2.v == opt.v);
  CHECK(opt2.config.weight_decay == 0.02);

  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 3);
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects foreign files") {
  const auto path = std::filesystem::temp_directory_path() / "jebgfn_not_a_ckpt.bin";
  {
    std::ofstream os(path, std::ios::binary);
    os << "NOTMAGIC and then some bytes";
  }
  CHECK_THROWS(load_checkpoint(path));
  std::filesystem::remove(path);
  CHECK_THROWS(load_checkpoint(path));
}
