#include <cmath>
#include <sstream>

#include "choreo/autodiff.hpp"
#include "choreo/errors.hpp"
#include "choreo/nn.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace choreo;
using choreo::testing::compare;
using choreo::testing::finite_difference;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(r, c);
  for (double& v : t.values()) v = rng.normal() * scale;
  return t;
}

// Exercises every primitive in one scalar graph.
Var composed(Tape& tape, const ParamSet& p, const Tensor& input) {
  Var x = tape.constant(input);
  Var h = ops::tanh(ops::matmul(x, tape.param(p, "w1")) + tape.param(p, "b1"));
  Var g = ops::sigmoid(ops::matmul(x, tape.param(p, "w2")));
  Var both = ops::concat_cols({h, g});
  Var logits = ops::matmul(both, tape.param(p, "w3"));
  Var probs = ops::softmax(logits);
  Var lsm = ops::log_softmax(ops::slice_cols(logits, 1, 3));
  std::vector<std::size_t> rows = {2, 0, 0, 1};
  Var gathered = ops::gather_rows(h, rows);
  Var norms = ops::l2_norm(gathered);
  Var reshaped = ops::reshape(probs, 1, probs.value().size());
  Var term1 = ops::sum(ops::square(probs - ops::exp(ops::scale(probs, -0.5))));
  Var term2 = ops::mean(lsm * ops::slice_cols(ops::log(ops::add_scalar(probs, 1.0)), 0, 2));
  Var term3 = ops::mean(ops::sum_cols(reshaped)) + ops::mean(norms);
  Var term4 = ops::sum(ops::log(ops::add_scalar(ops::slice_cols(probs, 0, 1), 1.0)));
  return term1 + term2 + ops::scale(term3, 0.3) - term4;
}

}  // namespace

TEST_CASE("backward of x^2 at 3 is 6") {
  ParamSet p;
  p.add("x", Tensor::scalar(3.0));
  Tape tape;
  auto g = tape.backward(ops::square(tape.param(p, "x")), p);
  CHECK(g.at("x").item() == doctest::Approx(6.0));
}

TEST_CASE("constant output has zero gradient") {
  ParamSet p;
  p.add("x", Tensor::scalar(3.0));
  p.add("unused", Tensor::zeros(2, 2));
  Tape tape;
  tape.param(p, "x");
  auto g = tape.backward(tape.constant(Tensor::scalar(7.0)), p);
  CHECK(g.at("x").item() == 0.0);
  for (double v : g.at("unused").values()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Tape tape;
  Var v = tape.constant(Tensor::zeros(2, 1));
  CHECK_THROWS_AS(tape.backward(v), ContractViolation);
}

TEST_CASE("non-finite values raise a numeric fault naming the op") {
  ParamSet p;
  p.add("x", Tensor::scalar(-1.0));
  Tape tape;
  try {
    (void)ops::log(tape.param(p, "x"));
    FAIL("expected NumericFault");
  } catch (const NumericFault& e) {
    CHECK(e.op() == "log");
  }
}

TEST_CASE("two-layer net gradient matches central differences") {
  Rng rng(11);
  ParamSet p;
  init_mlp(p, MlpSpec{"net", 4, {6}, 3}, rng);
  p.at("net.l0.b") = random_matrix(1, 6, rng, 0.1);
  const Tensor x = random_matrix(5, 4, rng);
  const MlpSpec spec{"net", 4, {6}, 3};
  auto loss_value = [&] {
    Tape t;
    return ops::sum(ops::square(mlp(t, p, spec, t.constant(x)))).value().item();
  };
  Tape tape;
  auto analytic = tape.backward(ops::sum(ops::square(mlp(tape, p, spec, tape.constant(x)))), p);
  auto numeric = finite_difference(p, loss_value);
  CHECK(compare(analytic, numeric).worst < 1e-4);
}

TEST_CASE("composed graph of all primitives agrees with finite differences at 100 points") {
  Rng rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ParamSet p;
    p.add("w1", random_matrix(4, 3, rng, 0.7));
    p.add("b1", random_matrix(1, 3, rng, 0.2));
    p.add("w2", random_matrix(4, 2, rng, 0.7));
    p.add("w3", random_matrix(5, 4, rng, 0.7));
    const Tensor x = random_matrix(3, 4, rng);
    auto loss_value = [&] {
      Tape t;
      return composed(t, p, x).value().item();
    };
    Tape tape;
    auto analytic = tape.backward(composed(tape, p, x), p);
    auto numeric = finite_difference(p, loss_value);
    worst = std::max(worst, compare(analytic, numeric).worst);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("straight-through passes the upstream gradient to the surrogate") {
  ParamSet p;
  p.add("x", Tensor::matrix(1, 3, {0.2, -0.4, 0.9}));
  Tape tape;
  Var x = tape.param(p, "x");
  Var st = ops::straight_through(Tensor::matrix(1, 3, {1, 0, 0}), x);
  CHECK(st.value()[0] == 1.0);
  auto g = tape.backward(ops::sum(ops::scale(st, 2.0)), p);
  for (double v : g.at("x").values()) CHECK(v == 2.0);
}

TEST_CASE("adam with zero gradients is the identity") {
  Rng rng(3);
  ParamSet p;
  p.add("w", random_matrix(3, 3, rng));
  const ParamSet before = p;
  for (int i = 0; i < 5; ++i) adam_step(p, p.zero_gradients(), 3e-4);
  CHECK(p.values() == before.values());
  CHECK(p.step() == 5);
}

TEST_CASE("adam two steps on constant gradient match the unrolled recurrence") {
  ParamSet p;
  p.add("x", Tensor::scalar(0.5));
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Gradients g{{"x", Tensor::scalar(1.0)}};
  adam_step(p, g, lr);
  adam_step(p, g, lr);
  // Unrolled: m1 = 0.1, v1 = 0.001, m2 = 0.19, v2 = 0.001999.
  double x = 0.5;
  double m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1);
    v = b2 * v + (1 - b2);
    x -= lr * (m / (1 - std::pow(b1, t))) / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
  }
  CHECK(p.at("x").item() == doctest::Approx(x).epsilon(1e-14));
  CHECK(p.at("x").item() == doctest::Approx(0.5 - 2 * lr / (1 + eps)).epsilon(1e-12));
  CHECK(p.step() == 2);
}

TEST_CASE("adam rejects shape mismatches") {
  ParamSet p;
  p.add("x", Tensor::zeros(2, 2));
  CHECK_THROWS_AS(adam_step(p, Gradients{{"x", Tensor::zeros(1, 2)}}, 0.1), ContractViolation);
}

TEST_CASE("clip_grad_norm") {
  Gradients g{{"a", Tensor::matrix(1, 2, {3.0, 4.0})}};
  SUBCASE("below threshold is unchanged") { CHECK(clip_grad_norm(g, 10.0) == g); }
  SUBCASE("norm-5 vector clipped to 1") {
    auto c = clip_grad_norm(g, 1.0);
    CHECK(c.at("a")[0] == doctest::Approx(0.6));
    CHECK(c.at("a")[1] == doctest::Approx(0.8));
  }
  SUBCASE("non-positive max_norm is a contract violation") {
    CHECK_THROWS_AS(clip_grad_norm(g, 0.0), ContractViolation);
  }
}

TEST_CASE("clip_grad_norm property: bounded norm, preserved direction") {
  Rng rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    Gradients g{{"a", random_matrix(2, 3, rng, 10.0)}, {"b", random_matrix(1, 4, rng, 10.0)}};
    const double max_norm = rng.uniform(0.01, 50.0);
    auto c = clip_grad_norm(g, max_norm);
    CHECK(global_norm(c) <= max_norm + 1e-12);
    const double k = c.at("a")[0] / g.at("a")[0];
    CHECK(k > 0.0);
    for (const auto& [name, t] : g)
      for (std::size_t i = 0; i < t.size(); ++i) CHECK(c.at(name)[i] == doctest::Approx(k * t[i]));
  }
}

TEST_CASE("gru_step with zero parameters halves the hidden state") {
  ParamSet p;
  const GruSpec spec{"gru", 3, 4};
  p.add("gru.wx", Tensor::zeros(3, 12));
  p.add("gru.wh", Tensor::zeros(4, 12));
  p.add("gru.b", Tensor::zeros(1, 12));
  const Tensor h = Tensor::matrix(1, 4, {0.8, -0.2, 0.0, 0.5});
  const Tensor x = Tensor::matrix(1, 3, {1.0, 2.0, 3.0});
  // u = sigmoid(0) = 0.5, n = tanh(0) = 0  =>  h' = 0.5 * n + 0.5 * h
  const Tensor out = gru_step(h, x, p, spec);
  REQUIRE(out.same_shape(h));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(0.5 * h[i]));
}

TEST_CASE("gru_step: shape contract, bounded output and gradient check") {
  Rng rng(21);
  ParamSet p;
  const GruSpec spec{"gru", 3, 5};
  init_gru(p, spec, rng);
  p.at("gru.b") = random_matrix(1, 15, rng, 0.3);
  const Tensor h = random_matrix(2, 5, rng, 0.5);
  const Tensor x = random_matrix(2, 3, rng);
  const Tensor out = gru_step(h, x, p, spec);
  CHECK(out.same_shape(h));
  for (double v : out.values()) CHECK(std::abs(v) < 1.0);
  CHECK_THROWS_AS(gru_step(h, random_matrix(2, 4, rng), p, spec), ContractViolation);

  auto loss = [&](Tape& t) {
    Var hv = t.constant(h);
    for (int k = 0; k < 3; ++k) hv = gru_step(t, p, spec, hv, t.constant(x));
    return ops::sum(ops::square(hv));
  };
  Tape tape;
  auto analytic = tape.backward(loss(tape), p);
  auto numeric = finite_difference(p, [&] {
    Tape t;
    return loss(t).value().item();
  });
  CHECK(compare(analytic, numeric).worst < 1e-4);
}

TEST_CASE("parameter checkpoints round-trip and lead with the version byte") {
  Rng rng(1);
  ParamSet p;
  init_mlp(p, MlpSpec{"m", 3, {4}, 2}, rng);
  adam_step(p, p.zero_gradients(), 0.1);
  std::stringstream ss;
  write_params(ss, p);
  const std::string bytes = ss.str();
  CHECK(static_cast<unsigned char>(bytes[0]) == kParamFormatVersion);
  ParamSet q;
  read_params(ss, q);
  CHECK(q == p);

  std::string bad = bytes;
  bad[0] = static_cast<char>(kParamFormatVersion + 1);
  std::stringstream bs(bad);
  CHECK_THROWS_AS(read_params(bs, q), StartupError);

  const auto j = params_to_json(p);
  CHECK(params_from_json(j).values() == p.values());
}
