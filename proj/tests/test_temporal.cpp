#include <doctest.h>

#include <cstring>

#include "ahstgnn/temporal.hpp"
#include "oracles.hpp"

using namespace ahst;

namespace {

GatedTcnParams make_tcn(Rng& rng, int64_t cin, int64_t cout, int64_t dilation, double lo = -0.8,
                        double hi = 0.8) {
  GatedTcnParams p;
  p.w_filter = oracle::rand_tensor(rng, {2, cin, cout}, lo, hi, true);
  p.b_filter = oracle::rand_tensor(rng, {cout}, -0.1, 0.1, true);
  p.w_gate = oracle::rand_tensor(rng, {2, cin, cout}, lo, hi, true);
  p.b_gate = oracle::rand_tensor(rng, {cout}, -0.1, 0.1, true);
  p.dilation = dilation;
  return p;
}

}  // namespace

TEST_SUITE("temporal") {

TEST_CASE("zero filter weights annihilate the output") {
  Rng rng(1);
  GatedTcnParams p = make_tcn(rng, 2, 3, 1);
  p.w_filter = Tensor::zeros({2, 2, 3}, true);
  p.b_filter = Tensor::zeros({3}, true);
  Tensor x = oracle::rand_tensor(rng, {1, 4, 2, 2}, -1, 1);
  Tape tape;
  Tensor y = gated_tcn(tape, x, p);
  for (double v : y.values()) CHECK(v == 0.0);  // tanh(0) kills the gate product
}

TEST_CASE("saturated gate passes the tanh branch through") {
  Rng rng(2);
  GatedTcnParams p = make_tcn(rng, 2, 3, 1);
  p.w_gate = Tensor::zeros({2, 2, 3}, true);
  p.b_gate = Tensor::full({3}, 40.0, true);
  Tensor x = oracle::rand_tensor(rng, {1, 4, 2, 2}, -1, 1);
  Tape tape;
  Tensor y = gated_tcn(tape, x, p);
  Tensor filt = tape.tanh(tape.add(tape.dilated_causal_conv1d(x, p.w_filter, 1), p.b_filter));
  CHECK(oracle::max_abs_diff(y.values(), filt.values()) <= 1e-12);
}

TEST_CASE("gated tcn gradient vs finite differences") {
  Rng rng(3);
  GatedTcnParams p = make_tcn(rng, 2, 2, 1);
  Tensor x = oracle::rand_tensor(rng, {1, 4, 3, 2}, -1, 1, true);
  auto check = oracle::finite_difference_check(
      {{"w1", p.w_filter}, {"b1", p.b_filter}, {"w2", p.w_gate}, {"b2", p.b_gate}, {"x", x}},
      [&](Tape& t) { return oracle::random_functional(t, gated_tcn(t, x, p), 31); });
  CAPTURE(check.worst);
  CHECK(check.max_rel_err <= 1e-4);
}

TEST_CASE("tcm zero inputs and zero biases give zero fusion") {
  Rng rng(4);
  TcmParams p;
  p.recently = make_tcn(rng, 1, 4, 1);
  p.daily = make_tcn(rng, 1, 4, 1);
  p.weekly = make_tcn(rng, 1, 4, 1);
  p.recently.b_filter = Tensor::zeros({4}, true);
  p.daily.b_filter = Tensor::zeros({4}, true);
  p.weekly.b_filter = Tensor::zeros({4}, true);
  p.w_mlp = oracle::rand_tensor(rng, {12, 4}, -1, 1, true);
  p.b_mlp = Tensor::zeros({4}, true);
  Tensor z = Tensor::zeros({2, 3, 2, 1});
  Tape tape;
  TcmOut out = tcm_forward(tape, z, z, z, p);
  for (double v : out.h_t.values()) CHECK(v == 0.0);
}

TEST_CASE("tcm output shape contract") {
  Rng rng(5);
  TcmParams p;
  p.recently = make_tcn(rng, 1, 8, 1);
  p.daily = make_tcn(rng, 1, 8, 1);
  p.weekly = make_tcn(rng, 1, 8, 1);
  p.w_mlp = oracle::rand_tensor(rng, {24, 8}, -1, 1, true);
  p.b_mlp = Tensor::zeros({8}, true);
  Tensor x = oracle::rand_tensor(rng, {2, 12, 5, 1}, -1, 1);
  Tape tape;
  TcmOut out = tcm_forward(tape, x, x, x, p);
  CHECK(out.h_t.shape() == Shape{2, 12, 5, 8});
  CHECK(out.h_r.shape() == Shape{2, 12, 5, 8});
}

TEST_CASE("selector MLP weights reproduce the recently branch") {
  // W_mlp = [I;0;0], zero bias: fusion returns ReLU(H_R'); force the tanh
  // branch positive so ReLU is the identity on it.
  Rng rng(6);
  const int64_t d = 3;
  TcmParams p;
  p.recently = make_tcn(rng, 1, d, 1);
  p.daily = make_tcn(rng, 1, d, 1);
  p.weekly = make_tcn(rng, 1, d, 1);
  p.recently.w_filter = Tensor::zeros({2, 1, d}, true);
  p.recently.b_filter = Tensor::full({d}, 1.0, true);  // tanh(1) > 0 everywhere
  std::vector<double> sel(static_cast<size_t>(3 * d * d), 0.0);
  for (int64_t i = 0; i < d; ++i) sel[static_cast<size_t>(i * d + i)] = 1.0;
  p.w_mlp = Tensor::from({3 * d, d}, std::move(sel), true);
  p.b_mlp = Tensor::zeros({d}, true);
  Tensor x = oracle::rand_tensor(rng, {1, 4, 2, 1}, -1, 1);
  Tape tape;
  TcmOut out = tcm_forward(tape, x, x, x, p);
  CHECK(oracle::max_abs_diff(out.h_t.values(), out.h_r.values()) <= 1e-12);
}

TEST_CASE("length preservation and causality across dilations") {
  Rng rng(7);
  for (int64_t dilation : {1, 2, 4}) {
    GatedTcnParams p = make_tcn(rng, 2, 2, dilation);
    Tensor x = oracle::rand_tensor(rng, {1, 6, 2, 2}, -1, 1);
    Tape tape(false);
    Tensor y0 = gated_tcn(tape, x, p);
    CHECK(y0.dim(1) == 6);
    Tensor x2 = x.clone();
    // perturb the last step; everything before stays bit-identical
    for (int64_t j = 0; j < 4; ++j) x2.values()[static_cast<size_t>(5 * 4 + j)] += 3.0;
    Tensor y1 = gated_tcn(tape, x2, p);
    CHECK(std::memcmp(y0.data(), y1.data(), sizeof(double) * 5 * 2 * 2) == 0);
  }
}

TEST_CASE("all tcm parameters receive nonzero gradients") {
  Rng rng(8);
  TcmParams p;
  p.recently = make_tcn(rng, 2, 4, 1);
  p.daily = make_tcn(rng, 2, 4, 1);
  p.weekly = make_tcn(rng, 2, 4, 1);
  p.w_mlp = oracle::rand_tensor(rng, {12, 4}, -1, 1, true);
  p.b_mlp = oracle::rand_tensor(rng, {4}, -0.1, 0.1, true);
  Tensor r = oracle::rand_tensor(rng, {2, 5, 3, 2}, -1, 1);
  Tensor d = oracle::rand_tensor(rng, {2, 5, 3, 2}, -1, 1);
  Tensor w = oracle::rand_tensor(rng, {2, 5, 3, 2}, -1, 1);
  Tape tape;
  TcmOut out = tcm_forward(tape, r, d, w, p);
  Tensor loss = oracle::random_functional(tape, out.h_t, 99);
  tape.backward(loss);
  auto grad_norm = [](const Tensor& t) {
    double s = 0.0;
    for (double g : t.grad()) s += g * g;
    return s;
  };
  for (const Tensor* t : {&p.recently.w_filter, &p.recently.b_filter, &p.recently.w_gate,
                          &p.recently.b_gate, &p.daily.w_filter, &p.weekly.w_filter, &p.w_mlp,
                          &p.b_mlp}) {
    REQUIRE(t->has_grad());
    CHECK(grad_norm(*t) > 0.0);
  }
}

}  // TEST_SUITE
