// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "rim/ops.hpp"
#include "rim/rng.hpp"
#include "testutil.hpp"

using rim::Graph;
using rim::Tensor;
using testutil::fd_grad;
using testutil::max_rel_err;
using testutil::rand_tensor;

namespace {

// Scalar functional used by gradient checks: <out, c> for fixed random c.
Tensor<double> fixed_probe(const rim::Shape& s, uint64_t seed) {
  rim::Rng rng(seed);
  return rand_tensor<double>(s, rng);
}

Tensor<double> probe_loss_grad(Graph<double>& g, const Tensor<double>& out, const Tensor<double>& probe,
                               const Tensor<double>& leaf) {
  auto weighted = rim::mul(g, out, probe);
  auto loss = rim::sum(g, weighted);
  g.backward(loss);
  return g.grad(leaf);
}

}  // namespace

TEST_CASE("elementwise closed-form values") {
  Graph<double> g;
  auto z = Tensor<double>::scalar(0.0);
  CHECK(rim::sigmoid(g, z).item() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(rim::tanh(g, z).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(rim::softplus(g, z).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  auto m3 = Tensor<double>::scalar(-3.0);
  auto p3 = Tensor<double>::scalar(3.0);
  CHECK(rim::relu(g, m3).item() == 0.0);
  CHECK(rim::relu(g, p3).item() == 3.0);
  auto p5 = Tensor<double>::scalar(5.0);
  CHECK(rim::softplus(g, p5).item() == doctest::Approx(5.0067153).epsilon(1e-7));
}

TEST_CASE("binary ops reject shape mismatch") {
  Graph<double> g;
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({3, 2});
  CHECK_THROWS_AS(rim::add(g, a, b), std::invalid_argument);
  CHECK_THROWS_AS(rim::mul(g, a, b), std::invalid_argument);
  CHECK_THROWS_AS(rim::mse(g, a, b), std::invalid_argument);
}

TEST_CASE("mse values and gradient") {
  Graph<double> g;
  rim::Rng rng(7);
  auto x = rand_tensor<double>({2, 3}, rng);
  CHECK(rim::mse(g, x, x).item() == 0.0);

  auto p = Tensor<double>::from({2}, {1.0, 1.0});
  auto t = Tensor<double>::from({2}, {0.0, 0.0});
  CHECK(rim::mse(g, p, t).item() == doctest::Approx(1.0).epsilon(1e-12));

  // analytic 2(pred-target)/N against finite differences
  auto pred = rand_tensor<double>({3, 4}, rng);
  auto target = rand_tensor<double>({3, 4}, rng);
  Graph<double> g2;
  g2.track(pred);
  auto loss = rim::mse(g2, pred, target);
  g2.backward(loss);
  auto analytic = g2.grad(pred);
  auto fd = fd_grad(pred, [&] {
    Graph<double> gg;
    return rim::mse(gg, pred, target).item();
  });
  CHECK(testutil::max_abs_err(analytic, fd) < 1e-6);
  for (long i = 0; i < pred.size(); ++i) {
    const double expect = 2.0 * ((*pred.data)[i] - (*target.data)[i]) / pred.size();
    CHECK((*analytic.data)[i] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("backward of sum is all-ones; accumulation over a 2-step chain") {
  rim::Rng rng(3);
  auto x = rand_tensor<double>({2, 2}, rng);
  Graph<double> g;
  g.track(x);
  auto loss = rim::sum(g, x);
  g.backward(loss);
  auto gr = g.grad(x);
  for (long i = 0; i < gr.size(); ++i) CHECK((*gr.data)[i] == 1.0);

  // p feeds both steps of an unrolled add chain: gradients sum over paths
  auto p = rand_tensor<double>({4}, rng);
  auto x0 = rand_tensor<double>({4}, rng);
  Graph<double> g2;
  g2.track(p);
  auto y1 = rim::add(g2, x0, p);
  auto y2 = rim::add(g2, y1, p);
  auto loss2 = rim::sum(g2, y2);
  g2.backward(loss2);
  auto gp = g2.grad(p);
  for (long i = 0; i < gp.size(); ++i) CHECK((*gp.data)[i] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("backward errors: non-scalar loss, detached tensor, double sweep") {
  Graph<double> g;
  rim::Rng rng(1);
  auto x = rand_tensor<double>({2, 2}, rng);
  g.track(x);
  auto y = rim::add(g, x, x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
  auto detached = Tensor<double>::scalar(1.0);
  CHECK_THROWS_AS(g.backward(detached), std::invalid_argument);
  auto loss = rim::sum(g, y);
  g.backward(loss);
  CHECK_THROWS_AS(g.backward(loss), std::invalid_argument);
  g.reset();
}

TEST_CASE("unary and scalar op gradients match finite differences") {
  rim::Rng rng(11);
  auto probe = fixed_probe({3, 5}, 99);

  auto check_unary = [&](auto op) {
    auto x = rand_tensor<double>({3, 5}, rng, -2.0, 2.0);
    Graph<double> g;
    g.track(x);
    auto analytic = probe_loss_grad(g, op(g, x), probe, x);
    auto fd = fd_grad(x, [&] {
      Graph<double> gg;
      gg.set_recording(false);
      return testutil::dot(op(gg, x), probe);
    });
    CHECK(max_rel_err(analytic, fd) < 1e-7);
  };

  check_unary([](Graph<double>& g, const Tensor<double>& x) { return rim::tanh(g, x); });
  check_unary([](Graph<double>& g, const Tensor<double>& x) { return rim::sigmoid(g, x); });
  check_unary([](Graph<double>& g, const Tensor<double>& x) { return rim::softplus(g, x); });
  check_unary([](Graph<double>& g, const Tensor<double>& x) { return rim::scale(g, x, 1.7); });
  check_unary([](Graph<double>& g, const Tensor<double>& x) { return rim::add_const(g, x, -0.3); });
  check_unary([](Graph<double>& g, const Tensor<double>& x) {
    return rim::recip(g, rim::add_const(g, rim::sigmoid(g, x), 0.5));
  });
}

TEST_CASE("scale_by routes gradient into both the tensor and the scalar") {
  rim::Rng rng(13);
  auto probe = fixed_probe({4, 4}, 5);
  auto x = rand_tensor<double>({4, 4}, rng);
  auto s = Tensor<double>::scalar(0.37);
  Graph<double> g;
  g.track(x);
  g.track(s);
  auto weighted = rim::mul(g, rim::scale_by(g, x, s), probe);
  auto loss = rim::sum(g, weighted);
  g.backward(loss);
  auto gx = g.grad(x);
  auto gs = g.grad(s);
  auto fdx = fd_grad(x, [&] {
    Graph<double> gg;
    gg.set_recording(false);
    return testutil::dot(rim::scale_by(gg, x, s), probe);
  });
  auto fds = fd_grad(s, [&] {
    Graph<double> gg;
    gg.set_recording(false);
    return testutil::dot(rim::scale_by(gg, x, s), probe);
  });
  CHECK(max_rel_err(gx, fdx) < 1e-7);
  CHECK(max_rel_err(gs, fds) < 1e-7);
}

TEST_CASE("conv2d: identity kernel reproduces the input") {
  rim::Rng rng(21);
  auto x = rand_tensor<double>({2, 1, 5, 7}, rng);
  auto w = Tensor<double>::zeros({1, 1, 3, 3});
  (*w.data)[4] = 1.0;  // center tap
  auto b = Tensor<double>::zeros({1});
  Graph<double> g;
  auto y = rim::conv2d(g, x, w, b, 1, 1);
  CHECK(y.shape == x.shape);
  CHECK(testutil::max_abs_err(y, x) == 0.0);
}

TEST_CASE("conv2d spatial contract: 32x32 stride 2 -> 16x16 and back") {
  rim::Rng rng(22);
  auto x = rand_tensor<double>({1, 1, 32, 32}, rng);
  auto w = rand_tensor<double>({4, 1, 3, 3}, rng);
  auto b = rand_tensor<double>({4}, rng);
  Graph<double> g;
  auto y = rim::conv2d(g, x, w, b, 2, 1);
  CHECK(y.shape == rim::Shape{1, 4, 16, 16});

  auto wt = rand_tensor<double>({4, 2, 3, 3}, rng);
  auto bt = rand_tensor<double>({2}, rng);
  auto up = rim::conv2d_transpose(g, y, wt, bt, 2);
  CHECK(up.shape == rim::Shape{1, 2, 32, 32});

  // odd sizes round-trip through the explicit target size
  auto x2 = rand_tensor<double>({1, 1, 9, 13}, rng);
  auto y2 = rim::conv2d(g, x2, w, b, 2, 1);
  CHECK(y2.shape == rim::Shape{1, 4, 5, 7});
  auto up2 = rim::conv2d_transpose(g, y2, wt, bt, 2, 9, 13);
  CHECK(up2.shape == rim::Shape{1, 2, 9, 13});
  CHECK_THROWS_AS(rim::conv2d_transpose(g, y2, wt, bt, 2, 64, 64), std::invalid_argument);
}

TEST_CASE("conv2d matches the direct-loop oracle") {
  rim::Rng rng(23);
  for (auto [stride, dil] : {std::pair{1, 1}, {2, 1}, {1, 2}, {1, 4}, {3, 1}}) {
    auto x = rand_tensor<double>({2, 3, 11, 9}, rng);
    auto w = rand_tensor<double>({4, 3, 3, 3}, rng);
    auto b = rand_tensor<double>({4}, rng);
    Graph<double> g;
    auto y = rim::conv2d(g, x, w, b, stride, dil);
    auto ref = testutil::naive_conv2d(x, w, b, stride, dil);
    REQUIRE(y.shape == ref.shape);
    CHECK(testutil::max_abs_err(y, ref) < 1e-12);
  }
}

TEST_CASE("conv2d rejects bad arguments") {
  Graph<double> g;
  auto x = Tensor<double>::zeros({1, 2, 8, 8});
  auto w = Tensor<double>::zeros({4, 3, 3, 3});
  auto b = Tensor<double>::zeros({4});
  CHECK_THROWS_AS(rim::conv2d(g, x, w, b, 1, 1), std::invalid_argument);  // channel mismatch
  auto w2 = Tensor<double>::zeros({4, 2, 3, 3});
  CHECK_THROWS_AS(rim::conv2d(g, x, w2, b, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(rim::conv2d(g, x, w2, b, 1, 0), std::invalid_argument);
}

TEST_CASE("conv2d / conv2d_transpose adjoint identity on 100 random trials") {
  rim::Rng rng(31);
  auto none = Tensor<double>::zeros({0});
  for (int trial = 0; trial < 100; ++trial) {
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int h = 6 + static_cast<int>(rng.below(6));
    const int w = 6 + static_cast<int>(rng.below(6));
    auto x = rand_tensor<double>({1, 2, h, w}, rng);
    auto wt = rand_tensor<double>({3, 2, 3, 3}, rng);
    Graph<double> g;
    g.set_recording(false);
    auto ax = rim::conv2d(g, x, wt, none, stride, 1);
    auto u = rand_tensor<double>(ax.shape, rng);
    auto atu = rim::conv2d_transpose(g, u, wt, none, stride, h, w);
    const double lhs = testutil::dot(ax, u);
    const double rhs = testutil::dot(x, atu);
    CHECK(testutil::rel_err(lhs, rhs) < 1e-5);
  }
}

TEST_CASE("conv2d and conv2d_transpose gradients match finite differences") {
  rim::Rng rng(41);
  auto x = rand_tensor<double>({1, 2, 6, 5}, rng);
  auto w = rand_tensor<double>({3, 2, 3, 3}, rng);
  auto b = rand_tensor<double>({3}, rng);

  for (int stride : {1, 2}) {
    Graph<double> g;
    g.track(x);
    g.track(w);
    g.track(b);
    auto out = rim::conv2d(g, x, w, b, stride, 1);
    auto probe = fixed_probe(out.shape, 77);
    auto loss = rim::sum(g, rim::mul(g, out, probe));
    g.backward(loss);
    auto eval = [&] {
      Graph<double> gg;
      gg.set_recording(false);
      return testutil::dot(rim::conv2d(gg, x, w, b, stride, 1), probe);
    };
    CHECK(max_rel_err(g.grad(x), fd_grad(x, eval)) < 1e-4);
    CHECK(max_rel_err(g.grad(w), fd_grad(w, eval)) < 1e-4);
    CHECK(max_rel_err(g.grad(b), fd_grad(b, eval)) < 1e-4);
  }

  // transpose path
  auto u = rand_tensor<double>({1, 3, 3, 3}, rng);
  Graph<double> g;
  g.track(u);
  g.track(w);
  g.track(b);
  auto bt = rand_tensor<double>({2}, rng);
  g.track(bt);
  auto out = rim::conv2d_transpose(g, u, w, bt, 2, 6, 5);
  auto probe = fixed_probe(out.shape, 78);
  auto loss = rim::sum(g, rim::mul(g, out, probe));
  g.backward(loss);
  auto eval = [&] {
    Graph<double> gg;
    gg.set_recording(false);
    return testutil::dot(rim::conv2d_transpose(gg, u, w, bt, 2, 6, 5), probe);
  };
  CHECK(max_rel_err(g.grad(u), fd_grad(u, eval)) < 1e-4);
  CHECK(max_rel_err(g.grad(w), fd_grad(w, eval)) < 1e-4);
  CHECK(max_rel_err(g.grad(bt), fd_grad(bt, eval)) < 1e-4);
}

namespace {

rim::GruParams<double> random_gru(int feat, int state, rim::Rng& rng, double lo = -0.3, double hi = 0.3) {
  rim::GruParams<double> p;
  const rim::Shape ws{state, feat + state, 3, 3};
  p.w_update = rand_tensor<double>(ws, rng, lo, hi);
  p.w_reset = rand_tensor<double>(ws, rng, lo, hi);
  p.w_cand = rand_tensor<double>(ws, rng, lo, hi);
  p.b_update = rand_tensor<double>({state}, rng, lo, hi);
  p.b_reset = rand_tensor<double>({state}, rng, lo, hi);
  p.b_cand = rand_tensor<double>({state}, rng, lo, hi);
  return p;
}

}  // namespace

TEST_CASE("gru gate saturation limits") {
  rim::Rng rng(51);
  auto f = rand_tensor<double>({1, 2, 4, 4}, rng);
  auto s = rand_tensor<double>({1, 3, 4, 4}, rng, -0.9, 0.9);
  auto p = random_gru(2, 3, rng);

  // update gate pinned at 1: new state equals the candidate activation
  auto p1 = p;
  p1.b_update = Tensor<double>::full({3}, 60.0);
  Graph<double> g;
  auto s1 = rim::gru_step(g, f, s, p1);
  auto joint = rim::concat_channels(g, f, s);
  auto r = rim::sigmoid(g, rim::conv2d(g, joint, p1.w_reset, p1.b_reset, 1, 1));
  auto cand = rim::tanh(
      g, rim::conv2d(g, rim::concat_channels(g, f, rim::mul(g, r, s)), p1.w_cand, p1.b_cand, 1, 1));
  CHECK(testutil::max_abs_err(s1, cand) < 1e-12);

  // update gate pinned at 0: new state equals the old state
  auto p0 = p;
  p0.b_update = Tensor<double>::full({3}, -60.0);
  auto s0 = rim::gru_step(g, f, s, p0);
  CHECK(testutil::max_abs_err(s0, s) < 1e-12);

  CHECK_THROWS_AS(rim::gru_step(g, f, rand_tensor<double>({1, 3, 5, 5}, rng), p), std::invalid_argument);
}

TEST_CASE("gru state stays in (-1, 1) and BPTT over 3 steps matches finite differences") {
  rim::Rng rng(52);
  auto p = random_gru(1, 2, rng);
  auto s0 = Tensor<double>::zeros({1, 2, 3, 3});
  std::vector<Tensor<double>> feats;
  for (int t = 0; t < 3; ++t) feats.push_back(rand_tensor<double>({1, 1, 3, 3}, rng));
  auto probe = fixed_probe({1, 2, 3, 3}, 9);

  auto run = [&](Graph<double>& g) {
    auto s = s0;
    for (int t = 0; t < 3; ++t) s = rim::gru_step(g, feats[static_cast<size_t>(t)], s, p);
    return s;
  };

  {
    Graph<double> g;
    g.set_recording(false);
    auto s = run(g);
    for (long i = 0; i < s.size(); ++i) {
      CHECK((*s.data)[i] > -1.0);
      CHECK((*s.data)[i] < 1.0);
    }
  }

  Graph<double> g;
  for (auto* t : {&p.w_update, &p.w_reset, &p.w_cand, &p.b_update, &p.b_reset, &p.b_cand}) g.track(*t);
  auto sT = run(g);
  auto loss = rim::sum(g, rim::mul(g, sT, probe));
  g.backward(loss);
  auto eval = [&] {
    Graph<double> gg;
    gg.set_recording(false);
    return testutil::dot(run(gg), probe);
  };
  for (auto* t : {&p.w_update, &p.w_reset, &p.w_cand, &p.b_update, &p.b_reset, &p.b_cand})
    CHECK(max_rel_err(g.grad(*t), fd_grad(*t, eval)) < 1e-4);
}

TEST_CASE("loop-built and hand-flattened graphs give identical gradients") {
  rim::Rng rng(61);
  auto x = rand_tensor<double>({4}, rng);
  auto a = rand_tensor<double>({4}, rng);

  Graph<double> g1;
  g1.track(a);
  auto y = x;
  for (int t = 0; t < 3; ++t) y = rim::tanh(g1, rim::mul(g1, y, a));
  g1.backward(rim::sum(g1, y));
  auto grad_loop = g1.grad(a);

  a.node = -1;
  Graph<double> g2;
  g2.track(a);
  auto y2 = rim::tanh(g2, rim::mul(g2, rim::tanh(g2, rim::mul(g2, rim::tanh(g2, rim::mul(g2, x, a)), a)), a));
  g2.backward(rim::sum(g2, y2));
  auto grad_flat = g2.grad(a);

  CHECK(max_rel_err(grad_loop, grad_flat) < 1e-10);
}

TEST_CASE("forward determinism is bitwise") {
  rim::Rng rng(71);
  auto x = rand_tensor<double>({2, 3, 8, 8}, rng);
  auto w = rand_tensor<double>({4, 3, 3, 3}, rng);
  auto b = rand_tensor<double>({4}, rng);
  Graph<double> g;
  auto y1 = rim::tanh(g, rim::conv2d(g, x, w, b, 2, 1));
  auto y2 = rim::tanh(g, rim::conv2d(g, x, w, b, 2, 1));
  REQUIRE(y1.size() == y2.size());
  CHECK(std::memcmp(y1.ptr(), y2.ptr(), sizeof(double) * static_cast<size_t>(y1.size())) == 0);
  CHECK(y1.all_finite());
}
