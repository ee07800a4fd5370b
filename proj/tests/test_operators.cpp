// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rim/operators.hpp"
#include "testutil.hpp"

using rim::LinearOperator;
using rim::Shape;
using rim::Tensor;
using testutil::dot;
using testutil::rand_tensor;

namespace {

double norm(const Tensor<double>& t) { return std::sqrt(dot(t, t)); }

// Spec-level adjoint probe: |<Ax,y> - <x,A^T y>| <= tol (|Ax||y| + |x||A^T y|).
void check_adjoint(const LinearOperator<double>& op, rim::Rng& rng, int trials = 100,
                   double tol = 1e-4) {
  for (int t = 0; t < trials; ++t) {
    auto x = rand_tensor<double>({1, 1, op.input_shape[1], op.input_shape[2]}, rng);
    auto y = rand_tensor<double>({1, 1, op.output_shape[1], op.output_shape[2]}, rng);
    auto ax = rim::apply_raw(op, x);
    auto aty = rim::adjoint_raw(op, y);
    const double lhs = dot(ax, y);
    const double rhs = dot(x, aty);
    CHECK(std::abs(lhs - rhs) <= tol * (norm(ax) * norm(y) + norm(x) * norm(aty)) + 1e-30);
  }
}

void check_linearity(const LinearOperator<double>& op, rim::Rng& rng) {
  auto x1 = rand_tensor<double>({1, 1, op.input_shape[1], op.input_shape[2]}, rng);
  auto x2 = rand_tensor<double>({1, 1, op.input_shape[1], op.input_shape[2]}, rng);
  const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
  auto combo = Tensor<double>::zeros(x1.shape);
  for (long i = 0; i < combo.size(); ++i) (*combo.data)[i] = a * (*x1.data)[i] + b * (*x2.data)[i];
  auto lhs = rim::apply_raw(op, combo);
  auto y1 = rim::apply_raw(op, x1);
  auto y2 = rim::apply_raw(op, x2);
  auto rhs = Tensor<double>::zeros(lhs.shape);
  for (long i = 0; i < rhs.size(); ++i) (*rhs.data)[i] = a * (*y1.data)[i] + b * (*y2.data)[i];
  double scalemax = 1e-12;
  for (long i = 0; i < lhs.size(); ++i) scalemax = std::max(scalemax, std::abs((*lhs.data)[i]));
  for (long i = 0; i < lhs.size(); ++i)
    CHECK(std::abs((*lhs.data)[i] - (*rhs.data)[i]) <= 1e-5 * std::max(1.0, scalemax));

  // A 0 = 0
  auto zero = Tensor<double>::zeros(x1.shape);
  auto az = rim::apply_raw(op, zero);
  for (long i = 0; i < az.size(); ++i) CHECK((*az.data)[i] == 0.0);
}

}  // namespace

TEST_CASE("identity operator") {
  rim::Rng rng(1);
  auto op = rim::make_identity<double>({1, 6, 5});
  CHECK(op.rows == op.d);
  auto x = rand_tensor<double>({2, 1, 6, 5}, rng);
  CHECK(testutil::max_abs_err(rim::apply_raw(op, x), x) == 0.0);
  auto y = rand_tensor<double>({1, 1, 6, 5}, rng);
  CHECK(testutil::max_abs_err(rim::adjoint_raw(op, y), y) == 0.0);
}

TEST_CASE("mask operator semantics") {
  rim::Rng rng(2);
  CHECK_THROWS_AS(rim::make_mask<double>({1, 4, 4}, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(rim::make_mask<double>({1, 4, 4}, 1.5, 1), std::invalid_argument);

  // d = 100, p = 0.2 keeps m = 20 coordinates
  auto op = rim::make_mask<double>({1, 10, 10}, 0.2, 42);
  CHECK(op.rows == 20);
  CHECK(op.output_shape == Shape{1, 20, 1});

  // adjoint(apply(x)) restores kept coordinates and zeroes the rest
  auto x = rand_tensor<double>({1, 1, 10, 10}, rng);
  auto back = rim::adjoint_raw(op, rim::apply_raw(op, x));
  std::vector<bool> kept(100, false);
  for (int i : op.keep) kept[static_cast<size_t>(i)] = true;
  for (long i = 0; i < 100; ++i)
    CHECK((*back.data)[i] == (kept[static_cast<size_t>(i)] ? (*x.data)[i] : 0.0));

  // p = 1 is the identity up to coordinate order
  auto full = rim::make_mask<double>({1, 4, 4}, 1.0, 7);
  CHECK(full.rows == 16);
  auto idx = full.keep;
  std::sort(idx.begin(), idx.end());
  for (int i = 0; i < 16; ++i) CHECK(idx[static_cast<size_t>(i)] == i);
  auto x2 = rand_tensor<double>({1, 1, 4, 4}, rng);
  CHECK(testutil::max_abs_err(rim::adjoint_raw(full, rim::apply_raw(full, x2)), x2) == 0.0);
}

TEST_CASE("mask applies the same coordinates to every channel") {
  // hand-built 2-pixel, 3-channel case
  auto op = rim::make_mask<double>({3, 1, 2}, 0.5, 5);
  REQUIRE(op.rows == 1);
  const int kept = op.keep[0];
  auto x = Tensor<double>::from({1, 3, 1, 2}, {10, 11, 20, 21, 30, 31});
  auto y = rim::apply_raw(op, x);
  REQUIRE(y.shape == Shape{1, 3, 1, 1});
  for (int c = 0; c < 3; ++c)
    CHECK((*y.data)[static_cast<size_t>(c)] == (*x.data)[static_cast<size_t>(c * 2 + kept)]);
}

TEST_CASE("gaussian ensemble statistics, determinism and adjoint") {
  // m*d = 25 * 400 = 1e4 entries
  auto op = rim::make_gaussian_ensemble<double>({1, 20, 20}, 25, 11);
  CHECK(op.output_shape == Shape{1, 25, 1});
  const double scale = 1.0 / std::sqrt(400.0);
  double mean = 0.0;
  for (double v : op.dense) mean += v / scale;
  mean /= static_cast<double>(op.dense.size());
  CHECK(std::abs(mean) < 4.0 / std::sqrt(1e4));

  auto op2 = rim::make_gaussian_ensemble<double>({1, 20, 20}, 25, 11);
  CHECK(op.dense == op2.dense);
  auto op3 = rim::make_gaussian_ensemble<double>({1, 20, 20}, 25, 12);
  CHECK(op.dense != op3.dense);

  rim::Rng rng(3);
  check_adjoint(op, rng, 20);
  check_linearity(op, rng);

  CHECK_THROWS_AS(rim::make_gaussian_ensemble<double>({1, 300, 300}, 1000, 1), std::invalid_argument);
}

TEST_CASE("bernoulli ensemble entries and balance") {
  auto op = rim::make_bernoulli_ensemble<double>({1, 20, 20}, 25, 19);
  const double scale = 1.0 / std::sqrt(400.0);
  long plus = 0;
  for (double v : op.dense) {
    const double u = v / scale;
    CHECK(std::abs(std::abs(u) - 1.0) < 1e-12);
    if (u > 0) ++plus;
  }
  const double frac = static_cast<double>(plus) / static_cast<double>(op.dense.size());
  CHECK(std::abs(frac - 0.5) < 4.0 / std::sqrt(1e4));

  rim::Rng rng(4);
  check_linearity(op, rng);
  check_adjoint(op, rng, 20);
}

TEST_CASE("fourier ensemble: unitarity at p = 1 and the DC pair") {
  const int h = 6, w = 6;  // d = 36
  auto op = rim::make_fourier_ensemble<double>({1, h, w}, 1.0, 23);
  CHECK(op.rows == 2 * 36);

  // A^T A = I for the full realified unitary DFT
  for (int j = 0; j < 36; ++j) {
    auto e = Tensor<double>::zeros({1, 1, h, w});
    (*e.data)[static_cast<size_t>(j)] = 1.0;
    auto round_trip = rim::adjoint_raw(op, rim::apply_raw(op, e));
    for (int k = 0; k < 36; ++k) {
      const double expect = (k == j) ? 1.0 : 0.0;
      CHECK(std::abs((*round_trip.data)[static_cast<size_t>(k)] - expect) < 1e-4);
    }
  }

  // constant signal: the pair at frequency zero reads (sqrt(d) * mean, 0)
  const double c = 0.37;
  auto x = Tensor<double>::full({1, 1, h, w}, c);
  auto y = rim::apply_raw(op, x);
  auto it = std::find(op.keep.begin(), op.keep.end(), 0);
  REQUIRE(it != op.keep.end());
  const long i = it - op.keep.begin();
  CHECK((*y.data)[static_cast<size_t>(2 * i)] == doctest::Approx(std::sqrt(36.0) * c).epsilon(1e-10));
  CHECK(std::abs((*y.data)[static_cast<size_t>(2 * i + 1)]) < 1e-12);

  CHECK_THROWS_AS(rim::make_fourier_ensemble<double>({1, 4, 4}, 0.0, 1), std::invalid_argument);

  rim::Rng rng(5);
  auto part = rim::make_fourier_ensemble<double>({1, 8, 8}, 0.4, 29);
  CHECK(part.rows == 2 * std::lround(0.4 * 64));
  check_adjoint(part, rng, 20);
  check_linearity(part, rng);
}

TEST_CASE("bicubic downsampling") {
  CHECK_THROWS_AS(rim::make_bicubic_downsample<double>({1, 35, 36}, 3), std::invalid_argument);
  CHECK_THROWS_AS(rim::make_bicubic_downsample<double>({1, 36, 36}, 5), std::invalid_argument);

  auto op = rim::make_bicubic_downsample<double>({1, 36, 36}, 3);
  CHECK(op.output_shape == Shape{1, 12, 12});

  // kernel rows are a partition of unity: constants map to constants
  const double c = 0.613;
  auto x = Tensor<double>::full({1, 1, 36, 36}, c);
  auto y = rim::apply_raw(op, x);
  for (long i = 0; i < y.size(); ++i) CHECK(std::abs((*y.data)[i] - c) < 1e-6);

  rim::Rng rng(6);
  for (int factor : {2, 3, 4}) {
    auto o = rim::make_bicubic_downsample<double>({1, 24, 24}, factor);
    check_adjoint(o, rng, 20);
    check_linearity(o, rng);
  }
}

TEST_CASE("adjoint identity holds for every kind, 100 probes each") {
  rim::Rng rng(7);
  std::vector<LinearOperator<double>> ops;
  ops.push_back(rim::make_identity<double>({1, 12, 12}));
  ops.push_back(rim::make_mask<double>({1, 12, 12}, 0.2, 31));
  ops.push_back(rim::make_mask<double>({1, 12, 12}, 0.5, 32));
  for (double p : {0.2, 0.4, 0.6}) {
    const long m = std::lround(p * 144);
    ops.push_back(rim::make_gaussian_ensemble<double>({1, 12, 12}, m, 33));
    ops.push_back(rim::make_bernoulli_ensemble<double>({1, 12, 12}, m, 34));
    ops.push_back(rim::make_fourier_ensemble<double>({1, 12, 12}, p, 35));
  }
  for (int f : {2, 3, 4}) ops.push_back(rim::make_bicubic_downsample<double>({1, 24, 24}, f));
  for (const auto& op : ops) check_adjoint(op, rng, 100);
}

TEST_CASE("operator tensor wrappers: shape checks and multi-channel batching") {
  rim::Rng rng(8);
  auto op = rim::make_mask<double>({3, 4, 4}, 0.5, 77);
  auto x = rand_tensor<double>({2, 3, 4, 4}, rng);
  auto y = rim::apply_raw(op, x);
  CHECK(y.shape == Shape{2, 3, 8, 1});
  // per-slice agreement
  for (int b = 0; b < 2; ++b)
    for (int ch = 0; ch < 3; ++ch)
      for (long i = 0; i < op.rows; ++i)
        CHECK((*y.data)[static_cast<size_t>((b * 3 + ch) * op.rows + i)] ==
              (*x.data)[static_cast<size_t>((b * 3 + ch) * 16 + op.keep[static_cast<size_t>(i)])]);

  auto bad = rand_tensor<double>({1, 1, 5, 5}, rng);
  CHECK_THROWS_AS(rim::apply_raw(op, bad), std::invalid_argument);
  CHECK_THROWS_AS(rim::adjoint_raw(op, bad), std::invalid_argument);
}

TEST_CASE("apply/adjoint graph nodes backpropagate through the operator") {
  rim::Rng rng(9);
  auto op = rim::make_gaussian_ensemble<double>({1, 5, 5}, 12, 3);
  auto x = rand_tensor<double>({1, 1, 5, 5}, rng);
  rim::Graph<double> g;
  g.track(x);
  auto y = rim::apply(g, op, x);
  auto probe = rand_tensor<double>(y.shape, rng);
  auto loss = rim::sum(g, rim::mul(g, y, probe));
  g.backward(loss);
  auto analytic = g.grad(x);
  auto fd = testutil::fd_grad(x, [&] {
    rim::Graph<double> gg;
    gg.set_recording(false);
    return dot(rim::apply(gg, op, x), probe);
  });
  CHECK(testutil::max_rel_err(analytic, fd) < 1e-6);

  // adjoint node: gradient flows via apply
  auto ym = rand_tensor<double>({1, 1, 12, 1}, rng);
  rim::Graph<double> g2;
  g2.track(ym);
  auto back = rim::adjoint(g2, op, ym);
  auto probe2 = rand_tensor<double>(back.shape, rng);
  g2.backward(rim::sum(g2, rim::mul(g2, back, probe2)));
  auto analytic2 = g2.grad(ym);
  auto fd2 = testutil::fd_grad(ym, [&] {
    rim::Graph<double> gg;
    gg.set_recording(false);
    return dot(rim::adjoint(gg, op, ym), probe2);
  });
  CHECK(testutil::max_rel_err(analytic2, fd2) < 1e-6);
}

TEST_CASE("descriptor round-trips rebuild identical operators") {
  auto op = rim::make_fourier_ensemble<float>({1, 8, 8}, 0.4, 123);
  auto re = rim::make_operator<float>(op.descriptor(), {1, 8, 8});
  CHECK(op.dense == re.dense);
  CHECK(op.keep == re.keep);

  auto mk = rim::make_mask<float>({1, 8, 8}, 0.3, 9);
  auto re2 = rim::make_operator<float>(mk.descriptor(), {1, 8, 8});
  CHECK(mk.keep == re2.keep);
}
