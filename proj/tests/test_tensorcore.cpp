// Copyright 2026 The loram-cpp Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "loram/adam.hpp"
#include "loram/autodiff.hpp"
#include "gradchecks.hpp"
#include "testing.hpp"

using namespace loram;
using loram::testing::gradcheck;
using loram::testing::project;
using loram::testing::random_matrix;

namespace {

MatrixD mat(std::initializer_list<std::initializer_list<double>> rows) {
  MatrixD m(static_cast<Index>(rows.size()), static_cast<Index>(rows.begin()->size()));
  Index i = 0;
  for (const auto& r : rows) {
    Index j = 0;
    for (double v : r) m(i, j++) = v;
    ++i;
  }
  return m;
}

constexpr int kSeeds = 20;

}  // namespace

TEST_CASE("matmul examples") {
  Tape<double> t;
  auto eye = t.leaf(MatrixD::Identity(2, 2));
  auto a = t.leaf(mat({{1, 2}, {3, 4}}));
  CHECK(exactly_equal(matmul(eye, a).value(), a.value()));
  auto row = t.leaf(mat({{1, 2}}));
  auto col = t.leaf(mat({{3}, {4}}));
  CHECK(matmul(row, col).value()(0, 0) == 11.0);
  CHECK_THROWS_AS(matmul(a, row), ShapeError);
}

TEST_CASE("matmul and matmul_nt gradients match central differences") {
  for (int s = 0; s < kSeeds; ++s) {
    auto r = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& x) { return project(matmul(x[0], x[1]), 100 + s); },
        {random_matrix(5, 7, 2 * s), random_matrix(7, 3, 2 * s + 1)});
    CHECK(r.max_rel_error <= 1e-5);
    auto r2 = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& x) { return project(matmul_nt(x[0], x[1]), 200 + s); },
        {random_matrix(5, 7, 3 * s), random_matrix(4, 7, 3 * s + 1)});
    CHECK(r2.max_rel_error <= 1e-5);
  }
}

TEST_CASE("hadamard") {
  Tape<double> t;
  auto a = t.leaf(mat({{1, 2}, {3, 4}}));
  auto m = t.leaf(mat({{1, 0}, {0, 1}}));
  CHECK(exactly_equal(hadamard(a, m).value(), mat({{1, 0}, {0, 4}})));
  auto ones = t.leaf(MatrixD::Ones(2, 2));
  CHECK(exactly_equal(hadamard(a, ones).value(), a.value()));
  CHECK_THROWS_AS(hadamard(a, t.leaf(MatrixD::Ones(2, 3))), ShapeError);

  // Elementwise loop oracle.
  auto x = t.leaf(random_matrix(4, 4, 7));
  auto xx = hadamard(x, x).value();
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) CHECK(xx(i, j) == x.value()(i, j) * x.value()(i, j));
  }

  for (int s = 0; s < kSeeds; ++s) {
    auto r = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& v) { return project(hadamard(v[0], v[1]), s); },
        {random_matrix(3, 5, 10 + s), random_matrix(3, 5, 50 + s)});
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("elementwise suite") {
  Tape<double> t;
  auto x = t.leaf(random_matrix(3, 4, 1));
  auto zero = add(x, scale(x, -1.0));
  CHECK(exactly_equal(zero.value(), MatrixD::Zero(3, 4)));
  CHECK(exactly_equal(sub(x, x).value(), MatrixD::Zero(3, 4)));
  CHECK(silu(t.leaf(MatrixD::Zero(1, 1))).value()(0, 0) == 0.0);

  // silu against its scalar definition.
  auto sx = silu(x).value();
  for (Index i = 0; i < sx.size(); ++i) {
    const double v = x.value().data()[i];
    CHECK(sx.data()[i] == doctest::Approx(v / (1 + std::exp(-v))).epsilon(1e-15));
  }

  // Only row broadcasting is accepted.
  CHECK_THROWS_AS(mul_broadcast_rows(x, t.leaf(MatrixD::Ones(3, 1))), ShapeError);
  CHECK_THROWS_AS(mul_broadcast_rows(x, t.leaf(MatrixD::Ones(1, 3))), ShapeError);
  CHECK_THROWS_AS(add(x, t.leaf(MatrixD::Ones(1, 4))), ShapeError);
  auto bx = mul_broadcast_rows(x, t.leaf(mat({{1, 2, 3, 4}}))).value();
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) CHECK(bx(i, j) == x.value()(i, j) * double(j + 1));
  }
}

TEST_CASE("silu gradient at 1.5") {
  MatrixD x(1, 1);
  x(0, 0) = 1.5;
  auto r = gradcheck([](Tape<double>&, const std::vector<Var<double>>& v) { return sum(silu(v[0])); }, {x});
  CHECK(r.max_rel_error <= 1e-5);
}

TEST_CASE("elementwise gradients over seeds") {
  for (int s = 0; s < kSeeds; ++s) {
    auto r = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& v) {
          auto y = add(silu(v[0]), scale(sub(v[0], v[1]), 0.7));
          return project(mul_broadcast_rows(y, v[2]), s);
        },
        {random_matrix(4, 6, s, -3, 3), random_matrix(4, 6, 100 + s), random_matrix(1, 6, 200 + s)});
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("rmsnorm") {
  Tape<double> t;
  auto ones = rmsnorm(t.leaf(MatrixD::Ones(1, 4)), t.leaf(MatrixD::Ones(1, 4)), 1e-12);
  for (Index j = 0; j < 4; ++j) CHECK(ones.value()(0, j) == doctest::Approx(1.0).epsilon(1e-12));
  auto zeros = rmsnorm(t.leaf(MatrixD::Zero(1, 4)), t.leaf(MatrixD::Ones(1, 4)), 1e-6);
  CHECK(exactly_equal(zeros.value(), MatrixD::Zero(1, 4)));
  CHECK_THROWS_AS(rmsnorm(t.leaf(MatrixD::Ones(2, 4)), t.leaf(MatrixD::Ones(1, 3)), 1e-6), ShapeError);

  // Scalar-loop oracle.
  const MatrixD x = random_matrix(3, 8, 11);
  const MatrixD g = random_matrix(1, 8, 12);
  auto y = rmsnorm(t.leaf(x), t.leaf(g), 1e-5).value();
  for (Index i = 0; i < 3; ++i) {
    double ms = 0;
    for (Index j = 0; j < 8; ++j) ms += x(i, j) * x(i, j);
    const double rms = std::sqrt(ms / 8 + 1e-5);
    for (Index j = 0; j < 8; ++j) {
      CHECK(y(i, j) == doctest::Approx(x(i, j) / rms * g(0, j)).epsilon(4 * std::numeric_limits<double>::epsilon()));
    }
  }

  for (int s = 0; s < kSeeds; ++s) {
    auto r = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& v) { return project(rmsnorm(v[0], v[1], 1e-5), s); },
        {random_matrix(3, 8, 300 + s), random_matrix(1, 8, 400 + s)});
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("cross entropy") {
  Tape<double> t;
  std::vector<std::int32_t> tgt = {3};
  auto uniform = cross_entropy(t.leaf(MatrixD::Zero(1, 256)), tgt);
  CHECK(uniform.value()(0, 0) == doctest::Approx(std::log(256.0)).epsilon(1e-14));

  MatrixD peaked = MatrixD::Zero(1, 256);
  peaked(0, 3) = 1000;
  CHECK(cross_entropy(t.leaf(peaked), tgt).value()(0, 0) == doctest::Approx(0.0));

  std::vector<std::int32_t> bad = {256};
  CHECK_THROWS_AS(cross_entropy(t.leaf(MatrixD::Zero(1, 256)), bad), ShapeError);
  CHECK_THROWS_AS(cross_entropy(t.leaf(MatrixD::Zero(2, 256)), tgt), ShapeError);

  // Direct softmax-log oracle without max subtraction (safe for small logits).
  const MatrixD logits = random_matrix(3, 7, 5, -2, 2);
  std::vector<std::int32_t> targets = {0, 6, 3};
  double expect = 0;
  for (Index i = 0; i < 3; ++i) {
    double z = 0;
    for (Index j = 0; j < 7; ++j) z += std::exp(logits(i, j));
    expect += -std::log(std::exp(logits(i, targets[i])) / z);
  }
  expect /= 3;
  CHECK(std::abs(cross_entropy(t.leaf(logits), targets).value()(0, 0) - expect) <= 1e-10);

  for (int s = 0; s < kSeeds; ++s) {
    std::vector<std::int32_t> tg = {s % 7, (s + 3) % 7, (2 * s + 1) % 7, 5};
    auto r = gradcheck(
        [&tg](Tape<double>&, const std::vector<Var<double>>& v) { return cross_entropy(v[0], tg); },
        {random_matrix(4, 7, 500 + s, -3, 3)});
    CHECK(r.max_rel_error <= 1e-5);
  }
}

TEST_CASE("embedding and causal attention gradients") {
  std::vector<std::int32_t> ids = {1, 4, 1, 0, 2, 4};
  for (int s = 0; s < kSeeds; ++s) {
    auto r = gradcheck(
        [&ids, s](Tape<double>&, const std::vector<Var<double>>& v) { return project(embedding(v[0], ids), s); },
        {random_matrix(5, 3, 600 + s)});
    CHECK(r.max_rel_error <= 1e-5);

    // two sequences of length 3, two heads of width 2
    auto ra = gradcheck(
        [s](Tape<double>&, const std::vector<Var<double>>& v) {
          return project(causal_attention(v[0], v[1], v[2], 2, 3), 700 + s);
        },
        {random_matrix(6, 4, 800 + s), random_matrix(6, 4, 900 + s), random_matrix(6, 4, 1000 + s)});
    CHECK(ra.max_rel_error <= 1e-5);
  }
  Tape<double> t;
  std::vector<std::int32_t> bad = {5};
  CHECK_THROWS_AS(embedding(t.leaf(MatrixD::Zero(5, 3)), bad), ShapeError);
}

TEST_CASE("causal attention matches a loop oracle") {
  const Index T = 4, H = 2, hd = 3;
  const MatrixD q = random_matrix(T, H * hd, 1), k = random_matrix(T, H * hd, 2), v = random_matrix(T, H * hd, 3);
  Tape<double> t;
  auto out = causal_attention(t.leaf(q), t.leaf(k), t.leaf(v), H, T).value();
  for (Index h = 0; h < H; ++h) {
    for (Index i = 0; i < T; ++i) {
      std::vector<double> w(static_cast<std::size_t>(i + 1));
      double z = 0;
      for (Index j = 0; j <= i; ++j) {
        double dot = 0;
        for (Index c = 0; c < hd; ++c) dot += q(i, h * hd + c) * k(j, h * hd + c);
        w[static_cast<std::size_t>(j)] = std::exp(dot / std::sqrt(double(hd)));
        z += w[static_cast<std::size_t>(j)];
      }
      for (Index c = 0; c < hd; ++c) {
        double acc = 0;
        for (Index j = 0; j <= i; ++j) acc += w[static_cast<std::size_t>(j)] / z * v(j, h * hd + c);
        CHECK(out(i, h * hd + c) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
  CHECK_THROWS_AS(causal_attention(t.leaf(q), t.leaf(k), t.leaf(v), 4, T), ShapeError);
}

TEST_CASE("backward") {
  {
    Tape<double> t;
    auto x = t.leaf(random_matrix(2, 2, 1), true);
    t.backward(sum(x));
    CHECK(exactly_equal(x.grad(), MatrixD::Ones(2, 2)));
    CHECK_THROWS_AS(t.backward(sum(x)), std::logic_error);
  }
  {
    Tape<double> t;
    auto x = t.leaf(random_matrix(2, 2, 2), true);
    auto loss = sum(hadamard(x, x));
    t.backward(loss);
    CHECK(exactly_equal(x.grad(), 2.0 * x.value()));
    CHECK_THROWS_AS(t.backward(loss), std::logic_error);
  }
  {
    Tape<double> t;
    auto x = t.leaf(random_matrix(2, 2, 3), true);
    CHECK_THROWS_AS(t.backward(x), ShapeError);
  }
}

TEST_CASE("tape replays each operation once in reverse order and accumulates additively") {
  Tape<double> t;
  std::vector<int> order;
  auto x = t.leaf(MatrixD::Ones(1, 1) * 3.0, true);
  auto tag = [&](const Var<double>& in, int id) {
    const auto iin = in.id();
    return t.record(in.value(), {in},
                    [&order, id, iin](Tape<double>& tp, const MatrixD& g) {
                      order.push_back(id);
                      tp.accumulate(iin, g);
                    },
                    "tag");
  };
  auto a = tag(x, 1);
  auto b = tag(a, 2);
  auto c = tag(b, 3);
  // x consumed by three operations: gradient is the sum of three contributions
  auto loss = add(add(c, x), scale(x, 2.0));
  t.backward(loss);
  CHECK(order == std::vector<int>{3, 2, 1});
  CHECK(x.grad()(0, 0) == 4.0);
  CHECK(t.visited() == 6);  // 2 adds, scale, 3 tags
}

TEST_CASE("checked mode raises on non-finite values") {
  Tape<double> checked;
  auto x = checked.leaf(MatrixD::Constant(1, 2, 1e300));
  CHECK_THROWS_AS(scale(x, 1e300), NumericalError);
  CHECK_THROWS_AS(checked.leaf(MatrixD::Constant(1, 1, std::nan(""))), NumericalError);

  Tape<double> unchecked(false);
  auto y = unchecked.leaf(MatrixD::Constant(1, 2, 1e300));
  CHECK_NOTHROW(scale(y, 1e300));
}

TEST_CASE("operations are deterministic") {
  auto run = [] {
    Tape<float> t;
    auto a = t.leaf(random_matrix<float>(9, 13, 4), true);
    auto b = t.leaf(random_matrix<float>(13, 6, 5), true);
    auto y = silu(matmul(a, b));
    t.backward(sum(y));
    return std::make_pair(MatrixF(y.value()), MatrixF(a.grad()));
  };
  auto r1 = run();
  auto r2 = run();
  CHECK(fingerprint(r1.first) == fingerprint(r2.first));
  CHECK(fingerprint(r1.second) == fingerprint(r2.second));
}

TEST_CASE("adam") {
  AdamConfig cfg;
  cfg.lr = 0.1;

  SUBCASE("zero gradient leaves parameters unchanged") {
    MatrixD p = random_matrix(3, 3, 1);
    const MatrixD before = p;
    AdamState<double> st;
    std::vector<MatrixD*> ps = {&p};
    std::vector<MatrixD> gs = {MatrixD::Zero(3, 3)};
    for (int i = 0; i < 5; ++i) adam_step<double>(ps, gs, st, cfg);
    CHECK(exactly_equal(p, before));
  }
  SUBCASE("first step moves by about lr") {
    MatrixD p = MatrixD::Zero(1, 1);
    AdamState<double> st;
    std::vector<MatrixD*> ps = {&p};
    std::vector<MatrixD> gs = {MatrixD::Ones(1, 1)};
    adam_step<double>(ps, gs, st, cfg);
    CHECK(p(0, 0) < 0);
    CHECK(std::abs(p(0, 0)) <= 0.1 * (1 + 1e-6));
    CHECK(p(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  }
  SUBCASE("ten steps on w^2 follow a scalar simulation and decrease f") {
    MatrixD p = MatrixD::Ones(1, 1);
    AdamState<double> st;
    std::vector<MatrixD*> ps = {&p};
    double w = 1, m = 0, v = 0;
    double prev = 1;
    for (int step = 1; step <= 10; ++step) {
      std::vector<MatrixD> gs = {2.0 * p};
      adam_step<double>(ps, gs, st, cfg);
      const double g = 2 * w;
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, step));
      const double vh = v / (1 - std::pow(0.999, step));
      w -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p(0, 0) == doctest::Approx(w).epsilon(1e-12));
      CHECK(p(0, 0) * p(0, 0) < prev);
      prev = p(0, 0) * p(0, 0);
    }
  }
  SUBCASE("shape mismatch") {
    MatrixD p = MatrixD::Zero(2, 2);
    AdamState<double> st;
    std::vector<MatrixD*> ps = {&p};
    std::vector<MatrixD> gs = {MatrixD::Zero(2, 3)};
    CHECK_THROWS_AS(adam_step<double>(ps, gs, st, cfg), ShapeError);
  }
}

TEST_CASE("every taped operation passes the gradient check over 20 seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    for (const auto& c : loram::testing::op_cases(seed)) {
      INFO(c.name << " seed " << seed);
      CHECK(gradcheck(c.fn, c.inputs).max_rel_error <= 1e-5);
    }
  }
}
