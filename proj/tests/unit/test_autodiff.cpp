// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "metauda/autodiff/grad.hpp"
#include "metauda/autodiff/ops.hpp"
#include "support/gradcheck.hpp"
#include "support/primitive_cases.hpp"

using namespace metauda::ad;
using metauda::testing::check_gradient;
using metauda::testing::random_tensor;

namespace {

ParameterSet one(const std::string& path, Tensor t) {
  ParameterSet p;
  p.insert(path, std::move(t));
  return p;
}

}  // namespace

TEST_CASE("grad of x*x at 3 is 6") {
  auto p = one("x", Tensor::variable({}, {3.0}));
  const Tensor& x = p.at("x");
  auto g = grad(mul(x, x), p);
  CHECK(g.at("x").item() == 6.0);
}

TEST_CASE("relu subgradient is zero on the negative side") {
  auto p = one("x", Tensor::variable({2}, {-1.0, 2.0}));
  auto g = grad(sum(relu(p.at("x"))), p);
  CHECK(g.at("x")[0] == 0.0);
  CHECK(g.at("x")[1] == 1.0);

  auto z = one("x", Tensor::variable({1}, {0.0}));
  CHECK(grad(sum(relu(z.at("x"))), z).at("x")[0] == 0.0);
}

TEST_CASE("second derivative of x^3 at 2 is 12") {
  auto p = one("x", Tensor::variable({}, {2.0}));
  const Tensor& x = p.at("x");
  Tensor y = mul(mul(x, x), x);
  auto first = grad(y, p, /*create_record=*/true);
  CHECK(first.at("x").item() == doctest::Approx(12.0));
  CHECK(first.at("x").requires_grad());
  auto second = grad(first.at("x"), p);
  CHECK(second.at("x").item() == doctest::Approx(12.0).epsilon(1e-14));
}

TEST_CASE("unreachable parameters get zero gradient") {
  ParameterSet p;
  p.insert("a", Tensor::variable({2}, {1.0, 2.0}));
  p.insert("b", Tensor::variable({3}, {1.0, 2.0, 3.0}));
  auto g = grad(sum(p.at("a")), p);
  CHECK(g.at("b").shape() == Shape{3});
  for (double v : g.at("b").data()) CHECK(v == 0.0);
}

TEST_CASE("grad rejects a non-scalar loss") {
  auto p = one("x", Tensor::variable({2}, {1.0, 2.0}));
  CHECK_THROWS_AS(grad(p.at("x"), p), ContractViolation);
}

TEST_CASE("overflow during backward is reported with the offending op") {
  auto p = one("x", Tensor::variable({}, {1e-300}));
  Tensor y = mul(p.at("x"), 1e200);
  Tensor loss = mul(y, 1e200);
  try {
    grad(loss, p);
    FAIL("expected NumericFault");
  } catch (const NumericFault& fault) {
    CHECK(fault.op() == "scale");
  }
}

TEST_CASE("non-finite forward values are rejected") {
  Tensor big({1}, {1e300});
  CHECK_THROWS_AS(mul(big, 1e300), NumericFault);
}

TEST_CASE("finite differences: quadratic and sine") {
  ParameterSet p = one("t", Tensor({2}, {1.0, 2.0}));
  auto g = finite_diff_gradient(
      [](const ParameterSet& q) {
        double s = 0.0;
        for (double v : q.at("t").data()) s += 0.5 * v * v;
        return s;
      },
      p, 1e-5);
  CHECK(std::abs(g.at("t")[0] - 1.0) < 1e-8);
  CHECK(std::abs(g.at("t")[1] - 2.0) < 1e-8);

  ParameterSet z = one("t", Tensor({1}, {0.0}));
  auto gs = finite_diff_gradient(
      [](const ParameterSet& q) { return std::sin(q.at("t")[0]); }, z, 1e-5);
  CHECK(gs.at("t")[0] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("finite differences detect a nondeterministic loss") {
  ParameterSet p = one("t", Tensor({1}, {0.0}));
  int calls = 0;
  CHECK_THROWS_AS(finite_diff_gradient([&](const ParameterSet&) { return double(++calls); }, p,
                                       1e-5),
                  OracleInvalid);
  CHECK_THROWS_AS(finite_diff_gradient([](const ParameterSet&) { return 0.0; }, p, 0.0),
                  ContractViolation);
}

TEST_CASE("hessian-vector product of a diagonal quadratic") {
  auto p = one("t", Tensor::variable({2, 1}, {0.3, -0.7}));
  Tensor A({2, 2}, {2.0, 0.0, 0.0, 4.0});
  const Tensor& t = p.at("t");
  Tensor f = mul(sum(mul(t, matmul(A, t))), 0.5);
  Gradients v{{"t", Tensor({2, 1}, {1.0, 1.0})}};
  auto hv = hessian_vector_product(f, p, v);
  CHECK(hv.at("t")[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(hv.at("t")[1] == doctest::Approx(4.0).epsilon(1e-14));

  Gradients zero{{"t", Tensor::zeros({2, 1})}};
  auto h0 = hessian_vector_product(f, p, zero);
  CHECK(h0.at("t")[0] == 0.0);
  CHECK(h0.at("t")[1] == 0.0);
}

namespace {

// f(θ) = Σ c_i θ_i³ + ½ θᵀBθ + 0.1 Σ_ij B_ij θ_j² θ_i
Tensor cubic(const ParameterSet& p, const Tensor& c, const Tensor& B) {
  const Tensor& t = p.at("t");
  Tensor t3 = mul(mul(t, t), t);
  Tensor cubic_term = dot(c, t3);
  Tensor col = reshape(t, {5, 1});
  Tensor quad = mul(sum(mul(col, matmul(B, col))), 0.5);
  Tensor cross = sum(mul(matmul(B, mul(col, col)), col));
  return add(add(cubic_term, quad), mul(cross, 0.1));
}

}  // namespace

TEST_CASE("hessian-vector products agree with finite differences of the gradient") {
  std::mt19937_64 rng(7);
  Tensor c = random_tensor(rng, {5});
  Tensor B = random_tensor(rng, {5, 5});
  Tensor theta = random_tensor(rng, {5});

  auto grad_at = [&](const Tensor& at) {
    auto vars = one("t", at.as_variable());
    return grad(cubic(vars, c, B), vars).at("t");
  };

  // Full Hessian from e_i products, compared column by column.
  const double eps = 1e-6;
  for (std::size_t i = 0; i < 5; ++i) {
    std::vector<double> e(5, 0.0);
    e[i] = 1.0;
    auto vars = one("t", theta.as_variable());
    auto hv = hessian_vector_product(cubic(vars, c, B), vars, {{"t", Tensor({5}, e)}});

    std::vector<double> up(theta.data().begin(), theta.data().end()), down = up;
    up[i] += eps;
    down[i] -= eps;
    Tensor gu = grad_at(Tensor({5}, up));
    Tensor gd = grad_at(Tensor({5}, down));
    std::vector<double> fd(5);
    for (std::size_t j = 0; j < 5; ++j) fd[j] = (gu[j] - gd[j]) / (2 * eps);
    Gradients numeric{{"t", Tensor({5}, fd)}};
    CHECK(relative_error(hv, numeric) < 1e-3);
  }
}

TEST_CASE("linearity of grad") {
  std::mt19937_64 rng(11);
  ParameterSet p = one("x", random_tensor(rng, {3, 4}).as_variable());
  Tensor w = random_tensor(rng, {4, 2});
  auto f = [&](const ParameterSet& q) { return sum(sigmoid(matmul(q.at("x"), w))); };
  auto g = [&](const ParameterSet& q) { return mean(mul(q.at("x"), q.at("x"))); };
  const double a = 0.7, b = -1.3;
  auto combined = grad(add(mul(f(p), a), mul(g(p), b)), p).at("x");
  auto gf = grad(f(p), p).at("x");
  auto gg = grad(g(p), p).at("x");
  for (std::size_t i = 0; i < combined.numel(); ++i) {
    CHECK(std::abs(combined[i] - (a * gf[i] + b * gg[i])) < 1e-12);
  }
}

TEST_CASE("primitive gradients match finite differences") {
  for (const auto& c : metauda::testing::primitive_cases(3)) {
    CAPTURE(c.name);
    CHECK(metauda::testing::primitive_error(c) < 1e-4);
  }
}

TEST_CASE("second-order gradients of every primitive match finite differences") {
  // d/dθ <grad f(θ), v> against finite differences of the same scalar.
  std::mt19937_64 rng(5);
  Tensor w = random_tensor(rng, {2, 2, 3, 3});
  Tensor fc = random_tensor(rng, {8, 3});
  auto f = [&](const ParameterSet& p) {
    const Tensor& x = p.at("x");
    Tensor h = relu(conv2d(x, p.at("w"), 1));
    Tensor pooled = max_pool2d(h, 2);
    Tensor flat = reshape(pooled, {1, 8});
    Tensor logits = matmul(flat, p.at("fc"));
    Tensor s = sigmoid(logits);
    Tensor ce = softmax_cross_entropy(concat({logits, s}, 0), {1, 2});
    Tensor reg = smooth_l1(sum_to(broadcast_to(s, {2, 3}), {1, 3}), Tensor({1, 3}, {0.5, -2.0, 0.1}));
    return add(ce, reg);
  };
  ParameterSet at;
  at.insert("x", random_tensor(rng, {2, 4, 4}));
  at.insert("w", w);
  at.insert("fc", fc);
  Gradients v;
  for (const auto& [path, t] : at) v.emplace(path, random_tensor(rng, t.shape()));

  auto directional = [&](const ParameterSet& p) {
    ParameterSet vars = p.as_variables();
    auto g = grad(f(vars), vars, true);
    Tensor acc = Tensor::scalar(0.0);
    for (const auto& [path, gp] : g) acc = add(acc, dot(gp, v.at(path)));
    return acc;
  };
  auto r = check_gradient(directional, at);
  CHECK(r.relative_error < 1e-4);
}

TEST_CASE("replaying a forward is bitwise deterministic") {
  std::mt19937_64 rng(9);
  ParameterSet p;
  p.insert("x", random_tensor(rng, {1, 6, 6}));
  p.insert("w", random_tensor(rng, {2, 1, 3, 3}));
  auto run = [&]() {
    auto vars = p.as_variables();
    Tensor y = sum(sigmoid(conv2d(vars.at("x"), vars.at("w"), 1)));
    return std::make_pair(y.item(), grad(y, vars).at("w"));
  };
  auto [a, ga] = run();
  auto [b, gb] = run();
  CHECK(a == b);
  CHECK(ga.same_values(gb));
}

TEST_CASE("convolution and pooling match nested-loop references on 5x5 inputs") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor(rng, {2, 5, 5});
  Tensor w = random_tensor(rng, {3, 2, 3, 3});
  Tensor y = conv2d(x, w, 1);
  REQUIRE(y.shape() == Shape{3, 5, 5});
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) {
        double acc = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int yy = i + ky - 1, xx = j + kx - 1;
              if (yy < 0 || yy >= 5 || xx < 0 || xx >= 5) continue;
              acc += w[((o * 2 + c) * 3 + ky) * 3 + kx] * x[(c * 5 + yy) * 5 + xx];
            }
        CHECK(y[(o * 5 + i) * 5 + j] == doctest::Approx(acc).epsilon(1e-15));
      }

  Tensor z = random_tensor(rng, {2, 4, 4});
  Tensor pooled = max_pool2d(z, 2);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        double best = -1e300;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) best = std::max(best, z[(c * 4 + 2 * i + dy) * 4 + 2 * j + dx]);
        CHECK(pooled[(c * 2 + i) * 2 + j] == best);
      }
  CHECK_THROWS_AS(max_pool2d(x, 2), ContractViolation);
}

TEST_CASE("differentiation records are counted while any of their nodes live") {
  const int before = live_record_count();
  auto p = one("x", Tensor::variable({2}, {1.0, 2.0}));
  {
    Tensor y;
    {
      GradRecord record("outer");
      CHECK(live_record_count() == before + 1);
      y = sum(mul(p.at("x"), p.at("x")));
      CHECK(record.state().node_count == 2);
    }
    CHECK(live_record_count() == before + 1);
    auto g = grad(y, p);
    CHECK(g.at("x")[1] == 4.0);
  }
  CHECK(live_record_count() == before);
  {
    NoGradGuard off;
    GradRecord record("unused");
    Tensor y = sum(mul(p.at("x"), p.at("x")));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(live_record_count() == before);
}
