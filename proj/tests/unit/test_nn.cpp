// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "doctest.h"
#include "metauda/nn/layers.hpp"
#include "support/gradcheck.hpp"

using namespace metauda;
using namespace metauda::nn;
using ad::Tensor;
using metauda::testing::check_gradient;
using metauda::testing::random_tensor;

TEST_CASE("grl forward is the identity and backward flips and scales") {
  ParameterSet p;
  p.insert("x", Tensor::variable({2}, {1.5, -2.0}));
  Tensor y = grl_apply(p.at("x"), 0.1);
  CHECK(y[0] == 1.5);
  CHECK(y[1] == -2.0);

  // Upstream g = [1, -2] via a dot with constants.
  auto g = ad::grad(ad::dot(y, Tensor({2}, {1.0, -2.0})), p).at("x");
  CHECK(g[0] == doctest::Approx(-0.1).epsilon(1e-15));
  CHECK(g[1] == doctest::Approx(0.2).epsilon(1e-15));

  auto g0 = ad::grad(ad::dot(grl_apply(p.at("x"), 0.0), Tensor({2}, {1.0, -2.0})), p).at("x");
  CHECK(std::abs(g0[0]) == 0.0);
  CHECK(std::abs(g0[1]) == 0.0);

  CHECK_THROWS_AS(grl_apply(p.at("x"), -1.0), ad::ContractViolation);
}

TEST_CASE("ls_domain_loss examples") {
  const Tensor half = Tensor::zeros({1, 3, 3});  // sigmoid(0) = 0.5
  CHECK(ls_domain_loss(half, DomainLabel::kSource).item() == doctest::Approx(0.25));
  CHECK(ls_domain_loss(half, DomainLabel::kTarget).item() == doctest::Approx(0.25));
  CHECK(ls_domain_loss(Tensor::full({1, 2, 2}, 40.0), DomainLabel::kSource).item() < 1e-30);
  CHECK(ls_domain_loss(Tensor::full({1, 2, 2}, -40.0), DomainLabel::kTarget).item() < 1e-30);
  CHECK_THROWS_AS(ls_domain_loss(Tensor::zeros({0}), DomainLabel::kSource),
                  ad::ContractViolation);
}

TEST_CASE("ls_domain_loss stays in [0,1]") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor pred = random_tensor(rng, {1, 4, 4}, 30.0, 0.0);
    for (auto label : {DomainLabel::kSource, DomainLabel::kTarget}) {
      const double v = ls_domain_loss(pred, label).item();
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("softmax_ce examples") {
  CHECK(softmax_ce(Tensor({1, 2}, {2.0, 1.0}), {0}).item() ==
        doctest::Approx(0.31326168751822286).epsilon(1e-12));
  CHECK(softmax_ce(Tensor({3, 2}, {0, 0, 0, 0, 0, 0}), {0, 1, 1}).item() ==
        doctest::Approx(std::log(2.0)));
  CHECK(softmax_ce(Tensor({1, 3}, {60.0, 0.0, 0.0}), {0}).item() < 1e-25);
  CHECK_THROWS_AS(softmax_ce(Tensor({1, 2}, {0.0, 0.0}), {2}), ad::ContractViolation);
}

TEST_CASE("smooth_l1 examples") {
  CHECK(nn::smooth_l1(Tensor({2}, {1.0, 2.0}), Tensor({2}, {1.0, 2.0})).item() == 0.0);
  CHECK(nn::smooth_l1(Tensor::scalar(0.5), Tensor::scalar(0.0)).item() == 0.125);
  CHECK(nn::smooth_l1(Tensor::scalar(2.0), Tensor::scalar(0.0)).item() == 1.5);
  CHECK_THROWS_AS(nn::smooth_l1(Tensor::zeros({2}), Tensor::zeros({3})), ad::ContractViolation);
}

TEST_CASE("discriminator shapes") {
  std::mt19937_64 rng(3);
  auto image = build_discriminator(image_discriminator_spec(8, 1.0), {16, 8, 8}, "disc/img");
  auto pi = image.init(rng);
  CHECK(image.output_shape() == ad::Shape{1, 8, 8});
  CHECK(image.forward(pi, random_tensor(rng, {16, 8, 8}), {}).shape() == ad::Shape{1, 8, 8});
  CHECK(pi.contains("disc/img/1/weight"));
  CHECK(pi.at("disc/img/1/weight").shape() == ad::Shape{8, 16, 1, 1});
  CHECK(pi.at("disc/img/7/weight").shape() == ad::Shape{1, 8, 3, 3});

  auto inst = build_discriminator(instance_discriminator_spec(32, 0.5, 1.0), {1, 128}, "disc/ins");
  auto pn = inst.init(rng);
  for (std::size_t d : {1, 5, 16}) {
    CHECK(inst.forward(pn, random_tensor(rng, {d, 128}), {true, 9}).shape() ==
          ad::Shape{d, 1});
  }
  CHECK(pn.at("disc/ins/1/weight").shape() == ad::Shape{128, 32});
  CHECK(pn.at("disc/ins/4/weight").shape() == ad::Shape{32, 32});
  CHECK(pn.at("disc/ins/7/weight").shape() == ad::Shape{32, 1});

  CHECK_THROWS_AS(inst.forward(pn, Tensor::zeros({2, 64}), {}), ad::ContractViolation);
}

TEST_CASE("discriminator specs are validated") {
  CHECK_THROWS_AS(build_discriminator({LayerSpec::conv(1, 8)}, {4, 4, 4}, "d"),
                  ad::ContractViolation);
  CHECK_THROWS_AS(build_discriminator({}, {4, 4, 4}, "d"), ad::ContractViolation);
  // fc on a spatial map
  CHECK_THROWS_AS(build_discriminator({LayerSpec::grl(1), LayerSpec::fc(4)}, {4, 4, 4}, "d"),
                  ad::ContractViolation);
  // conv on rows
  CHECK_THROWS_AS(build_discriminator({LayerSpec::grl(1), LayerSpec::conv(3, 4)}, {2, 4}, "d"),
                  ad::ContractViolation);
  CHECK_THROWS_AS(Sequential({LayerSpec::pool(3)}, {1, 4, 4}, "p"), ad::ContractViolation);
  CHECK_THROWS_AS(Sequential({LayerSpec::dropout(0.0)}, {2, 2}, "p"), ad::ContractViolation);
  CHECK_THROWS_AS(Sequential({LayerSpec::conv(2, 1)}, {1, 4, 4}, "p"), ad::ContractViolation);
  CHECK_THROWS_AS(Sequential({LayerSpec::grl(-0.5)}, {2, 2}, "p"), ad::ContractViolation);
}

TEST_CASE("dropout is the identity in eval mode and unbiased in training mode") {
  Sequential net({LayerSpec::dropout(0.5)}, {1, 100000}, "drop");
  const Tensor x = Tensor::full({1, 100000}, 1.0);
  CHECK(net.forward({}, x, {false, 1}).same_values(x));

  const Tensor y = net.forward({}, x, {true, 1});
  double mean = 0.0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    mean += v;
    zeros += v == 0.0;
  }
  mean /= static_cast<double>(y.numel());
  CHECK(std::abs(mean - 1.0) < 0.02);
  CHECK(zeros > 0);

  // Same seed, same mask.
  CHECK(net.forward({}, x, {true, 1}).same_values(y));
  CHECK(!net.forward({}, x, {true, 2}).same_values(y));
}

TEST_CASE("grl end to end: input gradient is -lambda times the plain network's") {
  std::mt19937_64 rng(5);
  auto specs = image_discriminator_spec(4, 0.5);
  auto with = build_discriminator(specs, {3, 4, 4}, "d");
  std::vector<LayerSpec> plain_specs(specs.begin() + 1, specs.end());
  plain_specs.insert(plain_specs.begin(), LayerSpec::relu());  // keeps layer indices aligned
  Sequential plain(plain_specs, {3, 4, 4}, "d");

  ParameterSet params = with.init(rng);
  // Positive inputs so the leading relu of the plain stack is the identity.
  std::vector<double> xs(48);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  for (auto& v : xs) v = u(rng);

  auto input_grad = [&](const Sequential& net) {
    ParameterSet p = params;
    p.insert("x", Tensor::variable({3, 4, 4}, xs));
    Tensor loss = ls_domain_loss(net.forward(p, p.at("x"), {}), DomainLabel::kSource);
    return ad::grad(loss, p);
  };
  auto gw = input_grad(with);
  auto gp = input_grad(plain);
  const Tensor expected = ad::mul(gp.at("x"), -0.5);
  CHECK(gw.at("x").same_values(expected));
  // Discriminator parameters see the unreversed gradient.
  for (const auto& path : params.paths()) CHECK(gw.at(path).same_values(gp.at(path)));
}

TEST_CASE("discriminator gradients match finite differences") {
  std::mt19937_64 rng(8);
  auto image = build_discriminator(image_discriminator_spec(4, 1.0), {3, 4, 4}, "i");
  auto inst = build_discriminator(instance_discriminator_spec(6, 0.5, 1.0), {1, 5}, "n");
  ParameterSet p = image.init(rng);
  p.merge(inst.init(rng));
  p.insert("fi", random_tensor(rng, {3, 4, 4}));
  p.insert("fn", random_tensor(rng, {3, 5}));
  auto result = check_gradient(
      [&](const ParameterSet& q) {
        Tensor a = ls_domain_loss(image.forward(q, q.at("fi"), {}), DomainLabel::kSource);
        Tensor b = ls_domain_loss(inst.forward(q, q.at("fn"), {true, 4}), DomainLabel::kTarget);
        return ad::add(a, b);
      },
      p);
  // The GRL reverses what reaches the inputs; parameters see the true gradient.
  ad::Gradients analytic, numeric;
  for (const auto& [path, g] : result.analytic) {
    const bool input = path == "fi" || path == "fn";
    analytic[path] = input ? ad::neg(g) : g;
    numeric[path] = result.numeric.at(path);
  }
  CHECK(ad::relative_error(analytic, numeric) < 1e-4);
}
