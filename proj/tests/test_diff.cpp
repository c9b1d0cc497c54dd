#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "civrec/diff.hpp"
#include "support/gradcheck.hpp"

using civrec::Rng;
using civrec::diff::AdamState;
using civrec::diff::Graph;
using civrec::diff::Tensor;

TEST_CASE("forward examples") {
  Graph g;
  CHECK(g.dot(Tensor::vec({1, 0}), Tensor::vec({3, 4})).item() == doctest::Approx(3.0));
  CHECK(g.sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5));

  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(g.matmul(a, b), doctest::Contains("shape mismatch"), std::runtime_error);
}

TEST_CASE("non-finite inputs are rejected") {
  Graph g;
  Tensor x = Tensor::vec({1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_WITH_AS(g.sum(x), doctest::Contains("non-finite"), std::runtime_error);
  Tensor y = Tensor::vec({std::nan(""), 0.0});
  CHECK_THROWS_AS(g.dot(y, y), std::runtime_error);
}

TEST_CASE("backward: quadratic and sigmoid") {
  {
    Graph g;
    Tensor w = Tensor::vec({1, 2}, true);
    g.backward(g.dot(w, w));
    CHECK(w.grad()[0] == doctest::Approx(2.0));
    CHECK(w.grad()[1] == doctest::Approx(4.0));
  }
  {
    Graph g;
    Tensor x = Tensor::vec({0.0}, true);
    g.backward(g.sum(g.sigmoid(x)));
    CHECK(x.grad()[0] == doctest::Approx(0.25));
  }
}

TEST_CASE("backward rejects non-scalar losses") {
  Graph g;
  Tensor x = Tensor::vec({1, 2}, true);
  const Tensor y = g.scale(x, 2.0);
  CHECK_THROWS_WITH_AS(g.backward(y), doctest::Contains("scalar"), std::runtime_error);
}

TEST_CASE("two consumers accumulate gradient sums") {
  Graph g;
  Tensor x = Tensor::vec({1, 2, 3}, true);
  const Tensor a = Tensor::vec({2, 2, 2});
  const Tensor b = Tensor::vec({5, 0, -1});
  const Tensor loss = g.add(g.sum(g.mul(x, a)), g.sum(g.mul(x, b)));
  g.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(7.0));
  CHECK(x.grad()[1] == doctest::Approx(2.0));
  CHECK(x.grad()[2] == doctest::Approx(1.0));
}

TEST_CASE("three-layer mlp gradients match finite differences") {
  Rng rng(7);
  Tensor w1 = Tensor::randn({4, 6}, rng, 0.7, true);
  Tensor w2 = Tensor::randn({6, 5}, rng, 0.7, true);
  Tensor w3 = Tensor::randn({5, 1}, rng, 0.7, true);
  Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
  const auto build = [&](Graph& g) {
    auto h = g.softplus(g.matmul(x, w1));
    h = g.sigmoid(g.matmul(h, w2));
    return g.sum(g.matmul(h, w3));
  };
  for (auto* p : {&w1, &w2, &w3, &x}) {
    const auto rep = testsupport::check_grads(*p, build);
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_CASE("every op kind passes a finite-difference check over seeds") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CHECK(testsupport::fd_check_all_ops(seed) < 1e-4);
  }
}

TEST_CASE("forward and backward are deterministic") {
  const auto run = [] {
    Rng rng(11);
    Tensor w = Tensor::randn({4, 4}, rng, 1.0, true);
    Tensor x = Tensor::randn({2, 4}, rng, 1.0, false);
    Graph g;
    const Tensor loss = g.mean(g.softplus(g.matmul(x, w)));
    g.backward(loss);
    std::vector<double> out(w.grad().begin(), w.grad().end());
    out.push_back(loss.item());
    return out;
  };
  CHECK(run() == run());
}

TEST_CASE("row_gather validates indices") {
  Graph g;
  const Tensor t = Tensor::zeros({3, 2});
  CHECK_THROWS_WITH_AS(g.row_gather(t, {3}), doctest::Contains("out of range"),
                       std::runtime_error);
}

TEST_CASE("clip passes gradient only inside the band") {
  Graph g;
  Tensor x = Tensor::vec({-3.0, 0.5, 3.0}, true);
  g.backward(g.sum(g.clip(x, -1.0, 1.0)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
  std::vector<Tensor> params{Tensor::vec({1.0, -2.0}, true).set_name("p")};
  params[0].grad_mut();  // populated, all zero
  AdamState adam(params);
  adam.step(params, 0.001);
  CHECK(params[0].values()[0] == doctest::Approx(1.0));
  CHECK(params[0].values()[1] == doctest::Approx(-2.0));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("adam: first step moves a unit-gradient scalar by about -lr") {
  std::vector<Tensor> params{Tensor::vec({0.0}, true).set_name("w")};
  params[0].grad_mut()[0] = 1.0;
  AdamState adam(params);
  adam.step(params, 0.001);
  // mhat = 1, vhat = 1 -> update = -lr / (1 + eps)
  CHECK(params[0].values()[0] == doctest::Approx(-0.001).epsilon(1e-6));
}

TEST_CASE("adam: two identical-gradient steps follow the scalar recurrences") {
  const double g0 = 0.7, lr = 0.01, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<Tensor> params{Tensor::vec({0.3}, true).set_name("w")};
  AdamState adam(params);

  double m = 0.0, v = 0.0, x = 0.3;
  for (int t = 1; t <= 2; ++t) {
    params[0].zero_grad();
    params[0].grad_mut()[0] = g0;
    adam.step(params, lr);
    m = b1 * m + (1 - b1) * g0;
    v = b2 * v + (1 - b2) * g0 * g0;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(params[0].values()[0] == doctest::Approx(x).epsilon(1e-12));
  }
  CHECK(adam.step_count() == 2);
}

TEST_CASE("adam: missing gradient is rejected by parameter name") {
  std::vector<Tensor> params{Tensor::vec({1.0}, true).set_name("embed.user")};
  AdamState adam(params);
  CHECK_THROWS_WITH_AS(adam.step(params, 0.1), doctest::Contains("embed.user"),
                       std::runtime_error);
}
