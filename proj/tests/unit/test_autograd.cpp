#include <cmath>
#include <random>

#include "doctest.h"
#include "tfm/autograd.hpp"

using namespace tfm;
using namespace tfm::nn;

namespace {

using D = Tensor<double>;
using Op = std::function<Var<double>(Graph<double>&, std::vector<Var<double>>&)>;

D randn(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  D t(std::move(shape));
  for (auto& v : t) v = n(rng);
  return t;
}

// Scalar objective: mean square distance of the op output from fixed random targets.
double objective(const Op& op, std::vector<D> inputs, std::vector<D>* grads) {
  Graph<double> g(grads != nullptr);
  std::vector<Var<double>> vars;
  for (auto& in : inputs) vars.push_back(g.leaf(in));
  Var<double> y = op(g, vars);
  Var<double> loss = mse_loss(y, randn(y.shape(), 999));
  if (grads) {
    g.backward(loss);
    grads->clear();
    for (auto& v : vars) grads->push_back(g.has_grad(v.id) ? g.grad(v.id) : D(v.shape()));
  }
  return loss.value()[0];
}

void check_gradients(const Op& op, const std::vector<D>& inputs, double tol = 1e-6) {
  std::vector<D> analytic;
  objective(op, inputs, &analytic);
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (objective(op, plus, nullptr) - objective(op, minus, nullptr)) / (2 * h);
      const double an = analytic[k][i];
      INFO("input " << k << " element " << i);
      CHECK(std::abs(fd - an) <= tol * std::max(1.0, std::abs(fd)));
    }
  }
}

}  // namespace

TEST_CASE("conv3d gradients") {
  for (int k : {1, 3}) {
    check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return conv3d(v[0], v[1], v[2]); },
                    {randn({2, 2, 2, 3, 3}, 1), randn({3, 2, k, k, k}, 2), randn({3}, 3)});
  }
}

TEST_CASE("conv3d matches a direct loop") {
  const D x = randn({1, 2, 3, 4, 5}, 4), w = randn({2, 2, 3, 3, 3}, 5), b = randn({2}, 6);
  Graph<double> g(false);
  const D y = conv3d(g.constant(x), g.constant(w), g.constant(b)).value();
  auto at = [&](int c, int d, int h, int ww) -> double {
    if (d < 0 || d >= 3 || h < 0 || h >= 4 || ww < 0 || ww >= 5) return 0.0;
    return x[static_cast<std::size_t>(((c * 3 + d) * 4 + h) * 5 + ww)];
  };
  for (int o = 0; o < 2; ++o)
    for (int d = 0; d < 3; ++d)
      for (int h = 0; h < 4; ++h)
        for (int ww = 0; ww < 5; ++ww) {
          double ref = b[static_cast<std::size_t>(o)];
          for (int c = 0; c < 2; ++c)
            for (int kd = 0; kd < 3; ++kd)
              for (int kh = 0; kh < 3; ++kh)
                for (int kw = 0; kw < 3; ++kw)
                  ref += w[static_cast<std::size_t>((((o * 2 + c) * 3 + kd) * 3 + kh) * 3 + kw)] *
                         at(c, d + kd - 1, h + kh - 1, ww + kw - 1);
          CHECK(y[static_cast<std::size_t>(((o * 3 + d) * 4 + h) * 5 + ww)] == doctest::Approx(ref).epsilon(1e-12));
        }
}

TEST_CASE("normalization and activation gradients") {
  check_gradients(
      [](Graph<double>&, std::vector<Var<double>>& v) { return group_norm(v[0], v[1], v[2], 2); },
      {randn({2, 4, 1, 2, 3}, 7), randn({4}, 8), randn({4}, 9)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return silu(v[0]); }, {randn({3, 5}, 10)});
}

TEST_CASE("dense and broadcast gradients") {
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return linear(v[0], v[1], v[2]); },
                  {randn({3, 4}, 11), randn({2, 4}, 12), randn({2}, 13)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return add(v[0], v[1]); },
                  {randn({2, 3}, 14), randn({2, 3}, 15)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return add_channel_bias(v[0], v[1]); },
                  {randn({2, 3, 1, 2, 2}, 16), randn({2, 3}, 17)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return broadcast_spatial(v[0], 2, 1, 3); },
                  {randn({2, 3}, 18)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return concat_channels(v[0], v[1]); },
                  {randn({2, 1, 1, 2, 2}, 19), randn({2, 2, 1, 2, 2}, 20)});
}

TEST_CASE("resampling gradients") {
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return avg_pool2(v[0]); },
                  {randn({1, 2, 2, 4, 4}, 21)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return upsample_nearest2(v[0]); },
                  {randn({1, 2, 1, 2, 2}, 22)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return channel_mean(v[0]); },
                  {randn({2, 3, 1, 2, 2}, 23)});
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return reshape(v[0], {6, 2}); },
                  {randn({3, 4}, 24)});
}

TEST_CASE("attention gradients") {
  check_gradients([](Graph<double>&, std::vector<Var<double>>& v) { return attention(v[0], v[1], v[2]); },
                  {randn({2, 3, 5}, 25), randn({2, 4, 3}, 26), randn({2, 4, 3}, 27)});
}

TEST_CASE("attention rows are convex combinations of values") {
  Graph<double> g(false);
  D v({1, 2, 1}, std::vector<double>{2.0, 2.0});
  const D out = attention(g.constant(randn({1, 1, 3}, 28)), g.constant(randn({1, 2, 1}, 29)), g.constant(v)).value();
  for (double x : out) CHECK(x == doctest::Approx(2.0));
}

TEST_CASE("group norm output is normalized per group") {
  Graph<double> g(false);
  const D x = randn({1, 4, 2, 3, 3}, 30);
  const D y = group_norm(g.constant(x), g.constant(D({4}, 1.0)), g.constant(D({4})), 2).value();
  const std::size_t per_group = y.size() / 2;
  for (std::size_t grp = 0; grp < 2; ++grp) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < per_group; ++i) mean += y[grp * per_group + i];
    mean /= static_cast<double>(per_group);
    for (std::size_t i = 0; i < per_group; ++i) var += std::pow(y[grp * per_group + i] - mean, 2);
    var /= static_cast<double>(per_group);
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("constants receive no gradient and inference records no closures") {
  Graph<double> g(true);
  auto c = g.constant(D({2}, 1.0));
  auto l = g.leaf(D({2}, 2.0));
  auto loss = mse_loss(add(c, l), D({2}));
  g.backward(loss);
  CHECK_FALSE(g.has_grad(c.id));
  CHECK(g.grad(l.id)[0] == doctest::Approx(3.0));

  Graph<double> inference(false);
  auto y = silu(inference.leaf(D({2}, 1.0)));
  CHECK_FALSE(inference.requires_grad(y.id));
}

TEST_CASE("shape errors") {
  Graph<double> g(false);
  CHECK_THROWS_AS(add(g.constant(D({2})), g.constant(D({3}))), std::invalid_argument);
  CHECK_THROWS_AS(conv3d(g.constant(D({1, 2, 2, 2, 2})), g.constant(D({1, 3, 3, 3, 3})), g.constant(D({1}))),
                  std::invalid_argument);
  CHECK_THROWS_AS(avg_pool2(g.constant(D({1, 1, 3, 4, 4}))), std::invalid_argument);
}
