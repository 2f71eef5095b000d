#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfm/flow_transport.hpp"

using namespace tfm;
using tfm::testing::random_array;

TEST_CASE("interpolate hits both endpoints") {
  const Array x0 = random_array({2, 3}, 1), x1 = random_array({2, 3}, 2);
  CHECK(interpolate(x0, x1, 0.0).x_tau == x0);
  CHECK(interpolate(x0, x1, 1.0).x_tau == x1);
  const auto mid = interpolate(x0, x1, 0.5).x_tau;
  for (std::size_t i = 0; i < mid.size(); ++i) CHECK(mid[i] == doctest::Approx(0.5f * (x0[i] + x1[i])));
  CHECK_THROWS_AS(interpolate(x0, x1, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(interpolate(x0, x1, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(interpolate(x0, Array({3, 2}), 0.5), std::invalid_argument);
}

TEST_CASE("path derivative equals the true velocity") {
  const Array x0 = random_array({5}, 3), x1 = random_array({5}, 4);
  const Array u = true_velocity(x0, x1);
  const double h = 1e-2;
  const auto a = interpolate(x0, x1, 0.3).x_tau, b = interpolate(x0, x1, 0.3 + h).x_tau;
  for (std::size_t i = 0; i < u.size(); ++i) CHECK((b[i] - a[i]) / h == doctest::Approx(u[i]).epsilon(1e-3));
}

TEST_CASE("fm_loss is a mean square") {
  CHECK(fm_loss(Array({4}, 0.0f), Array({4}, 1.0f)) == 1.0);
  CHECK(fm_loss(Array({2}, std::vector<float>{1, 3}), Array({2}, std::vector<float>{0, 0})) == 5.0);
  Array bad({2}, 0.0f);
  bad[1] = std::nanf("");
  CHECK_THROWS(fm_loss(bad, Array({2})));
  CHECK_THROWS_AS(fm_loss(Array({2}), Array({3})), std::invalid_argument);
}

TEST_CASE("uniform FM steps stay in [0, 1) with the right mean") {
  Rng rng(42);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_fm_step(rng);
    REQUIRE(t >= 0.0);
    REQUIRE(t < 1.0);
    sum += t;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}
