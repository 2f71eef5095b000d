#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "tfm/ode_integrator.hpp"

using namespace tfm;

namespace {

SolverConfig solver(SolverMethod m, int steps, Reduction r = Reduction::mean) { return {m, steps, r}; }

// dx/dtau = tau from x(0) = 0, so x(1) = 1/2.
double integrate_ramp(SolverMethod m, int steps) {
  Field<double> f = [](const Tensor<double>& x, double tau) { return Tensor<double>(x.shape(), tau); };
  return integrate<double>(f, Tensor<double>({1}, 0.0), solver(m, steps))[0];
}

}  // namespace

TEST_CASE("constant analytic field transports x0 to x1") {
  const Tensor<double> x0 = testing::random_array({3, 2, 4, 4}, 5).cast<double>();
  const Tensor<double> x1 = testing::random_array({3, 2, 4, 4}, 6).cast<double>();
  Tensor<double> u(x0.shape());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = x1[i] - x0[i];
  Field<double> f = [&](const Tensor<double>&, double) { return u; };
  for (auto m : {SolverMethod::euler, SolverMethod::rk4}) {
    for (int steps : {1, 10}) {
      const auto x = integrate<double>(f, x0, solver(m, steps));
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - x1[i]) <= 1e-6 * std::abs(x1[i]) + 1e-12);
    }
  }
}

TEST_CASE("euler error on a linear-in-time field is h / 2") {
  for (int steps : {1, 2, 4, 10, 100}) CHECK(0.5 - integrate_ramp(SolverMethod::euler, steps) == doctest::Approx(0.5 / steps));
  const double e10 = 0.5 - integrate_ramp(SolverMethod::euler, 10);
  const double e20 = 0.5 - integrate_ramp(SolverMethod::euler, 20);
  CHECK(e20 / e10 == doctest::Approx(0.5));
}

TEST_CASE("rk4 integrates polynomials up to cubic exactly") {
  CHECK(std::abs(integrate_ramp(SolverMethod::rk4, 1) - 0.5) <= 1e-10);
  CHECK(std::abs(integrate_ramp(SolverMethod::rk4, 7) - 0.5) <= 1e-10);
  Field<double> cubic = [](const Tensor<double>& x, double t) { return Tensor<double>(x.shape(), 4 * t * t * t); };
  CHECK(integrate<double>(cubic, Tensor<double>({1}), solver(SolverMethod::rk4, 3))[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("function evaluation counts") {
  int calls = 0;
  VelocityField f = [&](const Array& x, double) {
    ++calls;
    return Array(x.shape());
  };
  for (auto [m, steps] : {std::pair{SolverMethod::euler, 10}, std::pair{SolverMethod::rk4, 5}}) {
    calls = 0;
    const auto cfg = solver(m, steps);
    integrate<float>(f, Array({2}), cfg);
    CHECK(calls == cfg.function_evaluations());
  }
  CHECK(solver(SolverMethod::rk4, 5).function_evaluations() == 20);
}

TEST_CASE("zero field leaves the state unchanged") {
  const Array x0 = testing::random_array({2, 3}, 9);
  VelocityField zero = [](const Array& x, double) { return Array(x.shape()); };
  CHECK(integrate<float>(zero, x0, solver(SolverMethod::rk4, 4)) == x0);
}

TEST_CASE("solver rejects bad inputs") {
  VelocityField zero = [](const Array& x, double) { return Array(x.shape()); };
  CHECK_THROWS_AS(integrate<float>(zero, Array({2}), solver(SolverMethod::euler, 0)), std::invalid_argument);
  VelocityField wrong = [](const Array&, double) { return Array({3}); };
  CHECK_THROWS_AS(integrate<float>(wrong, Array({2}), solver(SolverMethod::euler, 1)), std::invalid_argument);
  VelocityField blowup = [](const Array& x, double) { return Array(x.shape(), INFINITY); };
  CHECK_THROWS_AS(integrate<float>(blowup, Array({2}), solver(SolverMethod::euler, 1)), std::runtime_error);
}

TEST_CASE("temporal reduction") {
  Array x({3, 2}, std::vector<float>{1, 2, 3, 4, 5, 9});
  CHECK(temporal_reduce(x, Reduction::mean) == Array({2}, std::vector<float>{3, 5}));
  CHECK(temporal_reduce(x, Reduction::last) == Array({2}, std::vector<float>{5, 9}));
  const Array vol = x.reshaped({3, 1, 1, 2});
  const Array batched = stack(std::span<const Array>(std::vector<Array>{vol, vol}));
  const Array last = temporal_reduce(batched, Reduction::last);
  CHECK(last.shape() == Shape{2, 1, 1, 2});
  CHECK(last[3] == 9.0f);
}

TEST_CASE("solver config json") {
  const SolverConfig c{SolverMethod::rk4, 25, Reduction::last};
  const auto back = SolverConfig::from_json(c.to_json());
  CHECK(back.method == c.method);
  CHECK(back.steps == 25);
  CHECK(back.reduction == Reduction::last);
  CHECK_THROWS_AS(SolverConfig::from_json({{"stpes", 3}}), std::invalid_argument);
  CHECK_THROWS_AS(parse_solver_method("heun"), std::invalid_argument);
}
