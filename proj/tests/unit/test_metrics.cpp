#include <cmath>
#include <limits>

#include "doctest.h"
#include "helpers.hpp"
#include "tfm/metrics.hpp"

using namespace tfm;
using tfm::testing::random_array;

TEST_CASE("mse") {
  CHECK(mse(Array({4}, 0.0f), Array({4}, 1.0f)) == 1.0);
  const Array a = random_array({2, 16, 16}, 1), b = random_array({2, 16, 16}, 2);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, b) == mse(b, a));
  CHECK_THROWS_AS(mse(a, Array({2, 16, 15})), std::invalid_argument);
}

TEST_CASE("nrmse") {
  Array b({4}, std::vector<float>{0, 0.25f, 0.5f, 1});
  Array a = b;
  for (auto& v : a) v += 0.125f;  // exact in binary
  CHECK(nrmse(a, b) == 0.125);
  CHECK(nrmse(b, b) == 0.0);

  // Homogeneous: scaling both inputs by a power of two leaves it unchanged.
  Array a4 = a, b4 = b;
  for (auto& v : a4) v *= 4;
  for (auto& v : b4) v *= 4;
  CHECK(nrmse(a4, b4) == nrmse(a, b));
  const Array r1 = random_array({64}, 3), r2 = random_array({64}, 4);
  Array s1 = r1, s2 = r2;
  for (auto& v : s1) v *= 3;
  for (auto& v : s2) v *= 3;
  CHECK(nrmse(s1, s2) == doctest::Approx(nrmse(r1, r2)).epsilon(1e-6));
  CHECK_THROWS_AS(nrmse(a, Array({4}, 0.3f)), std::invalid_argument);
}

TEST_CASE("psnr") {
  CHECK(psnr(Array({4}, 0.0f), Array({4}, 1.0f)) == 0.0);
  Array a({100}, 0.0f), b({100}, 0.0f);
  for (int i = 0; i < 100; ++i) a[static_cast<std::size_t>(i)] = i % 2 ? 0.1f : -0.1f;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-6));
  const double inf = psnr(b, b);
  CHECK(std::isinf(inf));
  CHECK(inf > 0);
  CHECK(psnr(Array({2}, 0.0f), Array({2}, 0.1f)) > psnr(Array({2}, 0.0f), Array({2}, 0.2f)));
}

TEST_CASE("ssim basics") {
  const Array a = random_array({3, 16, 16}, 7), b = random_array({3, 16, 16}, 8);
  CHECK(ssim(a, a) == 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-9));
  CHECK(ssim(a, b) < 1.0);
  CHECK(ssim(a, b) >= -1.0);
  CHECK_THROWS_AS(ssim(Array({1, 8, 16}), Array({1, 8, 16}, 1.0f)), std::invalid_argument);
}

TEST_CASE("ssim of a binary image against its inverse is negative") {
  Array a({1, 16, 16});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = static_cast<float>(((i % 16) / 4 + (i / 64)) % 2);
  Array inv = a;
  for (auto& v : inv) v = 1.0f - v;
  CHECK(ssim(a, inv) < 0.0);
}

TEST_CASE("ssim of two constant images follows the luminance term") {
  // Zero variance and covariance: ssim = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const double ma = 0.25, mb = 0.75, c1 = 1e-4;
  const double expected = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1);
  const double s = ssim(Array({2, 12, 12}, 0.25f), Array({2, 12, 12}, 0.75f));
  CHECK(s == doctest::Approx(expected).epsilon(1e-9));
  CHECK(s > 0.0);
  CHECK(s < 1.0);
}

TEST_CASE("3D ssim needs a deep enough volume") {
  SsimOptions opts;
  opts.mode = SsimMode::volume3d;
  const Array a = random_array({12, 12, 12}, 1), b = random_array({12, 12, 12}, 2);
  CHECK(ssim(a, b, opts) == doctest::Approx(ssim(b, a, opts)).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(Array({4, 12, 12}), Array({4, 12, 12}, 1.0f), opts), std::invalid_argument);
}

TEST_CASE("metrics report aggregates match per-sample values") {
  MetricsReport r;
  for (std::size_t i = 0; i < 5; ++i) {
    r.add("tfm", i, random_array({1, 12, 12}, 10 + i), random_array({1, 12, 12}, 20 + i));
    r.add("lci", i, random_array({1, 12, 12}, 30 + i), random_array({1, 12, 12}, 20 + i));
  }
  double sum = 0;
  for (const auto& s : r.samples) {
    if (s.method == "tfm") sum += s.mse;
  }
  CHECK(std::abs(r.aggregate("tfm", "mse").mean - sum / 5) <= 1e-12);
  CHECK(r.methods() == std::vector<std::string>{"tfm", "lci"});
  const auto csv = r.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  const auto j = r.to_json();
  CHECK(j["schema_version"] == 1);
  CHECK(j["samples"].size() == 10);

  // A flat reference has no NRMSE.
  CHECK_THROWS_AS(r.add("flat", 0, Array({1, 12, 12}, 0.2f), Array({1, 12, 12}, 0.2f)), std::invalid_argument);
}
