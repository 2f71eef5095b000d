#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "tfm/tensor.hpp"

namespace tfm {

double mse(const Array& a, const Array& b);

/// sqrt(mse) normalized by the intensity range of the reference `b`.
double nrmse(const Array& a, const Array& b);

/// 10 log10(peak^2 / mse); identical inputs give +infinity.
double psnr(const Array& a, const Array& b, double peak = 1.0);

enum class SsimMode { slice2d, volume3d };

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
  SsimMode mode = SsimMode::slice2d;
};

/// Gaussian-window SSIM over "valid" window positions. Inputs are [D, H, W]
/// (or [H, W]); slice2d averages per-slice 2D SSIM along D.
double ssim(const Array& a, const Array& b, const SsimOptions& opts = {});

struct SampleMetrics {
  std::string method;
  std::size_t index = 0;
  double mse = 0;
  double nrmse = 0;
  double psnr_db = 0;
  double ssim = 0;
};

struct Aggregate {
  double mean = 0;
  double stddev = 0;
};

struct MetricsReport {
  static constexpr int schema_version = 1;

  std::vector<SampleMetrics> samples;
  nlohmann::json provenance = nlohmann::json::object();

  void add(std::string method, std::size_t index, const Array& prediction, const Array& target,
           const SsimOptions& ssim_opts = {});

  std::vector<std::string> methods() const;
  /// Population statistics of one metric ("mse", "nrmse", "psnr_db", "ssim") for a method.
  Aggregate aggregate(const std::string& method, const std::string& metric) const;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& dir) const;
};

}  // namespace tfm
