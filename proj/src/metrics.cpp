#include "tfm/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace tfm {

namespace {

void require_nonempty(const Array& a, const char* what) {
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

// Normalized 1D Gaussian taps; the window is separable.
std::vector<double> gaussian_taps(int window, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(window));
  const double c = (window - 1) / 2.0;
  double sum = 0;
  for (int i = 0; i < window; ++i) {
    taps[static_cast<std::size_t>(i)] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    sum += taps[static_cast<std::size_t>(i)];
  }
  for (auto& t : taps) t /= sum;
  return taps;
}

// Valid-mode separable filtering along one axis of a dense row-major grid.
std::vector<double> filter_axis(const std::vector<double>& in, const std::vector<std::int64_t>& extent, int axis,
                                const std::vector<double>& taps) {
  std::vector<std::int64_t> out_extent = extent;
  const auto k = static_cast<std::int64_t>(taps.size());
  out_extent[static_cast<std::size_t>(axis)] -= k - 1;
  std::int64_t inner = 1, outer = 1;
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < extent.size(); ++i) inner *= extent[i];
  for (int i = 0; i < axis; ++i) outer *= extent[static_cast<std::size_t>(i)];
  const std::int64_t n_in = extent[static_cast<std::size_t>(axis)];
  const std::int64_t n_out = out_extent[static_cast<std::size_t>(axis)];
  std::vector<double> out(static_cast<std::size_t>(outer * n_out * inner), 0.0);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t j = 0; j < n_out; ++j) {
      double* dst = &out[static_cast<std::size_t>((o * n_out + j) * inner)];
      for (std::int64_t t = 0; t < k; ++t) {
        const double* src = &in[static_cast<std::size_t>((o * n_in + j + t) * inner)];
        const double w = taps[static_cast<std::size_t>(t)];
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += w * src[i];
      }
    }
  }
  return out;
}

std::vector<double> gaussian_filter(std::vector<double> v, const std::vector<std::int64_t>& extent,
                                    const std::vector<double>& taps) {
  std::vector<std::int64_t> cur = extent;
  for (int axis = 0; axis < static_cast<int>(extent.size()); ++axis) {
    v = filter_axis(v, cur, axis, taps);
    cur[static_cast<std::size_t>(axis)] -= static_cast<std::int64_t>(taps.size()) - 1;
  }
  return v;
}

double ssim_block(const float* a, const float* b, const std::vector<std::int64_t>& extent, const SsimOptions& o,
                  const std::vector<double>& taps) {
  std::size_t n = 1;
  for (auto e : extent) n *= static_cast<std::size_t>(e);
  std::vector<double> xa(a, a + n), xb(b, b + n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = xa[i] * xa[i];
    bb[i] = xb[i] * xb[i];
    ab[i] = xa[i] * xb[i];
  }
  const auto mu_a = gaussian_filter(std::move(xa), extent, taps);
  const auto mu_b = gaussian_filter(std::move(xb), extent, taps);
  const auto m_aa = gaussian_filter(std::move(aa), extent, taps);
  const auto m_bb = gaussian_filter(std::move(bb), extent, taps);
  const auto m_ab = gaussian_filter(std::move(ab), extent, taps);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  double sum = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double va = m_aa[i] - mu_a[i] * mu_a[i];
    const double vb = m_bb[i] - mu_b[i] * mu_b[i];
    const double cov = m_ab[i] - mu_a[i] * mu_b[i];
    const double num = (2 * mu_a[i] * mu_b[i] + c1) * (2 * cov + c2);
    const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
    sum += num / den;
  }
  return sum / static_cast<double>(mu_a.size());
}

bool bitwise_equal(const Array& a, const Array& b) {
  return std::equal(a.begin(), a.end(), b.begin());
}

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::json json_number(double v) {
  // JSON has no infinity; the PSNR sentinel travels as a string.
  if (!std::isfinite(v)) return fmt(v);
  return v;
}

double metric_of(const SampleMetrics& s, const std::string& metric) {
  if (metric == "mse") return s.mse;
  if (metric == "nrmse") return s.nrmse;
  if (metric == "psnr_db") return s.psnr_db;
  if (metric == "ssim") return s.ssim;
  throw std::invalid_argument("unknown metric '" + metric + "'");
}

}  // namespace

double mse(const Array& a, const Array& b) {
  require_same_shape(a.shape(), b.shape(), "mse");
  require_nonempty(a, "mse");
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

double nrmse(const Array& a, const Array& b) {
  require_same_shape(a.shape(), b.shape(), "nrmse");
  require_nonempty(b, "nrmse");
  const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
  const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
  if (!(range > 0)) throw std::invalid_argument("nrmse: reference has zero intensity range");
  return std::sqrt(mse(a, b)) / range;
}

double psnr(const Array& a, const Array& b, double peak) {
  const double m = mse(a, b);
  if (m == 0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

double ssim(const Array& a, const Array& b, const SsimOptions& opts) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  if (opts.window < 1 || opts.sigma <= 0) throw std::invalid_argument("ssim: bad window options");
  if (a.rank() != 2 && a.rank() != 3) throw std::invalid_argument("ssim: expected [H, W] or [D, H, W]");
  if (bitwise_equal(a, b)) return 1.0;

  const Shape& s = a.shape();
  const std::int64_t depth = a.rank() == 3 ? s[0] : 1;
  const std::int64_t h = s[s.size() - 2], w = s[s.size() - 1];
  const bool volumetric = opts.mode == SsimMode::volume3d && a.rank() == 3;
  if (h < opts.window || w < opts.window || (volumetric && depth < opts.window)) {
    throw std::invalid_argument("ssim: spatial extent " + shape_string(s) + " smaller than window " +
                                std::to_string(opts.window));
  }
  const auto taps = gaussian_taps(opts.window, opts.sigma);
  if (volumetric) return ssim_block(a.data(), b.data(), {depth, h, w}, opts, taps);
  double sum = 0;
  for (std::int64_t d = 0; d < depth; ++d) {
    const std::size_t off = static_cast<std::size_t>(d * h * w);
    sum += ssim_block(a.data() + off, b.data() + off, {h, w}, opts, taps);
  }
  return sum / static_cast<double>(depth);
}

void MetricsReport::add(std::string method, std::size_t index, const Array& prediction, const Array& target,
                        const SsimOptions& ssim_opts) {
  SampleMetrics m;
  m.method = std::move(method);
  m.index = index;
  m.mse = tfm::mse(prediction, target);
  m.nrmse = tfm::nrmse(prediction, target);
  m.psnr_db = tfm::psnr(prediction, target);
  m.ssim = tfm::ssim(prediction, target, ssim_opts);
  samples.push_back(std::move(m));
}

std::vector<std::string> MetricsReport::methods() const {
  std::vector<std::string> out;
  for (const auto& s : samples) {
    if (std::find(out.begin(), out.end(), s.method) == out.end()) out.push_back(s.method);
  }
  return out;
}

Aggregate MetricsReport::aggregate(const std::string& method, const std::string& metric) const {
  double sum = 0;
  std::size_t n = 0;
  for (const auto& s : samples) {
    if (s.method != method) continue;
    sum += metric_of(s, metric);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("no samples for method '" + method + "'");
  Aggregate agg;
  agg.mean = sum / static_cast<double>(n);
  if (!std::isfinite(agg.mean)) {
    agg.stddev = std::numeric_limits<double>::quiet_NaN();
    return agg;
  }
  double ss = 0;
  for (const auto& s : samples) {
    if (s.method != method) continue;
    const double d = metric_of(s, metric) - agg.mean;
    ss += d * d;
  }
  agg.stddev = std::sqrt(ss / static_cast<double>(n));
  return agg;
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "method,index,mse,nrmse,psnr_db,ssim\n";
  for (const auto& s : samples) {
    os << s.method << ',' << s.index << ',' << fmt(s.mse) << ',' << fmt(s.nrmse) << ',' << fmt(s.psnr_db) << ','
       << fmt(s.ssim) << '\n';
  }
  return os.str();
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = schema_version;
  j["provenance"] = provenance;
  nlohmann::json agg = nlohmann::json::object();
  for (const auto& m : methods()) {
    for (const char* metric : {"mse", "nrmse", "psnr_db", "ssim"}) {
      const auto a = aggregate(m, metric);
      agg[m][metric] = {{"mean", json_number(a.mean)}, {"std", json_number(a.stddev)}};
    }
  }
  j["aggregate"] = agg;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"method", s.method},
                    {"index", s.index},
                    {"mse", s.mse},
                    {"nrmse", s.nrmse},
                    {"psnr_db", json_number(s.psnr_db)},
                    {"ssim", s.ssim}});
  }
  j["samples"] = rows;
  return j;
}

void MetricsReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "metrics.csv", std::ios::binary);
  csv << to_csv();
  std::ofstream js(dir / "metrics.json", std::ios::binary);
  js << to_json().dump(2) << '\n';
  if (!csv || !js) throw std::runtime_error("failed to write metrics into " + dir.string());
}

}  // namespace tfm
