#include "tfm/synth_data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "tfm/flow_transport.hpp"

namespace tfm {

std::string to_string(DynamicsKind k) {
  switch (k) {
    case DynamicsKind::pulsating_ellipse: return "pulsating_ellipse";
    case DynamicsKind::growing_disk: return "growing_disk";
    case DynamicsKind::drifting_texture: return "drifting_texture";
  }
  return "?";
}

DynamicsKind parse_dynamics_kind(const std::string& name) {
  if (name == "pulsating_ellipse") return DynamicsKind::pulsating_ellipse;
  if (name == "growing_disk") return DynamicsKind::growing_disk;
  if (name == "drifting_texture") return DynamicsKind::drifting_texture;
  throw std::invalid_argument("unknown dynamics kind '" + name + "'");
}

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr int kSuper = 4;  // supersampling per axis for anti-aliased edges
constexpr double kEllipseAspect = 1.3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng patient_rng(std::uint64_t seed, std::size_t index, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(index * 4 + stream)));
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Latest and earliest time any frame (context or target) can be rendered at.
double time_span_end(const DynamicsSpec& s) {
  return static_cast<double>(s.shape.frames) + s.target_jitter;
}

double background_at(const DynamicsSpec& s, const PatientDynamics& p, double y, double x) {
  const double u = std::sin(kTwoPi * 1.5 * x / static_cast<double>(s.shape.width) + p.texture_phase);
  const double v = std::cos(kTwoPi * y / static_cast<double>(s.shape.height) + 0.5 * p.texture_phase);
  return s.background * (0.5 + 0.5 * u * v);
}

template <class Inside>
double coverage(double y, double x, Inside inside) {
  int hits = 0;
  for (int sy = 0; sy < kSuper; ++sy) {
    for (int sx = 0; sx < kSuper; ++sx) {
      const double py = y + (sy + 0.5) / kSuper - 0.5;
      const double px = x + (sx + 0.5) / kSuper - 0.5;
      hits += inside(py, px) ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / (kSuper * kSuper);
}

void add_noise(Array& volume, double sigma, Rng& rng) {
  if (sigma <= 0) return;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> z(volume.size());
  double ss = 0;
  for (auto& v : z) {
    v = normal(rng);
    ss += v * v;
  }
  // Rescaled so the noise RMS is exactly sigma; clamping can only shrink it.
  const double scale = ss > 0 ? sigma / std::sqrt(ss / static_cast<double>(z.size())) : 0.0;
  for (std::size_t i = 0; i < volume.size(); ++i) {
    volume[i] = static_cast<float>(std::clamp(volume[i] + scale * z[i], 0.0, 1.0));
  }
}

}  // namespace

void DynamicsSpec::validate() const {
  shape.validate();
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw std::invalid_argument("dynamics spec: " + msg);
  };
  require(noise_sigma >= 0, "noise_sigma must be >= 0");
  require(foreground > 0 && foreground <= 1, "foreground must be in (0, 1]");
  require(background >= 0 && background <= foreground, "background must be in [0, foreground]");
  require(parameter_spread >= 0 && parameter_spread < 1, "parameter_spread must be in [0, 1)");
  require(time_jitter >= 0 && time_jitter < 0.5, "time_jitter must be in [0, 0.5)");
  require(target_jitter >= 0 && target_jitter < 0.5, "target_jitter must be in [0, 0.5)");
  require(center_jitter >= 0, "center_jitter must be >= 0");
  require(radius > 0, "radius must be positive");
  require(period > 0, "period must be positive");

  const double spread = 1 + parameter_spread;
  const double half_fov = 0.5 * static_cast<double>(std::min(shape.height, shape.width)) - center_jitter - 0.5;
  const double t_end = time_span_end(*this);
  const double t_begin = -time_jitter;
  double extent = 0;
  switch (kind) {
    case DynamicsKind::growing_disk: {
      const double g_hi = growth_rate * (growth_rate >= 0 ? spread : 1 - parameter_spread);
      extent = radius * spread + std::max(g_hi * t_end, g_hi * t_begin);
      const double low = radius * (1 - parameter_spread) + std::min(g_hi * t_end, g_hi * t_begin);
      require(low > 0, "disk radius shrinks to zero within the sequence");
      break;
    }
    case DynamicsKind::pulsating_ellipse:
      require(amplitude >= 0 && amplitude * spread < 1, "amplitude must keep the axes positive");
      extent = kEllipseAspect * radius * spread * (1 + amplitude * spread);
      break;
    case DynamicsKind::drifting_texture:
      extent = 0;  // periodic texture, nothing can leave the view
      break;
  }
  require(extent <= half_fov, "structure leaves the field of view (extent " + std::to_string(extent) +
                                  " > " + std::to_string(half_fov) + ")");
}

nlohmann::json DynamicsSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"shape", {shape.frames, shape.depth, shape.height, shape.width}},
          {"radius", radius},
          {"growth_rate", growth_rate},
          {"amplitude", amplitude},
          {"period", period},
          {"drift_velocity", drift_velocity},
          {"parameter_spread", parameter_spread},
          {"center_jitter", center_jitter},
          {"foreground", foreground},
          {"background", background},
          {"time_jitter", time_jitter},
          {"target_jitter", target_jitter},
          {"noise_sigma", noise_sigma},
          {"seed", seed}};
}

DynamicsSpec DynamicsSpec::from_json(const nlohmann::json& j) {
  DynamicsSpec s;
  for (const auto& [key, v] : j.items()) {
    if (key == "kind") s.kind = parse_dynamics_kind(v.get<std::string>());
    else if (key == "shape") {
      const auto e = v.get<std::vector<std::int64_t>>();
      if (e.size() != 4) throw std::invalid_argument("dynamics spec: shape needs [T, D, H, W]");
      s.shape = {e[0], e[1], e[2], e[3]};
    } else if (key == "radius") s.radius = v.get<double>();
    else if (key == "growth_rate") s.growth_rate = v.get<double>();
    else if (key == "amplitude") s.amplitude = v.get<double>();
    else if (key == "period") s.period = v.get<double>();
    else if (key == "drift_velocity") s.drift_velocity = v.get<double>();
    else if (key == "parameter_spread") s.parameter_spread = v.get<double>();
    else if (key == "center_jitter") s.center_jitter = v.get<double>();
    else if (key == "foreground") s.foreground = v.get<double>();
    else if (key == "background") s.background = v.get<double>();
    else if (key == "time_jitter") s.time_jitter = v.get<double>();
    else if (key == "target_jitter") s.target_jitter = v.get<double>();
    else if (key == "noise_sigma") s.noise_sigma = v.get<double>();
    else if (key == "seed") s.seed = v.get<std::uint64_t>();
    else throw std::invalid_argument("dynamics spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

PatientDynamics patient_dynamics(const DynamicsSpec& spec, std::size_t index) {
  Rng rng = patient_rng(spec.seed, index, 0);
  const double s = spec.parameter_spread;
  PatientDynamics p;
  p.center_y = 0.5 * static_cast<double>(spec.shape.height) + uniform(rng, -spec.center_jitter, spec.center_jitter);
  p.center_x = 0.5 * static_cast<double>(spec.shape.width) + uniform(rng, -spec.center_jitter, spec.center_jitter);
  p.radius = spec.radius * uniform(rng, 1 - s, 1 + s);
  p.growth_rate = spec.growth_rate * uniform(rng, 1 - s, 1 + s);
  p.amplitude = spec.amplitude * uniform(rng, 1 - s, 1 + s);
  p.phase = uniform(rng, 0, kTwoPi);
  const double angle = uniform(rng, 0, kTwoPi);
  const double speed = spec.drift_velocity * uniform(rng, 1 - s, 1 + s);
  p.drift_y = speed * std::sin(angle);
  p.drift_x = speed * std::cos(angle);
  p.texture_phase = uniform(rng, 0, kTwoPi);
  return p;
}

Array render_frame(const DynamicsSpec& spec, const PatientDynamics& p, double t) {
  const auto& sh = spec.shape;
  Array out(sh.volume_shape());
  const std::int64_t plane = sh.height * sh.width;
  const double fg = spec.foreground;

  // Every kind is constant along depth except the texture, which shifts phase per slice.
  for (std::int64_t d = 0; d < sh.depth; ++d) {
    float* slice = out.data() + d * plane;
    if (d > 0 && spec.kind != DynamicsKind::drifting_texture) {
      std::copy(out.data(), out.data() + plane, slice);
      continue;
    }
    for (std::int64_t y = 0; y < sh.height; ++y) {
      for (std::int64_t x = 0; x < sh.width; ++x) {
        const double yc = static_cast<double>(y) + 0.5, xc = static_cast<double>(x) + 0.5;
        double v = 0;
        switch (spec.kind) {
          case DynamicsKind::growing_disk: {
            const double r = std::max(0.0, p.radius + p.growth_rate * t);
            const double bg = background_at(spec, p, yc, xc);
            const double c = coverage(yc, xc, [&](double py, double px) {
              const double dy = py - p.center_y, dx = px - p.center_x;
              return dy * dy + dx * dx <= r * r;
            });
            v = bg + (fg - bg) * c;
            break;
          }
          case DynamicsKind::pulsating_ellipse: {
            const double m = p.amplitude * std::sin(kTwoPi * t / spec.period + p.phase);
            const double a = p.radius * (1 + m);
            const double b = kEllipseAspect * p.radius * (1 - m);
            const double bg = background_at(spec, p, yc, xc);
            const double c = coverage(yc, xc, [&](double py, double px) {
              const double dy = (py - p.center_y) / a, dx = (px - p.center_x) / b;
              return dy * dy + dx * dx <= 1.0;
            });
            v = bg + (fg - bg) * c;
            break;
          }
          case DynamicsKind::drifting_texture: {
            const double ys = yc - p.drift_y * t, xs = xc - p.drift_x * t;
            const double u = std::sin(kTwoPi * xs / static_cast<double>(sh.width) * 2 + p.texture_phase +
                                      0.4 * static_cast<double>(d));
            const double w = std::cos(kTwoPi * ys / static_cast<double>(sh.height) * 1.5);
            v = fg * (0.5 + 0.25 * u + 0.25 * w);
            break;
          }
        }
        slice[y * sh.width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Array oracle_target(const DynamicsSpec& spec, std::size_t index, double target_time) {
  return render_frame(spec, patient_dynamics(spec, index), target_time);
}

SyntheticCohort generate_cohort(const DynamicsSpec& spec, std::size_t n_sequences, std::size_t first_index) {
  spec.validate();
  if (n_sequences < 1) throw std::invalid_argument("generate_cohort: need at least one sequence");
  SyntheticCohort cohort;
  cohort.spec = spec;
  cohort.first_index = first_index;
  const auto& sh = spec.shape;
  for (std::size_t n = 0; n < n_sequences; ++n) {
    const std::size_t index = first_index + n;
    const PatientDynamics p = patient_dynamics(spec, index);
    Rng time_rng = patient_rng(spec.seed, index, 1);
    Rng noise_rng = patient_rng(spec.seed, index, 2);

    ImageSequence seq;
    seq.frames = Array(sh.stack_shape());
    seq.presence.assign(static_cast<std::size_t>(sh.frames), true);
    for (std::int64_t i = 0; i < sh.frames; ++i) {
      const double t = static_cast<double>(i) + uniform(time_rng, -spec.time_jitter, spec.time_jitter);
      seq.times.push_back(t);
      Array frame = render_frame(spec, p, t);
      add_noise(frame, spec.noise_sigma, noise_rng);
      seq.frames.set_slice(i, frame);
    }
    seq.target_time =
        static_cast<double>(sh.frames) + uniform(time_rng, -spec.target_jitter, spec.target_jitter);
    Array oracle = render_frame(spec, p, seq.target_time);
    seq.target = oracle;
    add_noise(seq.target, spec.noise_sigma, noise_rng);
    seq.validate();
    cohort.sequences.push_back(std::move(seq));
    cohort.oracles.push_back(std::move(oracle));
  }
  return cohort;
}

StaticBiasReport static_bias_report(const std::vector<ImageSequence>& cohort, std::uint64_t seed) {
  const std::size_t n = cohort.size();
  if (n < 2) throw std::invalid_argument("static_bias_report: need at least two patients");
  Rng rng(seed);
  const std::size_t shift = 1 + static_cast<std::size_t>(rng() % (n - 1));
  StaticBiasReport r;
  for (std::size_t i = 0; i < n; ++i) {
    const Array& target = cohort[i].target;
    const Array lci = last_context_image(cohort[i]);
    const Array& other = cohort[(i + shift) % n].target;
    const auto [lo, hi] = std::minmax_element(target.begin(), target.end());
    const double range = static_cast<double>(*hi) - static_cast<double>(*lo);
    if (!(range > 0)) throw std::invalid_argument("static_bias_report: constant target");
    auto rmse = [&](const Array& a) {
      double ss = 0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = static_cast<double>(a[k]) - static_cast<double>(target[k]);
        ss += d * d;
      }
      return std::sqrt(ss / static_cast<double>(a.size())) / range;
    };
    r.lci_nrmse += rmse(lci);
    r.random_nrmse += rmse(other);
  }
  r.lci_nrmse /= static_cast<double>(n);
  r.random_nrmse /= static_cast<double>(n);
  r.ratio = r.random_nrmse > 0 ? r.lci_nrmse / r.random_nrmse : 0.0;
  return r;
}

namespace {

std::filesystem::path sequence_stem(const std::filesystem::path& dir, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "seq_%04zu", i);
  return dir / name;
}

}  // namespace

void save_cohort(const std::filesystem::path& dir, const SyntheticCohort& cohort) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < cohort.sequences.size(); ++i) save_sequence(sequence_stem(dir, i), cohort.sequences[i]);
  nlohmann::json meta = {{"spec", cohort.spec.to_json()},
                         {"first_index", cohort.first_index},
                         {"count", cohort.sequences.size()}};
  std::ofstream out(dir / "spec.json", std::ios::binary);
  out << meta.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "spec.json").string());
}

SyntheticCohort load_cohort(const std::filesystem::path& dir) {
  std::ifstream in(dir / "spec.json", std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + (dir / "spec.json").string());
  const auto meta = nlohmann::json::parse(in);
  SyntheticCohort cohort;
  cohort.spec = DynamicsSpec::from_json(meta.at("spec"));
  cohort.first_index = meta.at("first_index").get<std::size_t>();
  const auto count = meta.at("count").get<std::size_t>();
  for (std::size_t i = 0; i < count; ++i) {
    cohort.sequences.push_back(load_sequence(sequence_stem(dir, i)));
    cohort.oracles.push_back(oracle_target(cohort.spec, cohort.first_index + i, cohort.sequences.back().target_time));
  }
  return cohort;
}

}  // namespace tfm
