#include "tfm/ode_integrator.hpp"

#include <cmath>

namespace tfm {

std::string to_string(SolverMethod m) { return m == SolverMethod::euler ? "euler" : "rk4"; }
std::string to_string(Reduction r) { return r == Reduction::mean ? "mean" : "last"; }

SolverMethod parse_solver_method(const std::string& name) {
  if (name == "euler") return SolverMethod::euler;
  if (name == "rk4") return SolverMethod::rk4;
  throw std::invalid_argument("unknown solver method '" + name + "'");
}

Reduction parse_reduction(const std::string& name) {
  if (name == "mean") return Reduction::mean;
  if (name == "last") return Reduction::last;
  throw std::invalid_argument("unknown reduction '" + name + "'");
}

void SolverConfig::validate() const {
  if (steps < 1) throw std::invalid_argument("solver: steps must be >= 1");
}

nlohmann::json SolverConfig::to_json() const {
  return {{"method", to_string(method)}, {"steps", steps}, {"reduction", to_string(reduction)}};
}

SolverConfig SolverConfig::from_json(const nlohmann::json& j) {
  SolverConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "method") cfg.method = parse_solver_method(value.get<std::string>());
    else if (key == "steps") cfg.steps = value.get<int>();
    else if (key == "reduction") cfg.reduction = parse_reduction(value.get<std::string>());
    else throw std::invalid_argument("solver: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

namespace {

template <class T>
Tensor<T> evaluate(const Field<T>& field, const Tensor<T>& state, double tau) {
  Tensor<T> v = field(state, tau);
  require_same_shape(v.shape(), state.shape(), "velocity field output");
  return v;
}

// out = x + h * v
template <class T>
Tensor<T> axpy(const Tensor<T>& x, double h, const Tensor<T>& v) {
  Tensor<T> out(x.shape());
  const T ht = static_cast<T>(h);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + ht * v[i];
  return out;
}

template <class T>
void check_finite(const Tensor<T>& x, int step) {
  for (T v : x) {
    if (!std::isfinite(v)) throw std::runtime_error("integrate: non-finite state after step " + std::to_string(step));
  }
}

}  // namespace

template <class T>
Tensor<T> integrate(const Field<T>& field, const Tensor<T>& x0, const SolverConfig& cfg) {
  cfg.validate();
  const double h = 1.0 / cfg.steps;
  Tensor<T> x = x0;
  for (int i = 0; i < cfg.steps; ++i) {
    const double tau = static_cast<double>(i) / cfg.steps;
    if (cfg.method == SolverMethod::euler) {
      x = axpy(x, h, evaluate(field, x, tau));
    } else {
      const double mid = tau + 0.5 * h;
      const double end = static_cast<double>(i + 1) / cfg.steps;
      const Tensor<T> k1 = evaluate(field, x, tau);
      const Tensor<T> k2 = evaluate(field, axpy(x, 0.5 * h, k1), mid);
      const Tensor<T> k3 = evaluate(field, axpy(x, 0.5 * h, k2), mid);
      const Tensor<T> k4 = evaluate(field, axpy(x, h, k3), end);
      const T w = static_cast<T>(h / 6.0);
      for (std::size_t j = 0; j < x.size(); ++j) x[j] += w * (k1[j] + T(2) * k2[j] + T(2) * k3[j] + k4[j]);
    }
    check_finite(x, i);
  }
  return x;
}

template Tensor<float> integrate(const Field<float>&, const Tensor<float>&, const SolverConfig&);
template Tensor<double> integrate(const Field<double>&, const Tensor<double>&, const SolverConfig&);

Array temporal_reduce(const Array& xhat, Reduction reduction) {
  if (xhat.rank() == 5) {
    std::vector<Array> out;
    for (std::int64_t b = 0; b < xhat.dim(0); ++b) out.push_back(temporal_reduce(xhat.slice(b), reduction));
    return stack(std::span<const Array>(out));
  }
  if (xhat.rank() < 1 || xhat.dim(0) < 1) throw std::invalid_argument("temporal_reduce: need at least one frame");
  const std::int64_t frames = xhat.dim(0);
  if (reduction == Reduction::last) return xhat.slice(frames - 1);
  Array out(Shape(xhat.shape().begin() + 1, xhat.shape().end()));
  for (std::int64_t t = 0; t < frames; ++t) {
    const auto s = xhat.slice_span(t);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i];
  }
  for (auto& v : out) v /= static_cast<float>(frames);
  return out;
}

VelocityField network_field(const VelocityNet<float>& net, const ParameterSet<float>& params) {
  return [&net, &params](const Array& state, double tau) {
    if (state.rank() == 5) {
      const std::vector<double> taus(static_cast<std::size_t>(state.dim(0)), tau);
      return net.forward(params, state, taus);
    }
    return predict_velocity(net, params, FlowState{state, tau});
  };
}

std::vector<Array> predict_batch(const VelocityNet<float>& net, const ParameterSet<float>& params,
                                 const std::vector<ImageSequence>& seqs, const SolverConfig& solver,
                                 bool sparsity_filling) {
  if (seqs.empty()) return {};
  std::vector<Array> contexts;
  for (const auto& seq : seqs) contexts.push_back(sparsity_filling ? sparsity_fill(seq).frames : seq.frames);
  const Array x0 = stack(std::span<const Array>(contexts));
  const Array xhat = integrate<float>(network_field(net, params), x0, solver);
  const Array reduced = temporal_reduce(xhat, solver.reduction);
  std::vector<Array> out;
  for (std::int64_t b = 0; b < reduced.dim(0); ++b) out.push_back(reduced.slice(b));
  return out;
}

Array predict(const VelocityNet<float>& net, const ParameterSet<float>& params, const ImageSequence& seq,
              const SolverConfig& solver, bool sparsity_filling) {
  return predict_batch(net, params, {seq}, solver, sparsity_filling).front();
}

}  // namespace tfm
