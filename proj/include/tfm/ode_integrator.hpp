#pragma once

#include <functional>
#include <string>

#include "tfm/sequence_data.hpp"
#include "tfm/velocity_model.hpp"

namespace tfm {

enum class SolverMethod { euler, rk4 };
enum class Reduction { mean, last };

std::string to_string(SolverMethod m);
std::string to_string(Reduction r);
SolverMethod parse_solver_method(const std::string& name);
Reduction parse_reduction(const std::string& name);

struct SolverConfig {
  SolverMethod method = SolverMethod::euler;
  int steps = 10;
  Reduction reduction = Reduction::mean;

  void validate() const;
  /// Velocity evaluations one integration performs.
  int function_evaluations() const { return method == SolverMethod::rk4 ? 4 * steps : steps; }

  nlohmann::json to_json() const;
  static SolverConfig from_json(const nlohmann::json& j);
};

/// Velocity field v(state, tau); must return an array shaped like `state`.
template <class T>
using Field = std::function<Tensor<T>(const Tensor<T>& state, double tau)>;
using VelocityField = Field<float>;

/// Fixed-step explicit integration of dx/dtau = v(x, tau) from tau = 0 to 1.
template <class T>
Tensor<T> integrate(const Field<T>& field, const Tensor<T>& x0, const SolverConfig& cfg);

extern template Tensor<float> integrate(const Field<float>&, const Tensor<float>&, const SolverConfig&);
extern template Tensor<double> integrate(const Field<double>&, const Tensor<double>&, const SolverConfig&);

/// Collapses the leading (frame) axis of [T, ...] or, for rank-5 input, axis 1 of [B, T, ...].
Array temporal_reduce(const Array& xhat, Reduction reduction);

/// Field backed by the velocity network; `state` may be [T, D, H, W] or batched [B, T, D, H, W].
VelocityField network_field(const VelocityNet<float>& net, const ParameterSet<float>& params);

/// Fill (optional), integrate from the context stack, then reduce to one volume.
Array predict(const VelocityNet<float>& net, const ParameterSet<float>& params, const ImageSequence& seq,
              const SolverConfig& solver, bool sparsity_filling = true);

/// Batched variant of predict; returns one volume per sequence.
std::vector<Array> predict_batch(const VelocityNet<float>& net, const ParameterSet<float>& params,
                                 const std::vector<ImageSequence>& seqs, const SolverConfig& solver,
                                 bool sparsity_filling = true);

}  // namespace tfm
