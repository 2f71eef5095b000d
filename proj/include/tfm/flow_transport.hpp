#pragma once

#include <cstdint>
#include <random>

#include "tfm/tensor.hpp"

namespace tfm {

/// Seeded generator used for every stochastic choice (FM steps, masks, init).
using Rng = std::mt19937_64;

/// Point on the linear transport path: x_tau = (1 - tau) x0 + tau x1.
struct FlowState {
  Array x_tau;
  double tau = 0.0;
};

FlowState interpolate(const Array& x0, const Array& x1, double tau);

/// Velocity of the linear path, x1 - x0 (independent of tau).
Array true_velocity(const Array& x0, const Array& x1);

/// Uniform draw in [0, 1) from the top 53 bits of one generator output.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double sample_fm_step(Rng& rng) { return uniform01(rng); }

/// Mean squared difference over all elements. Rejects non-finite inputs.
double fm_loss(const Array& predicted, const Array& truth);

}  // namespace tfm
