#include "tfm/flow_transport.hpp"

#include <cmath>
#include <stdexcept>

namespace tfm {

FlowState interpolate(const Array& x0, const Array& x1, double tau) {
  require_same_shape(x0.shape(), x1.shape(), "interpolate");
  if (!(tau >= 0.0 && tau <= 1.0)) throw std::invalid_argument("interpolate: tau must lie in [0, 1]");
  FlowState state{Array(x0.shape()), tau};
  const float a = static_cast<float>(1.0 - tau);
  const float b = static_cast<float>(tau);
  for (std::size_t i = 0; i < x0.size(); ++i) state.x_tau[i] = a * x0[i] + b * x1[i];
  return state;
}

Array true_velocity(const Array& x0, const Array& x1) {
  require_same_shape(x0.shape(), x1.shape(), "true_velocity");
  Array u(x0.shape());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = x1[i] - x0[i];
  return u;
}

double fm_loss(const Array& predicted, const Array& truth) {
  require_same_shape(predicted.shape(), truth.shape(), "fm_loss");
  if (predicted.empty()) throw std::invalid_argument("fm_loss: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!std::isfinite(predicted[i]) || !std::isfinite(truth[i])) {
      throw std::invalid_argument("fm_loss: non-finite value at element " + std::to_string(i));
    }
    const double d = static_cast<double>(predicted[i]) - static_cast<double>(truth[i]);
    sum += d * d;
  }
  return sum / static_cast<double>(predicted.size());
}

}  // namespace tfm
