#include "xmsleep/optim.hpp"

#include <cmath>

namespace xmsleep::diff {

template <typename T>
void adam_step(ModelParams<T>& params, AdamState& state) {
  for (const auto& p : params) {
    if (p.trainable && !p.tensor.has_grad()) {
      throw StateError("adam_step: trainable parameter '" + p.name + "' has no gradient");
    }
  }
  state.step_count += 1;
  const double t = double(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  for (auto& p : params) {
    if (!p.trainable) continue;
    auto theta = p.tensor.data_mut();
    auto grad = p.tensor.grad();
    auto& m = state.m[p.name];
    auto& v = state.v[p.name];
    if (m.empty()) {
      m.assign(theta.size(), 0.0f);
      v.assign(theta.size(), 0.0f);
    }
    if (m.size() != theta.size()) {
      throw StateError("adam_step: moment size mismatch for '" + p.name + "'");
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = double(grad[i]) + state.weight_decay * double(theta[i]);
      const double mi = state.beta1 * double(m[i]) + (1.0 - state.beta1) * g;
      const double vi = state.beta2 * double(v[i]) + (1.0 - state.beta2) * g * g;
      m[i] = float(mi);
      v[i] = float(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      theta[i] = T(double(theta[i]) - state.lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
  params.zero_grad();
}

template void adam_step(ModelParams<float>&, AdamState&);
template void adam_step(ModelParams<double>&, AdamState&);

}  // namespace xmsleep::diff
