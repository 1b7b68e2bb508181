#include "icgm/optim.hpp"

#include <cmath>

namespace icgm {

void adam_step(std::vector<NamedTensor>& params, AdamState& state) {
  for (auto& [name, p] : params) {
    if (!p.has_grad())
      throw NumericError("adam_step: parameter '" + name + "' has no gradient");
    for (double g : p.grad())
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient in parameter '" +
                           name + "'");
  }

  const auto& cfg = state.config;
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, state.step_count);
  const double bc2 = 1.0 - std::pow(cfg.beta2, state.step_count);

  for (auto& [name, p] : params) {
    auto& m = state.first_moment[name];
    auto& v = state.second_moment[name];
    const size_t n = static_cast<size_t>(p.size());
    if (m.size() != n) m.assign(n, 0.0);
    if (v.size() != n) v.assign(n, 0.0);
    auto grad = p.grad();
    auto vals = p.values_mut();
    for (size_t i = 0; i < n; ++i) {
      const double g = grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      vals[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace icgm
