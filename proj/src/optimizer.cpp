#include "slm/optimizer.hpp"

#include <cmath>

#include "slm/errors.hpp"

namespace slm {

OptimizerState OptimizerState::zeros_like(const ModelParams& params) {
  return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ModelParams& params, const ModelParams& grads, OptimizerState& state,
               const AdamSettings& settings) {
  auto p = tensor_views(params);
  const auto g = tensor_views(grads);
  auto m = tensor_views(state.first_moment);
  auto v = tensor_views(state.second_moment);
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size()) {
    throw DimensionError("adam_step: tensor count mismatch");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(settings.beta1, t);
  const double correction2 = 1.0 - std::pow(settings.beta2, t);
  const float b1 = static_cast<float>(settings.beta1);
  const float b2 = static_cast<float>(settings.beta2);
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].size() != p[k].size() || m[k].size() != p[k].size() || v[k].size() != p[k].size()) {
      throw DimensionError("adam_step: tensor " + std::to_string(k) + " shape mismatch");
    }
    for (std::size_t i = 0; i < p[k].size(); ++i) {
      const float gi = g[k][i];
      m[k][i] = b1 * m[k][i] + (1.0f - b1) * gi;
      v[k][i] = b2 * v[k][i] + (1.0f - b2) * gi * gi;
      const double m_hat = m[k][i] / correction1;
      const double v_hat = v[k][i] / correction2;
      p[k][i] -= static_cast<float>(settings.learning_rate * m_hat / (std::sqrt(v_hat) + settings.eps));
    }
  }
}

}  // namespace slm
