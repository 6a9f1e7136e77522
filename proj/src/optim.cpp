#include "cmlm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace cmlm {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adam ? "adam" : "lamb"; }

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "adam") return OptimizerKind::adam;
  if (text == "lamb") return OptimizerKind::lamb;
  throw ConfigError("unknown optimizer '" + text + "' (expected adam or lamb)");
}

double learning_rate_at(const OptimizerConfig& config, std::uint64_t step) {
  const double peak = config.learning_rate;
  if (config.warmup_steps > 0 && step < config.warmup_steps) {
    return peak * static_cast<double>(step) / static_cast<double>(config.warmup_steps);
  }
  if (config.total_steps == 0) return peak;
  if (step >= config.total_steps) return 0.0;
  const double span = static_cast<double>(config.total_steps - config.warmup_steps);
  if (span <= 0) return 0.0;
  return peak * static_cast<double>(config.total_steps - step) / span;
}

template <typename T>
OptimizerState<T> OptimizerState<T>::fresh(const OptimizerConfig& config, const ParamStore<T>& params) {
  OptimizerState state;
  state.config = config;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.first_moment.emplace_back(params[i].shape(), T{0});
    state.second_moment.emplace_back(params[i].shape(), T{0});
  }
  return state;
}

template <typename T>
void optimizer_step(ParamStore<T>& params, std::span<const Tensor<T>> grads, OptimizerState<T>& state) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size() ||
      state.second_moment.size() != params.size()) {
    throw DimensionError("optimizer_step: " + std::to_string(params.size()) + " parameters, " +
                         std::to_string(grads.size()) + " gradients, " + std::to_string(state.first_moment.size()) +
                         " moment slots");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (grads[p].shape() != params[p].shape() || state.first_moment[p].shape() != params[p].shape() ||
        state.second_moment[p].shape() != params[p].shape()) {
      throw DimensionError("optimizer_step: shape mismatch for parameter '" + params.name(p) + "'");
    }
    if (!grads[p].all_finite()) {
      throw NonFiniteError("non-finite gradient for parameter '" + params.name(p) + "'");
    }
  }

  const auto& cfg = state.config;
  const double lr = learning_rate_at(cfg, state.step);
  const double t = static_cast<double>(state.step + 1);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);

  std::vector<double> update;
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p];
    auto& m = state.first_moment[p];
    auto& v = state.second_moment[p];
    const auto& g = grads[p];
    update.assign(w.size(), 0.0);
    double w_norm2 = 0, u_norm2 = 0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (T{1} - b1) * g[i];
      v[i] = b2 * v[i] + (T{1} - b2) * g[i] * g[i];
      const double m_hat = static_cast<double>(m[i]) / correction1;
      const double v_hat = static_cast<double>(v[i]) / correction2;
      double u = m_hat / (std::sqrt(v_hat) + cfg.epsilon);
      u += cfg.weight_decay * static_cast<double>(w[i]);
      update[i] = u;
      w_norm2 += static_cast<double>(w[i]) * static_cast<double>(w[i]);
      u_norm2 += u * u;
    }
    double ratio = 1.0;
    if (cfg.kind == OptimizerKind::lamb) {
      const double w_norm = std::sqrt(w_norm2), u_norm = std::sqrt(u_norm2);
      if (w_norm > 0 && u_norm > 0) ratio = std::clamp(w_norm / u_norm, 0.0, 10.0);
    }
    const double step_size = lr * ratio;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] = static_cast<T>(static_cast<double>(w[i]) - step_size * update[i]);
    }
  }
  ++state.step;
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void optimizer_step(ParamStore<float>&, std::span<const Tensor<float>>, OptimizerState<float>&);
template void optimizer_step(ParamStore<double>&, std::span<const Tensor<double>>, OptimizerState<double>&);

}  // namespace cmlm
