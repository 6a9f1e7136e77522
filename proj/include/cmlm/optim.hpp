#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmlm/params.hpp"

namespace cmlm {

enum class OptimizerKind { adam, lamb };

std::string to_string(OptimizerKind kind);
OptimizerKind parse_optimizer_kind(const std::string& text);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::lamb;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-6;
  double weight_decay = 0.0;
  std::uint64_t warmup_steps = 0;
  // 0 disables the decay phase (constant rate after warmup).
  std::uint64_t total_steps = 0;
};

// Linear warmup from 0 to the peak over warmup_steps, then linear decay to 0
// at total_steps. `step` is the 0-based index of the update being taken.
double learning_rate_at(const OptimizerConfig& config, std::uint64_t step);

template <typename T>
struct OptimizerState {
  OptimizerConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> first_moment;
  std::vector<Tensor<T>> second_moment;

  static OptimizerState fresh(const OptimizerConfig& config, const ParamStore<T>& params);
};

// One update. Adam: bias-corrected moments. LAMB: the Adam direction (plus
// decoupled weight decay) rescaled per tensor by ||w|| / ||update||, clamped
// to [0, 10] and taken as 1 when either norm is zero. A non-finite gradient
// aborts before any parameter changes.
template <typename T>
void optimizer_step(ParamStore<T>& params, std::span<const Tensor<T>> grads, OptimizerState<T>& state);

}  // namespace cmlm
