#pragma once

#include <functional>
#include <optional>
#include <string>

#include "cmlm/autograd.hpp"

namespace cmlm {

class Rng;

struct GradientCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat element index of the worst entry
  std::string worst_param;      // parameter name, for check_param_gradients
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

// Builds a scalar on `tape` from the leaf `x`.
using ScalarFn = std::function<Var<double>(Tape<double>&, const Var<double>&)>;
// Builds a scalar on `tape` that reads parameters from `params` (via tape.param).
using ParamLossFn = std::function<Var<double>(Tape<double>&, const ParamStore<double>&)>;

// Compares reverse-mode gradients with central differences of step h. Error
// per element is |a - n| / max(1e-8, |a| + |n|); the maximum is reported.
// A non-finite evaluation raises NonFiniteError naming the element.
GradientCheckResult check_gradient(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5);

// Same check over parameter elements. With `max_per_param` set, a random
// subset of that many elements per tensor is probed (drawn from `rng`).
GradientCheckResult check_param_gradients(const ParamLossFn& f, ParamStore<double>& params, double h = 1e-5,
                                          std::optional<std::size_t> max_per_param = std::nullopt,
                                          Rng* rng = nullptr);

}  // namespace cmlm
