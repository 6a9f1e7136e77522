#include "cmlm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cmlm/rng.hpp"

namespace cmlm {

namespace {

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
}

double checked_value(const Var<double>& v, std::size_t element) {
  if (v.value().size() != 1) throw ContractError("gradient check needs a scalar function");
  const double out = v.value().item();
  if (!std::isfinite(out)) {
    throw NonFiniteError("non-finite function value while perturbing element " + std::to_string(element));
  }
  return out;
}

template <typename Eval>
double central_difference(Eval&& eval, double& slot, double h, std::size_t element) {
  const double saved = slot;
  double plus = 0, minus = 0;
  try {
    slot = saved + h;
    plus = eval();
    slot = saved - h;
    minus = eval();
  } catch (const NonFiniteError& e) {
    slot = saved;
    throw NonFiniteError(std::string(e.what()) + " (element " + std::to_string(element) + ")");
  }
  slot = saved;
  return (plus - minus) / (2 * h);
}

void fold(GradientCheckResult& result, double analytic, double numeric, std::size_t index, const std::string& name) {
  const double err = relative_error(analytic, numeric);
  ++result.checked;
  if (result.checked == 1 || err > result.max_relative_error) {
    result.max_relative_error = err;
    result.worst_index = index;
    result.worst_param = name;
    result.analytic = analytic;
    result.numeric = numeric;
  }
}

}  // namespace

GradientCheckResult check_gradient(const ScalarFn& f, const Tensor<double>& x, double h) {
  Tensor<double> analytic;
  {
    Tape<double> tape;
    Var<double> leaf = tape.variable(x);
    Var<double> out = f(tape, leaf);
    checked_value(out, 0);
    tape.backward(out);
    analytic = tape.has_grad(leaf.id()) ? tape.grad(leaf.id()) : Tensor<double>(x.shape(), 0.0);
  }
  Tensor<double> probe = x;
  GradientCheckResult result;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    auto eval = [&] {
      Tape<double> tape(false);
      return checked_value(f(tape, tape.variable(probe)), i);
    };
    const double numeric = central_difference(eval, probe[i], h, i);
    fold(result, analytic[i], numeric, i, "");
  }
  return result;
}

GradientCheckResult check_param_gradients(const ParamLossFn& f, ParamStore<double>& params, double h,
                                          std::optional<std::size_t> max_per_param, Rng* rng) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    Var<double> out = f(tape, params);
    checked_value(out, 0);
    tape.backward(out);
    analytic = tape.param_grads(params);
  }
  GradientCheckResult result;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params[p].size();
    std::vector<std::size_t> elements(n);
    std::iota(elements.begin(), elements.end(), std::size_t{0});
    if (max_per_param && *max_per_param < n) {
      if (!rng) throw ContractError("sampled gradient check needs an rng");
      elements = rng->sample_distinct(n, *max_per_param);
    }
    for (std::size_t i : elements) {
      auto eval = [&] {
        Tape<double> tape(false);
        return checked_value(f(tape, params), i);
      };
      const double numeric = central_difference(eval, params[p][i], h, i);
      fold(result, analytic[p][i], numeric, i, params.name(p));
    }
  }
  return result;
}

}  // namespace cmlm
