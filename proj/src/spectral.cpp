#include "cmlm/spectral.hpp"

#include <algorithm>
#include <cmath>

#include "cmlm/kernels.hpp"

namespace cmlm {

namespace {

constexpr double kTolerance = 1e-10;
constexpr int kMaxIterations = 1000;
// Eigenvalues below this fraction of the largest count as zero.
constexpr double kRankCutoff = 1e-12;

double norm(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

std::vector<double> gram_times(const std::vector<double>& gram, std::size_t d, const std::vector<double>& x) {
  std::vector<double> y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) s += gram[i * d + j] * x[j];
    y[i] = s;
  }
  return y;
}

void apply_sign_convention(std::vector<double>& x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (std::abs(x[i]) > std::abs(x[best])) best = i;
  }
  if (x[best] < 0) {
    for (double& v : x) v = -v;
  }
}

// Dominant eigenvector of a symmetric PSD matrix; returns {vector, eigenvalue}.
std::pair<std::vector<double>, double> power_iteration(const std::vector<double>& gram, std::size_t d) {
  std::size_t pivot = 0;
  for (std::size_t i = 1; i < d; ++i) {
    if (gram[i * d + i] > gram[pivot * d + pivot]) pivot = i;
  }
  // Start from the heaviest coordinate plus a small dense tilt so the start
  // is not orthogonal to the dominant direction in symmetric layouts.
  std::vector<double> x(d);
  for (std::size_t i = 0; i < d; ++i) x[i] = 0.01 / static_cast<double>(i + 2);
  x[pivot] += 1.0;
  x = gram_times(gram, d, x);
  double n = norm(x);
  if (n == 0) return {std::vector<double>(d, 0.0), 0.0};
  for (double& v : x) v /= n;
  for (int it = 0; it < kMaxIterations; ++it) {
    std::vector<double> y = gram_times(gram, d, x);
    n = norm(y);
    if (n == 0) return {std::vector<double>(d, 0.0), 0.0};
    double diff = 0;
    for (std::size_t i = 0; i < d; ++i) {
      y[i] /= n;
      diff += (y[i] - x[i]) * (y[i] - x[i]);
    }
    x = std::move(y);
    if (std::sqrt(diff) < kTolerance) break;
  }
  const std::vector<double> gx = gram_times(gram, d, x);
  double lambda = 0;
  for (std::size_t i = 0; i < d; ++i) lambda += x[i] * gx[i];
  return {x, lambda};
}

std::vector<double> gram_matrix(const Tensor<double>& m) {
  const std::size_t n = m.rows(), d = m.cols();
  std::vector<double> gram(d * d, 0.0);
  kernels::gemm(kernels::default_exec(), true, false, d, d, n, m.data().data(), m.data().data(), gram.data(), false);
  return gram;
}

}  // namespace

std::vector<double> first_principal_direction(const Tensor<double>& m) {
  bool any = false;
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw DegenerateInputError("first_principal_direction: non-finite input");
    any = any || v != 0.0;
  }
  if (!any) throw DegenerateInputError("first_principal_direction: all-zero matrix");
  auto [x, lambda] = power_iteration(gram_matrix(m), m.cols());
  if (lambda <= 0) throw DegenerateInputError("first_principal_direction: zero spectrum");
  apply_sign_convention(x);
  return x;
}

std::vector<std::vector<double>> principal_directions(const Tensor<double>& m, std::size_t count) {
  const std::size_t d = m.cols();
  if (count > d) {
    throw DegenerateInputError("principal_directions: asked for " + std::to_string(count) + " directions in " +
                               std::to_string(d) + " dimensions");
  }
  std::vector<double> gram = gram_matrix(m);
  std::vector<std::vector<double>> out;
  double top = 0;
  for (std::size_t c = 0; c < count; ++c) {
    auto [x, lambda] = power_iteration(gram, d);
    if (c == 0) top = lambda;
    if (lambda <= 0 || lambda <= kRankCutoff * top) {
      throw DegenerateInputError("principal_directions: matrix has rank < " + std::to_string(count));
    }
    apply_sign_convention(x);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) gram[i * d + j] -= lambda * x[i] * x[j];
    }
    out.push_back(std::move(x));
  }
  return out;
}

}  // namespace cmlm
