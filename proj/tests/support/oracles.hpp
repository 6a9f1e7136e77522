#pragma once

// Independent reference implementations used as test oracles. They share
// no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

namespace cmlm::testing {

// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major n x n).
// Returns eigenvalues and column eigenvectors (vectors[i] is eigenvector i).
struct Eigen {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;
};

inline Eigen jacobi_eigen(std::vector<double> a, std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  Eigen e;
  for (std::size_t i = 0; i < n; ++i) {
    e.values.push_back(a[i * n + i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k * n + i];
    e.vectors.push_back(col);
  }
  return e;
}

// Spearman by explicit rank assignment: sort indices, give tied runs the
// average of their 1-based positions, then textbook Pearson.
inline double brute_spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      const double avg = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
      for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// Rosenblatt perceptron with bias. Returns true when it reaches zero training
// errors within `epochs`, which certifies linear separability.
inline bool perceptron_separates(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                                 int epochs = 1000) {
  const std::size_t d = x.empty() ? 0 : x[0].size();
  std::vector<double> w(d + 1, 0.0);
  for (int e = 0; e < epochs; ++e) {
    std::size_t mistakes = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double target = y[i] > 0 ? 1.0 : -1.0;
      double s = w[d];
      for (std::size_t j = 0; j < d; ++j) s += w[j] * x[i][j];
      if (s * target <= 0) {
        for (std::size_t j = 0; j < d; ++j) w[j] += target * x[i][j];
        w[d] += target;
        ++mistakes;
      }
    }
    if (mistakes == 0) return true;
  }
  return false;
}

}  // namespace cmlm::testing
