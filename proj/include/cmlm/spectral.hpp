#pragma once

#include <vector>

#include "cmlm/tensor.hpp"

namespace cmlm {

// Top right-singular vector of m (n x d) by power iteration on m^T m.
// Unit norm; the component of largest magnitude is non-negative. Stops when
// successive iterates differ by < 1e-10 or after 1000 iterations.
// Throws DegenerateInputError for an all-zero matrix.
std::vector<double> first_principal_direction(const Tensor<double>& m);

// Leading `count` right-singular vectors via power iteration with deflation,
// same sign convention. Throws DegenerateInputError when the matrix has
// fewer than `count` non-negligible singular values.
std::vector<std::vector<double>> principal_directions(const Tensor<double>& m, std::size_t count);

}  // namespace cmlm
