#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace calf {

/// Eigen-decomposition of a real symmetric matrix.
struct SymmetricEigen {
  std::size_t n = 0;
  std::vector<double> values;   // descending
  std::vector<double> vectors;  // n x n row-major; column j pairs with values[j]
};

/// Householder tridiagonalization followed by implicit-shift QL iterations.
/// `matrix` is n x n row-major; only symmetry is assumed.
SymmetricEigen symmetric_eigen(std::span<const double> matrix, std::size_t n);

}  // namespace calf
