#pragma once

#include "vmm/tensor.hpp"

namespace vmm::linalg {

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Reads only the lower triangle of A. Lives outside the gradient tape; the
/// alternating update scheme never differentiates through a decomposition.
Tensor cholesky(const Tensor& A);

/// Solves L y = b for lower-triangular L.
Tensor tri_solve_lower(const Tensor& L, const Tensor& b);

/// Solves L^T x = b for lower-triangular L.
Tensor tri_solve_lower_transposed(const Tensor& L, const Tensor& b);

/// Inverse of a lower-triangular matrix, itself lower-triangular.
Tensor tri_invert_lower(const Tensor& L);

/// log det(L L^T) = 2 sum_d log L_dd.
double chol_log_det(const Tensor& L);

} // namespace vmm::linalg
