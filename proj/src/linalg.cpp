#include "vmm/linalg.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vmm::linalg {

namespace {

void check_square(const Tensor& A, const char* op) {
  if (A.rank() != 2 || A.rows() != A.cols())
    throw std::invalid_argument(std::string(op) + ": expected square matrix, got " +
                                A.shape_str());
}

} // namespace

Tensor cholesky(const Tensor& A) {
  check_square(A, "cholesky");
  const std::size_t p = A.rows();
  Tensor L({p, p});
  for (std::size_t j = 0; j < p; ++j) {
    double d = A.at(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= L.at(j, k) * L.at(j, k);
    if (!(d > 0.0))
      throw std::runtime_error("cholesky: matrix not positive definite, leading minor of order " +
                               std::to_string(j + 1) + " is not positive");
    L.at(j, j) = std::sqrt(d);
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = A.at(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L.at(i, k) * L.at(j, k);
      L.at(i, j) = s / L.at(j, j);
    }
  }
  return L;
}

Tensor tri_solve_lower(const Tensor& L, const Tensor& b) {
  check_square(L, "tri_solve_lower");
  const std::size_t p = L.rows();
  if (b.rank() != 1 || b.numel() != p)
    throw std::invalid_argument("tri_solve_lower: rhs shape " + b.shape_str() +
                                " vs matrix " + L.shape_str());
  Tensor y({p});
  for (std::size_t i = 0; i < p; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= L.at(i, k) * y[k];
    y[i] = s / L.at(i, i);
  }
  return y;
}

Tensor tri_solve_lower_transposed(const Tensor& L, const Tensor& b) {
  check_square(L, "tri_solve_lower_transposed");
  const std::size_t p = L.rows();
  if (b.rank() != 1 || b.numel() != p)
    throw std::invalid_argument("tri_solve_lower_transposed: rhs shape " + b.shape_str() +
                                " vs matrix " + L.shape_str());
  Tensor x({p});
  for (std::size_t ii = p; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < p; ++k) s -= L.at(k, ii) * x[k];
    x[ii] = s / L.at(ii, ii);
  }
  return x;
}

Tensor tri_invert_lower(const Tensor& L) {
  check_square(L, "tri_invert_lower");
  const std::size_t p = L.rows();
  Tensor inv({p, p});
  // Column j of the inverse solves L x = e_j; entries above the diagonal stay zero.
  for (std::size_t j = 0; j < p; ++j) {
    inv.at(j, j) = 1.0 / L.at(j, j);
    for (std::size_t i = j + 1; i < p; ++i) {
      double s = 0;
      for (std::size_t k = j; k < i; ++k) s -= L.at(i, k) * inv.at(k, j);
      inv.at(i, j) = s / L.at(i, i);
    }
  }
  return inv;
}

double chol_log_det(const Tensor& L) {
  check_square(L, "chol_log_det");
  double acc = 0;
  for (std::size_t d = 0; d < L.rows(); ++d) acc += std::log(L.at(d, d));
  return 2.0 * acc;
}

} // namespace vmm::linalg
