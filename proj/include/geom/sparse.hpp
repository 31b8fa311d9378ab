#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace geom {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Compressed-row sparse matrix with explicit values.
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<std::uint32_t> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return col_idx.size(); }

  // this * dense
  Matrix multiply(const Matrix& dense) const;
  CsrMatrix transpose() const;
  Matrix to_dense() const;
  bool is_symmetric(double tol) const;
};

}  // namespace geom
