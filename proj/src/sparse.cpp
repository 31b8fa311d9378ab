#include "geom/sparse.hpp"

#include <cmath>

#include "geom/errors.hpp"

namespace geom {

Matrix CsrMatrix::multiply(const Matrix& dense) const {
  if (static_cast<std::size_t>(dense.rows()) != cols) {
    throw DimensionError("sparse product: operand has " + std::to_string(dense.rows()) +
                         " rows, expected " + std::to_string(cols));
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), dense.cols());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      out.row(static_cast<Eigen::Index>(r)) += values[k] * dense.row(col_idx[k]);
    }
  }
  return out;
}

CsrMatrix CsrMatrix::transpose() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (auto c : col_idx) ++t.row_ptr[c + 1];
  for (std::size_t i = 0; i < cols; ++i) t.row_ptr[i + 1] += t.row_ptr[i];
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      const std::size_t dst = cursor[col_idx[k]]++;
      t.col_idx[dst] = static_cast<std::uint32_t>(r);
      t.values[dst] = values[k];
    }
  }
  return t;
}

Matrix CsrMatrix::to_dense() const {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      out(static_cast<Eigen::Index>(r), col_idx[k]) += values[k];
    }
  }
  return out;
}

bool CsrMatrix::is_symmetric(double tol) const {
  if (rows != cols) return false;
  const CsrMatrix t = transpose();
  if (t.col_idx != col_idx || t.row_ptr != row_ptr) return false;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (std::abs(values[k] - t.values[k]) > tol) return false;
  }
  return true;
}

}  // namespace geom
