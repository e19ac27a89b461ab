#include "cdyn/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  if (rows.empty()) return {};
  Matrix m(rows.size(), rows.front().size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_shape(rows[r].size() == m.cols(), "Matrix::from_rows: ragged rows");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::col_block(std::size_t c0, std::size_t width) const {
  require_shape(c0 + width <= cols_, "Matrix::col_block: out of range");
  Matrix b(rows_, width);
  for (std::size_t r = 0; r < rows_; ++r)
    std::copy_n(data_.data() + r * cols_ + c0, width, b.row(r).begin());
  return b;
}

void Matrix::set_col_block(std::size_t c0, const Matrix& block) {
  require_shape(block.rows() == rows_ && c0 + block.cols() <= cols_,
                "Matrix::set_col_block: out of range");
  for (std::size_t r = 0; r < rows_; ++r)
    std::copy(block.row(r).begin(), block.row(r).end(), data_.begin() + r * cols_ + c0);
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Vector matvec(const Matrix& m, std::span<const double> x) {
  require_shape(m.cols() == x.size(), "matvec: columns do not match vector length");
  Vector y(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) y[r] = kernels::dot(m.row(r), x);
  return y;
}

Vector matvec_t(const Matrix& m, std::span<const double> x) {
  require_shape(m.rows() == x.size(), "matvec_t: rows do not match vector length");
  Vector y(m.cols(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) kernels::axpy(x[r], m.row(r), y);
  return y;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_shape(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) kernels::axpy(a(i, k), b.row(k), c.row(i));
  return c;
}

Matrix apply_rows(const Matrix& x, const Matrix& w) {
  require_shape(x.cols() == w.cols(), "apply_rows: input width does not match weight columns");
  Matrix y(x.rows(), w.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t r = 0; r < w.rows(); ++r) y(i, r) = kernels::dot(w.row(r), x.row(i));
  return y;
}

double norm2(std::span<const double> x) { return std::sqrt(kernels::dot(x, x)); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  require_shape(a.size() == b.size(), "max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "max_abs_diff: shape mismatch");
  return max_abs_diff(a.flat(), b.flat());
}

void require_shape(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

}  // namespace cdyn
