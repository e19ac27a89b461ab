#include <algorithm>
#include <cmath>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

namespace {

// Orthonormal basis of span(vectors) by modified Gram-Schmidt with column
// pivoting and one re-orthogonalization pass.
std::vector<Vector> orthonormal_basis(std::vector<Vector> cols, double tol) {
  std::vector<Vector> basis;
  if (cols.empty()) return basis;
  double largest = 0.0;
  for (const auto& c : cols) largest = std::max(largest, norm2(c));
  const double cutoff = tol * largest;
  if (largest == 0.0) return basis;
  const std::size_t dim = cols.front().size();
  while (!cols.empty() && basis.size() < dim) {
    auto pivot = std::max_element(cols.begin(), cols.end(), [](const Vector& a, const Vector& b) {
      return norm2(a) < norm2(b);
    });
    const double nrm = norm2(*pivot);
    if (nrm <= cutoff) break;
    Vector q = *pivot;
    cols.erase(pivot);
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) kernels::axpy(-kernels::dot(b, q), b, q);
    const double qn = norm2(q);
    if (qn <= cutoff) continue;
    kernels::scale(1.0 / qn, q);
    for (auto& c : cols) kernels::axpy(-kernels::dot(q, c), q, c);
    basis.push_back(std::move(q));
  }
  return basis;
}

}  // namespace

std::size_t numerical_rank(const std::vector<Vector>& vectors, double tol) {
  return orthonormal_basis(vectors, tol).size();
}

std::optional<Vector> suppressing_query(const std::vector<Vector>& states, std::size_t dim,
                                        double tol) {
  if (dim == 0) throw ConfigError("suppressing_query: dimension must be positive");
  for (const auto& s : states)
    if (s.size() != dim) throw ShapeError("suppressing_query: states must all have dimension n~");
  const auto basis = orthonormal_basis(states, tol);
  if (basis.size() >= dim) return std::nullopt;
  // The standard basis vector with the largest residual off span(basis).
  Vector best;
  double best_norm = -1.0;
  for (std::size_t c = 0; c < dim; ++c) {
    Vector e(dim, 0.0);
    e[c] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& b : basis) kernels::axpy(-kernels::dot(b, e), b, e);
    const double n = norm2(e);
    if (n > best_norm) {
      best_norm = n;
      best = std::move(e);
    }
  }
  kernels::scale(1.0 / best_norm, best);
  return best;
}

ZeroCountProfile zero_count_profile(const CoefficientMatrix& cm, double threshold) {
  ZeroCountProfile p;
  p.threshold = threshold;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    const auto row = cm.raw.row(i);
    p.raw_counts.push_back(static_cast<std::size_t>(
        std::count_if(row.begin(), row.end(), [&](double a) { return std::abs(a) <= threshold; })));
  }
  return p;
}

ZeroCountProfile zero_count_profile(const HeadDynamics& head, double threshold) {
  const CoefficientMatrix cm = coefficient_matrix(head);
  ZeroCountProfile p = zero_count_profile(cm, threshold);
  if (head.readout.is_linear()) p.bound = head.state_dim() - 1;
  for (std::size_t i = 0; i < cm.size(); ++i) {
    std::vector<Vector> suppressed;
    for (std::size_t j = 0; j <= i; ++j)
      if (std::abs(cm.raw(i, j)) <= threshold) suppressed.push_back(impulse_state(head, j, i).state);
    p.independent_counts.push_back(numerical_rank(suppressed));
  }
  return p;
}

}  // namespace cdyn
