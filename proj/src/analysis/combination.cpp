#include <cmath>

#include "cdyn/analysis/analysis.hpp"

namespace cdyn {

std::string_view to_string(ClassLabel c) {
  switch (c) {
    case ClassLabel::convex:
      return "convex";
    case ClassLabel::conical:
      return "conical";
    case ClassLabel::affine:
      return "affine";
    case ClassLabel::linear:
      return "linear";
  }
  return "linear";
}

ClassLabel combination_class(const DynamicsSpec& spec) {
  const bool sums_to_one = spec.normalization.kind == NormalizationKind::coefficient_sum;
  // Every other normalizer is positive by construction (rho > 0, exp, max(.,1)/sigmoid).
  const bool nonnegative = spec.readout.is_nonnegative();
  if (nonnegative && sums_to_one) return ClassLabel::convex;
  if (nonnegative) return ClassLabel::conical;
  if (sums_to_one) return ClassLabel::affine;
  return ClassLabel::linear;
}

bool membership_check(const CoefficientMatrix& cm, ClassLabel label, double tol) {
  for (std::size_t i = 0; i < cm.size(); ++i) {
    double sum = 0.0;
    for (double a : cm.normalized.row(i)) {
      if (!std::isfinite(a)) return false;
      sum += a;
      if ((label == ClassLabel::convex || label == ClassLabel::conical) && a < -tol) return false;
      if (label == ClassLabel::convex && a > 1.0 + tol) return false;
    }
    if ((label == ClassLabel::convex || label == ClassLabel::affine) && std::abs(sum - 1.0) > tol)
      return false;
  }
  return true;
}

bool membership_check(const Matrix& outputs, const Matrix& values, const CoefficientMatrix& cm,
                      ClassLabel label, double tol) {
  if (outputs.rows() != cm.size() || values.rows() != cm.size() ||
      outputs.cols() != values.cols())
    return false;
  if (max_abs_diff(outputs, mix_values(cm, values)) > tol) return false;
  return membership_check(cm, label, 1e-12);
}

}  // namespace cdyn
