#include <algorithm>
#include <cmath>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/errors.hpp"

namespace cdyn {

NearZeroReport near_zero_fraction(const CoefficientMatrix& cm, double epsilon, bool on_normalized) {
  if (!(epsilon > 0.0)) throw ConfigError("near_zero_fraction: epsilon must be positive");
  NearZeroReport r;
  r.epsilon = epsilon;
  r.on_normalized = on_normalized;
  const auto& tri = on_normalized ? cm.normalized : cm.raw;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < tri.size(); ++i) {
    const auto row = tri.row(i);
    const auto c = static_cast<std::size_t>(
        std::count_if(row.begin(), row.end(), [&](double a) { return std::abs(a) <= epsilon; }));
    r.per_row_counts.push_back(c);
    hits += c;
  }
  const std::size_t total = tri.size() * (tri.size() + 1) / 2;
  r.fraction = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  return r;
}

namespace {

// Length of (-inf, t] intersected with [lo, hi].
double below(double t, double lo, double hi) { return std::clamp(t, lo, hi) - lo; }

std::optional<double> analytic_measure(const ReadoutMap& phi, double eps, double lo, double hi) {
  switch (phi.kind) {
    case ReadoutKind::identity:
      return std::max(0.0, std::min(hi, eps) - std::max(lo, -eps));
    case ReadoutKind::exponential:
      return below(std::log(eps), lo, hi);
    case ReadoutKind::relu:
      return below(eps, lo, hi);
    case ReadoutKind::softplus:
      return below(std::log(std::expm1(eps)), lo, hi);
    case ReadoutKind::sigmoid:
      return eps >= 1.0 ? hi - lo : below(std::log(eps / (1.0 - eps)), lo, hi);
    case ReadoutKind::kernel_product: {
      // psi(x)^2 <= eps  <=>  psi(x) <= sqrt(eps) for the nonnegative maps.
      const double s = std::sqrt(eps);
      switch (phi.feature_map) {
        case FeatureMapKind::elu_plus_one:
          return s >= 1.0 ? below(s - 1.0, lo, hi) : below(std::log(s), lo, hi);
        case FeatureMapKind::relu:
          return below(s, lo, hi);
        case FeatureMapKind::softplus:
          return below(std::log(std::expm1(s)), lo, hi);
        case FeatureMapKind::exp:
          return below(std::log(s), lo, hi);
      }
    }
  }
  return std::nullopt;
}

}  // namespace

MeasureResult readout_near_zero_measure(const ReadoutMap& phi, double eps, double lo, double hi,
                                        std::size_t resolution) {
  if (!(lo < hi)) throw ConfigError("readout_near_zero_measure: need lo < hi");
  if (resolution < 2) throw ConfigError("readout_near_zero_measure: resolution must be >= 2");
  const double h = (hi - lo) / static_cast<double>(resolution);
  std::size_t inside = 0;
  for (std::size_t c = 0; c < resolution; ++c) {
    const double x = lo + (static_cast<double>(c) + 0.5) * h;
    double v;
    if (phi.kind == ReadoutKind::kernel_product) {
      v = feature_map(phi.feature_map, x);
      v *= v;
    } else {
      v = phi(x);
    }
    if (std::abs(v) <= eps) ++inside;
  }
  return {static_cast<double>(inside) * h, analytic_measure(phi, eps, lo, hi)};
}

bool positional_distinguishability(const DynamicsSpec& spec, const ProjectionSet& proj,
                                   const Matrix& inputs, std::size_t j, std::size_t jbar,
                                   std::size_t i) {
  if (i >= inputs.rows() || j > i || jbar > i)
    throw ConfigError("positional_distinguishability: need j, jbar <= i < L");
  const auto a = inputs.row(j);
  const auto b = inputs.row(jbar);
  if (!std::equal(a.begin(), a.end(), b.begin()))
    throw ConfigError("positional_distinguishability: inputs at j and jbar are not identical");
  for (const auto& cm : coefficient_matrix(spec, inputs, proj)) {
    const double x = cm.raw(i, j);
    const double y = cm.raw(i, jbar);
    const double scale = std::max({1.0, std::abs(x), std::abs(y)});
    if (std::abs(x - y) > 1e-12 * scale) return true;
  }
  return false;
}

}  // namespace cdyn
