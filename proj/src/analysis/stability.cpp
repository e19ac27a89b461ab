#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/errors.hpp"

namespace cdyn {

GrowthReport normalized_growth_probe(const HeadDynamics& head, double cap) {
  if (head.length() < 2) throw ConfigError("normalized_growth_probe: horizon must be >= 2");
  GrowthReport r;
  r.cap = cap;
  try {
    stream_rows(head, [&](const CoefficientRow& row) {
      double m = 0.0;
      for (double a : row.normalized) m = std::max(m, std::abs(a));
      if (!std::isfinite(m)) throw OverflowError("normalized coefficient", long(row.i));
      r.trajectory.push_back(m);
      if (r.bounded && m > cap) {
        r.bounded = false;
        r.failing_index = static_cast<long>(row.i);
      }
    });
  } catch (const OverflowError& e) {
    if (r.bounded) {
      r.bounded = false;
      r.failing_index = e.index();
    }
  }
  r.classification = r.bounded ? "stable" : "unstable";
  return r;
}

GrowthReport normalized_growth_probe(const DynamicsSpec& spec, const ProjectionSet& proj,
                                     const Matrix& inputs, double cap) {
  std::vector<HeadDynamics> heads;
  try {
    heads = materialize(spec, proj, inputs);
  } catch (const OverflowError& e) {
    GrowthReport r;
    r.cap = cap;
    r.bounded = false;
    r.failing_index = e.index();
    r.classification = "unstable";
    return r;
  }
  GrowthReport out;
  for (const auto& h : heads) {
    GrowthReport r = normalized_growth_probe(h, cap);
    if (out.trajectory.empty()) {
      out = r;
      continue;
    }
    // Combine heads: pointwise max over the common prefix, earliest failure.
    const std::size_t common = std::min(out.trajectory.size(), r.trajectory.size());
    for (std::size_t t = 0; t < common; ++t)
      out.trajectory[t] = std::max(out.trajectory[t], r.trajectory[t]);
    out.trajectory.resize(common);
    if (!r.bounded && (out.bounded || r.failing_index < out.failing_index)) {
      out.bounded = false;
      out.failing_index = r.failing_index;
    }
  }
  out.classification = out.bounded ? "stable" : "unstable";
  return out;
}

std::vector<std::complex<double>> evolution_spectrum(const EvolutionStep& step, std::size_t n) {
  const Matrix a = evolution_matrix(step, n);
  Eigen::MatrixXd m(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) m(r, c) = a(r, c);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  std::vector<std::complex<double>> out(n);
  for (std::size_t r = 0; r < n; ++r) out[r] = es.eigenvalues()[static_cast<Eigen::Index>(r)];
  return out;
}

double spectral_radius(const EvolutionStep& step, std::size_t n) {
  double rad = 0.0;
  for (const auto& e : evolution_spectrum(step, n)) rad = std::max(rad, std::abs(e));
  return rad;
}

}  // namespace cdyn
