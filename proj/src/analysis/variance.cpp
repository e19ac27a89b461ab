#include <cmath>
#include <random>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/errors.hpp"

namespace cdyn {

double analytic_dot_variance(const Matrix& t_q, const Matrix& t_h, double sigma) {
  require_shape(t_q.rows() == t_h.rows(), "dot_product_variance: T_q and T_h must share rows");
  const Matrix m = matmul(t_q.transposed(), t_h);
  double f = 0.0;
  for (double v : m.flat()) f += v * v;
  return sigma * sigma * f;
}

VarianceReport dot_product_variance(const Matrix& t_q, const Matrix& t_h, double sigma,
                                    std::size_t samples, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("dot_product_variance: sigma must be nonnegative");
  if (samples < 2) throw ConfigError("dot_product_variance: need at least 2 samples");
  VarianceReport r;
  r.analytic = analytic_dot_variance(t_q, t_h, sigma);
  r.samples = samples;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, std::sqrt(sigma));
  Vector x(t_q.cols()), xp(t_h.cols());
  // Welford accumulation.
  double mean = 0.0, m2 = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    for (double& v : x) v = g(rng);
    for (double& v : xp) v = g(rng);
    const Vector q = matvec(t_q, x);
    const Vector h = matvec(t_h, xp);
    double d = 0.0;
    for (std::size_t r0 = 0; r0 < q.size(); ++r0) d += q[r0] * h[r0];
    const double delta = d - mean;
    mean += delta / static_cast<double>(s + 1);
    m2 += delta * (d - mean);
  }
  r.empirical_mean = mean;
  r.empirical = m2 / static_cast<double>(samples - 1);
  r.mean_stderr = std::sqrt(r.empirical / static_cast<double>(samples));
  r.relative_deviation = r.analytic > 0.0 ? std::abs(r.empirical - r.analytic) / r.analytic
                                          : std::abs(r.empirical);
  return r;
}

double scaled_variance_probe(std::size_t n, double b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0 / std::sqrt(static_cast<double>(n)));
  Matrix tq(n, n), th(n, n);
  for (double& v : tq.flat()) v = g(rng);
  for (double& v : th.flat()) v = b * g(rng);
  return analytic_dot_variance(tq, th, 1.0);
}

}  // namespace cdyn
