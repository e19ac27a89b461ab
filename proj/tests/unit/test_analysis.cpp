#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/architectures/presets.hpp"
#include "cdyn/errors.hpp"
#include "cdyn/verify/verify.hpp"

using namespace cdyn;

namespace {

Matrix gaussian(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (double& v : m.flat()) v = g(rng);
  return m;
}

CoefficientMatrix from_rows(const std::vector<Vector>& rows) {
  CoefficientMatrix cm;
  cm.raw = LowerTriangular(rows.size());
  cm.normalized = LowerTriangular(rows.size());
  cm.eta.assign(rows.size(), 1.0);
  cm.row_shift.assign(rows.size(), 0.0);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) cm.raw(i, j) = cm.normalized(i, j) = rows[i][j];
  return cm;
}

}  // namespace

TEST_CASE("near-zero fraction counts the lower triangle only") {
  const auto cm = from_rows({{1.0}, {0.0, 1.0}, {0.0005, 0.2, -0.0001}});
  const NearZeroReport r = near_zero_fraction(cm, 1e-3);
  CHECK(r.fraction == doctest::Approx(3.0 / 6.0));
  CHECK(r.per_row_counts == std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("readout near-zero measures have the closed forms") {
  const double eps = 1e-3;
  auto measure = [&](ReadoutKind k) {
    ReadoutMap m;
    m.kind = k;
    return readout_near_zero_measure(m, eps, -10.0, 10.0, 2'000'000);
  };
  const auto id = measure(ReadoutKind::identity);
  const auto ex = measure(ReadoutKind::exponential);
  const auto sp = measure(ReadoutKind::softplus);
  const auto re = measure(ReadoutKind::relu);
  CHECK(id.numeric == doctest::Approx(2 * eps).epsilon(1e-3));
  CHECK(ex.numeric == doctest::Approx(std::log(eps) + 10.0).epsilon(1e-5));
  CHECK(sp.numeric == doctest::Approx(std::log(std::expm1(eps)) + 10.0).epsilon(1e-5));
  CHECK(re.numeric == doctest::Approx(10.0 + eps).epsilon(1e-5));
  for (const auto* m : {&id, &ex, &sp, &re}) {
    REQUIRE(m->analytic);
    CHECK(m->numeric == doctest::Approx(*m->analytic).epsilon(1e-4));
  }
  // ReLU's flat half-line dominates; softplus sits marginally above exp.
  CHECK(re.numeric > sp.numeric);
  CHECK(sp.numeric > ex.numeric);
  CHECK(ex.numeric > id.numeric);
}

TEST_CASE("numerical rank and suppressing queries") {
  const std::vector<Vector> two{{1, 0, 0}, {1, 1, 0}};
  CHECK(numerical_rank(two) == 2);
  const auto q = suppressing_query(two, 3);
  REQUIRE(q);
  CHECK(std::abs((*q)[0]) < 1e-12);
  CHECK(std::abs((*q)[1]) < 1e-12);
  CHECK(std::abs(std::abs((*q)[2]) - 1.0) < 1e-12);

  const std::vector<Vector> dependent{{1, 2, 3}, {2, 4, 6}, {0, 1, 0}};
  CHECK(numerical_rank(dependent) == 2);
  CHECK(suppressing_query(dependent, 3));

  const std::vector<Vector> full{{1, 0, 0}, {0, 2, 0}, {1, 1, 1}};
  CHECK(numerical_rank(full) == 3);
  CHECK_FALSE(suppressing_query(full, 3));
  CHECK(suppressing_query({}, 4));
}

TEST_CASE("zero counts under a linear readout respect n - 1") {
  const Dims dims{4, 4, 4, 1};
  const auto p = preset(Architecture::gla, dims, {}, 1);
  Matrix x = gaussian(12, dims.d, 2);
  for (const auto& h : materialize(p.spec, p.proj, x)) {
    const ZeroCountProfile z = zero_count_profile(h);
    REQUIRE(z.bound);
    CHECK(*z.bound == 3);
    for (auto c : z.independent_counts) CHECK(c <= 3);
  }
}

TEST_CASE("dot-product variance matches its trace formula") {
  const Matrix tq = gaussian(6, 6, 3), th = gaussian(6, 6, 4);
  const double analytic = analytic_dot_variance(tq, th, 0.5);
  // sigma^2 ||T_q^T T_h||_F^2, written out.
  double fro = 0.0;
  const Matrix m = matmul(tq.transposed(), th);
  for (double v : m.flat()) fro += v * v;
  CHECK(analytic == doctest::Approx(0.25 * fro).epsilon(1e-12));
  const VarianceReport r = dot_product_variance(tq, th, 0.5, 200000, 5);
  CHECK(r.relative_deviation < 0.05);
  CHECK(std::abs(r.empirical_mean) < 5 * r.mean_stderr + 1e-12);

  CHECK(analytic_dot_variance(Matrix::identity(9), Matrix::identity(9), 1.0) == doctest::Approx(9.0));
  // Scaling by 1/sqrt(n) keeps the variance near 1 across widths.
  for (std::size_t n : {8, 32, 128}) {
    const double v = scaled_variance_probe(n, 1.0 / std::sqrt(double(n)), 7);
    CHECK(v > 0.5);
    CHECK(v < 2.0);
  }
}

TEST_CASE("growth probe separates normalized from unnormalized growth") {
  const Dims dims{4, 4, 4, 1};
  Matrix x = gaussian(80, dims.d, 6);
  const auto proj = ProjectionSet::random(dims, 3);
  const DynamicsSpec bad =
      verify::constant_decay_spec(1.05, ReadoutKind::exponential, NormalizationKind::one, dims);
  const GrowthReport g1 = normalized_growth_probe(bad, proj, x, 1e6);
  CHECK_FALSE(g1.bounded);
  CHECK(g1.failing_index > 0);
  CHECK(g1.classification == "unstable");

  const DynamicsSpec good =
      verify::constant_decay_spec(1.05, ReadoutKind::exponential, NormalizationKind::coefficient_sum, dims);
  const GrowthReport g2 = normalized_growth_probe(good, proj, x, 1e6);
  CHECK(g2.bounded);
  for (double v : g2.trajectory) CHECK(v <= 1.0 + 1e-12);
}

TEST_CASE("spectra of evolution steps") {
  const Vector z{0.6, 0.8, 0.0};
  const auto ev = evolution_spectrum(EvolutionStep::householder(z, 2.0), 3);
  std::vector<double> re;
  for (auto c : ev) re.push_back(c.real());
  std::sort(re.begin(), re.end());
  CHECK(re[0] == doctest::Approx(-1.0));
  CHECK(re[1] == doctest::Approx(1.0));
  CHECK(re[2] == doctest::Approx(1.0));
  CHECK(spectral_radius(EvolutionStep::scalar(0.7), 4) == doctest::Approx(0.7));
  CHECK(spectral_radius(EvolutionStep::gated_householder(z, 1.0, 0.5), 3) == doctest::Approx(0.5));
}

TEST_CASE("combination classes and membership") {
  const Dims dims{4, 4, 4, 1};
  CHECK(combination_class(preset(Architecture::softmax, dims).spec) == ClassLabel::convex);
  CHECK(combination_class(preset(Architecture::mamba2, dims).spec) == ClassLabel::linear);

  const auto convex = from_rows({{1.0}, {0.25, 0.75}});
  CHECK(membership_check(convex, ClassLabel::convex));
  CHECK(membership_check(convex, ClassLabel::affine));
  const auto signed_rows = from_rows({{1.0}, {-0.5, 1.5}});
  CHECK_FALSE(membership_check(signed_rows, ClassLabel::convex));
  CHECK_FALSE(membership_check(signed_rows, ClassLabel::conical));
  CHECK(membership_check(signed_rows, ClassLabel::affine));
  CHECK(membership_check(signed_rows, ClassLabel::linear));

  const Matrix values = Matrix::from_rows({{1, 0}, {0, 1}});
  const Matrix outputs = Matrix::from_rows({{1, 0}, {0.25, 0.75}});
  CHECK(membership_check(outputs, values, convex, ClassLabel::convex));
  const Matrix wrong = Matrix::from_rows({{1, 0}, {0.3, 0.7}});
  CHECK_FALSE(membership_check(wrong, values, convex, ClassLabel::convex));
}

TEST_CASE("positional information requires identical inputs") {
  const Dims dims{4, 4, 4, 1};
  Matrix x = gaussian(6, dims.d, 8);
  for (std::size_t c = 0; c < dims.d; ++c) x(4, c) = x(1, c);
  const auto sm = preset(Architecture::softmax, dims, {}, 1);
  CHECK_FALSE(positional_distinguishability(sm.spec, sm.proj, x, 1, 4, 5));
  const auto mb = preset(Architecture::mamba2, dims, {}, 1);
  CHECK(positional_distinguishability(mb.spec, mb.proj, x, 1, 4, 5));
  CHECK_THROWS_AS(positional_distinguishability(sm.spec, sm.proj, x, 1, 2, 5), ConfigError);
}

TEST_CASE("reports serialize") {
  const auto cm = from_rows({{1.0}, {0.0, 1.0}});
  const NearZeroReport r = near_zero_fraction(cm);
  CHECK(to_json(r)["fraction"].get<double>() == doctest::Approx(1.0 / 3.0));
  std::ostringstream os;
  write_csv(os, r);
  CHECK(os.str().find('\n') != std::string::npos);
}
