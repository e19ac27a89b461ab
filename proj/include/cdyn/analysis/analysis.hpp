#pragma once

#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdyn/core/engine.hpp"
#include "cdyn/core/serialize.hpp"

// Diagnostics over coefficient matrices, impulse states and specs.

namespace cdyn {

// ---- near-zero geometry -----------------------------------------------------

struct NearZeroReport {
  double epsilon = 1e-3;
  bool on_normalized = true;
  double fraction = 0.0;  // over the lower triangle
  std::vector<std::size_t> per_row_counts;
  double theoretical_measure = 0.0;  // set by callers that also probe the readout map
};

NearZeroReport near_zero_fraction(const CoefficientMatrix& cm, double epsilon = 1e-3,
                                  bool on_normalized = true);

struct MeasureResult {
  double numeric = 0.0;  // midpoint rule
  std::optional<double> analytic;
};

/// Length of {x in [lo, hi] : |phi(x)| <= eps}. For kernel-product readouts
/// phi(x) = psi(x)^2 is used.
MeasureResult readout_near_zero_measure(const ReadoutMap& phi, double eps, double lo, double hi,
                                        std::size_t resolution);

// ---- positional information -------------------------------------------------

/// True iff alpha_{i,j} differs from alpha_{i,jbar} (any head) beyond 1e-12,
/// relative to max(1, |alpha|). Requires rows j and jbar of `inputs` identical.
bool positional_distinguishability(const DynamicsSpec& spec, const ProjectionSet& proj,
                                   const Matrix& inputs, std::size_t j, std::size_t jbar,
                                   std::size_t i);

// ---- suppression ------------------------------------------------------------

/// Numerical rank via column-pivoted Gram-Schmidt; a column counts when its
/// residual exceeds tol times the largest input norm.
std::size_t numerical_rank(const std::vector<Vector>& vectors, double tol = 1e-10);

/// Unit q with q^T h = 0 for every state, or nullopt when the states span the
/// whole space. Dimension must be supplied for the empty list.
std::optional<Vector> suppressing_query(const std::vector<Vector>& states, std::size_t dim,
                                        double tol = 1e-10);

struct ZeroCountProfile {
  double threshold = 1e-6;
  std::vector<std::size_t> raw_counts;
  std::vector<std::size_t> independent_counts;  // rank of the suppressed states (empty if unknown)
  std::optional<std::size_t> bound;              // n~ - 1 for linear readouts
};

ZeroCountProfile zero_count_profile(const CoefficientMatrix& cm, double threshold = 1e-6);
/// Adds independent counts and the bound from the impulse states of `head`.
ZeroCountProfile zero_count_profile(const HeadDynamics& head, double threshold = 1e-6);

// ---- variance ---------------------------------------------------------------

struct VarianceReport {
  double analytic = 0.0;  // sigma^2 ||T_q^T T_h||_F^2
  double empirical = 0.0;
  double empirical_mean = 0.0;
  double mean_stderr = 0.0;
  std::size_t samples = 0;
  double relative_deviation = 0.0;
};

/// q = T_q x, h = T_h x' with x, x' ~ N(0, sigma I) independent. `sigma` is a variance.
VarianceReport dot_product_variance(const Matrix& t_q, const Matrix& t_h, double sigma,
                                    std::size_t samples, std::uint64_t seed);
double analytic_dot_variance(const Matrix& t_q, const Matrix& t_h, double sigma);

/// T_q, T_h with N(0, 1/n) entries, T_h scaled by b; returns the analytic variance.
double scaled_variance_probe(std::size_t n, double b, std::uint64_t seed);

// ---- stability --------------------------------------------------------------

struct GrowthReport {
  std::vector<double> trajectory;  // max_j |alpha_{L',j} / eta_{L'}|
  double cap = 1e6;
  bool bounded = true;
  long failing_index = -1;  // first row above the cap or overflowing
  std::string classification;
};

GrowthReport normalized_growth_probe(const DynamicsSpec& spec, const ProjectionSet& proj,
                                     const Matrix& inputs, double cap = 1e6);
GrowthReport normalized_growth_probe(const HeadDynamics& head, double cap = 1e6);

std::vector<std::complex<double>> evolution_spectrum(const EvolutionStep& step, std::size_t n);
double spectral_radius(const EvolutionStep& step, std::size_t n);

// ---- combination classes ----------------------------------------------------

enum class ClassLabel { convex, conical, affine, linear };
std::string_view to_string(ClassLabel c);

ClassLabel combination_class(const DynamicsSpec& spec);
/// Checks the coefficient constraints of `label`, and that outputs equal the
/// mixture of values under those coefficients.
bool membership_check(const CoefficientMatrix& cm, ClassLabel label, double tol = 1e-12);
bool membership_check(const Matrix& outputs, const Matrix& values, const CoefficientMatrix& cm,
                      ClassLabel label, double tol = 1e-10);

// ---- serialization ----------------------------------------------------------

Json to_json(const NearZeroReport& r);
Json to_json(const MeasureResult& r);
Json to_json(const ZeroCountProfile& r);
Json to_json(const VarianceReport& r);
Json to_json(const GrowthReport& r);
void write_csv(std::ostream& os, const NearZeroReport& r);
void write_csv(std::ostream& os, const ZeroCountProfile& r);
void write_csv(std::ostream& os, const GrowthReport& r);

}  // namespace cdyn
