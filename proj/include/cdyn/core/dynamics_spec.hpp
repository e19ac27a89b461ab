#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include "cdyn/linalg.hpp"

// Structural description of one coefficient-dynamics instance: how keys are
// scaled when they enter the state (scaling), how the state evolves between
// the write time j and the read time i (evolution), how the query reads it out
// (readout) and how each row of coefficients is rescaled (normalization).

namespace cdyn {

struct Dims {
  std::size_t d = 0;      // input width
  std::size_t n = 0;      // state (query/key) width, all heads
  std::size_t d_v = 0;    // value width, all heads
  std::size_t heads = 1;

  std::size_t head_dim() const { return n / heads; }
  std::size_t head_value_dim() const { return d_v / heads; }
  void validate() const;
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// W_Q (n x d), W_K (n x d), W_V (d_v x d).
struct ProjectionSet {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;

  void validate() const;
  std::size_t input_dim() const { return w_q.cols(); }

  /// Entries drawn from N(0, scale^2 / d).
  static ProjectionSet random(const Dims& dims, std::uint64_t seed, double scale = 1.0);
  /// Identity maps; requires d == n == d_v.
  static ProjectionSet identity(std::size_t d);
};

enum class FeatureMapKind { elu_plus_one, relu, softplus, exp };

enum class ReadoutKind { identity, exponential, relu, softplus, sigmoid, kernel_product };

/// phi: applied to q_i^T h_{i,j}; kernel_product instead evaluates psi(q)^T psi(h).
struct ReadoutMap {
  ReadoutKind kind = ReadoutKind::identity;
  FeatureMapKind feature_map = FeatureMapKind::elu_plus_one;

  double operator()(double x) const;
  double derivative(double x) const;
  bool is_pointwise() const { return kind != ReadoutKind::kernel_product; }
  bool is_linear() const { return kind == ReadoutKind::identity; }
  bool is_nonnegative() const { return kind != ReadoutKind::identity; }
};

/// pre[r] = weight.row(r) . x + bias[r]
struct AffineGate {
  Matrix weight;
  Vector bias;

  std::size_t rows() const { return weight.rows(); }
  bool empty() const { return weight.empty(); }
  double apply_row(std::size_t r, std::span<const double> x) const;
  void validate(std::size_t rows, std::size_t d, const std::string& what) const;
  static AffineGate random(std::size_t rows, std::size_t d, std::uint64_t seed, double weight_scale,
                           double bias);
};

enum class ParameterSource { constant, input_derived };

enum class DecayParameterization {
  gla,          // sigmoid(pre)^(1/tau)
  mamba2,       // exp(-softplus(pre) * a)
  exponential,  // exp(clamp(pre))
};

/// lambda_t for scalar and diagonal evolution, and the gate of gated Householder.
struct DecayRule {
  ParameterSource source = ParameterSource::constant;
  // Constant: one entry shared by all heads, one per head (scalar) or n entries (diagonal).
  Vector value{1.0};
  DecayParameterization parameterization = DecayParameterization::mamba2;
  AffineGate gate;  // rows = heads (scalar/gate) or n (diagonal)
  Vector rate;      // mamba2 "A", one per gate row, > 0
  double tau = 16.0;
  double clamp = 20.0;
};

enum class DirectionSource { keys, learned, constant };

struct HouseholderRule {
  DirectionSource direction = DirectionSource::keys;
  AffineGate direction_gate;  // learned, rows = n
  Vector direction_value;     // constant, size n
  bool normalize_direction = true;
  ParameterSource strength_source = ParameterSource::constant;
  double strength = 2.0;
  AffineGate strength_gate;  // rows = heads
  bool negative_eigenvalues = false;  // beta = 2 sigmoid(.) instead of sigmoid(.)
};

enum class EvolutionKind { identity, scalar, diagonal, householder, gated_householder };

struct EvolutionRule {
  EvolutionKind kind = EvolutionKind::identity;
  DecayRule decay;
  HouseholderRule householder;
  bool normalize_keys = false;  // L2-normalize every key (per head) before use
  bool allow_unstable = false;
};

enum class ScalingKind { constant, inverse_sqrt_n, input_derived };

enum class ScalingParameterization {
  delta,                 // b_j = Delta_j shared with a mamba2 decay
  beta_over_sqrt_n,      // b_j = beta_j / sqrt(n~) shared with the Householder strength
  exp_gate_over_sqrt_n,  // b_j = exp(clamp(pre)) / sqrt(n~)
  sigmoid,               // b_j = sigmoid(pre)
  sigmoid_over_sqrt_n,   // b_j = sigmoid(pre) / sqrt(n~)
};

struct ScalingRule {
  ScalingKind kind = ScalingKind::inverse_sqrt_n;
  double value = 1.0;
  ScalingParameterization parameterization = ScalingParameterization::sigmoid_over_sqrt_n;
  AffineGate gate;  // rows = heads
  double clamp = 20.0;
};

enum class NormalizationKind { one, coefficient_sum, geometric, external_state, input_derived };

struct NormalizationRule {
  NormalizationKind kind = NormalizationKind::one;
  double rho = 1.0;
  // input_derived: log eta per head. external_state: output-gate pre-activation
  // per head (empty gate means o_i = 1).
  AffineGate gate;
};

struct DynamicsSpec {
  ReadoutMap readout;
  EvolutionRule evolution;
  ScalingRule scaling;
  NormalizationRule normalization;
  Dims dims;
  double eta_floor = 1e-30;

  /// Shape and constant-stability checks; throws ConfigError / StabilityError.
  void validate() const;
};

std::string_view to_string(ReadoutKind k);
std::string_view to_string(FeatureMapKind k);
std::string_view to_string(EvolutionKind k);
std::string_view to_string(ParameterSource k);
std::string_view to_string(DecayParameterization k);
std::string_view to_string(DirectionSource k);
std::string_view to_string(ScalingKind k);
std::string_view to_string(ScalingParameterization k);
std::string_view to_string(NormalizationKind k);

ReadoutKind parse_readout_kind(std::string_view s);
FeatureMapKind parse_feature_map(std::string_view s);
EvolutionKind parse_evolution_kind(std::string_view s);
ParameterSource parse_parameter_source(std::string_view s);
DecayParameterization parse_decay_parameterization(std::string_view s);
DirectionSource parse_direction_source(std::string_view s);
ScalingKind parse_scaling_kind(std::string_view s);
ScalingParameterization parse_scaling_parameterization(std::string_view s);
NormalizationKind parse_normalization_kind(std::string_view s);

double sigmoid(double x);
double softplus(double x);
double feature_map(FeatureMapKind kind, double x);
double feature_map_derivative(FeatureMapKind kind, double x);

/// Splitmix-derived seed for an independent stream `tag` under `seed`.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace cdyn
