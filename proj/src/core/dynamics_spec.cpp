#include "cdyn/core/dynamics_spec.hpp"

#include <array>
#include <cmath>
#include <random>
#include <utility>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

void Dims::validate() const {
  if (d == 0 || n == 0 || d_v == 0 || heads == 0) throw ConfigError("dims: all sizes must be >= 1");
  if (n % heads != 0) throw ConfigError("dims: n must be divisible by heads");
  if (d_v % heads != 0) throw ConfigError("dims: d_v must be divisible by heads");
}

void ProjectionSet::validate() const {
  const std::size_t d = w_q.cols();
  if (w_k.cols() != d) throw ShapeError("projection W_K: input width differs from W_Q");
  if (w_v.cols() != d) throw ShapeError("projection W_V: input width differs from W_Q");
  if (w_q.rows() != w_k.rows()) throw ShapeError("projection W_K: state width differs from W_Q");
  for (const auto* m : {&w_q, &w_k, &w_v})
    if (!m->all_finite()) throw ConfigError("projection: non-finite entry");
}

ProjectionSet ProjectionSet::random(const Dims& dims, std::uint64_t seed, double scale) {
  dims.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale / std::sqrt(static_cast<double>(dims.d)));
  auto fill = [&](std::size_t rows) {
    Matrix m(rows, dims.d);
    for (auto& v : m.flat()) v = g(rng);
    return m;
  };
  ProjectionSet p;
  p.w_q = fill(dims.n);
  p.w_k = fill(dims.n);
  p.w_v = fill(dims.d_v);
  return p;
}

ProjectionSet ProjectionSet::identity(std::size_t d) {
  return {Matrix::identity(d), Matrix::identity(d), Matrix::identity(d)};
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

double feature_map(FeatureMapKind kind, double x) {
  switch (kind) {
    case FeatureMapKind::elu_plus_one:
      return x > 0 ? x + 1.0 : std::exp(x);
    case FeatureMapKind::relu:
      return x > 0 ? x : 0.0;
    case FeatureMapKind::softplus:
      return softplus(x);
    case FeatureMapKind::exp:
      return std::exp(x);
  }
  return 0.0;
}

double feature_map_derivative(FeatureMapKind kind, double x) {
  switch (kind) {
    case FeatureMapKind::elu_plus_one:
      return x > 0 ? 1.0 : std::exp(x);
    case FeatureMapKind::relu:
      return x > 0 ? 1.0 : 0.0;
    case FeatureMapKind::softplus:
      return sigmoid(x);
    case FeatureMapKind::exp:
      return std::exp(x);
  }
  return 0.0;
}

double ReadoutMap::operator()(double x) const {
  switch (kind) {
    case ReadoutKind::identity:
      return x;
    case ReadoutKind::exponential:
      return std::exp(x);
    case ReadoutKind::relu:
      return x > 0 ? x : 0.0;
    case ReadoutKind::softplus:
      return softplus(x);
    case ReadoutKind::sigmoid:
      return sigmoid(x);
    case ReadoutKind::kernel_product:
      break;
  }
  throw UnsupportedError("kernel-product readout is evaluated on (q, h) pairs, not scalars");
}

double ReadoutMap::derivative(double x) const {
  switch (kind) {
    case ReadoutKind::identity:
      return 1.0;
    case ReadoutKind::exponential:
      return std::exp(x);
    case ReadoutKind::relu:
      return x > 0 ? 1.0 : 0.0;
    case ReadoutKind::softplus:
      return sigmoid(x);
    case ReadoutKind::sigmoid: {
      const double s = sigmoid(x);
      return s * (1.0 - s);
    }
    case ReadoutKind::kernel_product:
      break;
  }
  throw UnsupportedError("kernel-product readout has no scalar derivative");
}

double AffineGate::apply_row(std::size_t r, std::span<const double> x) const {
  return kernels::dot(weight.row(r), x) + bias[r];
}

void AffineGate::validate(std::size_t rows, std::size_t d, const std::string& what) const {
  if (weight.rows() != rows || weight.cols() != d)
    throw ConfigError(what + ": gate weight must be " + std::to_string(rows) + "x" +
                      std::to_string(d));
  if (bias.size() != rows) throw ConfigError(what + ": gate bias must have " +
                                             std::to_string(rows) + " entries");
  if (!weight.all_finite()) throw ConfigError(what + ": non-finite gate weight");
  for (double b : bias)
    if (!std::isfinite(b)) throw ConfigError(what + ": non-finite gate bias");
}

AffineGate AffineGate::random(std::size_t rows, std::size_t d, std::uint64_t seed,
                              double weight_scale, double bias) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, weight_scale / std::sqrt(static_cast<double>(d)));
  AffineGate gate{Matrix(rows, d), Vector(rows, bias)};
  for (auto& v : gate.weight.flat()) v = g(rng);
  return gate;
}

namespace {

void check_decay(const DecayRule& decay, std::size_t rows_scalar, std::size_t rows_diag,
                 bool diagonal, const Dims& dims, bool allow_unstable, const char* what) {
  const std::size_t rows = diagonal ? rows_diag : rows_scalar;
  if (decay.source == ParameterSource::constant) {
    const bool ok_size = decay.value.size() == 1 || decay.value.size() == rows;
    if (!ok_size)
      throw ConfigError(std::string(what) + ": constant lambda must have 1 or " +
                        std::to_string(rows) + " entries");
    for (double v : decay.value) {
      if (!std::isfinite(v)) throw ConfigError(std::string(what) + ": non-finite lambda");
      if (!allow_unstable && std::abs(v) > 1.0)
        throw StabilityError(std::string(what) + ": |lambda| > 1 requires allow_unstable");
    }
    return;
  }
  decay.gate.validate(rows, dims.d, what);
  if (decay.parameterization == DecayParameterization::mamba2) {
    if (decay.rate.size() != rows)
      throw ConfigError(std::string(what) + ": mamba2 rate must have one entry per gate row");
    for (double a : decay.rate)
      if (!(a > 0.0) || !std::isfinite(a))
        throw ConfigError(std::string(what) + ": mamba2 rate must be positive");
  }
  if (decay.parameterization == DecayParameterization::gla && !(decay.tau > 0.0))
    throw ConfigError(std::string(what) + ": gla tau must be positive");
  if (decay.parameterization == DecayParameterization::exponential && !(decay.clamp > 0.0))
    throw ConfigError(std::string(what) + ": clamp must be positive");
}

}  // namespace

void DynamicsSpec::validate() const {
  dims.validate();
  const std::size_t nh = dims.head_dim();
  if (!(eta_floor > 0.0)) throw ConfigError("eta_floor must be positive");

  const auto& ev = evolution;
  switch (ev.kind) {
    case EvolutionKind::identity:
      break;
    case EvolutionKind::scalar:
      check_decay(ev.decay, dims.heads, dims.n, false, dims, ev.allow_unstable, "evolution.scalar");
      break;
    case EvolutionKind::diagonal:
      check_decay(ev.decay, dims.heads, dims.n, true, dims, ev.allow_unstable, "evolution.diagonal");
      break;
    case EvolutionKind::gated_householder:
      check_decay(ev.decay, dims.heads, dims.n, false, dims, ev.allow_unstable, "evolution.gate");
      [[fallthrough]];
    case EvolutionKind::householder: {
      const auto& hh = ev.householder;
      if (hh.direction == DirectionSource::learned)
        hh.direction_gate.validate(dims.n, dims.d, "evolution.direction");
      if (hh.direction == DirectionSource::constant) {
        if (hh.direction_value.size() != dims.n)
          throw ConfigError("evolution.direction: constant direction must have n entries");
      }
      if (hh.strength_source == ParameterSource::input_derived) {
        hh.strength_gate.validate(dims.heads, dims.d, "evolution.strength");
      } else {
        if (!std::isfinite(hh.strength)) throw ConfigError("evolution.strength: non-finite");
        if (!ev.allow_unstable && (hh.strength < 0.0 || hh.strength > 2.0))
          throw StabilityError("evolution.strength: beta outside [0, 2] requires allow_unstable");
      }
      if (hh.direction == DirectionSource::constant && !ev.allow_unstable) {
        // Eigenvalue along z is 1 - beta |z|^2 (|z| = 1 after normalization).
        for (std::size_t h = 0; h < dims.heads; ++h) {
          std::span<const double> z(hh.direction_value.data() + h * nh, nh);
          double zz = kernels::dot(z, z);
          if (zz == 0.0 && hh.normalize_direction)
            throw ConfigError("evolution.direction: zero Householder direction");
          if (hh.normalize_direction) zz = 1.0;
          if (hh.strength_source == ParameterSource::constant) {
            const double ev0 = 1.0 - hh.strength * zz;
            if (ev0 < -1.0 || ev0 > 1.0)
              throw StabilityError("evolution.householder: eigenvalue outside [-1, 1]");
          }
        }
      }
      break;
    }
  }

  switch (scaling.kind) {
    case ScalingKind::constant:
      if (!std::isfinite(scaling.value)) throw ConfigError("scaling: non-finite constant");
      break;
    case ScalingKind::inverse_sqrt_n:
      break;
    case ScalingKind::input_derived:
      switch (scaling.parameterization) {
        case ScalingParameterization::delta: {
          const bool scalar_mamba = ev.kind == EvolutionKind::scalar ||
                                    ev.kind == EvolutionKind::gated_householder;
          if (!scalar_mamba || ev.decay.source != ParameterSource::input_derived ||
              ev.decay.parameterization != DecayParameterization::mamba2)
            throw ConfigError("scaling delta requires an input-derived mamba2 scalar decay");
          break;
        }
        case ScalingParameterization::beta_over_sqrt_n:
          if (ev.kind != EvolutionKind::householder && ev.kind != EvolutionKind::gated_householder)
            throw ConfigError("scaling beta_over_sqrt_n requires a Householder evolution");
          break;
        default:
          scaling.gate.validate(dims.heads, dims.d, "scaling");
      }
      break;
  }

  switch (normalization.kind) {
    case NormalizationKind::geometric:
      if (!(normalization.rho > 0.0) || !std::isfinite(normalization.rho))
        throw ConfigError("normalization: geometric rho must be positive");
      break;
    case NormalizationKind::input_derived:
      normalization.gate.validate(dims.heads, dims.d, "normalization");
      break;
    case NormalizationKind::external_state:
      if (!normalization.gate.empty())
        normalization.gate.validate(dims.heads, dims.d, "normalization.output_gate");
      break;
    default:
      break;
  }
}

// ---------------------------------------------------------------------------
// Enum names. Hyphenated lowercase, stable across the CLI and JSON schema.

namespace {

template <typename E, std::size_t N>
using NameTable = std::array<std::pair<E, std::string_view>, N>;

constexpr NameTable<ReadoutKind, 6> kReadout{{{ReadoutKind::identity, "identity"},
                                              {ReadoutKind::exponential, "exponential"},
                                              {ReadoutKind::relu, "relu"},
                                              {ReadoutKind::softplus, "softplus"},
                                              {ReadoutKind::sigmoid, "sigmoid-like"},
                                              {ReadoutKind::kernel_product, "kernel-product"}}};
constexpr NameTable<FeatureMapKind, 4> kFeature{{{FeatureMapKind::elu_plus_one, "elu-plus-one"},
                                                 {FeatureMapKind::relu, "relu"},
                                                 {FeatureMapKind::softplus, "softplus"},
                                                 {FeatureMapKind::exp, "exp"}}};
constexpr NameTable<EvolutionKind, 5> kEvolution{
    {{EvolutionKind::identity, "identity"},
     {EvolutionKind::scalar, "scalar"},
     {EvolutionKind::diagonal, "diagonal"},
     {EvolutionKind::householder, "householder"},
     {EvolutionKind::gated_householder, "gated-householder"}}};
constexpr NameTable<ParameterSource, 2> kSource{
    {{ParameterSource::constant, "constant"}, {ParameterSource::input_derived, "input-derived"}}};
constexpr NameTable<DecayParameterization, 3> kDecay{
    {{DecayParameterization::gla, "gla"},
     {DecayParameterization::mamba2, "mamba2"},
     {DecayParameterization::exponential, "exponential"}}};
constexpr NameTable<DirectionSource, 3> kDirection{{{DirectionSource::keys, "keys"},
                                                    {DirectionSource::learned, "learned"},
                                                    {DirectionSource::constant, "constant"}}};
constexpr NameTable<ScalingKind, 3> kScaling{{{ScalingKind::constant, "constant"},
                                              {ScalingKind::inverse_sqrt_n, "inverse-sqrt-n"},
                                              {ScalingKind::input_derived, "input-derived"}}};
constexpr NameTable<ScalingParameterization, 5> kScalingParam{
    {{ScalingParameterization::delta, "delta"},
     {ScalingParameterization::beta_over_sqrt_n, "beta-over-sqrt-n"},
     {ScalingParameterization::exp_gate_over_sqrt_n, "exp-gate-over-sqrt-n"},
     {ScalingParameterization::sigmoid, "sigmoid"},
     {ScalingParameterization::sigmoid_over_sqrt_n, "sigmoid-over-sqrt-n"}}};
constexpr NameTable<NormalizationKind, 5> kNorm{
    {{NormalizationKind::one, "one"},
     {NormalizationKind::coefficient_sum, "coefficient-sum"},
     {NormalizationKind::geometric, "geometric"},
     {NormalizationKind::external_state, "external-state"},
     {NormalizationKind::input_derived, "input-derived"}}};

template <typename E, std::size_t N>
std::string_view name_of(const NameTable<E, N>& table, E e) {
  for (const auto& [k, v] : table)
    if (k == e) return v;
  return "?";
}

template <typename E, std::size_t N>
E parse_of(const NameTable<E, N>& table, std::string_view s, const char* what) {
  for (const auto& [k, v] : table)
    if (v == s) return k;
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

}  // namespace

std::string_view to_string(ReadoutKind k) { return name_of(kReadout, k); }
std::string_view to_string(FeatureMapKind k) { return name_of(kFeature, k); }
std::string_view to_string(EvolutionKind k) { return name_of(kEvolution, k); }
std::string_view to_string(ParameterSource k) { return name_of(kSource, k); }
std::string_view to_string(DecayParameterization k) { return name_of(kDecay, k); }
std::string_view to_string(DirectionSource k) { return name_of(kDirection, k); }
std::string_view to_string(ScalingKind k) { return name_of(kScaling, k); }
std::string_view to_string(ScalingParameterization k) { return name_of(kScalingParam, k); }
std::string_view to_string(NormalizationKind k) { return name_of(kNorm, k); }

ReadoutKind parse_readout_kind(std::string_view s) { return parse_of(kReadout, s, "readout"); }
FeatureMapKind parse_feature_map(std::string_view s) {
  return parse_of(kFeature, s, "feature map");
}
EvolutionKind parse_evolution_kind(std::string_view s) {
  return parse_of(kEvolution, s, "evolution kind");
}
ParameterSource parse_parameter_source(std::string_view s) {
  return parse_of(kSource, s, "parameter source");
}
DecayParameterization parse_decay_parameterization(std::string_view s) {
  return parse_of(kDecay, s, "decay parameterization");
}
DirectionSource parse_direction_source(std::string_view s) {
  return parse_of(kDirection, s, "direction source");
}
ScalingKind parse_scaling_kind(std::string_view s) { return parse_of(kScaling, s, "scaling kind"); }
ScalingParameterization parse_scaling_parameterization(std::string_view s) {
  return parse_of(kScalingParam, s, "scaling parameterization");
}
NormalizationKind parse_normalization_kind(std::string_view s) {
  return parse_of(kNorm, s, "normalization kind");
}

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace cdyn
