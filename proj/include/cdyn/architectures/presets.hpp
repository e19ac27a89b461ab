#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdyn/core/dynamics_spec.hpp"
#include "cdyn/core/serialize.hpp"

namespace cdyn {

enum class Architecture {
  softmax,
  linear_attn,
  normalized_attn,
  gla,
  mamba2,
  deltanet,
  gated_deltanet,
  mlstm,
};

const std::array<Architecture, 8>& all_architectures();
std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view s);

/// Knobs a preset exposes. JSON keys match the field names.
struct PresetHyper {
  FeatureMapKind feature_map = FeatureMapKind::elu_plus_one;  // linear-attn, normalized-attn
  bool nonnegative_features = false;  // normalized-attn: psi(q), psi(k) before the readout
  double delta_lo = 0.001;            // mamba2 step-size range at init
  double delta_hi = 0.1;
  bool has_delta_bias = false;  // explicit bias overrides sampling (range violations warn)
  double delta_bias = 0.0;
  double a_lo = 1.0;  // mamba2 rate A sampled in [a_lo, a_hi] per head
  double a_hi = 16.0;
  bool normalize_keys = true;  // deltanet family
  bool negative_eigenvalues = false;
  bool output_gate = true;  // mlstm
  double gate_scale = 1.0;  // std of gate weights times sqrt(d)
  double gate_bias = 0.0;
  double tau = 16.0;
  double clamp = 20.0;
};

PresetHyper hyper_from_json(const Json& j);
Json to_json(const PresetHyper& h);

/// Human-readable (A_t, b_j, phi, eta_i) for the architecture.
struct PresetRow {
  std::string evolution;
  std::string scaling;
  std::string readout;
  std::string normalization;
  std::string combination;
};
PresetRow preset_row(Architecture a);

struct ArchitecturePreset {
  Architecture name = Architecture::softmax;
  PresetHyper hyper;
  DynamicsSpec spec;
  ProjectionSet proj;
  std::vector<std::string> warnings;
};

/// Spec plus random default weights for one architecture. Gate weights and
/// projections are drawn from `seed`.
///
/// GLA uses eta = 1 (no running normalizer), unlike linear-attn, which divides
/// by the coefficient sum. Gated variants usually drop that denominator.
ArchitecturePreset preset(Architecture a, const Dims& dims, const PresetHyper& hyper = {},
                          std::uint64_t seed = 0);

/// psi applied elementwise.
Vector kernel_feature(FeatureMapKind map, std::span<const double> vec);

/// The architecture computed from its own recurrence or closed form, using the
/// preset's weights but none of the engine's evaluation code.
Matrix native_forward(const ArchitecturePreset& p, const Matrix& inputs);
Matrix native_forward(const ArchitecturePreset& p, const Matrix& inputs, const ProjectionSet& proj);

}  // namespace cdyn
