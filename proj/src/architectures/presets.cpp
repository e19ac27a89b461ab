#include <cmath>
#include <random>
#include <sstream>

#include "cdyn/architectures/presets.hpp"
#include "cdyn/errors.hpp"

namespace cdyn {

namespace {

constexpr std::array<Architecture, 8> kAll{
    Architecture::softmax, Architecture::linear_attn, Architecture::normalized_attn,
    Architecture::gla,     Architecture::mamba2,      Architecture::deltanet,
    Architecture::gated_deltanet, Architecture::mlstm,
};

constexpr std::array<std::string_view, 8> kNames{
    "softmax", "linear-attn", "normalized-attn", "gla",
    "mamba2",  "deltanet",    "gated-deltanet",  "mlstm",
};

double inverse_softplus(double y) { return y + std::log(-std::expm1(-y)); }

}  // namespace

const std::array<Architecture, 8>& all_architectures() { return kAll; }

std::string_view to_string(Architecture a) { return kNames[static_cast<std::size_t>(a)]; }

Architecture parse_architecture(std::string_view s) {
  for (std::size_t i = 0; i < kNames.size(); ++i)
    if (kNames[i] == s) return kAll[i];
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

PresetHyper hyper_from_json(const Json& j) {
  require_known_keys(j,
                     {"feature_map", "nonnegative_features", "delta_lo", "delta_hi", "delta_bias",
                      "a_lo", "a_hi", "normalize_keys", "negative_eigenvalues", "output_gate",
                      "gate_scale", "gate_bias", "tau", "clamp"},
                     "hyper");
  PresetHyper h;
  try {
    if (j.contains("feature_map")) h.feature_map = parse_feature_map(j["feature_map"].get<std::string>());
    h.nonnegative_features = j.value("nonnegative_features", h.nonnegative_features);
    h.delta_lo = j.value("delta_lo", h.delta_lo);
    h.delta_hi = j.value("delta_hi", h.delta_hi);
    if (j.contains("delta_bias")) {
      h.has_delta_bias = true;
      h.delta_bias = j["delta_bias"].get<double>();
    }
    h.a_lo = j.value("a_lo", h.a_lo);
    h.a_hi = j.value("a_hi", h.a_hi);
    h.normalize_keys = j.value("normalize_keys", h.normalize_keys);
    h.negative_eigenvalues = j.value("negative_eigenvalues", h.negative_eigenvalues);
    h.output_gate = j.value("output_gate", h.output_gate);
    h.gate_scale = j.value("gate_scale", h.gate_scale);
    h.gate_bias = j.value("gate_bias", h.gate_bias);
    h.tau = j.value("tau", h.tau);
    h.clamp = j.value("clamp", h.clamp);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("hyper: ") + e.what());
  }
  if (!(h.delta_lo > 0.0 && h.delta_lo <= h.delta_hi))
    throw ConfigError("hyper: need 0 < delta_lo <= delta_hi");
  if (!(h.a_lo > 0.0 && h.a_lo <= h.a_hi)) throw ConfigError("hyper: need 0 < a_lo <= a_hi");
  if (!(h.tau > 0.0) || !(h.clamp > 0.0)) throw ConfigError("hyper: tau and clamp must be positive");
  return h;
}

Json to_json(const PresetHyper& h) {
  Json j{{"feature_map", to_string(h.feature_map)},
         {"nonnegative_features", h.nonnegative_features},
         {"delta_lo", h.delta_lo},
         {"delta_hi", h.delta_hi},
         {"a_lo", h.a_lo},
         {"a_hi", h.a_hi},
         {"normalize_keys", h.normalize_keys},
         {"negative_eigenvalues", h.negative_eigenvalues},
         {"output_gate", h.output_gate},
         {"gate_scale", h.gate_scale},
         {"gate_bias", h.gate_bias},
         {"tau", h.tau},
         {"clamp", h.clamp}};
  if (h.has_delta_bias) j["delta_bias"] = h.delta_bias;
  return j;
}

PresetRow preset_row(Architecture a) {
  switch (a) {
    case Architecture::softmax:
      return {"I", "1/sqrt(n)", "exp", "sum_j alpha_ij", "convex"};
    case Architecture::linear_attn:
      return {"I", "1/sqrt(n)", "psi(q)^T psi(h)", "sum_j alpha_ij", "convex"};
    case Architecture::normalized_attn:
      return {"I", "1/sqrt(n)", "Id (psi(q)^T psi(h) with nonnegative features)", "exp(W_eta x_i)",
              "linear (conical with nonnegative features)"};
    case Architecture::gla:
      return {"diag(sigmoid(W x + c)^(1/tau))", "1/sqrt(n)", "Id", "1", "linear"};
    case Architecture::mamba2:
      return {"exp(-Delta_t a)", "Delta_j = softplus(W x + c)", "Id", "1", "linear"};
    case Architecture::deltanet:
      return {"I - beta_t k_t k_t^T", "beta_j/sqrt(n)", "Id", "1", "linear"};
    case Architecture::gated_deltanet:
      return {"alpha_t (I - beta_t k_t k_t^T)", "beta_j/sqrt(n)", "Id", "1", "linear"};
    case Architecture::mlstm:
      return {"exp(f_t)", "exp(i_j)/sqrt(n)", "Id", "max(|q_i^T n_i|, 1) / o_i", "linear"};
  }
  return {};
}

ArchitecturePreset preset(Architecture a, const Dims& dims, const PresetHyper& hyper,
                          std::uint64_t seed) {
  dims.validate();
  ArchitecturePreset p;
  p.name = a;
  p.hyper = hyper;
  p.proj = ProjectionSet::random(dims, sub_seed(seed, 0));

  DynamicsSpec& s = p.spec;
  s.dims = dims;
  s.scaling.kind = ScalingKind::inverse_sqrt_n;
  auto gate = [&](std::size_t rows, std::uint64_t tag, double bias) {
    return AffineGate::random(rows, dims.d, sub_seed(seed, tag), hyper.gate_scale, bias);
  };
  auto mamba_decay = [&](DecayRule& rule) {
    rule.source = ParameterSource::input_derived;
    rule.parameterization = DecayParameterization::mamba2;
    rule.gate = gate(dims.heads, 10, 0.0);
    std::mt19937_64 rng(sub_seed(seed, 11));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    rule.rate.resize(dims.heads);
    for (std::size_t h = 0; h < dims.heads; ++h) {
      // Log-uniform step size in [delta_lo, delta_hi], stored as a softplus bias.
      const double t = u(rng);
      const double dt = std::exp(std::log(hyper.delta_lo) * (1 - t) + std::log(hyper.delta_hi) * t);
      rule.gate.bias[h] = hyper.has_delta_bias ? hyper.delta_bias : inverse_softplus(dt);
      rule.rate[h] = hyper.a_lo + (hyper.a_hi - hyper.a_lo) * u(rng);
    }
    if (hyper.has_delta_bias) {
      const double dt = softplus(hyper.delta_bias);
      if (dt < hyper.delta_lo || dt > hyper.delta_hi) {
        std::ostringstream w;
        w << "mamba2: delta_bias " << hyper.delta_bias << " gives softplus = " << dt
          << ", outside [" << hyper.delta_lo << ", " << hyper.delta_hi << "]";
        p.warnings.push_back(w.str());
      }
    }
  };
  auto delta_rule = [&]() {
    auto& ev = s.evolution;
    ev.normalize_keys = hyper.normalize_keys;
    // With unnormalized keys the Householder factor can leave [-1, 1]; that is
    // the point of disabling normalization, so permit it.
    ev.allow_unstable = !hyper.normalize_keys;
    ev.householder.direction = DirectionSource::keys;
    ev.householder.normalize_direction = false;
    ev.householder.strength_source = ParameterSource::input_derived;
    ev.householder.strength_gate = gate(dims.heads, 20, hyper.gate_bias);
    ev.householder.negative_eigenvalues = hyper.negative_eigenvalues;
    s.scaling.kind = ScalingKind::input_derived;
    s.scaling.parameterization = ScalingParameterization::beta_over_sqrt_n;
  };

  switch (a) {
    case Architecture::softmax:
      s.readout.kind = ReadoutKind::exponential;
      s.normalization.kind = NormalizationKind::coefficient_sum;
      break;
    case Architecture::linear_attn:
      s.readout = {ReadoutKind::kernel_product, hyper.feature_map};
      s.normalization.kind = NormalizationKind::coefficient_sum;
      break;
    case Architecture::normalized_attn:
      if (hyper.nonnegative_features) s.readout = {ReadoutKind::kernel_product, hyper.feature_map};
      s.normalization.kind = NormalizationKind::input_derived;
      s.normalization.gate = gate(dims.heads, 30, hyper.gate_bias);
      break;
    case Architecture::gla:
      s.evolution.kind = EvolutionKind::diagonal;
      s.evolution.decay.source = ParameterSource::input_derived;
      s.evolution.decay.parameterization = DecayParameterization::gla;
      s.evolution.decay.tau = hyper.tau;
      s.evolution.decay.gate = gate(dims.n, 40, hyper.gate_bias);
      break;
    case Architecture::mamba2:
      s.evolution.kind = EvolutionKind::scalar;
      mamba_decay(s.evolution.decay);
      s.scaling.kind = ScalingKind::input_derived;
      s.scaling.parameterization = ScalingParameterization::delta;
      break;
    case Architecture::deltanet:
      s.evolution.kind = EvolutionKind::householder;
      delta_rule();
      break;
    case Architecture::gated_deltanet:
      s.evolution.kind = EvolutionKind::gated_householder;
      delta_rule();
      mamba_decay(s.evolution.decay);
      break;
    case Architecture::mlstm:
      s.evolution.kind = EvolutionKind::scalar;
      s.evolution.allow_unstable = true;  // exp(f) > 1 is representable
      s.evolution.decay.source = ParameterSource::input_derived;
      s.evolution.decay.parameterization = DecayParameterization::exponential;
      s.evolution.decay.clamp = hyper.clamp;
      s.evolution.decay.gate = gate(dims.heads, 50, hyper.gate_bias);
      s.scaling.kind = ScalingKind::input_derived;
      s.scaling.parameterization = ScalingParameterization::exp_gate_over_sqrt_n;
      s.scaling.clamp = hyper.clamp;
      s.scaling.gate = gate(dims.heads, 51, hyper.gate_bias);
      s.normalization.kind = NormalizationKind::external_state;
      if (hyper.output_gate) s.normalization.gate = gate(dims.heads, 52, hyper.gate_bias);
      break;
  }
  s.validate();
  return p;
}

}  // namespace cdyn
