#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/architectures/presets.hpp"
#include "cdyn/core/engine.hpp"
#include "cdyn/errors.hpp"

using namespace cdyn;

namespace {

Matrix inputs(std::size_t len, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Matrix x(len, d);
  for (double& v : x.flat()) v = g(rng);
  return x;
}

}  // namespace

TEST_CASE("architecture names round trip") {
  for (Architecture a : all_architectures()) CHECK(parse_architecture(to_string(a)) == a);
  CHECK_THROWS_AS(parse_architecture("transformer-xl"), ConfigError);
}

TEST_CASE("engine matches each native recurrence") {
  const Dims shapes[] = {{4, 4, 4, 1}, {6, 8, 6, 2}, {8, 16, 8, 4}};
  for (Architecture a : all_architectures())
    for (const Dims& dims : shapes)
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        CAPTURE(to_string(a));
        CAPTURE(dims.n);
        const auto p = preset(a, dims, {}, seed);
        const Matrix x = inputs(20, dims.d, 100 + seed);
        CHECK(max_abs_diff(forward_dense(p.spec, p.proj, x), native_forward(p, x)) <= 1e-10);
      }
}

TEST_CASE("hyper variants stay equivalent") {
  const Dims dims{6, 6, 6, 2};
  const Matrix x = inputs(16, dims.d, 9);
  PresetHyper h;
  h.negative_eigenvalues = true;
  h.output_gate = false;
  h.nonnegative_features = true;
  h.feature_map = FeatureMapKind::softplus;
  for (Architecture a : all_architectures()) {
    CAPTURE(to_string(a));
    const auto p = preset(a, dims, h, 5);
    CHECK(max_abs_diff(forward_dense(p.spec, p.proj, x), native_forward(p, x)) <= 1e-10);
  }
  h.normalize_keys = false;
  for (Architecture a : {Architecture::deltanet, Architecture::gated_deltanet}) {
    const auto p = preset(a, dims, h, 5);
    CHECK(p.spec.evolution.allow_unstable);
    // States grow without bound here, so compare against the output scale.
    const Matrix y = forward_dense(p.spec, p.proj, x);
    double scale = 1.0;
    for (double v : y.flat()) scale = std::max(scale, std::abs(v));
    CAPTURE(scale);
    CHECK(max_abs_diff(y, native_forward(p, x)) / scale <= 1e-12);
  }
}

TEST_CASE("preset structure") {
  const Dims dims{4, 8, 4, 2};
  auto spec = [&](Architecture a) { return preset(a, dims, {}, 0).spec; };

  const auto sm = spec(Architecture::softmax);
  CHECK(sm.readout.kind == ReadoutKind::exponential);
  CHECK(sm.evolution.kind == EvolutionKind::identity);
  CHECK(sm.normalization.kind == NormalizationKind::coefficient_sum);
  CHECK(sm.scaling.kind == ScalingKind::inverse_sqrt_n);

  CHECK(spec(Architecture::linear_attn).readout.kind == ReadoutKind::kernel_product);
  CHECK(spec(Architecture::normalized_attn).normalization.kind == NormalizationKind::input_derived);
  CHECK(spec(Architecture::gla).evolution.kind == EvolutionKind::diagonal);
  CHECK(spec(Architecture::gla).evolution.decay.parameterization == DecayParameterization::gla);
  CHECK(spec(Architecture::mamba2).evolution.kind == EvolutionKind::scalar);
  CHECK(spec(Architecture::mamba2).scaling.parameterization == ScalingParameterization::delta);
  CHECK(spec(Architecture::deltanet).evolution.kind == EvolutionKind::householder);
  CHECK(spec(Architecture::gated_deltanet).evolution.kind == EvolutionKind::gated_householder);
  const auto ml = spec(Architecture::mlstm);
  CHECK(ml.evolution.decay.parameterization == DecayParameterization::exponential);
  CHECK(ml.normalization.kind == NormalizationKind::external_state);

  for (Architecture a : all_architectures()) {
    const auto row = preset_row(a);
    CHECK_FALSE(row.evolution.empty());
    CHECK_FALSE(row.combination.empty());
  }
}

TEST_CASE("mamba2 decay stays in (0, 1) and the step size in its range") {
  const Dims dims{8, 8, 8, 4};
  const auto p = preset(Architecture::mamba2, dims, {}, 3);
  for (double b : p.spec.evolution.decay.gate.bias) {
    const double dt = softplus(b);
    CHECK(dt >= 0.001 * (1 - 1e-12));
    CHECK(dt <= 0.1 * (1 + 1e-12));
  }
  for (const auto& h : materialize(p.spec, p.proj, inputs(10, dims.d, 1)))
    for (double l : h.lambda) {
      CHECK(l > 0.0);
      CHECK(l < 1.0);
    }
}

TEST_CASE("explicit mamba2 step bias outside the range warns but is kept") {
  PresetHyper h;
  h.has_delta_bias = true;
  h.delta_bias = 3.0;
  const auto p = preset(Architecture::mamba2, {4, 4, 4, 1}, h, 0);
  CHECK(p.warnings.size() == 1);
  CHECK(p.spec.evolution.decay.gate.bias[0] == 3.0);
}

TEST_CASE("deltanet strengths respect the eigenvalue range") {
  const Dims dims{6, 6, 6, 1};
  const Matrix x = inputs(30, dims.d, 2);
  for (bool neg : {false, true}) {
    PresetHyper h;
    h.negative_eigenvalues = neg;
    const auto p = preset(Architecture::deltanet, dims, h, 1);
    for (const auto& hd : materialize(p.spec, p.proj, x))
      for (std::size_t t = 0; t < hd.length(); ++t) {
        CHECK(hd.beta[t] > 0.0);
        CHECK(hd.beta[t] < (neg ? 2.0 : 1.0));
        CHECK(spectral_radius(step_at(hd, t), hd.state_dim()) <= 1.0 + 1e-12);
      }
  }
}

TEST_CASE("linear attention has an exact recurrent form") {
  const Dims dims{4, 8, 4, 2};
  const auto p = preset(Architecture::linear_attn, dims, {}, 7);
  const Matrix x = inputs(25, dims.d, 4);
  CHECK(max_abs_diff(forward_recurrent(p.spec, p.proj, x), forward_dense(p.spec, p.proj, x)) <= 1e-11);
}

TEST_CASE("identity-readout presets have exact recurrent forms") {
  const Dims dims{4, 8, 4, 2};
  const Matrix x = inputs(25, dims.d, 4);
  for (Architecture a : {Architecture::gla, Architecture::mamba2, Architecture::deltanet,
                         Architecture::gated_deltanet, Architecture::mlstm, Architecture::normalized_attn}) {
    CAPTURE(to_string(a));
    const auto p = preset(a, dims, {}, 2);
    CHECK(max_abs_diff(forward_recurrent(p.spec, p.proj, x), forward_dense(p.spec, p.proj, x)) <= 1e-10);
  }
  const auto sm = preset(Architecture::softmax, dims, {}, 2);
  CHECK_THROWS_AS(forward_recurrent(sm.spec, sm.proj, x), UnsupportedError);
}

TEST_CASE("hyper json rejects unknown keys") {
  PresetHyper h;
  h.tau = 4.0;
  const PresetHyper back = hyper_from_json(to_json(h));
  CHECK(back.tau == 4.0);
  Json j = to_json(h);
  j["taau"] = 1;
  CHECK_THROWS_AS(hyper_from_json(j), ConfigError);
}

TEST_CASE("kernel features apply psi elementwise") {
  const Vector v{-1.0, 0.0, 2.0};
  const Vector r = kernel_feature(FeatureMapKind::relu, v);
  CHECK(r == Vector{0.0, 0.0, 2.0});
  const Vector e = kernel_feature(FeatureMapKind::elu_plus_one, v);
  CHECK(e[0] == doctest::Approx(std::exp(-1.0)));
  CHECK(e[2] == doctest::Approx(3.0));
}
