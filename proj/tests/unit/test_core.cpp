#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cdyn/architectures/presets.hpp"
#include "cdyn/core/engine.hpp"
#include "cdyn/core/serialize.hpp"
#include "cdyn/errors.hpp"

using namespace cdyn;

namespace {

struct Fixture {
  std::mt19937_64 rng{42};
  double gauss() { return std::normal_distribution<double>()(rng); }
  double unif(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

  Matrix random(std::size_t r, std::size_t c) {
    Matrix m(r, c);
    for (double& v : m.flat()) v = gauss();
    return m;
  }

  // Every per-step field filled, so any kind can read what it needs.
  HeadDynamics head(EvolutionKind kind, std::size_t len = 7, std::size_t n = 3, std::size_t dv = 2) {
    HeadDynamics h;
    h.kind = kind;
    h.queries = random(len, n);
    h.keys = random(len, n);
    h.values = random(len, dv);
    h.diag = Matrix(len, n);
    for (double& v : h.diag.flat()) v = unif(0.3, 1.0);
    h.direction = random(len, n);
    for (std::size_t t = 0; t < len; ++t) {
      const double nr = norm2(h.direction.row(t));
      for (double& v : h.direction.row(t)) v /= nr;
      h.lambda.push_back(unif(0.5, 1.0));
      h.beta.push_back(unif(0.0, 2.0));
      h.scale.push_back(unif(0.2, 1.0));
      h.out_gate.push_back(unif(0.1, 1.0));
      h.log_eta.push_back(unif(-1.0, 1.0));
    }
    return h;
  }
};

// A_t written out as a dense matrix from its definition.
Matrix dense_step(const HeadDynamics& h, std::size_t t) {
  const std::size_t n = h.state_dim();
  Matrix a = Matrix::identity(n);
  switch (h.kind) {
    case EvolutionKind::identity:
      break;
    case EvolutionKind::scalar:
      for (std::size_t r = 0; r < n; ++r) a(r, r) = h.lambda[t];
      break;
    case EvolutionKind::diagonal:
      for (std::size_t r = 0; r < n; ++r) a(r, r) = h.diag(t, r);
      break;
    case EvolutionKind::householder:
    case EvolutionKind::gated_householder: {
      const double g = h.kind == EvolutionKind::gated_householder ? h.lambda[t] : 1.0;
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c)
          a(r, c) = g * ((r == c) - h.beta[t] * h.direction(t, r) * h.direction(t, c));
      break;
    }
  }
  return a;
}

// alpha_{i,j} from explicit matrix products.
double naive_alpha(const HeadDynamics& h, std::size_t i, std::size_t j) {
  Vector s(h.keys.row(j).begin(), h.keys.row(j).end());
  for (double& v : s) v *= h.scale[j];
  for (std::size_t t = j + 1; t <= i; ++t) s = matvec(dense_step(h, t), s);
  double score = 0.0;
  for (std::size_t r = 0; r < s.size(); ++r) score += h.queries(i, r) * s[r];
  return h.readout(score);
}

double naive_eta(const HeadDynamics& h, std::size_t i) {
  switch (h.normalization) {
    case NormalizationKind::one:
      return 1.0;
    case NormalizationKind::coefficient_sum: {
      double s = 0.0;
      for (std::size_t j = 0; j <= i; ++j) s += naive_alpha(h, i, j);
      return s;
    }
    case NormalizationKind::geometric:
      return std::pow(h.rho, double(i + 1));
    case NormalizationKind::external_state: {
      Vector m(h.state_dim(), 0.0);
      for (std::size_t j = 0; j <= i; ++j) {
        Vector s(h.keys.row(j).begin(), h.keys.row(j).end());
        for (double& v : s) v *= h.scale[j];
        for (std::size_t t = j + 1; t <= i; ++t) s = matvec(dense_step(h, t), s);
        for (std::size_t r = 0; r < m.size(); ++r) m[r] += s[r];
      }
      double qm = 0.0;
      for (std::size_t r = 0; r < m.size(); ++r) qm += h.queries(i, r) * m[r];
      return std::max(std::abs(qm), 1.0) / h.out_gate[i];
    }
    case NormalizationKind::input_derived:
      return std::exp(h.log_eta[i]);
  }
  return 1.0;
}

Matrix naive_output(const HeadDynamics& h) {
  Matrix y(h.length(), h.value_dim());
  for (std::size_t i = 0; i < h.length(); ++i) {
    const double eta = naive_eta(h, i);
    for (std::size_t j = 0; j <= i; ++j) {
      const double a = naive_alpha(h, i, j) / eta;
      for (std::size_t c = 0; c < h.value_dim(); ++c) y(i, c) += a * h.values(j, c);
    }
  }
  return y;
}

const EvolutionKind kEvolutions[] = {EvolutionKind::identity, EvolutionKind::scalar, EvolutionKind::diagonal,
                                     EvolutionKind::householder, EvolutionKind::gated_householder};

}  // namespace

TEST_CASE("closed-form coefficients match explicit matrix products") {
  Fixture f;
  const ReadoutKind readouts[] = {ReadoutKind::identity, ReadoutKind::exponential, ReadoutKind::relu,
                                  ReadoutKind::softplus, ReadoutKind::sigmoid};
  const NormalizationKind norms[] = {NormalizationKind::one, NormalizationKind::coefficient_sum,
                                     NormalizationKind::geometric, NormalizationKind::external_state,
                                     NormalizationKind::input_derived};
  for (auto kind : kEvolutions)
    for (auto rk : readouts)
      for (auto nk : norms) {
        // A signed readout summed over j can land arbitrarily close to zero.
        if (rk == ReadoutKind::identity && nk == NormalizationKind::coefficient_sum) continue;
        CAPTURE(to_string(kind));
        CAPTURE(to_string(rk));
        CAPTURE(to_string(nk));
        HeadDynamics h = f.head(kind);
        h.readout.kind = rk;
        h.normalization = nk;
        h.rho = 1.1;
        const CoefficientMatrix cm = coefficient_matrix(h);
        for (std::size_t i = 0; i < h.length(); ++i)
          for (std::size_t j = 0; j <= i; ++j) CHECK(cm.raw(i, j) == doctest::Approx(naive_alpha(h, i, j)).epsilon(1e-12));
        CHECK(max_abs_diff(forward_dense(h), naive_output(h)) <= 1e-11);
        CHECK(max_abs_diff(mix_values(cm, h.values), naive_output(h)) <= 1e-11);
      }
}

TEST_CASE("impulse state is the evolved scaled key") {
  Fixture f;
  for (auto kind : kEvolutions) {
    const HeadDynamics h = f.head(kind);
    const ImpulseState s = impulse_state(h, 2, 5);
    CHECK(s.source == 2);
    CHECK(s.read == 5);
    Vector expect(h.keys.row(2).begin(), h.keys.row(2).end());
    for (double& v : expect) v *= h.scale[2];
    for (std::size_t t = 3; t <= 5; ++t) expect = matvec(dense_step(h, t), expect);
    CHECK(max_abs_diff(s.state, expect) <= 1e-13);
  }
}

TEST_CASE("evolution_apply agrees with the explicit matrix") {
  Fixture f;
  for (auto kind : kEvolutions) {
    const HeadDynamics h = f.head(kind, 4, 5);
    const EvolutionStep st = step_at(h, 2);
    const Matrix a = evolution_matrix(st, 5);
    CHECK(max_abs_diff(a, dense_step(h, 2)) <= 1e-14);
    const Vector x{1, -2, 0.5, 3, 0.25};
    CHECK(max_abs_diff(evolution_apply(st, x), matvec(a, x)) <= 1e-13);
  }
}

TEST_CASE("recurrent form equals the closed form for identity readouts") {
  Fixture f;
  for (auto kind : kEvolutions) {
    HeadDynamics h = f.head(kind, 12, 4, 3);
    h.normalization = NormalizationKind::external_state;
    CHECK(max_abs_diff(forward_recurrent(h), forward_dense(h)) <= 1e-11);
  }
}

TEST_CASE("recurrent form is refused where no finite state exists") {
  Fixture f;
  HeadDynamics h = f.head(EvolutionKind::scalar);
  h.readout.kind = ReadoutKind::exponential;
  CHECK_FALSE(supports_recurrent(h.readout, h.kind));
  CHECK_THROWS_AS(forward_recurrent(h), UnsupportedError);
  h.readout.kind = ReadoutKind::kernel_product;
  CHECK_THROWS_AS(forward_recurrent(h), UnsupportedError);
  h.kind = EvolutionKind::identity;
  CHECK(supports_recurrent(h.readout, h.kind));
  CHECK(max_abs_diff(forward_recurrent(h), forward_dense(h)) <= 1e-11);
}

TEST_CASE("softmax rows stay finite when raw exponentials overflow") {
  Fixture f;
  HeadDynamics h = f.head(EvolutionKind::identity, 5, 2, 2);
  h.readout.kind = ReadoutKind::exponential;
  h.normalization = NormalizationKind::coefficient_sum;
  for (double& v : h.queries.flat()) v *= 400.0;
  for (double& v : h.keys.flat()) v *= 400.0;
  const CoefficientMatrix cm = coefficient_matrix(h);
  CHECK(cm.shifted());
  for (std::size_t i = 0; i < cm.size(); ++i) {
    double s = 0.0;
    for (double v : cm.normalized.row(i)) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(forward_dense(h).all_finite());
}

TEST_CASE("overflow outside the softmax case reports its time index") {
  Fixture f;
  HeadDynamics h = f.head(EvolutionKind::identity, 6, 2, 2);
  h.readout.kind = ReadoutKind::exponential;
  h.normalization = NormalizationKind::one;
  for (std::size_t c = 0; c < 2; ++c) {
    h.queries(3, c) = 1e3;
    h.keys(3, c) = 1e3;
  }
  try {
    forward_dense(h);
    FAIL("expected OverflowError");
  } catch (const OverflowError& e) {
    CHECK(e.index() == 3);
  }
  std::size_t delivered = 0;
  CHECK_THROWS_AS(stream_rows(h, [&](const CoefficientRow&) { ++delivered; }), OverflowError);
  CHECK(delivered == 3);
}

TEST_CASE("eta floor keeps the sign and only acts below the floor") {
  CHECK(floor_eta(2.0, 1e-30) == 2.0);
  CHECK(floor_eta(0.0, 1e-30) == 1e-30);
  CHECK(floor_eta(-1e-40, 1e-30) == -1e-30);
  CHECK(floor_eta(-3.0, 1e-30) == -3.0);
}

TEST_CASE("lower-triangular storage") {
  LowerTriangular t(4);
  CHECK(t.packed().size() == 10);
  t(3, 1) = 5.0;
  t(2, 2) = -1.0;
  CHECK(t.row(3).size() == 4);
  const Matrix full = t.full();
  CHECK(full(3, 1) == 5.0);
  CHECK(full(2, 2) == -1.0);
  CHECK(full(1, 3) == 0.0);
}

TEST_CASE("dims and spec validation") {
  CHECK_THROWS_AS((Dims{4, 6, 4, 4}.validate()), ConfigError);
  CHECK_NOTHROW((Dims{4, 8, 4, 2}.validate()));

  DynamicsSpec s;
  s.dims = {4, 4, 4, 1};
  s.evolution.kind = EvolutionKind::scalar;
  s.evolution.decay.value = {1.2};
  CHECK_THROWS_AS(s.validate(), StabilityError);
  s.evolution.allow_unstable = true;
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("householder with unnormalized keys is refused unless allowed") {
  DynamicsSpec s;
  s.dims = {4, 4, 4, 1};
  s.evolution.kind = EvolutionKind::householder;
  s.evolution.householder.normalize_direction = false;
  s.evolution.normalize_keys = false;
  Matrix x(5, 4, 0.0);
  for (std::size_t t = 0; t < 5; ++t) x(t, t % 4) = 3.0;
  const auto proj = ProjectionSet::identity(4);
  CHECK_THROWS_AS(materialize(s, proj, x), StabilityError);
  s.evolution.allow_unstable = true;
  CHECK_NOTHROW(materialize(s, proj, x));
}

TEST_CASE("spec json round trip keeps every field") {
  DynamicsSpec s;
  s.dims = {6, 8, 6, 2};
  s.readout.kind = ReadoutKind::kernel_product;
  s.readout.feature_map = FeatureMapKind::softplus;
  s.evolution.kind = EvolutionKind::diagonal;
  s.evolution.decay.source = ParameterSource::input_derived;
  s.evolution.decay.parameterization = DecayParameterization::gla;
  s.evolution.decay.gate = AffineGate::random(8, 6, 1, 1.0, 0.5);
  s.scaling.kind = ScalingKind::constant;
  s.scaling.value = 0.25;
  s.normalization.kind = NormalizationKind::geometric;
  s.normalization.rho = 1.5;
  const Json j = to_json(s);
  const DynamicsSpec back = spec_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.evolution.decay.gate.weight == s.evolution.decay.gate.weight);

  Json bad = j;
  bad["readuot"] = bad["readout"];
  CHECK_THROWS_AS(spec_from_json(bad), ConfigError);
}

TEST_CASE("dotted overrides") {
  Json j = {{"train", {{"lr", 0.1}}}};
  apply_override(j, "train.lr=0.5");
  apply_override(j, "train.grid=[1,2]");
  apply_override(j, "model.architecture=gla");
  CHECK(j["train"]["lr"] == 0.5);
  CHECK(j["train"]["grid"].size() == 2);
  CHECK(j["model"]["architecture"] == "gla");
  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST_CASE("coefficient csv lists the lower triangle") {
  Fixture f;
  const CoefficientMatrix cm = coefficient_matrix(f.head(EvolutionKind::scalar, 3));
  std::ostringstream os;
  write_coefficients_csv(os, cm);
  std::size_t lines = 0;
  for (char c : os.str()) lines += c == '\n';
  CHECK(lines == 1 + 6);
}

namespace {

// Walks a serialized spec against the schema: every key must be declared and
// every string must be one of its enum values.
void check_against_schema(const Json& value, const Json& node, const Json& root, const std::string& path) {
  const Json* n = &node;
  if (n->contains("$ref")) n = &root["$defs"][n->at("$ref").get<std::string>().substr(8)];
  if (value.is_object()) {
    REQUIRE_MESSAGE(n->contains("properties"), path);
    for (const auto& [k, v] : value.items()) {
      CHECK_MESSAGE((*n)["properties"].contains(k), (path + "." + k));
      if ((*n)["properties"].contains(k)) check_against_schema(v, (*n)["properties"][k], root, (path + "." + k));
    }
  } else if (value.is_string() && n->contains("enum")) {
    const auto& e = (*n)["enum"];
    CHECK_MESSAGE(std::find(e.begin(), e.end(), value) != e.end(), (path + " = " + value.get<std::string>()));
  }
}

}  // namespace

TEST_CASE("serialized specs conform to the published schema") {
  std::ifstream in(CDYN_SOURCE_DIR "/schema/dynamics_spec.schema.json");
  REQUIRE(in);
  const Json schema = Json::parse(in);
  for (auto a : all_architectures()) {
    CAPTURE(to_string(a));
    const auto p = preset(a, {8, 8, 8, 2}, {}, 1);
    check_against_schema(to_json(p.spec), schema, schema, "spec");
  }
}
