#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "cdyn/analysis/analysis.hpp"
#include "cdyn/architectures/presets.hpp"
#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"
#include "cdyn/verify/verify.hpp"

namespace cdyn::verify {

bool Criterion::passed() const {
  return !checks.empty() &&
         std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.passed; });
}

std::optional<std::string> known_failure(int criterion, const std::string& check) {
  struct Known {
    int id;
    const char* prefix;
    const char* reason;
  };
  static const Known known[] = {
      {8, "measure exp > softplus",
       "on [-10, 10] at eps = 1e-3 the closed forms give exp: ln(eps) + 10 = 3.0922 and softplus: "
       "ln(e^eps - 1) + 10 = 3.0927, so softplus's near-zero set is the larger one"},
      {10, "A=I, phi=exp, no PE",
       "at seq 32 a two-layer causal model recovers position from the causal mask itself (prefix "
       "averages shrink like 1/t), so it binds keys to values without positional embeddings; the "
       "coefficient-level statement is criterion 5 and holds"},
  };
  for (const auto& k : known)
    if (k.id == criterion && check.rfind(k.prefix, 0) == 0) return std::string(k.reason);
  return std::nullopt;
}

Json to_json(const Criterion& c) {
  Json checks = Json::array();
  for (const auto& k : c.checks) {
    Json e = {{"name", k.name}, {"passed", k.passed}, {"detail", k.detail}};
    if (auto why = known_failure(c.id, k.name)) e["known_failure"] = *why;
    checks.push_back(e);
  }
  return {{"id", c.id}, {"name", c.name}, {"passed", c.passed()}, {"seconds", c.seconds},
          {"checks", checks}};
}

namespace {

using Rng = std::mt19937_64;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double stddev = 1.0) {
  std::normal_distribution<double> g(0.0, stddev);
  Matrix m(rows, cols);
  for (double& v : m.flat()) v = g(rng);
  return m;
}

std::size_t uniform_int(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

template <class F>
Criterion timed(int id, std::string name, F&& body) {
  Criterion c;
  c.id = id;
  c.name = std::move(name);
  const auto t0 = std::chrono::steady_clock::now();
  try {
    body(c);
  } catch (const std::exception& e) {
    c.checks.push_back({"unexpected exception", false, e.what()});
  }
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

// Rank from singular values; independent of the Gram-Schmidt in the library.
std::size_t svd_rank(const std::vector<Vector>& vs, std::size_t dim) {
  if (vs.empty()) return 0;
  Eigen::MatrixXd m(dim, vs.size());
  double scale = 0.0;
  for (std::size_t c = 0; c < vs.size(); ++c)
    for (std::size_t r = 0; r < dim; ++r) {
      m(r, c) = vs[c][r];
      scale = std::max(scale, std::abs(vs[c][r]));
    }
  if (scale == 0.0) return 0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& s = svd.singularValues();
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) rank += s[i] > 1e-9 * s[0];
  return rank;
}

double binomial_upper_tail(std::size_t n, std::size_t k) {
  // P(X >= k) for X ~ Bin(n, 1/2)
  double p = 0.0;
  for (std::size_t x = k; x <= n; ++x)
    p += std::exp(std::lgamma(double(n + 1)) - std::lgamma(double(x + 1)) -
                  std::lgamma(double(n - x + 1)) - double(n) * std::log(2.0));
  return p;
}

}  // namespace

// ---- spec factories ---------------------------------------------------------

DynamicsSpec probe_spec(ReadoutKind readout, EvolutionKind evolution, const Dims& dims,
                        std::uint64_t seed) {
  DynamicsSpec s;
  s.dims = dims;
  s.readout.kind = readout;
  s.readout.feature_map = FeatureMapKind::elu_plus_one;
  s.scaling.kind = ScalingKind::inverse_sqrt_n;
  auto& ev = s.evolution;
  ev.kind = evolution;
  Rng rng(sub_seed(seed, 7));
  std::uniform_real_distribution<double> rate(0.5, 2.0);
  auto mamba = [&](DecayRule& d) {
    d.source = ParameterSource::input_derived;
    d.parameterization = DecayParameterization::mamba2;
    d.gate = AffineGate::random(dims.heads, dims.d, sub_seed(seed, 1), 1.0, -1.0);
    d.rate.resize(dims.heads);
    for (double& a : d.rate) a = rate(rng);
  };
  switch (evolution) {
    case EvolutionKind::identity:
      break;
    case EvolutionKind::scalar:
      mamba(ev.decay);
      break;
    case EvolutionKind::diagonal:
      ev.decay.source = ParameterSource::input_derived;
      ev.decay.parameterization = DecayParameterization::gla;
      ev.decay.tau = 4.0;
      ev.decay.gate = AffineGate::random(dims.n, dims.d, sub_seed(seed, 2), 1.0, 1.0);
      break;
    case EvolutionKind::householder:
    case EvolutionKind::gated_householder:
      ev.householder.direction = DirectionSource::keys;
      ev.normalize_keys = true;
      ev.householder.strength_source = ParameterSource::input_derived;
      ev.householder.strength_gate = AffineGate::random(dims.heads, dims.d, sub_seed(seed, 3), 1.0, 0.0);
      if (evolution == EvolutionKind::gated_householder) mamba(ev.decay);
      break;
  }
  const bool nonneg = readout != ReadoutKind::identity && readout != ReadoutKind::relu;
  s.normalization.kind = nonneg ? NormalizationKind::coefficient_sum : NormalizationKind::one;
  s.validate();
  return s;
}

DynamicsSpec constant_decay_spec(double lambda, ReadoutKind readout, NormalizationKind norm,
                                 const Dims& dims, double rho) {
  DynamicsSpec s;
  s.dims = dims;
  s.readout.kind = readout;
  s.scaling.kind = ScalingKind::inverse_sqrt_n;
  if (lambda != 1.0) {
    s.evolution.kind = EvolutionKind::scalar;
    s.evolution.decay.source = ParameterSource::constant;
    s.evolution.decay.value = {lambda};
    s.evolution.allow_unstable = std::abs(lambda) > 1.0;
  }
  s.normalization.kind = norm;
  s.normalization.rho = rho;
  s.validate();
  return s;
}

// ---- gradient check ---------------------------------------------------------

TaskExample random_example(std::size_t len, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<std::int32_t> tok(0, static_cast<std::int32_t>(vocab) - 1);
  TaskExample ex;
  for (std::size_t t = 0; t < len; ++t) {
    ex.tokens.push_back(tok(rng));
    ex.targets.push_back(tok(rng));
  }
  return ex;
}

GradCheck gradient_check(const Model& model, const TaskExample& ex, double step, double tol) {
  std::size_t count = 0;
  for (auto t : ex.targets) count += t >= 0;
  const double norm = static_cast<double>(std::max<std::size_t>(count, 1));
  ParamSet grad = model.params().zeros_like();
  model.loss_and_grad(ex, norm, &grad);

  Model probe = model;
  GradCheck out;
  auto f = [&] { return probe.loss_and_grad(ex, norm, nullptr) / norm; };
  for (const auto& name : model.params().names()) {
    auto w = probe.params().at(name).flat();
    const auto g = grad.at(name).flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w[i];
      w[i] = keep + step;
      const double up = f();
      w[i] = keep - step;
      const double down = f();
      w[i] = keep;
      const double numeric = (up - down) / (2.0 * step);
      const double scale = std::max({std::abs(numeric), std::abs(g[i]), 1e-6});
      const double rel = std::abs(numeric - g[i]) / scale;
      ++out.coordinates;
      if (!(rel <= out.max_rel_error)) {
        out.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        out.worst = name + "[" + std::to_string(i) + "] analytic=" + fmt(g[i]) + " numeric=" + fmt(numeric);
      }
    }
  }
  out.passed = out.max_rel_error <= tol;
  return out;
}

// ---- 1: architecture equivalence --------------------------------------------

Criterion architecture_equivalence(std::uint64_t seed, std::size_t instances) {
  return timed(1, "architecture equivalence", [&](Criterion& c) {
    for (Architecture a : all_architectures()) {
      Rng rng(sub_seed(seed, 100 + static_cast<std::uint64_t>(a)));
      double worst = 0.0;
      std::size_t done = 0;
      for (std::size_t k = 0; k < instances; ++k) {
        Dims dims;
        dims.heads = uniform_int(rng, 1, 2);
        dims.n = dims.heads * uniform_int(rng, 1, 8);
        dims.d_v = dims.heads * uniform_int(rng, 1, 4);
        dims.d = uniform_int(rng, 2, 8);
        PresetHyper hyper;
        hyper.feature_map = static_cast<FeatureMapKind>(uniform_int(rng, 0, 3));
        hyper.nonnegative_features = uniform_int(rng, 0, 1) == 1;
        hyper.negative_eigenvalues = uniform_int(rng, 0, 1) == 1;
        hyper.output_gate = uniform_int(rng, 0, 1) == 1;
        const auto p = preset(a, dims, hyper, rng());
        const Matrix x = random_matrix(uniform_int(rng, 1, 32), dims.d, rng);
        const double err = max_abs_diff(forward_dense(p.spec, p.proj, x), native_forward(p, x));
        worst = std::max(worst, std::isfinite(err) ? err : INFINITY);
        ++done;
      }
      c.checks.push_back({std::string(to_string(a)), worst < 1e-10,
                          std::to_string(done) + " instances, max |diff| = " + fmt(worst)});
    }
  });
}

// ---- 2: dual path -----------------------------------------------------------

Criterion dual_path(std::uint64_t seed) {
  return timed(2, "dense vs recurrent", [&](Criterion& c) {
    const EvolutionKind kinds[] = {EvolutionKind::identity, EvolutionKind::scalar, EvolutionKind::diagonal,
                                   EvolutionKind::householder, EvolutionKind::gated_householder};
    const NormalizationKind norms[] = {NormalizationKind::one, NormalizationKind::coefficient_sum,
                                       NormalizationKind::geometric, NormalizationKind::external_state,
                                       NormalizationKind::input_derived};
    Rng rng(sub_seed(seed, 200));
    double worst = 0.0;
    std::size_t cases = 0;
    for (auto e : kinds)
      for (auto nk : norms)
        for (int rep = 0; rep < 4; ++rep) {
          Dims dims{uniform_int(rng, 2, 6), 0, 0, uniform_int(rng, 1, 2)};
          dims.n = dims.heads * uniform_int(rng, 1, 6);
          dims.d_v = dims.heads * uniform_int(rng, 1, 4);
          DynamicsSpec s = probe_spec(ReadoutKind::identity, e, dims, rng());
          s.normalization.kind = nk;
          s.normalization.rho = 0.97;
          if (nk == NormalizationKind::input_derived || (nk == NormalizationKind::external_state && rep % 2))
            s.normalization.gate = AffineGate::random(dims.heads, dims.d, rng(), 1.0, 0.0);
          const auto proj = ProjectionSet::random(dims, rng());
          const Matrix x = random_matrix(uniform_int(rng, 1, 64), dims.d, rng);
          const Matrix dense = forward_dense(s, proj, x);
          const Matrix rec = forward_recurrent(s, proj, x);
          const double scale = std::max(1.0, [&] {
            double m = 0.0;
            for (double v : dense.flat()) m = std::max(m, std::abs(v));
            return m;
          }());
          worst = std::max(worst, max_abs_diff(dense, rec) / scale);
          ++cases;
        }
    // Kernel-product readout with identity evolution also has a finite state.
    for (int rep = 0; rep < 10; ++rep) {
      Dims dims{4, 4, 4, 1};
      const DynamicsSpec s = probe_spec(ReadoutKind::kernel_product, EvolutionKind::identity, dims, rng());
      const auto proj = ProjectionSet::random(dims, rng());
      const Matrix x = random_matrix(uniform_int(rng, 1, 64), dims.d, rng);
      worst = std::max(worst, max_abs_diff(forward_dense(s, proj, x), forward_recurrent(s, proj, x)));
      ++cases;
    }
    c.checks.push_back({"identity readouts agree", worst < 1e-10,
                        std::to_string(cases) + " specs, max scaled |diff| = " + fmt(worst)});

    std::size_t rejected = 0, total = 0;
    const ReadoutKind nonlinear[] = {ReadoutKind::exponential, ReadoutKind::relu, ReadoutKind::softplus,
                                     ReadoutKind::sigmoid, ReadoutKind::kernel_product};
    for (auto r : nonlinear)
      for (auto e : kinds) {
        if (r == ReadoutKind::kernel_product && e == EvolutionKind::identity) continue;
        Dims dims{3, 4, 2, 1};
        const DynamicsSpec s = probe_spec(r, e, dims, rng());
        const auto proj = ProjectionSet::random(dims, rng());
        ++total;
        try {
          forward_recurrent(s, proj, random_matrix(5, 3, rng));
        } catch (const UnsupportedError&) {
          ++rejected;
        }
      }
    c.checks.push_back({"nonlinear readouts rejected", rejected == total,
                        std::to_string(rejected) + "/" + std::to_string(total) + " rejected"});
  });
}

// ---- 3: convexity and classes -----------------------------------------------

Criterion convexity_and_classes(std::uint64_t seed) {
  return timed(3, "softmax convexity and combination classes", [&](Criterion& c) {
    Rng rng(sub_seed(seed, 300));
    double worst_sum = 0.0;
    bool in_unit = true;
    for (int rep = 0; rep < 50; ++rep) {
      Dims dims{4, 4 * uniform_int(rng, 1, 2), 4, 1};
      const auto p = preset(Architecture::softmax, dims, {}, rng());
      const double spread = rep < 25 ? 1.0 : 40.0;  // second half saturates exp
      const Matrix x = random_matrix(uniform_int(rng, 1, 48), dims.d, rng, spread);
      for (const auto& cm : coefficient_matrix(p.spec, x, p.proj))
        for (std::size_t i = 0; i < cm.size(); ++i) {
          double sum = 0.0;
          for (double a : cm.normalized.row(i)) {
            sum += a;
            in_unit = in_unit && a >= 0.0 && a <= 1.0;
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }
    }
    c.checks.push_back({"softmax coefficients in [0,1]", in_unit, ""});
    c.checks.push_back({"softmax rows sum to 1", worst_sum <= 1e-12, "max |sum-1| = " + fmt(worst_sum)});

    struct Expect {
      Architecture a;
      bool nonneg;
      ClassLabel label;
    };
    const Expect table[] = {
        {Architecture::softmax, false, ClassLabel::convex},
        {Architecture::linear_attn, false, ClassLabel::convex},
        {Architecture::normalized_attn, true, ClassLabel::conical},
        {Architecture::normalized_attn, false, ClassLabel::linear},
        {Architecture::gla, false, ClassLabel::linear},
        {Architecture::mamba2, false, ClassLabel::linear},
        {Architecture::deltanet, false, ClassLabel::linear},
        {Architecture::gated_deltanet, false, ClassLabel::linear},
        {Architecture::mlstm, false, ClassLabel::linear},
    };
    for (const auto& e : table) {
      PresetHyper h;
      h.nonnegative_features = e.nonneg;
      const Dims dims{4, 4, 4, 1};
      const auto p = preset(e.a, dims, h, rng());
      const ClassLabel got = combination_class(p.spec);
      const Matrix x = random_matrix(12, dims.d, rng);
      bool member = true;
      for (const auto& cm : coefficient_matrix(p.spec, x, p.proj)) member = member && membership_check(cm, got, 1e-12);
      std::string name = std::string(to_string(e.a)) + (e.nonneg ? " (nonnegative features)" : "");
      c.checks.push_back({name, got == e.label && member,
                          "class " + std::string(to_string(got)) + ", expected " +
                              std::string(to_string(e.label)) + (member ? "" : ", coefficients violate it")});
    }
    // Affine: identity readout with coefficient-sum normalization.
    const Dims dims{4, 4, 4, 1};
    DynamicsSpec affine = probe_spec(ReadoutKind::identity, EvolutionKind::identity, dims, rng());
    affine.normalization.kind = NormalizationKind::coefficient_sum;
    const auto proj = ProjectionSet::random(dims, rng());
    bool member = true;
    for (const auto& cm : coefficient_matrix(affine, random_matrix(8, 4, rng), proj))
      member = member && membership_check(cm, ClassLabel::affine, 1e-9);
    c.checks.push_back({"identity readout with coefficient sum", combination_class(affine) == ClassLabel::affine && member,
                        "class " + std::string(to_string(combination_class(affine)))});
  });
}

// ---- 4: suppression ---------------------------------------------------------

Criterion suppression_bound(std::uint64_t seed) {
  return timed(4, "suppressing query exists iff span < n", [&](Criterion& c) {
    Rng rng(sub_seed(seed, 400));
    std::size_t cases = 0, mismatches = 0;
    double worst = 0.0;
    for (std::size_t n = 1; n <= 6; ++n)
      for (std::size_t m = 1; m <= n + 1; ++m)
        for (std::size_t r = 1; r <= std::min(m, n); ++r)
          for (int rep = 0; rep < 5; ++rep) {
            const Matrix basis = random_matrix(r, n, rng);
            std::vector<Vector> states(m, Vector(n, 0.0));
            for (std::size_t s = 0; s < m; ++s) {
              // First r states are the basis itself so the span is exactly r.
              if (s < r) {
                std::copy(basis.row(s).begin(), basis.row(s).end(), states[s].begin());
              } else {
                std::normal_distribution<double> g;
                for (std::size_t b = 0; b < r; ++b) kernels::axpy(g(rng), basis.row(b), states[s]);
              }
            }
            const std::size_t rank = svd_rank(states, n);
            const auto q = suppressing_query(states, n);
            ++cases;
            if (q.has_value() != (rank < n)) ++mismatches;
            if (q) {
              if (std::abs(norm2(*q) - 1.0) > 1e-12) ++mismatches;
              for (const auto& h : states) worst = std::max(worst, std::abs(kernels::dot(*q, h)));
            }
          }
    // Impulse states of real heads, where the span is whatever the dynamics produce.
    const EvolutionKind kinds[] = {EvolutionKind::identity, EvolutionKind::scalar, EvolutionKind::diagonal,
                                   EvolutionKind::householder};
    for (std::size_t n = 1; n <= 6; ++n)
      for (auto e : kinds)
        for (std::size_t len = 1; len <= n + 1; ++len) {
          const Dims dims{3, n, 2, 1};
          const DynamicsSpec s = probe_spec(ReadoutKind::identity, e, dims, rng());
          const auto proj = ProjectionSet::random(dims, rng());
          const auto heads = materialize(s, proj, random_matrix(len, 3, rng));
          std::vector<Vector> states;
          for (std::size_t j = 0; j < len; ++j) states.push_back(impulse_state(heads[0], j, len - 1).state);
          const std::size_t rank = svd_rank(states, n);
          const auto q = suppressing_query(states, n);
          ++cases;
          if (q.has_value() != (rank < n)) ++mismatches;
          if (q)
            for (const auto& h : states) worst = std::max(worst, std::abs(kernels::dot(*q, h)));
        }
    c.checks.push_back({"existence matches rank", mismatches == 0,
                        std::to_string(cases) + " cases, " + std::to_string(mismatches) + " mismatches"});
    c.checks.push_back({"constructed queries annihilate", worst < 1e-10, "max |q^T h| = " + fmt(worst)});
  });
}

// ---- 5: positional information ----------------------------------------------

Criterion positional_information(std::uint64_t seed, std::size_t specs) {
  return timed(5, "positional information iff evolution is not identity", [&](Criterion& c) {
    Rng rng(sub_seed(seed, 500));
    const ReadoutKind readouts[] = {ReadoutKind::identity, ReadoutKind::exponential, ReadoutKind::softplus,
                                    ReadoutKind::sigmoid, ReadoutKind::kernel_product};
    const EvolutionKind kinds[] = {EvolutionKind::identity, EvolutionKind::scalar, EvolutionKind::diagonal,
                                   EvolutionKind::householder, EvolutionKind::gated_householder};
    std::size_t counterexamples = 0, with_identity = 0;
    std::string first;
    for (std::size_t k = 0; k < specs; ++k) {
      const auto r = readouts[uniform_int(rng, 0, 4)];
      const auto e = kinds[k % 5];
      Dims dims{uniform_int(rng, 2, 6), 0, 0, uniform_int(rng, 1, 2)};
      dims.n = dims.heads * uniform_int(rng, 2, 4);
      dims.d_v = dims.heads;
      const DynamicsSpec s = probe_spec(r, e, dims, rng());
      const auto proj = ProjectionSet::random(dims, rng());
      const std::size_t len = uniform_int(rng, 3, 16);
      Matrix x = random_matrix(len, dims.d, rng);
      const std::size_t i = len - 1;
      const std::size_t j = uniform_int(rng, 0, i - 1);
      const std::size_t jbar = uniform_int(rng, j + 1, i);
      std::copy(x.row(j).begin(), x.row(j).end(), x.row(jbar).begin());
      const bool dist = positional_distinguishability(s, proj, x, j, jbar, i);
      const bool expected = e != EvolutionKind::identity;
      with_identity += !expected;
      if (dist != expected) {
        ++counterexamples;
        if (first.empty())
          first = std::string(to_string(r)) + "/" + std::string(to_string(e)) + " j=" + std::to_string(j) +
                  " jbar=" + std::to_string(jbar);
      }
    }
    c.checks.push_back({"biconditional", counterexamples == 0,
                        std::to_string(specs) + " specs (" + std::to_string(with_identity) +
                            " with identity evolution), counterexamples: " + std::to_string(counterexamples) +
                            (first.empty() ? "" : " first: " + first)});
  });
}

// ---- 6: variance law --------------------------------------------------------

Criterion variance_law(std::uint64_t seed, std::size_t samples) {
  return timed(6, "dot-product variance", [&](Criterion& c) {
    Rng rng(sub_seed(seed, 600));
    const std::size_t n = 16;
    const Matrix tq = random_matrix(n, n, rng, 1.0 / std::sqrt(double(n)));
    const Matrix th = random_matrix(n, n, rng, 1.0 / std::sqrt(double(n)));
    const auto rep = dot_product_variance(tq, th, 1.0, samples, rng());
    c.checks.push_back({"empirical within 10% of analytic", rep.relative_deviation <= 0.10,
                        "analytic " + fmt(rep.analytic) + ", empirical " + fmt(rep.empirical) +
                            " (" + std::to_string(samples) + " samples)"});
    // The oracle for the trace form: sum of squared entries of T_q^T T_h via Eigen.
    Eigen::MatrixXd eq(n, n), eh(n, n);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t k = 0; k < n; ++k) {
        eq(r, k) = tq(r, k);
        eh(r, k) = th(r, k);
      }
    const double trace = (eq * eq.transpose() * eh * eh.transpose()).trace();
    c.checks.push_back({"analytic equals tr(Sigma_q Sigma_h)", std::abs(trace - rep.analytic) <= 1e-10 * trace,
                        "trace " + fmt(trace)});

    bool exact = true;
    std::string detail;
    for (std::size_t m : {4u, 16u, 64u}) {
      const Matrix id = Matrix::identity(m);
      const double v = analytic_dot_variance(id, id, 1.0);
      exact = exact && v == double(m);
      detail += "n=" + std::to_string(m) + ":" + fmt(v) + " ";
    }
    c.checks.push_back({"identity transforms give n", exact, detail});

    const double v16 = scaled_variance_probe(16, 1.0 / 4.0, rng());
    const double v64 = scaled_variance_probe(64, 1.0 / 8.0, rng());
    const double spread = std::abs(v16 - v64) / std::max(v16, v64);
    c.checks.push_back({"1/sqrt(n) scaling keeps variance level", spread <= 0.20,
                        "n=16: " + fmt(v16) + ", n=64: " + fmt(v64)});
  });
}

// ---- 7: normalization boundedness -------------------------------------------

Criterion normalization_boundedness() {
  return timed(7, "normalized coefficient growth", [&](Criterion& c) {
    const Dims dims{4, 4, 2, 1};
    const std::size_t horizon = 256;
    Rng rng(sub_seed(0, 700));
    const auto proj = ProjectionSet::random(dims, rng());
    const Matrix x = random_matrix(horizon, dims.d, rng);
    auto probe = [&](ReadoutKind r, NormalizationKind nk, double rho) {
      return normalized_growth_probe(constant_decay_spec(1.05, r, nk, dims, rho), proj, x);
    };
    const auto id = probe(ReadoutKind::identity, NormalizationKind::geometric, 1.05);
    c.checks.push_back({"A=1.05I, phi=Id, eta=1.05^i bounded", id.bounded,
                        id.classification + ", final " + fmt(id.trajectory.empty() ? 0.0 : id.trajectory.back())});
    const auto ex = probe(ReadoutKind::exponential, NormalizationKind::geometric, 1.05);
    c.checks.push_back({"A=1.05I, phi=exp, eta=1.05^i unbounded", !ex.bounded,
                        ex.classification + " at i=" + std::to_string(ex.failing_index)});
    const ReadoutKind nonneg[] = {ReadoutKind::exponential, ReadoutKind::softplus, ReadoutKind::sigmoid,
                                  ReadoutKind::relu};
    for (auto r : nonneg) {
      const auto s = probe(r, NormalizationKind::coefficient_sum, 1.0);
      double peak = 0.0;
      for (double v : s.trajectory) peak = std::max(peak, v);
      c.checks.push_back({"A=1.05I, phi=" + std::string(to_string(r)) + ", eta=sum bounded by 1",
                          s.bounded && peak <= 1.0 + 1e-12 && s.trajectory.size() == horizon,
                          "peak " + fmt(peak)});
    }
  });
}

// ---- 8: near-zero geometry --------------------------------------------------

Criterion near_zero_geometry(std::uint64_t seed, std::size_t seeds) {
  return timed(8, "near-zero geometry", [&](Criterion& c) {
    const double eps = 1e-3;
    auto measure = [&](ReadoutKind k) {
      const auto m = readout_near_zero_measure(ReadoutMap{k}, eps, -10.0, 10.0, 2000000);
      return m.analytic.value_or(m.numeric);
    };
    const double me = measure(ReadoutKind::exponential);
    const double ms = measure(ReadoutKind::softplus);
    const double mi = measure(ReadoutKind::identity);
    c.checks.push_back({"measure exp > softplus", me > ms, "exp " + fmt(me) + ", softplus " + fmt(ms)});
    c.checks.push_back({"measure softplus > identity", ms > mi, "softplus " + fmt(ms) + ", identity " + fmt(mi)});

    std::size_t wins = 0;
    double mean_exp = 0.0, mean_id = 0.0;
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng(sub_seed(seed, 800 + s));
      const Dims dims{8, 8, 4, 1};
      const auto proj = ProjectionSet::random(dims, rng());
      const Matrix x = random_matrix(64, dims.d, rng, 4.0);
      const auto sm = constant_decay_spec(1.0, ReadoutKind::exponential, NormalizationKind::coefficient_sum, dims);
      const auto li = constant_decay_spec(1.0, ReadoutKind::identity, NormalizationKind::one, dims);
      const double fe = near_zero_fraction(coefficient_matrix(sm, x, proj)[0], eps).fraction;
      const double fi = near_zero_fraction(coefficient_matrix(li, x, proj)[0], eps).fraction;
      wins += fe > fi;
      mean_exp += fe / double(seeds);
      mean_id += fi / double(seeds);
    }
    const double p = binomial_upper_tail(seeds, wins);
    c.checks.push_back({"exp fractions exceed identity (sign test)", p < 0.01,
                        std::to_string(wins) + "/" + std::to_string(seeds) + " wins, p = " + fmt(p) +
                            ", mean fractions exp " + fmt(mean_exp) + " identity " + fmt(mean_id)});
  });
}

// ---- 9: gradients -----------------------------------------------------------

Criterion gradient_correctness(std::uint64_t seed) {
  return timed(9, "gradients match finite differences", [&](Criterion& c) {
    const Dims dims{4, 4, 4, 2};
    const std::size_t vocab = 5, len = 6;
    std::uint64_t k = 0;
    auto run = [&](const std::string& name, ModelConfig cfg) {
      cfg.vocab_size = vocab;
      cfg.max_len = len;
      const std::uint64_t s = sub_seed(seed, 900 + k++);
      const Model m = Model::init(cfg, s);
      const auto g = gradient_check(m, random_example(len, vocab, sub_seed(s, 1)));
      c.checks.push_back({name, g.passed,
                          std::to_string(g.coordinates) + " coords, max rel " + fmt(g.max_rel_error) +
                              (g.passed ? "" : " at " + g.worst)});
    };
    auto base = [&](DynamicsSpec s) {
      ModelConfig cfg;
      cfg.dynamics = std::move(s);
      cfg.layers = 1;
      return cfg;
    };
    const ReadoutKind readouts[] = {ReadoutKind::identity, ReadoutKind::exponential, ReadoutKind::relu,
                                    ReadoutKind::softplus, ReadoutKind::sigmoid, ReadoutKind::kernel_product};
    const EvolutionKind kinds[] = {EvolutionKind::identity, EvolutionKind::scalar, EvolutionKind::diagonal,
                                   EvolutionKind::householder, EvolutionKind::gated_householder};
    for (auto r : readouts)
      for (auto e : kinds)
        run(std::string(to_string(r)) + " x " + std::string(to_string(e)), base(probe_spec(r, e, dims, k)));

    for (Architecture a : all_architectures()) {
      ModelConfig cfg;
      cfg.architecture = a;
      cfg.dynamics.dims = dims;
      cfg.layers = 1;
      run("preset " + std::string(to_string(a)), cfg);
    }

    // Normalizers, scalings and directions not reached above.
    {
      auto s = probe_spec(ReadoutKind::exponential, EvolutionKind::scalar, dims, 1);
      s.normalization.kind = NormalizationKind::geometric;
      s.normalization.rho = 0.9;
      run("geometric normalization", base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::identity, EvolutionKind::diagonal, dims, 2);
      s.normalization.kind = NormalizationKind::external_state;
      s.normalization.gate = AffineGate::random(dims.heads, dims.d, 3, 1.0, 0.0);
      run("external-state normalization", base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::softplus, EvolutionKind::scalar, dims, 4);
      s.normalization.kind = NormalizationKind::input_derived;
      s.normalization.gate = AffineGate::random(dims.heads, dims.d, 5, 1.0, 0.0);
      run("input-derived normalization", base(s));
    }
    const ScalingParameterization gated[] = {ScalingParameterization::exp_gate_over_sqrt_n,
                                             ScalingParameterization::sigmoid,
                                             ScalingParameterization::sigmoid_over_sqrt_n};
    for (auto p : gated) {
      auto s = probe_spec(ReadoutKind::identity, EvolutionKind::diagonal, dims, 6);
      s.scaling.kind = ScalingKind::input_derived;
      s.scaling.parameterization = p;
      s.scaling.gate = AffineGate::random(dims.heads, dims.d, 7, 1.0, 0.0);
      run("scaling " + std::string(to_string(p)), base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::identity, EvolutionKind::scalar, dims, 8);
      s.scaling.kind = ScalingKind::input_derived;
      s.scaling.parameterization = ScalingParameterization::delta;
      run("scaling delta", base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::identity, EvolutionKind::householder, dims, 9);
      s.evolution.householder.direction = DirectionSource::learned;
      s.evolution.householder.direction_gate = AffineGate::random(dims.n, dims.d, 10, 1.0, 0.0);
      run("householder learned direction", base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::identity, EvolutionKind::gated_householder, dims, 11);
      s.evolution.normalize_keys = false;
      s.evolution.allow_unstable = true;
      s.evolution.householder.normalize_direction = true;
      s.scaling.kind = ScalingKind::input_derived;
      s.scaling.parameterization = ScalingParameterization::beta_over_sqrt_n;
      run("householder renormalized key direction", base(s));
    }
    {
      auto s = probe_spec(ReadoutKind::exponential, EvolutionKind::diagonal, dims, 12);
      s.evolution.decay.parameterization = DecayParameterization::exponential;
      s.evolution.decay.gate = AffineGate::random(dims.n, dims.d, 13, 0.3, -0.5);
      s.evolution.allow_unstable = true;
      run("exponential decay", base(s));
    }

    // Block features.
    ModelConfig feat = base(probe_spec(ReadoutKind::exponential, EvolutionKind::scalar, dims, 14));
    feat.positional_embedding = true;
    run("positional embedding", feat);
    feat = base(probe_spec(ReadoutKind::identity, EvolutionKind::diagonal, dims, 15));
    feat.block = BlockStyle::type2;
    run("type2 block", feat);
    feat.short_conv = true;
    feat.conv_width = 3;
    run("short convolution", feat);
    feat = base(probe_spec(ReadoutKind::exponential, EvolutionKind::identity, dims, 16));
    feat.mlp = true;
    feat.mlp_dim = 6;
    feat.layers = 2;
    run("two layers with MLP", feat);
  });
}

// ---- 10: desk recall --------------------------------------------------------

namespace {

struct ArmRun {
  double best = 0.0;
  double chance = 0.0;
  std::optional<std::string> failure;
  double seconds = 0.0;
};

// Trains one desk config under `seed` (task and train seeds both set).
ArmRun run_arm(const DeskOptions& opts, const std::string& file, std::uint64_t seed) {
  const std::string path = opts.config_dir + "/" + file;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  Json j = Json::parse(in);
  j["task"]["seed"] = seed;
  j["train"]["seed"] = seed;
  const RunConfig run = run_config_from_json(j);
  const TaskInstance data = generate(run.task);
  const TrainResult res = train_loop(run.model, run.train, data, run.train.lr);
  ArmRun r{res.best_eval_acc, 2.0 / double(run.task.vocab_size), res.failure, res.seconds};
  if (opts.log)
    opts.log(file + " seed " + std::to_string(seed) + " best eval " + fmt(r.best) +
             (r.failure ? " (" + *r.failure + ")" : ""));
  return r;
}

std::string describe(std::uint64_t seed, const ArmRun& r) {
  return "seed " + std::to_string(seed) + ": " + fmt(r.best) + (r.failure ? " (" + *r.failure + ")" : "") +
         " in " + fmt(r.seconds) + "s";
}

}  // namespace

Criterion desk_recall(const DeskOptions& opts) {
  return timed(10, "desk noisy recall", [&](Criterion& c) {
    struct Arm {
      const char* file;
      const char* label;
      bool expect_solve;
    };
    const Arm arms[] = {{"desk_recall_decay.json", "A=0.95I, no PE", true},
                        {"desk_recall_softmax.json", "A=I, phi=exp, no PE", false},
                        {"desk_recall_softmax_pe.json", "A=I, with PE", true}};
    for (const auto& arm : arms) {
      std::string detail;
      bool ok = true;
      for (auto s : opts.seeds) {
        const ArmRun r = run_arm(opts, arm.file, s);
        ok = ok && (arm.expect_solve ? r.best >= 0.9 : r.best <= r.chance + 0.15);
        detail += (detail.empty() ? "" : "; ") + describe(s, r);
      }
      c.checks.push_back({std::string(arm.label) + (arm.expect_solve ? " >= 0.9" : " <= chance + 0.15"), ok,
                          detail});
    }
  });
}

Criterion training_properties(const DeskOptions& opts) {
  return timed(0, "training properties", [&](Criterion& c) {
    // Scaling: seed-to-seed spread of the exp readout on fuzzy recall.
    auto spread = [&](const char* file, std::string& detail) {
      double lo = 1.0, hi = 0.0;
      for (auto s : opts.seeds) {
        const ArmRun r = run_arm(opts, file, s);
        lo = std::min(lo, r.best);
        hi = std::max(hi, r.best);
        detail += (detail.empty() ? "" : "; ") + describe(s, r);
      }
      return hi - lo;
    };
    std::string d_scaled, d_one;
    const double r_scaled = spread("desk_fuzzy_scaling_inv_sqrt_n.json", d_scaled);
    const double r_one = spread("desk_fuzzy_scaling_one.json", d_one);
    c.checks.push_back({"accuracy range with b=1/sqrt(n) <= range with b=1", r_scaled <= r_one,
                        "1/sqrt(n): range " + fmt(r_scaled) + " (" + d_scaled + ") 1: range " + fmt(r_one) +
                            " (" + d_one + ")"});

    // Normalization under A = 1.05 I.
    const std::uint64_t s0 = opts.seeds.empty() ? 0 : opts.seeds.front();
    const ArmRun sum = run_arm(opts, "desk_unstable_sum.json", s0);
    c.checks.push_back({"A=1.05I, eta=sum trains without divergence", !sum.failure, describe(s0, sum)});
    const ArmRun one = run_arm(opts, "desk_unstable_one.json", s0);
    c.checks.push_back({"A=1.05I, phi=exp, eta=1 diverges or stays at chance",
                        one.failure.has_value() || one.best <= one.chance + 0.15, describe(s0, one)});

    // Decay parameterization: reported only, there is no stated margin.
    const ArmRun gla = run_arm(opts, "desk_fuzzy_decay_gla.json", s0);
    const ArmRun mamba = run_arm(opts, "desk_fuzzy_decay_mamba2.json", s0);
    c.checks.push_back({"scalar decay, gla vs mamba2 gates (reported)", true,
                        "gla " + fmt(gla.best) + ", mamba2 " + fmt(mamba.best)});
  });
}

// ---- 11: throughput ---------------------------------------------------------

Criterion throughput(const BenchOptions& opts) {
  return timed(11, "throughput scaling", [&](Criterion& c) {
    const BenchReport r = run_bench(opts);
    c.checks.push_back({"dense slope >= 1.7", r.dense_slope >= 1.7, "slope " + fmt(r.dense_slope)});
    c.checks.push_back({"recurrent slope <= 1.3", r.recurrent_slope <= 1.3, "slope " + fmt(r.recurrent_slope)});
  });
}

// ---- 12: Householder spectrum -----------------------------------------------

Criterion householder_spectrum(std::uint64_t seed) {
  return timed(12, "householder spectrum", [&](Criterion& c) {
    Rng rng(sub_seed(seed, 1200));
    std::uniform_real_distribution<double> ub(0.0, 2.0);
    double worst = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 1; n <= 8; ++n)
      for (int rep = 0; rep < 50; ++rep) {
        Matrix k = random_matrix(1, n, rng);
        kernels::scale(1.0 / norm2(k.row(0)), k.row(0));
        const double beta = rep == 0 ? 2.0 : rep == 1 ? 0.0 : ub(rng);
        for (const auto& ev : evolution_spectrum(EvolutionStep::householder(k.row(0), beta, false), n)) {
          const double outside = std::max(0.0, std::abs(ev.real()) - 1.0) + std::abs(ev.imag());
          worst = std::max(worst, outside);
        }
        ++count;
      }
    c.checks.push_back({"unit keys, beta in [0,2]: eigenvalues in [-1,1]", worst <= 1e-10,
                        std::to_string(count) + " matrices, max excess " + fmt(worst)});

    // Through the materialized DeltaNet dynamics with beta in (0, 2).
    PresetHyper h;
    h.negative_eigenvalues = true;
    const Dims dims{4, 8, 4, 2};
    const auto p = preset(Architecture::deltanet, dims, h, rng());
    double radius = 0.0;
    for (const auto& hd : materialize(p.spec, p.proj, random_matrix(32, dims.d, rng)))
      for (std::size_t t = 0; t < hd.length(); ++t)
        radius = std::max(radius, spectral_radius(step_at(hd, t), hd.state_dim()));
    c.checks.push_back({"deltanet steps have spectral radius <= 1", radius <= 1.0 + 1e-10, "max " + fmt(radius)});

    Vector k2{2.0, 0.0, 0.0};
    const double r2 = spectral_radius(EvolutionStep::householder(k2, 2.0, false), 3);
    c.checks.push_back({"|k|=2, beta=2 gives |eigenvalue| > 1", r2 > 1.0, "spectral radius " + fmt(r2)});

    auto unstable = preset(Architecture::deltanet, dims, h, rng());
    unstable.spec.evolution.normalize_keys = false;
    unstable.spec.evolution.allow_unstable = false;
    unstable.proj.w_k = random_matrix(dims.n, dims.d, rng, 3.0);
    bool raised = false;
    try {
      materialize(unstable.spec, unstable.proj, random_matrix(16, dims.d, rng));
    } catch (const StabilityError&) {
      raised = true;
    }
    c.checks.push_back({"unnormalized keys rejected without allow_unstable", raised, ""});
  });
}

// ---- module suites ----------------------------------------------------------

Criterion task_suite(std::uint64_t seed) {
  return timed(0, "tasks", [&](Criterion& c) {
    for (TaskKind kind : {TaskKind::selective_copying, TaskKind::memorization, TaskKind::noisy_recall,
                          TaskKind::fuzzy_recall}) {
      TaskSpec s;
      s.kind = kind;
      s.seed = seed;
      s.num_train_examples = 128;
      s.num_eval_examples = 64;
      if (kind == TaskKind::fuzzy_recall) s.vocab_size = 16;
      const TaskInstance a = generate(s);
      const TaskInstance b = generate(s);
      std::size_t bad = 0;
      std::string first;
      std::set<std::uint64_t> train_hashes;
      for (const auto& ex : a.train) train_hashes.insert(example_hash(ex));
      std::size_t overlap = 0;
      for (const auto& ex : a.eval) overlap += train_hashes.count(example_hash(ex));
      for (const auto* split : {&a.train, &a.eval})
        for (const auto& ex : *split)
          if (auto err = check_example(s, ex)) {
            ++bad;
            if (first.empty()) first = *err;
          }
      const double oracle = exact_match_accuracy(a.eval, [&](const TaskExample& ex) { return oracle_predictions(s, ex); });
      const std::string n(to_string(kind));
      c.checks.push_back({n + " well-posed", bad == 0, first});
      c.checks.push_back({n + " deterministic", a.train == b.train && a.eval == b.eval, ""});
      c.checks.push_back({n + " splits disjoint", overlap == 0, std::to_string(overlap) + " shared"});
      c.checks.push_back({n + " oracle accuracy 1", oracle == 1.0, fmt(oracle)});
    }
    TaskSpec clean;
    clean.frac_noise = 0.0;
    clean.seed = seed;
    bool no_noise = true;
    for (const auto& ex : generate(clean).train)
      for (auto t : ex.tokens)
        no_noise = no_noise && !(t >= std::int32_t(clean.vocab_size) && t < clean.delimiter());
    c.checks.push_back({"noisy-recall without noise has no noise tokens", no_noise, ""});
  });
}

Criterion serialization_suite(std::uint64_t seed) {
  return timed(0, "serialization", [&](Criterion& c) {
    for (Architecture a : all_architectures()) {
      const auto p = preset(a, Dims{4, 4, 4, 2}, {}, seed);
      const Json j = to_json(p.spec);
      const Json back = to_json(spec_from_json(j));
      c.checks.push_back({"spec round trip " + std::string(to_string(a)), j == back, ""});
    }
    Json bad = to_json(preset(Architecture::gla, Dims{4, 4, 4, 1}, {}, seed).spec);
    bad["unexpected"] = 1;
    bool rejected = false;
    try {
      spec_from_json(bad);
    } catch (const ConfigError&) {
      rejected = true;
    }
    c.checks.push_back({"unknown spec keys rejected", rejected, ""});
    TaskSpec ts;
    ts.seed = seed;
    ts.num_train_examples = 16;
    ts.num_eval_examples = 8;
    const TaskInstance inst = generate(ts);
    std::stringstream buf;
    write_binary(buf, inst);
    const TaskInstance rt = read_binary(buf);
    c.checks.push_back({"task binary round trip", rt.train == inst.train && rt.eval == inst.eval, ""});
  });
}

Criterion kernel_suite(std::uint64_t seed) {
  return timed(0, "kernels", [&](Criterion& c) {
    if (!kernels::available(kernels::Isa::avx2)) {
      c.checks.push_back({"avx2 unavailable; scalar only", true, ""});
      return;
    }
    Rng rng(sub_seed(seed, 1300));
    double worst = 0.0;
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 33u, 64u, 257u}) {
      const Matrix a = random_matrix(2, n, rng);
      const auto& s = kernels::table(kernels::Isa::scalar);
      const auto& v = kernels::table(kernels::Isa::avx2);
      const double ds = s.dot(a.row(0).data(), a.row(1).data(), n);
      const double dv = v.dot(a.row(0).data(), a.row(1).data(), n);
      worst = std::max(worst, std::abs(ds - dv) / std::max(1.0, std::abs(ds)));
      Vector ys(a.row(1).begin(), a.row(1).end()), yv = ys;
      s.axpy(0.7, a.row(0).data(), ys.data(), n);
      v.axpy(0.7, a.row(0).data(), yv.data(), n);
      worst = std::max(worst, max_abs_diff(ys, yv));
    }
    c.checks.push_back({"scalar and avx2 primitives agree", worst <= 1e-12, "max " + fmt(worst)});
    const auto p = preset(Architecture::gated_deltanet, Dims{6, 8, 8, 2}, {}, seed);
    const Matrix x = random_matrix(40, 6, rng);
    Matrix ys, yv;
    {
      kernels::ScopedIsa g(kernels::Isa::scalar);
      ys = forward_dense(p.spec, p.proj, x);
    }
    {
      kernels::ScopedIsa g(kernels::Isa::avx2);
      yv = forward_dense(p.spec, p.proj, x);
    }
    c.checks.push_back({"engine output independent of kernel table", max_abs_diff(ys, yv) <= 1e-12,
                        "max " + fmt(max_abs_diff(ys, yv))});
  });
}

std::vector<Criterion> run_all(const VerifyOptions& o, const std::function<void(const Criterion&)>& on_done) {
  std::vector<Criterion> out;
  auto add = [&](Criterion c) {
    if (on_done) on_done(c);
    out.push_back(std::move(c));
  };
  add(architecture_equivalence(o.seed));
  add(dual_path(o.seed));
  add(convexity_and_classes(o.seed));
  add(suppression_bound(o.seed));
  add(positional_information(o.seed));
  add(variance_law(o.seed));
  add(normalization_boundedness());
  add(near_zero_geometry(o.seed));
  add(gradient_correctness(o.seed));
  if (o.training) add(desk_recall(o.desk));
  if (o.training) add(training_properties(o.desk));
  if (o.bench) add(throughput(o.bench_options));
  add(householder_spectrum(o.seed));
  add(task_suite(o.seed));
  add(serialization_suite(o.seed));
  add(kernel_suite(o.seed));
  return out;
}

}  // namespace cdyn::verify
