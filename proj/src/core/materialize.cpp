#include <algorithm>
#include <cmath>
#include <string>

#include "cdyn/core/engine.hpp"
#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

Projected project(const ProjectionSet& proj, const Matrix& inputs) {
  proj.validate();
  if (inputs.cols() != proj.w_q.cols())
    throw ShapeError("project: W_Q expects inputs of width " + std::to_string(proj.w_q.cols()) +
                     ", got " + std::to_string(inputs.cols()));
  return {apply_rows(inputs, proj.w_q), apply_rows(inputs, proj.w_k),
          apply_rows(inputs, proj.w_v)};
}

namespace {

std::string at(std::size_t t) { return " at t=" + std::to_string(t); }

double clamp_abs(double x, double c) { return std::clamp(x, -c, c); }

// Decay value for gate row `row` at input x; writes the mamba2 step size.
double eval_decay(const DecayRule& rule, std::size_t row, std::span<const double> x,
                  double* delta) {
  if (rule.source == ParameterSource::constant)
    return rule.value.size() == 1 ? rule.value[0] : rule.value[row];
  const double pre = rule.gate.apply_row(row, x);
  switch (rule.parameterization) {
    case DecayParameterization::gla:
      return std::pow(sigmoid(pre), 1.0 / rule.tau);
    case DecayParameterization::mamba2: {
      const double dt = softplus(pre);
      if (delta) *delta = dt;
      return std::exp(-dt * rule.rate[row]);
    }
    case DecayParameterization::exponential:
      return std::exp(clamp_abs(pre, rule.clamp));
  }
  return 1.0;
}

void normalize_row(std::span<double> v, const char* what, std::size_t t) {
  const double nrm = norm2(v);
  if (nrm == 0.0 || !std::isfinite(nrm))
    throw ConfigError(std::string(what) + ": zero vector cannot be unit-normalized" + at(t));
  kernels::scale(1.0 / nrm, v);
}

void check_stable(double eig, bool allow, const char* what, std::size_t t) {
  if (!std::isfinite(eig)) throw OverflowError(std::string(what) + ": non-finite" + at(t), long(t));
  if (!allow && std::abs(eig) > 1.0)
    throw StabilityError(std::string(what) + ": eigenvalue " + std::to_string(eig) +
                         " outside [-1, 1]" + at(t) + " (set allow_unstable)");
}

}  // namespace

std::vector<HeadDynamics> materialize_projected(const DynamicsSpec& spec, const Matrix& inputs,
                                                const Projected& qkv) {
  spec.validate();
  const Dims& dims = spec.dims;
  const std::size_t len = inputs.rows();
  if (len == 0) throw ShapeError("materialize: empty sequence");
  if (inputs.cols() != dims.d) throw ShapeError("materialize: inputs must have width d");
  require_shape(qkv.queries.rows() == len && qkv.queries.cols() == dims.n,
                "materialize: queries must be L x n");
  require_shape(qkv.keys.rows() == len && qkv.keys.cols() == dims.n,
                "materialize: keys must be L x n");
  require_shape(qkv.values.rows() == len && qkv.values.cols() == dims.d_v,
                "materialize: values must be L x d_v");

  const std::size_t nh = dims.head_dim();
  const std::size_t vh = dims.head_value_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(nh));
  const auto& ev = spec.evolution;
  const auto& hh = ev.householder;

  std::vector<HeadDynamics> heads(dims.heads);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    HeadDynamics& hd = heads[h];
    hd.readout = spec.readout;
    hd.kind = ev.kind;
    hd.normalization = spec.normalization.kind;
    hd.rho = spec.normalization.rho;
    hd.eta_floor = spec.eta_floor;
    hd.queries = qkv.queries.col_block(h * nh, nh);
    hd.keys = qkv.keys.col_block(h * nh, nh);
    hd.values = qkv.values.col_block(h * vh, vh);
    hd.scale.assign(len, 0.0);

    if (ev.normalize_keys)
      for (std::size_t t = 0; t < len; ++t) normalize_row(hd.keys.row(t), "keys", t);

    Vector delta(len, 0.0);
    switch (ev.kind) {
      case EvolutionKind::identity:
        break;
      case EvolutionKind::scalar:
        hd.lambda.resize(len);
        for (std::size_t t = 0; t < len; ++t) {
          hd.lambda[t] = eval_decay(ev.decay, h, inputs.row(t), &delta[t]);
          check_stable(hd.lambda[t], ev.allow_unstable, "evolution.scalar", t);
        }
        break;
      case EvolutionKind::diagonal:
        hd.diag = Matrix(len, nh);
        for (std::size_t t = 0; t < len; ++t)
          for (std::size_t r = 0; r < nh; ++r) {
            const double lam = eval_decay(ev.decay, h * nh + r, inputs.row(t), nullptr);
            check_stable(lam, ev.allow_unstable, "evolution.diagonal", t);
            hd.diag(t, r) = lam;
          }
        break;
      case EvolutionKind::householder:
      case EvolutionKind::gated_householder: {
        const bool gated = ev.kind == EvolutionKind::gated_householder;
        hd.direction = Matrix(len, nh);
        hd.beta.resize(len);
        if (gated) hd.lambda.resize(len);
        for (std::size_t t = 0; t < len; ++t) {
          auto z = hd.direction.row(t);
          switch (hh.direction) {
            case DirectionSource::keys:
              std::copy(hd.keys.row(t).begin(), hd.keys.row(t).end(), z.begin());
              break;
            case DirectionSource::learned:
              for (std::size_t r = 0; r < nh; ++r)
                z[r] = hh.direction_gate.apply_row(h * nh + r, inputs.row(t));
              break;
            case DirectionSource::constant:
              std::copy_n(hh.direction_value.begin() + h * nh, nh, z.begin());
              break;
          }
          const bool already_unit = hh.direction == DirectionSource::keys && ev.normalize_keys;
          if (hh.normalize_direction && !already_unit) normalize_row(z, "householder direction", t);

          double beta = hh.strength;
          if (hh.strength_source == ParameterSource::input_derived) {
            beta = sigmoid(hh.strength_gate.apply_row(h, inputs.row(t)));
            if (hh.negative_eigenvalues) beta *= 2.0;
          }
          hd.beta[t] = beta;
          double gate = 1.0;
          if (gated) {
            gate = eval_decay(ev.decay, h, inputs.row(t), &delta[t]);
            hd.lambda[t] = gate;
            check_stable(gate, ev.allow_unstable, "evolution.gate", t);
          }
          const double zz = kernels::dot(z, z);
          check_stable(gate * (1.0 - beta * zz), ev.allow_unstable, "evolution.householder", t);
        }
        break;
      }
    }

    const auto& sc = spec.scaling;
    for (std::size_t t = 0; t < len; ++t) {
      double b = 1.0;
      switch (sc.kind) {
        case ScalingKind::constant:
          b = sc.value;
          break;
        case ScalingKind::inverse_sqrt_n:
          b = inv_sqrt;
          break;
        case ScalingKind::input_derived:
          switch (sc.parameterization) {
            case ScalingParameterization::delta:
              b = delta[t];
              break;
            case ScalingParameterization::beta_over_sqrt_n:
              b = hd.beta[t] * inv_sqrt;
              break;
            case ScalingParameterization::exp_gate_over_sqrt_n:
              b = std::exp(clamp_abs(sc.gate.apply_row(h, inputs.row(t)), sc.clamp)) * inv_sqrt;
              break;
            case ScalingParameterization::sigmoid:
              b = sigmoid(sc.gate.apply_row(h, inputs.row(t)));
              break;
            case ScalingParameterization::sigmoid_over_sqrt_n:
              b = sigmoid(sc.gate.apply_row(h, inputs.row(t))) * inv_sqrt;
              break;
          }
          break;
      }
      if (!std::isfinite(b)) throw OverflowError("scaling: non-finite b" + at(t), long(t));
      hd.scale[t] = b;
    }

    const auto& nr = spec.normalization;
    if (nr.kind == NormalizationKind::external_state) {
      hd.out_gate.assign(len, 1.0);
      if (!nr.gate.empty())
        for (std::size_t t = 0; t < len; ++t)
          hd.out_gate[t] = sigmoid(nr.gate.apply_row(h, inputs.row(t)));
    } else if (nr.kind == NormalizationKind::input_derived) {
      hd.log_eta.resize(len);
      for (std::size_t t = 0; t < len; ++t) hd.log_eta[t] = nr.gate.apply_row(h, inputs.row(t));
    }
  }
  return heads;
}

std::vector<HeadDynamics> materialize(const DynamicsSpec& spec, const ProjectionSet& proj,
                                      const Matrix& inputs) {
  if (proj.w_q.rows() != spec.dims.n || proj.w_q.cols() != spec.dims.d)
    throw ShapeError("materialize: W_Q must be n x d");
  if (proj.w_k.rows() != spec.dims.n || proj.w_k.cols() != spec.dims.d)
    throw ShapeError("materialize: W_K must be n x d");
  if (proj.w_v.rows() != spec.dims.d_v || proj.w_v.cols() != spec.dims.d)
    throw ShapeError("materialize: W_V must be d_v x d");
  return materialize_projected(spec, inputs, project(proj, inputs));
}

}  // namespace cdyn
