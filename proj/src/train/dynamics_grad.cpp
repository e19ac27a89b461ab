#include "cdyn/train/dynamics_grad.hpp"

#include <cmath>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

namespace {

std::size_t tri(std::size_t i) { return i * (i + 1) / 2; }

// Derivative of a unit-normalization u = r / |r| applied to the upstream du.
void unit_backward(std::span<const double> raw, std::span<const double> du, std::span<double> dr) {
  const double nrm = norm2(raw);
  double proj = 0.0;
  for (std::size_t r = 0; r < raw.size(); ++r) proj += raw[r] * du[r];
  proj /= nrm * nrm;
  for (std::size_t r = 0; r < raw.size(); ++r) dr[r] += (du[r] - raw[r] * proj) / nrm;
}

AffineGate zero_gate_like(const AffineGate& g) {
  return g.empty() ? AffineGate{} : AffineGate{Matrix(g.weight.rows(), g.weight.cols()),
                                               Vector(g.bias.size(), 0.0)};
}

// Accumulates dpre into a gate row and into the input gradient.
void gate_backward(const AffineGate& g, AffineGate& dg, std::size_t row,
                   std::span<const double> x, double dpre, std::span<double> dx) {
  if (dpre == 0.0) return;
  kernels::axpy(dpre, x, dg.weight.row(row));
  dg.bias[row] += dpre;
  kernels::axpy(dpre, g.weight.row(row), dx);
}

}  // namespace

HeadGradients head_backward(const HeadDynamics& hd, const Matrix& dy) {
  const std::size_t len = hd.length();
  const std::size_t n = hd.state_dim();
  const std::size_t dv = hd.value_dim();
  require_shape(dy.rows() == len && dy.cols() == dv, "head_backward: d_out must be L x d_v~");

  HeadGradients g;
  g.dq = Matrix(len, n);
  g.dk = Matrix(len, n);
  g.dv = Matrix(len, dv);
  g.dscale.assign(len, 0.0);
  if (hd.kind == EvolutionKind::scalar || hd.kind == EvolutionKind::gated_householder)
    g.dlambda.assign(len, 0.0);
  if (hd.kind == EvolutionKind::diagonal) g.ddiag = Matrix(len, n);
  if (hd.kind == EvolutionKind::householder || hd.kind == EvolutionKind::gated_householder) {
    g.ddirection = Matrix(len, n);
    g.dbeta.assign(len, 0.0);
  }
  if (hd.normalization == NormalizationKind::external_state) g.dout_gate.assign(len, 0.0);
  if (hd.normalization == NormalizationKind::input_derived) g.dlog_eta.assign(len, 0.0);

  // Every impulse state h_{i,j}, packed by row.
  std::vector<double> states(tri(len) * n);
  auto h = [&](std::size_t i, std::size_t j) {
    return std::span<double>(states.data() + (tri(i) + j) * n, n);
  };
  for (std::size_t i = 0; i < len; ++i) {
    const EvolutionStep step = step_at(hd, i);
    for (std::size_t j = 0; j < i; ++j) {
      auto dst = h(i, j);
      const auto src = h(i - 1, j);
      std::copy(src.begin(), src.end(), dst.begin());
      evolution_apply_inplace(step, dst);
    }
    auto fresh = h(i, i);
    for (std::size_t r = 0; r < n; ++r) fresh[r] = hd.scale[i] * hd.keys(i, r);
  }
  const CoefficientMatrix cm = coefficient_matrix(hd);

  const bool kernel = hd.readout.kind == ReadoutKind::kernel_product;
  const bool softmax = hd.readout.kind == ReadoutKind::exponential &&
                       hd.normalization == NormalizationKind::coefficient_sum;
  const auto fm = hd.readout.feature_map;

  std::vector<double> dstate(tri(len) * n, 0.0);  // direct d h_{i,j}
  auto gh = [&](std::size_t i, std::size_t j) {
    return std::span<double>(dstate.data() + (tri(i) + j) * n, n);
  };

  Vector dnorm(len), dalpha(len), psi_q(n), dpsi_q(n), sum_state(n);
  for (std::size_t i = 0; i < len; ++i) {
    const auto q = hd.queries.row(i);
    const auto an = cm.normalized.row(i);
    const double eta = cm.eta[i];
    for (std::size_t j = 0; j <= i; ++j) {
      dnorm[j] = kernels::dot(dy.row(i), hd.values.row(j));
      kernels::axpy(an[j], dy.row(i), g.dv.row(j));
    }
    if (softmax) {
      double inner = 0.0;
      for (std::size_t j = 0; j <= i; ++j) inner += an[j] * dnorm[j];
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = an[j] * (dnorm[j] - inner);
        kernels::axpy(ds, h(i, j), g.dq.row(i));
        kernels::axpy(ds, q, gh(i, j));
      }
      continue;
    }

    double deta = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      dalpha[j] = dnorm[j] / eta;
      deta -= dnorm[j] * an[j] / eta;
    }
    const bool floored = std::abs(eta) == hd.eta_floor;
    if (!floored) {
      switch (hd.normalization) {
        case NormalizationKind::one:
        case NormalizationKind::geometric:
          break;
        case NormalizationKind::coefficient_sum:
          for (std::size_t j = 0; j <= i; ++j) dalpha[j] += deta;
          break;
        case NormalizationKind::external_state: {
          std::fill(sum_state.begin(), sum_state.end(), 0.0);
          for (std::size_t j = 0; j <= i; ++j) kernels::axpy(1.0, h(i, j), sum_state);
          const double m = kernels::dot(q, sum_state);
          const double o = hd.out_gate[i];
          if (std::abs(m) > 1.0) {
            const double dm = deta * (m > 0 ? 1.0 : -1.0) / o;
            kernels::axpy(dm, sum_state, g.dq.row(i));
            for (std::size_t j = 0; j <= i; ++j) kernels::axpy(dm, q, gh(i, j));
          }
          g.dout_gate[i] = -deta * eta / o;
          break;
        }
        case NormalizationKind::input_derived:
          g.dlog_eta[i] = deta * eta;
          break;
      }
    }

    if (kernel) {
      for (std::size_t r = 0; r < n; ++r) psi_q[r] = feature_map(fm, q[r]);
      std::fill(dpsi_q.begin(), dpsi_q.end(), 0.0);
      for (std::size_t j = 0; j <= i; ++j) {
        const auto hij = h(i, j);
        auto gij = gh(i, j);
        for (std::size_t r = 0; r < n; ++r) {
          dpsi_q[r] += dalpha[j] * feature_map(fm, hij[r]);
          gij[r] += dalpha[j] * psi_q[r] * feature_map_derivative(fm, hij[r]);
        }
      }
      auto dq = g.dq.row(i);
      for (std::size_t r = 0; r < n; ++r) dq[r] += dpsi_q[r] * feature_map_derivative(fm, q[r]);
    } else {
      for (std::size_t j = 0; j <= i; ++j) {
        const auto hij = h(i, j);
        const double ds = dalpha[j] * hd.readout.derivative(kernels::dot(q, hij));
        kernels::axpy(ds, hij, g.dq.row(i));
        kernels::axpy(ds, q, gh(i, j));
      }
    }
  }

  // Adjoint sweep per source j: lambda_{i,j} = G_{i,j} + A_{i+1}^T lambda_{i+1,j};
  // every A_t here is symmetric, so A^T lambda reuses the forward application.
  Vector lam(n);
  for (std::size_t j = 0; j < len; ++j) {
    const auto last = gh(len - 1, j);
    std::copy(last.begin(), last.end(), lam.begin());
    for (std::size_t i = len - 1; i > j; --i) {
      const auto prev = h(i - 1, j);
      switch (hd.kind) {
        case EvolutionKind::identity:
          break;
        case EvolutionKind::scalar:
          g.dlambda[i] += kernels::dot(lam, prev);
          break;
        case EvolutionKind::diagonal: {
          auto dd = g.ddiag.row(i);
          for (std::size_t r = 0; r < n; ++r) dd[r] += lam[r] * prev[r];
          break;
        }
        case EvolutionKind::householder:
        case EvolutionKind::gated_householder: {
          const auto z = hd.direction.row(i);
          const double beta = hd.beta[i];
          const double gate = hd.kind == EvolutionKind::gated_householder ? hd.lambda[i] : 1.0;
          const double c = kernels::dot(z, prev);
          const double lz = kernels::dot(z, lam);
          g.dbeta[i] += -gate * c * lz;
          auto dz = g.ddirection.row(i);
          for (std::size_t r = 0; r < n; ++r) dz[r] += -gate * beta * (lz * prev[r] + c * lam[r]);
          if (hd.kind == EvolutionKind::gated_householder)
            g.dlambda[i] += kernels::dot(lam, prev) - beta * c * lz;
          break;
        }
      }
      evolution_apply_inplace(step_at(hd, i), lam);
      kernels::axpy(1.0, gh(i - 1, j), lam);
    }
    g.dscale[j] += kernels::dot(lam, hd.keys.row(j));
    kernels::axpy(hd.scale[j], lam, g.dk.row(j));
  }
  return g;
}

Matrix dynamics_forward(const DynamicsSpec& spec, const Matrix& inputs, const Projected& qkv,
                        bool recurrent) {
  std::vector<Matrix> parts;
  for (const auto& hd : materialize_projected(spec, inputs, qkv))
    parts.push_back(recurrent && supports_recurrent(hd.readout, hd.kind) ? forward_recurrent(hd)
                                                                          : forward_dense(hd));
  return concat_heads(parts);
}

DynamicsGradients dynamics_backward(const DynamicsSpec& spec, const Matrix& inputs,
                                    const Projected& qkv, const Matrix& d_out) {
  const auto heads = materialize_projected(spec, inputs, qkv);
  const Dims& dims = spec.dims;
  const std::size_t len = inputs.rows();
  const std::size_t nh = dims.head_dim();
  const std::size_t vh = dims.head_value_dim();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(nh));
  const auto& ev = spec.evolution;
  const auto& hh = ev.householder;
  const auto& sc = spec.scaling;
  require_shape(d_out.rows() == len && d_out.cols() == dims.d_v, "dynamics_backward: d_out must be L x d_v");

  DynamicsGradients out;
  out.d_inputs = Matrix(len, dims.d);
  out.d_qkv = {Matrix(len, dims.n), Matrix(len, dims.n), Matrix(len, dims.d_v)};
  out.decay = zero_gate_like(ev.decay.gate);
  out.strength = zero_gate_like(hh.strength_gate);
  out.direction = zero_gate_like(hh.direction_gate);
  out.scaling = zero_gate_like(sc.gate);
  out.normalization = zero_gate_like(spec.normalization.gate);

  const bool decay_gated = ev.decay.source == ParameterSource::input_derived &&
                           (ev.kind == EvolutionKind::scalar || ev.kind == EvolutionKind::diagonal ||
                            ev.kind == EvolutionKind::gated_householder);
  const bool delta_scaling = sc.kind == ScalingKind::input_derived &&
                             sc.parameterization == ScalingParameterization::delta;

  for (std::size_t h = 0; h < dims.heads; ++h) {
    const HeadDynamics& hd = heads[h];
    const HeadGradients g = head_backward(hd, d_out.col_block(h * vh, vh));
    out.d_qkv.values.set_col_block(h * vh, g.dv);
    out.d_qkv.queries.set_col_block(h * nh, g.dq);
    Matrix dkeys = g.dk;  // w.r.t. the materialized (possibly unit) keys

    for (std::size_t t = 0; t < len; ++t) {
      const auto x = inputs.row(t);
      auto dx = out.d_inputs.row(t);

      // Scaling b_t.
      double dscale = g.dscale[t];
      double ddelta = 0.0;
      double dbeta = g.dbeta.empty() ? 0.0 : g.dbeta[t];
      if (sc.kind == ScalingKind::input_derived) {
        switch (sc.parameterization) {
          case ScalingParameterization::delta:
            ddelta += dscale;
            break;
          case ScalingParameterization::beta_over_sqrt_n:
            dbeta += dscale * inv_sqrt;
            break;
          case ScalingParameterization::exp_gate_over_sqrt_n: {
            const double p = sc.gate.apply_row(h, x);
            if (std::abs(p) < sc.clamp) gate_backward(sc.gate, out.scaling, h, x, dscale * hd.scale[t], dx);
            break;
          }
          case ScalingParameterization::sigmoid:
          case ScalingParameterization::sigmoid_over_sqrt_n: {
            const double s = sigmoid(sc.gate.apply_row(h, x));
            const double f = sc.parameterization == ScalingParameterization::sigmoid ? 1.0 : inv_sqrt;
            gate_backward(sc.gate, out.scaling, h, x, dscale * f * s * (1.0 - s), dx);
            break;
          }
        }
      }

      // Decay (scalar lambda, diagonal entries, or the Householder gate).
      if (decay_gated) {
        const auto& d = ev.decay;
        const std::size_t rows = ev.kind == EvolutionKind::diagonal ? nh : 1;
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t row = ev.kind == EvolutionKind::diagonal ? h * nh + r : h;
          const double lam = ev.kind == EvolutionKind::diagonal ? hd.diag(t, r) : hd.lambda[t];
          const double dlam = ev.kind == EvolutionKind::diagonal ? g.ddiag(t, r) : g.dlambda[t];
          const double p = d.gate.apply_row(row, x);
          double dp = 0.0;
          switch (d.parameterization) {
            case DecayParameterization::gla:
              dp = dlam * lam * (1.0 - sigmoid(p)) / d.tau;
              break;
            case DecayParameterization::mamba2: {
              const double dd = dlam * (-d.rate[row] * lam) + (rows == 1 ? ddelta : 0.0);
              dp = dd * sigmoid(p);
              break;
            }
            case DecayParameterization::exponential:
              dp = std::abs(p) < d.clamp ? dlam * lam : 0.0;
              break;
          }
          gate_backward(d.gate, out.decay, row, x, dp, dx);
        }
      } else if (delta_scaling && ddelta != 0.0) {
        throw UnsupportedError("dynamics_backward: delta scaling without an input-derived decay");
      }

      // Householder strength and direction.
      if (ev.kind == EvolutionKind::householder || ev.kind == EvolutionKind::gated_householder) {
        if (hh.strength_source == ParameterSource::input_derived) {
          const double s = sigmoid(hh.strength_gate.apply_row(h, x));
          const double m = hh.negative_eigenvalues ? 2.0 : 1.0;
          gate_backward(hh.strength_gate, out.strength, h, x, dbeta * m * s * (1.0 - s), dx);
        }
        const auto dz = g.ddirection.row(t);
        const bool already_unit = hh.direction == DirectionSource::keys && ev.normalize_keys;
        const bool renorm = hh.normalize_direction && !already_unit;
        Vector draw(nh, 0.0);
        if (renorm) {
          Vector raw(nh);
          if (hh.direction == DirectionSource::keys)
            for (std::size_t r = 0; r < nh; ++r) raw[r] = hd.keys(t, r);
          else if (hh.direction == DirectionSource::learned)
            for (std::size_t r = 0; r < nh; ++r) raw[r] = hh.direction_gate.apply_row(h * nh + r, x);
          else
            for (std::size_t r = 0; r < nh; ++r) raw[r] = hh.direction_value[h * nh + r];
          unit_backward(raw, dz, draw);
        } else {
          std::copy(dz.begin(), dz.end(), draw.begin());
        }
        if (hh.direction == DirectionSource::keys) {
          kernels::axpy(1.0, draw, dkeys.row(t));
        } else if (hh.direction == DirectionSource::learned) {
          for (std::size_t r = 0; r < nh; ++r)
            gate_backward(hh.direction_gate, out.direction, h * nh + r, x, draw[r], dx);
        }
      }

      // Normalization gates.
      const auto& nr = spec.normalization;
      if (nr.kind == NormalizationKind::input_derived) {
        gate_backward(nr.gate, out.normalization, h, x, g.dlog_eta[t], dx);
      } else if (nr.kind == NormalizationKind::external_state && !nr.gate.empty()) {
        const double o = hd.out_gate[t];
        gate_backward(nr.gate, out.normalization, h, x, g.dout_gate[t] * o * (1.0 - o), dx);
      }

      // Key normalization.
      auto dk_raw = out.d_qkv.keys.row(t).subspan(h * nh, nh);
      if (ev.normalize_keys) {
        unit_backward(qkv.keys.row(t).subspan(h * nh, nh), dkeys.row(t), dk_raw);
      } else {
        kernels::axpy(1.0, dkeys.row(t), dk_raw);
      }
    }
  }
  return out;
}

}  // namespace cdyn
