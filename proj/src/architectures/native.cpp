// Reference implementations written directly from each architecture's own
// update rule. Deliberately naive: plain loops, no kernels, no engine calls,
// so that agreement with the engine is evidence rather than tautology.

#include <algorithm>
#include <cmath>

#include "cdyn/architectures/presets.hpp"
#include "cdyn/errors.hpp"

namespace cdyn {

namespace {

using Rows = std::vector<Vector>;

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) s += a[r] * b[r];
  return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double splus(double x) { return x > 30.0 ? x : std::log(1.0 + std::exp(x)); }

double psi(FeatureMapKind k, double x) {
  switch (k) {
    case FeatureMapKind::elu_plus_one:
      return x > 0.0 ? x + 1.0 : std::exp(x);
    case FeatureMapKind::relu:
      return x > 0.0 ? x : 0.0;
    case FeatureMapKind::softplus:
      return splus(x);
    case FeatureMapKind::exp:
      return std::exp(x);
  }
  return x;
}

Vector psi(FeatureMapKind k, Vector v) {
  for (double& x : v) x = psi(k, x);
  return v;
}

// pre = W x + b for a single gate row.
double affine(const AffineGate& g, std::size_t row, std::span<const double> x) {
  double s = g.bias[row];
  for (std::size_t c = 0; c < x.size(); ++c) s += g.weight(row, c) * x[c];
  return s;
}

Rows project_slice(const Matrix& w, const Matrix& x, std::size_t r0, std::size_t width) {
  Rows out(x.rows(), Vector(width, 0.0));
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t r = 0; r < width; ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out[t][r] += w(r0 + r, c) * x(t, c);
  return out;
}

Vector unit(Vector v) {
  const double nrm = std::sqrt(dot(v, v));
  if (nrm == 0.0) throw ConfigError("native: zero key cannot be normalized");
  for (double& x : v) x /= nrm;
  return v;
}

// State S (n x dv), as a list of rows.
Rows zeros(std::size_t n, std::size_t dv) { return Rows(n, Vector(dv, 0.0)); }

Vector readout(const Rows& s, const Vector& q) {
  Vector y(s.front().size(), 0.0);
  for (std::size_t r = 0; r < s.size(); ++r)
    for (std::size_t c = 0; c < y.size(); ++c) y[c] += q[r] * s[r][c];
  return y;
}

Rows run_head(const ArchitecturePreset& p, const Matrix& x, const Rows& q, const Rows& k,
              const Rows& v, std::size_t h) {
  const DynamicsSpec& s = p.spec;
  const std::size_t len = x.rows();
  const std::size_t n = q.front().size();
  const std::size_t dv = v.front().size();
  const double rs = 1.0 / std::sqrt(static_cast<double>(n));
  Rows y(len, Vector(dv, 0.0));

  switch (p.name) {
    case Architecture::softmax:
      // y_i = sum_j exp(q.k_j / sqrt n) v_j / sum_j exp(q.k_j / sqrt n)
      for (std::size_t i = 0; i < len; ++i) {
        Vector logits(i + 1);
        for (std::size_t j = 0; j <= i; ++j) logits[j] = dot(q[i], k[j]) * rs;
        const double m = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double& l : logits) z += (l = std::exp(l - m));
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < dv; ++c) y[i][c] += logits[j] / z * v[j][c];
      }
      break;

    case Architecture::linear_attn: {
      // Running sums S = sum psi(k/sqrt n) v^T and z = sum psi(k/sqrt n).
      const auto fm = s.readout.feature_map;
      Rows acc = zeros(n, dv);
      Vector z(n, 0.0);
      for (std::size_t i = 0; i < len; ++i) {
        Vector kk = k[i];
        for (double& e : kk) e *= rs;
        kk = psi(fm, kk);
        for (std::size_t r = 0; r < n; ++r) {
          z[r] += kk[r];
          for (std::size_t c = 0; c < dv; ++c) acc[r][c] += kk[r] * v[i][c];
        }
        const Vector pq = psi(fm, q[i]);
        const double den = dot(pq, z);
        y[i] = readout(acc, pq);
        for (double& e : y[i]) e /= den;
      }
      break;
    }

    case Architecture::normalized_attn:
      for (std::size_t i = 0; i < len; ++i) {
        const double eta = std::exp(affine(s.normalization.gate, h, x.row(i)));
        for (std::size_t j = 0; j <= i; ++j) {
          double a;
          if (s.readout.kind == ReadoutKind::kernel_product) {
            Vector kk = k[j];
            for (double& e : kk) e *= rs;
            a = dot(psi(s.readout.feature_map, q[i]), psi(s.readout.feature_map, kk));
          } else {
            a = dot(q[i], k[j]) * rs;
          }
          for (std::size_t c = 0; c < dv; ++c) y[i][c] += a / eta * v[j][c];
        }
      }
      break;

    case Architecture::gla: {
      // s_t = diag(alpha_t) s_{t-1} + (k_t / sqrt n) v_t^T
      const auto& d = s.evolution.decay;
      Rows st = zeros(n, dv);
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t r = 0; r < n; ++r) {
          const double alpha = std::pow(sig(affine(d.gate, h * n + r, x.row(t))), 1.0 / d.tau);
          for (std::size_t c = 0; c < dv; ++c) st[r][c] = alpha * st[r][c] + k[t][r] * rs * v[t][c];
        }
        y[t] = readout(st, q[t]);
      }
      break;
    }

    case Architecture::mamba2: {
      // h_t = exp(-Delta_t a) h_{t-1} + Delta_t k_t v_t^T
      const auto& d = s.evolution.decay;
      Rows st = zeros(n, dv);
      for (std::size_t t = 0; t < len; ++t) {
        const double delta = splus(affine(d.gate, h, x.row(t)));
        const double decay = std::exp(-delta * d.rate[h]);
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < dv; ++c)
            st[r][c] = decay * st[r][c] + delta * k[t][r] * v[t][c];
        y[t] = readout(st, q[t]);
      }
      break;
    }

    case Architecture::deltanet:
    case Architecture::gated_deltanet: {
      // Delta rule: s_t = alpha_t (s - beta k (k^T s)) + beta k v^T, read as s^T q / sqrt n.
      const auto& hh = s.evolution.householder;
      const bool gated = p.name == Architecture::gated_deltanet;
      Rows st = zeros(n, dv);
      for (std::size_t t = 0; t < len; ++t) {
        const Vector kt = s.evolution.normalize_keys ? unit(k[t]) : k[t];
        double beta = sig(affine(hh.strength_gate, h, x.row(t)));
        if (hh.negative_eigenvalues) beta *= 2.0;
        double alpha = 1.0;
        if (gated) {
          const auto& d = s.evolution.decay;
          alpha = std::exp(-splus(affine(d.gate, h, x.row(t))) * d.rate[h]);
        }
        Vector ks(dv, 0.0);  // k^T s
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < dv; ++c) ks[c] += kt[r] * st[r][c];
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t c = 0; c < dv; ++c)
            st[r][c] = alpha * (st[r][c] - beta * kt[r] * ks[c]) + beta * kt[r] * v[t][c];
        y[t] = readout(st, q[t]);
        for (double& e : y[t]) e *= rs;
      }
      break;
    }

    case Architecture::mlstm: {
      // C_t = e^f C + e^i (k/sqrt n) v^T, n_t = e^f n + e^i k/sqrt n,
      // y = o C^T q / max(|n^T q|, 1). Gates clamped to [-clamp, clamp].
      const double cl = s.evolution.decay.clamp;
      Rows cs = zeros(n, dv);
      Vector nacc(n, 0.0);
      for (std::size_t t = 0; t < len; ++t) {
        const double f = std::exp(std::clamp(affine(s.evolution.decay.gate, h, x.row(t)), -cl, cl));
        const double ig = std::exp(
            std::clamp(affine(s.scaling.gate, h, x.row(t)), -s.scaling.clamp, s.scaling.clamp));
        for (std::size_t r = 0; r < n; ++r) {
          const double kr = ig * k[t][r] * rs;
          nacc[r] = f * nacc[r] + kr;
          for (std::size_t c = 0; c < dv; ++c) cs[r][c] = f * cs[r][c] + kr * v[t][c];
        }
        const double o =
            s.normalization.gate.empty() ? 1.0 : sig(affine(s.normalization.gate, h, x.row(t)));
        const double den = std::max(std::abs(dot(nacc, q[t])), 1.0);
        y[t] = readout(cs, q[t]);
        for (double& e : y[t]) e *= o / den;
      }
      break;
    }
  }
  return y;
}

}  // namespace

Matrix native_forward(const ArchitecturePreset& p, const Matrix& inputs) {
  return native_forward(p, inputs, p.proj);
}

Matrix native_forward(const ArchitecturePreset& p, const Matrix& inputs,
                      const ProjectionSet& proj) {
  const Dims& dims = p.spec.dims;
  if (inputs.cols() != dims.d) throw ShapeError("native_forward: inputs must have width d");
  if (proj.w_q.rows() != dims.n || proj.w_q.cols() != dims.d)
    throw ShapeError("native_forward: W_Q must be n x d");
  if (proj.w_k.rows() != dims.n || proj.w_k.cols() != dims.d)
    throw ShapeError("native_forward: W_K must be n x d");
  if (proj.w_v.rows() != dims.d_v || proj.w_v.cols() != dims.d)
    throw ShapeError("native_forward: W_V must be d_v x d");
  const std::size_t nh = dims.head_dim();
  const std::size_t vh = dims.head_value_dim();
  Matrix out(inputs.rows(), dims.d_v);
  for (std::size_t h = 0; h < dims.heads; ++h) {
    const Rows q = project_slice(proj.w_q, inputs, h * nh, nh);
    const Rows k = project_slice(proj.w_k, inputs, h * nh, nh);
    const Rows v = project_slice(proj.w_v, inputs, h * vh, vh);
    const Rows y = run_head(p, inputs, q, k, v, h);
    for (std::size_t t = 0; t < inputs.rows(); ++t)
      for (std::size_t c = 0; c < vh; ++c) out(t, h * vh + c) = y[t][c];
  }
  return out;
}

}  // namespace cdyn
