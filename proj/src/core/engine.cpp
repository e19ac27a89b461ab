#include "cdyn/core/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

EvolutionStep EvolutionStep::scalar(double lambda) {
  EvolutionStep s;
  s.kind = EvolutionKind::scalar;
  s.lambda = lambda;
  return s;
}

EvolutionStep EvolutionStep::diagonal(std::span<const double> lambda) {
  EvolutionStep s;
  s.kind = EvolutionKind::diagonal;
  s.diag = lambda;
  return s;
}

EvolutionStep EvolutionStep::householder(std::span<const double> z, double beta, bool normalize) {
  EvolutionStep s;
  s.kind = EvolutionKind::householder;
  s.direction = z;
  s.beta = beta;
  s.normalize_direction = normalize;
  return s;
}

EvolutionStep EvolutionStep::gated_householder(std::span<const double> z, double beta, double gate,
                                               bool normalize) {
  EvolutionStep s = householder(z, beta, normalize);
  s.kind = EvolutionKind::gated_householder;
  s.lambda = gate;
  return s;
}

EvolutionStep step_at(const HeadDynamics& head, std::size_t t) {
  switch (head.kind) {
    case EvolutionKind::identity:
      return {};
    case EvolutionKind::scalar:
      return EvolutionStep::scalar(head.lambda[t]);
    case EvolutionKind::diagonal:
      return EvolutionStep::diagonal(head.diag.row(t));
    case EvolutionKind::householder:
      return EvolutionStep::householder(head.direction.row(t), head.beta[t], false);
    case EvolutionKind::gated_householder:
      return EvolutionStep::gated_householder(head.direction.row(t), head.beta[t], head.lambda[t],
                                              false);
  }
  return {};
}

namespace {

// Householder update vec -= beta (z.vec) z, with z unit-normalized on request.
void reflect(const EvolutionStep& step, std::span<double> vec) {
  require_shape(step.direction.size() == vec.size(), "evolution: direction must match state size");
  double zz = 1.0;
  if (step.normalize_direction) {
    zz = kernels::dot(step.direction, step.direction);
    if (zz == 0.0) throw ConfigError("evolution: zero Householder direction (hyperplane undefined)");
  }
  const double c = kernels::dot(step.direction, vec);
  kernels::axpy(-step.beta * c / zz, step.direction, vec);
}

}  // namespace

void evolution_apply_inplace(const EvolutionStep& step, std::span<double> vec) {
  switch (step.kind) {
    case EvolutionKind::identity:
      return;
    case EvolutionKind::scalar:
      kernels::scale(step.lambda, vec);
      return;
    case EvolutionKind::diagonal:
      require_shape(step.diag.size() == vec.size(), "evolution: diagonal must match state size");
      kernels::mul(step.diag, vec);
      return;
    case EvolutionKind::householder:
      reflect(step, vec);
      return;
    case EvolutionKind::gated_householder:
      reflect(step, vec);
      kernels::scale(step.lambda, vec);
      return;
  }
}

Vector evolution_apply(const EvolutionStep& step, std::span<const double> vec) {
  Vector out(vec.begin(), vec.end());
  evolution_apply_inplace(step, out);
  return out;
}

Matrix evolution_matrix(const EvolutionStep& step, std::size_t n) {
  // Column c is A e_c; stored transposed then flipped.
  Matrix cols(n, n);
  for (std::size_t c = 0; c < n; ++c) {
    auto e = cols.row(c);
    e[c] = 1.0;
    evolution_apply_inplace(step, e);
  }
  return cols.transposed();
}

namespace {

void check_head(const HeadDynamics& h) {
  const std::size_t len = h.length();
  const std::size_t n = h.state_dim();
  require_shape(len > 0, "head: empty sequence");
  require_shape(h.keys.rows() == len && h.keys.cols() == n, "head: keys must be L x n~");
  require_shape(h.values.rows() == len, "head: values must have L rows");
  require_shape(h.scale.size() == len, "head: scale must have L entries");
  switch (h.kind) {
    case EvolutionKind::identity:
      break;
    case EvolutionKind::scalar:
      require_shape(h.lambda.size() == len, "head: lambda must have L entries");
      break;
    case EvolutionKind::diagonal:
      require_shape(h.diag.rows() == len && h.diag.cols() == n, "head: diag must be L x n~");
      break;
    case EvolutionKind::gated_householder:
      require_shape(h.lambda.size() == len, "head: gate must have L entries");
      [[fallthrough]];
    case EvolutionKind::householder:
      require_shape(h.direction.rows() == len && h.direction.cols() == n,
                    "head: direction must be L x n~");
      require_shape(h.beta.size() == len, "head: beta must have L entries");
      break;
  }
  if (h.normalization == NormalizationKind::external_state)
    require_shape(h.out_gate.size() == len, "head: out_gate must have L entries");
  if (h.normalization == NormalizationKind::input_derived)
    require_shape(h.log_eta.size() == len, "head: log_eta must have L entries");
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

[[noreturn]] void overflow(const std::string& what, std::size_t t) {
  throw OverflowError(what + " at t=" + std::to_string(t), static_cast<long>(t));
}

double geometric_eta(double rho, std::size_t i) {
  return std::pow(rho, static_cast<double>(i + 1));
}

using RowView = CoefficientRow;

// Streams the coefficient rows in order. Keeps every live impulse state
// h_{i,j}, j <= i (O(L n) memory), advancing them by A_i before row i.
template <class Sink>
void sweep_rows(const HeadDynamics& head, Sink&& sink) {
  check_head(head);
  const std::size_t len = head.length();
  const std::size_t n = head.state_dim();
  const bool kernel = head.readout.kind == ReadoutKind::kernel_product;
  const bool softmax = head.readout.kind == ReadoutKind::exponential &&
                       head.normalization == NormalizationKind::coefficient_sum;

  Matrix states(len, n);
  Vector raw(len), normalized(len), scores(len), psi_q(n), psi_h(n), sum_state(n);
  for (std::size_t i = 0; i < len; ++i) {
    const EvolutionStep step = step_at(head, i);
    for (std::size_t j = 0; j < i; ++j) {
      evolution_apply_inplace(step, states.row(j));
      if (!finite(states.row(j))) overflow("impulse state h(" + std::to_string(j) + ")", i);
    }
    auto fresh = states.row(i);
    std::copy(head.keys.row(i).begin(), head.keys.row(i).end(), fresh.begin());
    kernels::scale(head.scale[i], fresh);
    if (!finite(fresh)) overflow("scaled key", i);

    const auto q = head.queries.row(i);
    const std::size_t cnt = i + 1;
    std::span<double> a(raw.data(), cnt), an(normalized.data(), cnt);
    double eta = 1.0;
    double shift = 0.0;

    if (kernel) {
      for (std::size_t r = 0; r < n; ++r) psi_q[r] = feature_map(head.readout.feature_map, q[r]);
      for (std::size_t j = 0; j < cnt; ++j) {
        const auto h = states.row(j);
        for (std::size_t r = 0; r < n; ++r) psi_h[r] = feature_map(head.readout.feature_map, h[r]);
        a[j] = kernels::dot(psi_q, psi_h);
      }
    } else {
      for (std::size_t j = 0; j < cnt; ++j) scores[j] = kernels::dot(q, states.row(j));
      if (softmax) {
        // exp readout with sum normalization: shift by the row max.
        const double m = *std::max_element(scores.begin(), scores.begin() + cnt);
        double total = 0.0;
        for (std::size_t j = 0; j < cnt; ++j) total += (an[j] = std::exp(scores[j] - m));
        for (std::size_t j = 0; j < cnt; ++j) an[j] /= total;
        double raw_total = 0.0;
        bool fits = true;
        for (std::size_t j = 0; j < cnt && fits; ++j) {
          a[j] = std::exp(scores[j]);
          raw_total += a[j];
          fits = std::isfinite(a[j]) && std::isfinite(raw_total);
        }
        if (fits && raw_total > 0.0) {
          eta = raw_total;
        } else {
          for (std::size_t j = 0; j < cnt; ++j) a[j] = std::exp(scores[j] - m);
          eta = total;
          shift = m;
        }
        sink(RowView{i, a, an, eta, shift});
        continue;
      }
      for (std::size_t j = 0; j < cnt; ++j) a[j] = head.readout(scores[j]);
    }
    if (!finite(a)) overflow("readout", i);

    switch (head.normalization) {
      case NormalizationKind::one:
        eta = 1.0;
        break;
      case NormalizationKind::coefficient_sum:
        eta = 0.0;
        for (double v : a) eta += v;
        break;
      case NormalizationKind::geometric:
        eta = geometric_eta(head.rho, i);
        break;
      case NormalizationKind::external_state: {
        std::fill(sum_state.begin(), sum_state.end(), 0.0);
        for (std::size_t j = 0; j < cnt; ++j) kernels::axpy(1.0, states.row(j), sum_state);
        eta = std::max(std::abs(kernels::dot(q, sum_state)), 1.0) / head.out_gate[i];
        break;
      }
      case NormalizationKind::input_derived:
        eta = std::exp(head.log_eta[i]);
        break;
    }
    if (!std::isfinite(eta)) overflow("normalization", i);
    eta = floor_eta(eta, head.eta_floor);
    for (std::size_t j = 0; j < cnt; ++j) an[j] = a[j] / eta;
    sink(RowView{i, a, an, eta, shift});
  }
}

}  // namespace

double floor_eta(double eta, double floor) {
  if (std::abs(eta) >= floor) return eta;
  return std::signbit(eta) ? -floor : floor;
}

void stream_rows(const HeadDynamics& head, const std::function<void(const CoefficientRow&)>& fn) {
  sweep_rows(head, fn);
}

ImpulseState impulse_state(const HeadDynamics& head, std::size_t j, std::size_t i) {
  check_head(head);
  if (i < j) throw ConfigError("impulse_state: read index precedes source index");
  if (i >= head.length()) throw ConfigError("impulse_state: read index beyond sequence");
  ImpulseState out;
  out.source = j;
  out.read = i;
  out.state.assign(head.keys.row(j).begin(), head.keys.row(j).end());
  kernels::scale(head.scale[j], out.state);
  for (std::size_t t = j + 1; t <= i; ++t) {
    evolution_apply_inplace(step_at(head, t), out.state);
    if (!finite(out.state)) overflow("impulse state", t);
  }
  return out;
}

ImpulseState impulse_state(const DynamicsSpec& spec, const ProjectionSet& proj,
                           const Matrix& inputs, std::size_t j, std::size_t i) {
  const auto heads = materialize(spec, proj, inputs);
  ImpulseState out;
  out.source = j;
  out.read = i;
  for (const auto& h : heads) {
    const auto part = impulse_state(h, j, i);
    out.state.insert(out.state.end(), part.state.begin(), part.state.end());
  }
  return out;
}

LowerTriangular::LowerTriangular(std::size_t size)
    : size_(size), data_(size * (size + 1) / 2, 0.0) {}

Matrix LowerTriangular::full() const {
  Matrix m(size_, size_);
  for (std::size_t i = 0; i < size_; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = (*this)(i, j);
  return m;
}

bool CoefficientMatrix::shifted() const {
  return std::any_of(row_shift.begin(), row_shift.end(), [](double s) { return s != 0.0; });
}

CoefficientMatrix coefficient_matrix(const HeadDynamics& head) {
  const std::size_t len = head.length();
  CoefficientMatrix cm{LowerTriangular(len), LowerTriangular(len), Vector(len), Vector(len, 0.0)};
  sweep_rows(head, [&](const RowView& r) {
    std::copy(r.raw.begin(), r.raw.end(), cm.raw.row(r.i).begin());
    std::copy(r.normalized.begin(), r.normalized.end(), cm.normalized.row(r.i).begin());
    cm.eta[r.i] = r.eta;
    cm.row_shift[r.i] = r.shift;
  });
  return cm;
}

std::vector<CoefficientMatrix> coefficient_matrix(const DynamicsSpec& spec, const Matrix& inputs,
                                                  const ProjectionSet& proj) {
  std::vector<CoefficientMatrix> out;
  for (const auto& h : materialize(spec, proj, inputs)) out.push_back(coefficient_matrix(h));
  return out;
}

Matrix mix_values(const CoefficientMatrix& coeffs, const Matrix& values) {
  const std::size_t len = coeffs.size();
  require_shape(values.rows() == len, "mix_values: values must have one row per coefficient row");
  Matrix y(len, values.cols());
  for (std::size_t i = 0; i < len; ++i) {
    const auto row = coeffs.normalized.row(i);
    for (std::size_t j = 0; j <= i; ++j) kernels::axpy(row[j], values.row(j), y.row(i));
  }
  return y;
}

Matrix forward_dense(const HeadDynamics& head) {
  Matrix y(head.length(), head.value_dim());
  sweep_rows(head, [&](const RowView& r) {
    auto out = y.row(r.i);
    for (std::size_t j = 0; j <= r.i; ++j) kernels::axpy(r.normalized[j], head.values.row(j), out);
  });
  return y;
}

bool supports_recurrent(const ReadoutMap& readout, EvolutionKind kind) {
  if (readout.kind == ReadoutKind::identity) return true;
  return readout.kind == ReadoutKind::kernel_product && kind == EvolutionKind::identity;
}

Matrix forward_recurrent(const HeadDynamics& head) {
  if (!supports_recurrent(head.readout, head.kind))
    throw UnsupportedError(
        "forward_recurrent: readout '" + std::string(to_string(head.readout.kind)) +
        "' is not linear in the state; a fixed-size recurrent form exists only for linear "
        "readouts (use forward_dense)");
  check_head(head);
  const std::size_t len = head.length();
  const std::size_t n = head.state_dim();
  const std::size_t dv = head.value_dim();
  const bool kernel = head.readout.kind == ReadoutKind::kernel_product;
  const bool track_sum = head.normalization == NormalizationKind::coefficient_sum ||
                         head.normalization == NormalizationKind::external_state;

  Matrix s(n, dv);
  Vector z(n, 0.0), key(n), query(n), w(dv);
  Matrix y(len, dv);
  for (std::size_t i = 0; i < len; ++i) {
    const EvolutionStep step = step_at(head, i);
    // A_i acts on the state dimension, i.e. on every column of S.
    switch (step.kind) {
      case EvolutionKind::identity:
        break;
      case EvolutionKind::scalar:
        kernels::scale(step.lambda, s.flat());
        break;
      case EvolutionKind::diagonal:
        for (std::size_t r = 0; r < n; ++r) kernels::scale(step.diag[r], s.row(r));
        break;
      case EvolutionKind::householder:
      case EvolutionKind::gated_householder: {
        std::fill(w.begin(), w.end(), 0.0);
        for (std::size_t r = 0; r < n; ++r) kernels::axpy(step.direction[r], s.row(r), w);
        for (std::size_t r = 0; r < n; ++r) kernels::axpy(-step.beta * step.direction[r], w, s.row(r));
        if (step.kind == EvolutionKind::gated_householder) kernels::scale(step.lambda, s.flat());
        break;
      }
    }
    if (track_sum) evolution_apply_inplace(step, z);

    const auto k = head.keys.row(i);
    const auto q = head.queries.row(i);
    for (std::size_t r = 0; r < n; ++r) {
      key[r] = head.scale[i] * k[r];
      if (kernel) key[r] = feature_map(head.readout.feature_map, key[r]);
      query[r] = kernel ? feature_map(head.readout.feature_map, q[r]) : q[r];
    }
    for (std::size_t r = 0; r < n; ++r) kernels::axpy(key[r], head.values.row(i), s.row(r));
    if (track_sum) kernels::axpy(1.0, key, z);
    if (!finite(s.flat())) overflow("recurrent state", i);

    double eta = 1.0;
    switch (head.normalization) {
      case NormalizationKind::one:
        break;
      case NormalizationKind::coefficient_sum:
        eta = kernels::dot(query, z);
        break;
      case NormalizationKind::geometric:
        eta = geometric_eta(head.rho, i);
        break;
      case NormalizationKind::external_state:
        eta = std::max(std::abs(kernels::dot(query, z)), 1.0) / head.out_gate[i];
        break;
      case NormalizationKind::input_derived:
        eta = std::exp(head.log_eta[i]);
        break;
    }
    if (!std::isfinite(eta)) overflow("normalization", i);
    eta = floor_eta(eta, head.eta_floor);
    auto out = y.row(i);
    for (std::size_t r = 0; r < n; ++r) kernels::axpy(query[r], s.row(r), out);
    kernels::scale(1.0 / eta, out);
  }
  return y;
}

Matrix concat_heads(const std::vector<Matrix>& per_head) {
  if (per_head.empty()) return {};
  const std::size_t len = per_head.front().rows();
  std::size_t width = 0;
  for (const auto& m : per_head) {
    require_shape(m.rows() == len, "concat_heads: heads disagree on length");
    width += m.cols();
  }
  Matrix out(len, width);
  std::size_t c0 = 0;
  for (const auto& m : per_head) {
    out.set_col_block(c0, m);
    c0 += m.cols();
  }
  return out;
}

Matrix forward_dense(const DynamicsSpec& spec, const ProjectionSet& proj, const Matrix& inputs) {
  std::vector<Matrix> parts;
  for (const auto& h : materialize(spec, proj, inputs)) parts.push_back(forward_dense(h));
  return concat_heads(parts);
}

Matrix forward_recurrent(const DynamicsSpec& spec, const ProjectionSet& proj,
                         const Matrix& inputs) {
  if (!supports_recurrent(spec.readout, spec.evolution.kind))
    throw UnsupportedError("forward_recurrent: readout '" +
                           std::string(to_string(spec.readout.kind)) +
                           "' is not linear in the state; a fixed-size recurrent form exists "
                           "only for linear readouts (use forward_dense)");
  std::vector<Matrix> parts;
  for (const auto& h : materialize(spec, proj, inputs)) parts.push_back(forward_recurrent(h));
  return concat_heads(parts);
}

}  // namespace cdyn
