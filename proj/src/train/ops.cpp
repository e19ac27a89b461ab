#include "cdyn/train/ops.hpp"

#include <algorithm>
#include <cmath>

#include "cdyn/errors.hpp"
#include "cdyn/kernels.hpp"

namespace cdyn {

Matrix& ParamSet::add(const std::string& name, Matrix value) {
  if (contains(name)) throw ConfigError("parameter '" + name + "' registered twice");
  return params_[name] = std::move(value);
}

Matrix& ParamSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  for (const auto& [k, _] : params_) out.push_back(k);
  return out;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, m] : params_) n += m.rows() * m.cols();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet z;
  for (const auto& [k, m] : params_) z.params_[k] = Matrix(m.rows(), m.cols());
  return z;
}

double ParamSet::squared_norm() const {
  double s = 0.0;
  for (const auto& [_, m] : params_) s += kernels::dot(m.flat(), m.flat());
  return s;
}

void ParamSet::scale(double a) {
  for (auto& [_, m] : params_) kernels::scale(a, m.flat());
}

Json to_json(const ParamSet& p) {
  Json j = Json::object();
  for (const auto& [k, m] : p) j[k] = to_json(m);
  return j;
}

ParamSet params_from_json(const Json& j) {
  ParamSet p;
  for (const auto& [k, v] : j.items()) p.add(k, matrix_from_json(v, k));
  return p;
}

double silu_derivative(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Matrix rmsnorm_forward(const Matrix& x, std::span<const double> gain, RmsCache& cache,
                       double eps) {
  require_shape(gain.size() == x.cols(), "rmsnorm: gain width");
  Matrix y(x.rows(), x.cols());
  cache.inv_rms.resize(x.rows());
  const double d = static_cast<double>(x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    const double r = 1.0 / std::sqrt(kernels::dot(xr, xr) / d + eps);
    cache.inv_rms[t] = r;
    auto yr = y.row(t);
    for (std::size_t c = 0; c < x.cols(); ++c) yr[c] = gain[c] * xr[c] * r;
  }
  return y;
}

Matrix rmsnorm_backward(const Matrix& x, std::span<const double> gain, const RmsCache& cache,
                        const Matrix& dy, std::span<double> dgain) {
  Matrix dx(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto xr = x.row(t);
    const auto gr = dy.row(t);
    const double r = cache.inv_rms[t];
    double inner = 0.0;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      dgain[c] += gr[c] * xr[c] * r;
      inner += gain[c] * gr[c] * xr[c];
    }
    auto dr = dx.row(t);
    const double k = inner * r * r * r / d;
    for (std::size_t c = 0; c < x.cols(); ++c) dr[c] = gain[c] * gr[c] * r - xr[c] * k;
  }
  return dx;
}

void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw) {
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto g = dy.row(t);
    for (std::size_t o = 0; o < w.rows(); ++o) {
      if (g[o] == 0.0) continue;
      kernels::axpy(g[o], x.row(t), dw.row(o));
      if (dx) kernels::axpy(g[o], w.row(o), dx->row(t));
    }
  }
}

Matrix causal_conv_forward(const Matrix& x, const Matrix& kernel) {
  require_shape(kernel.cols() == x.cols(), "causal_conv: kernel width");
  Matrix y(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t s = 0; s < kernel.rows() && s <= t; ++s) {
      auto yr = y.row(t);
      const auto xr = x.row(t - s);
      const auto kr = kernel.row(s);
      for (std::size_t c = 0; c < x.cols(); ++c) yr[c] += kr[c] * xr[c];
    }
  return y;
}

Matrix causal_conv_backward(const Matrix& x, const Matrix& kernel, const Matrix& dy,
                            Matrix& dkernel) {
  Matrix dx(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t)
    for (std::size_t s = 0; s < kernel.rows() && s <= t; ++s) {
      const auto g = dy.row(t);
      const auto xr = x.row(t - s);
      const auto kr = kernel.row(s);
      auto dk = dkernel.row(s);
      auto dxr = dx.row(t - s);
      for (std::size_t c = 0; c < x.cols(); ++c) {
        dk[c] += g[c] * xr[c];
        dxr[c] += g[c] * kr[c];
      }
    }
  return dx;
}

double cross_entropy(const Matrix& logits, std::span<const std::int32_t> targets,
                     double normalizer, Matrix* dlogits) {
  require_shape(targets.size() == logits.rows(), "cross_entropy: one target per row");
  if (dlogits && dlogits->empty()) *dlogits = Matrix(logits.rows(), logits.cols());
  require_shape(!dlogits || (dlogits->rows() == logits.rows() && dlogits->cols() == logits.cols()),
                "cross_entropy: dlogits shape");
  double loss = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (targets[t] < 0) continue;
    const auto z = logits.row(t);
    const auto y = static_cast<std::size_t>(targets[t]);
    require_shape(y < z.size(), "cross_entropy: target out of range");
    const double m = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    loss += lse - z[y];
    if (dlogits) {
      auto g = dlogits->row(t);
      for (std::size_t c = 0; c < z.size(); ++c) g[c] += std::exp(z[c] - lse) / normalizer;
      g[y] -= 1.0 / normalizer;
    }
  }
  return loss;
}

void add_inplace(Matrix& a, const Matrix& b) {
  require_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add_inplace: shape mismatch");
  kernels::axpy(1.0, b.flat(), a.flat());
}

}  // namespace cdyn
