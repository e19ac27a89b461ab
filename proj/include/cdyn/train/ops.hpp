#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cdyn/core/serialize.hpp"
#include "cdyn/linalg.hpp"

// Small differentiable building blocks. Every backward accumulates into its
// gradient arguments (callers zero them).

namespace cdyn {

/// Named parameters; vectors are stored as 1 x k matrices.
class ParamSet {
 public:
  Matrix& add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return params_.count(name) != 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;
  std::vector<std::string> names() const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  /// Same names and shapes, all zeros.
  ParamSet zeros_like() const;
  double squared_norm() const;
  void scale(double a);

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Matrix> params_;
};

Json to_json(const ParamSet& p);
ParamSet params_from_json(const Json& j);

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }
double silu_derivative(double x);

struct RmsCache {
  Vector inv_rms;  // per row
};

/// y_t = g .* x_t / rms(x_t)
Matrix rmsnorm_forward(const Matrix& x, std::span<const double> gain, RmsCache& cache,
                       double eps = 1e-6);
Matrix rmsnorm_backward(const Matrix& x, std::span<const double> gain, const RmsCache& cache,
                        const Matrix& dy, std::span<double> dgain);

/// y = x W^T; dx (if non-null) and dw accumulate.
void linear_backward(const Matrix& x, const Matrix& w, const Matrix& dy, Matrix* dx, Matrix& dw);

/// Depthwise causal convolution: y_t = sum_s K[s] .* x_{t-s}, K is width x d.
Matrix causal_conv_forward(const Matrix& x, const Matrix& kernel);
Matrix causal_conv_backward(const Matrix& x, const Matrix& kernel, const Matrix& dy,
                            Matrix& dkernel);

/// Cross-entropy over rows whose target is not -1. Accumulates d logits
/// (divided by `normalizer`; an empty matrix is sized first) and returns the
/// summed loss.
double cross_entropy(const Matrix& logits, std::span<const std::int32_t> targets,
                     double normalizer, Matrix* dlogits);

void add_inplace(Matrix& a, const Matrix& b);

}  // namespace cdyn
