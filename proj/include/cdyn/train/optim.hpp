#pragma once

#include <string>

#include "cdyn/train/ops.hpp"

namespace cdyn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay; norms, biases and positions are not decayed.
class AdamW {
 public:
  AdamW(const ParamSet& like, AdamWConfig cfg);
  void step(ParamSet& params, const ParamSet& grad, double lr);
  std::size_t steps() const { return t_; }

  static bool decays(const std::string& name);

 private:
  AdamWConfig cfg_;
  ParamSet m_, v_;
  std::size_t t_ = 0;
};

/// Linear warmup over the first warmup_frac of steps, then cosine to zero.
double cosine_lr(double base, std::size_t step, std::size_t total, double warmup_frac);

/// Rescales grad to at most max_norm; returns the norm before clipping.
double clip_grad_norm(ParamSet& grad, double max_norm);

}  // namespace cdyn
