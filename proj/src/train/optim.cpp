#include "cdyn/train/optim.hpp"

#include <cmath>
#include <numbers>

namespace cdyn {

namespace {
bool ends_with(const std::string& s, const std::string& tail) {
  return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
}
}  // namespace

AdamW::AdamW(const ParamSet& like, AdamWConfig cfg)
    : cfg_(cfg), m_(like.zeros_like()), v_(like.zeros_like()) {}

bool AdamW::decays(const std::string& name) {
  return !(ends_with(name, "norm") || ends_with(name, ".b") || name == "pos");
}

void AdamW::step(ParamSet& params, const ParamSet& grad, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (auto& [name, p] : params) {
    if (!grad.contains(name)) continue;
    const auto g = grad.at(name).flat();
    auto m = m_.at(name).flat();
    auto v = v_.at(name).flat();
    auto w = p.flat();
    const double wd = decays(name) ? cfg_.weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1 / (std::sqrt(v[i] / c2) + cfg_.eps) + wd * w[i]);
    }
  }
}

double cosine_lr(double base, std::size_t step, std::size_t total, double warmup_frac) {
  if (total == 0) return base;
  const auto warm = static_cast<std::size_t>(warmup_frac * double(total));
  if (step < warm) return base * double(step + 1) / double(warm);
  const double progress = double(step - warm) / double(std::max<std::size_t>(1, total - warm));
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

double clip_grad_norm(ParamSet& grad, double max_norm) {
  const double nrm = std::sqrt(grad.squared_norm());
  if (max_norm > 0.0 && nrm > max_norm) grad.scale(max_norm / nrm);
  return nrm;
}

}  // namespace cdyn
