#include "docformer/optim.hpp"

#include <cmath>

#include "docformer/error.hpp"

namespace docformer {

void OptimConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (warmup_fraction < 0.0 || warmup_fraction >= 1.0) {
    throw ConfigError("optim.warmup_fraction must lie in [0, 1)");
  }
  if (clip_norm <= 0.0) throw ConfigError("optim.clip_norm must be positive");
  if (weight_decay < 0.0) throw ConfigError("optim.weight_decay must be non-negative");
}

double lr_schedule(std::size_t step, std::size_t total_steps, const OptimConfig& cfg) {
  const double warmup = cfg.warmup_fraction * static_cast<double>(total_steps);
  if (warmup <= 0.0 || static_cast<double>(step) >= warmup) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / warmup;
}

double gradient_norm(const ParamList& params) {
  double sq = 0.0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (double g : p.tensor.grad()) sq += g * g;
  return std::sqrt(sq);
}

double clip_gradients(const ParamList& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& p : params)
      if (p.tensor.has_grad())
        for (double& g : Tensor(p.tensor).mutable_grad()) g *= s;
  }
  return norm;
}

AdamW::AdamW(ParamList params, OptimConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.numel(), 0.0);
    v_.emplace_back(p.tensor.numel(), 0.0);
  }
}

void AdamW::step(double lr) {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    auto values = t.mutable_data();
    const bool has = t.has_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has ? t.grad()[i] : 0.0;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      values[i] -= lr * cfg_.weight_decay * values[i];
      values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (const auto& p : params_) Tensor(p.tensor).zero_grad();
}

}  // namespace docformer
