#pragma once

#include <vector>

#include "docformer/params.hpp"

namespace docformer {

struct OptimConfig {
  double lr = 5e-5;
  double warmup_fraction = 0.10;
  double clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

// Linear ramp from 0 to lr over the first warmup_fraction of the steps, then
// constant. Steps count from 1.
double lr_schedule(std::size_t step, std::size_t total_steps, const OptimConfig& cfg);

// Global L2 norm over all gradients; missing gradients count as zero.
double gradient_norm(const ParamList& params);
// Scales every gradient by max_norm / norm when the norm exceeds max_norm.
// Returns the norm before clipping.
double clip_gradients(const ParamList& params, double max_norm);

// Adam with decoupled weight decay:
//   p <- p - lr * wd * p
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(ParamList params, OptimConfig cfg);

  // Throws NumericError naming the first parameter with a non-finite gradient.
  void step(double lr);
  void zero_grad();

  const ParamList& params() const { return params_; }
  std::size_t steps_taken() const { return t_; }
  void set_steps_taken(std::size_t t) { t_ = t; }
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const OptimConfig& config() const { return cfg_; }

 private:
  ParamList params_;
  OptimConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace docformer
