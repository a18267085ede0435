#include "docformer/params.hpp"

#include <cmath>

namespace docformer {

std::size_t count_parameters(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

Tensor param_normal(Rng& rng, const Shape& shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from(shape, std::move(v), true);
}

Tensor param_full(const Shape& shape, double value) { return Tensor::full(shape, value, true); }

Tensor param_he(Rng& rng, const Shape& shape, std::size_t fan_in) {
  return param_normal(rng, shape, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

Tensor param_lecun(Rng& rng, const Shape& shape, std::size_t fan_in) {
  return param_normal(rng, shape, std::sqrt(1.0 / static_cast<double>(fan_in)));
}

}  // namespace docformer
