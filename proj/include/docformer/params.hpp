#pragma once

#include <string>
#include <vector>

#include "docformer/rng.hpp"
#include "docformer/tensor.hpp"

namespace docformer {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::size_t count_parameters(const ParamList& params);

// Leaf parameters; all require gradients.
Tensor param_normal(Rng& rng, const Shape& shape, double stddev);
Tensor param_full(const Shape& shape, double value);
// He-style normal scaled by sqrt(2 / fan_in).
Tensor param_he(Rng& rng, const Shape& shape, std::size_t fan_in);
// Normal scaled by sqrt(1 / fan_in).
Tensor param_lecun(Rng& rng, const Shape& shape, std::size_t fan_in);

}  // namespace docformer
