#pragma once

#include <iosfwd>
#include <string>

#include "docformer/tensor.hpp"

namespace docformer {

// Dump layout, all little-endian: u64 rank, rank x u64 extents, then
// numel x IEEE-754 float64 values in row-major order.
void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

std::size_t tensor_dump_size(const Shape& shape);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace docformer
