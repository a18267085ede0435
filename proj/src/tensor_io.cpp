#include "docformer/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "docformer/error.hpp"

namespace docformer {
namespace {

void put_u64(std::ostream& os, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b.data(), 8);
}

std::uint64_t get_u64(std::istream& is) {
  std::array<unsigned char, 8> b;
  if (!is.read(reinterpret_cast<char*>(b.data()), 8)) throw DataError("tensor dump truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr std::uint64_t kMaxRank = 16;

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  put_u64(os, t.rank());
  for (auto e : t.shape()) put_u64(os, e);
  for (double v : t.data()) put_u64(os, std::bit_cast<std::uint64_t>(v));
  if (!os) throw DataError("failed writing tensor dump");
}

Tensor read_tensor(std::istream& is) {
  const std::uint64_t rank = get_u64(is);
  if (rank == 0 || rank > kMaxRank) throw DataError("tensor dump has invalid rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& e : shape) {
    e = get_u64(is);
    if (e == 0 || e > (1ULL << 32)) throw DataError("tensor dump has invalid extent " + std::to_string(e));
    numel *= e;
    if (numel > (1ULL << 32)) throw DataError("tensor dump too large");
  }
  std::vector<double> values(numel);
  for (auto& v : values) v = std::bit_cast<double>(get_u64(is));
  return Tensor::from(shape, std::move(values));
}

std::size_t tensor_dump_size(const Shape& shape) {
  return 8 * (1 + shape.size()) + 8 * shape_numel(shape);
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  return read_tensor(is);
}

}  // namespace docformer
