#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "docformer/params.hpp"

namespace docformer {

// On disk: <dir>/manifest.json and <dir>/params.bin. params.bin is the
// concatenation of tensor dumps; manifest["tensors"] lists every tensor with
// its name, shape, byte offset and byte length. All other manifest fields
// are free-form metadata supplied by the caller.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedParam> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// Copies checkpoint values into `params`, matching by name. Entries whose
// name starts with one of `skip_prefixes` are ignored on both sides. A shape
// mismatch raises DimensionError listing every differing tensor; a missing
// tensor raises DataError.
void assign_parameters(const ParamList& params, const Checkpoint& ckpt,
                       const std::vector<std::string>& skip_prefixes = {});

}  // namespace docformer
