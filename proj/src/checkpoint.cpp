#include "docformer/checkpoint.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "docformer/error.hpp"
#include "docformer/tensor_io.hpp"

namespace docformer {
namespace fs = std::filesystem;
using nlohmann::json;

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t.tensor;
  return nullptr;
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  json manifest = ckpt.meta;
  json entries = json::array();
  std::ostringstream blob(std::ios::binary);
  for (const auto& t : ckpt.tensors) {
    const auto offset = static_cast<std::size_t>(blob.tellp());
    write_tensor(blob, t.tensor);
    entries.push_back({{"name", t.name},
                       {"shape", t.tensor.shape()},
                       {"offset", offset},
                       {"bytes", static_cast<std::size_t>(blob.tellp()) - offset}});
  }
  manifest["tensors"] = entries;

  // Write to temporaries first so an interrupted save never leaves a
  // manifest pointing into a truncated blob.
  const fs::path d(dir);
  {
    std::ofstream out(d / "params.bin.tmp", std::ios::binary);
    const std::string bytes = blob.str();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + (d / "params.bin").string());
  }
  {
    std::ofstream out(d / "manifest.json.tmp");
    out << manifest.dump(2) << "\n";
    if (!out) throw DataError("cannot write " + (d / "manifest.json").string());
  }
  fs::rename(d / "params.bin.tmp", d / "params.bin");
  fs::rename(d / "manifest.json.tmp", d / "manifest.json");
}

Checkpoint load_checkpoint(const std::string& dir) {
  const fs::path d(dir);
  std::ifstream mf(d / "manifest.json");
  if (!mf) throw DataError("checkpoint " + dir + " has no manifest.json");
  json manifest;
  try {
    manifest = json::parse(mf);
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint manifest " + (d / "manifest.json").string() + " is not valid JSON: " + e.what());
  }
  std::ifstream bf(d / "params.bin", std::ios::binary);
  if (!bf) throw DataError("checkpoint " + dir + " has no params.bin");
  std::stringstream buf;
  buf << bf.rdbuf();
  const std::string bytes = buf.str();

  Checkpoint ckpt;
  if (!manifest.contains("tensors") || !manifest["tensors"].is_array()) {
    throw DataError("checkpoint manifest lacks a tensors list");
  }
  for (const auto& e : manifest["tensors"]) {
    const auto name = e.at("name").get<std::string>();
    const auto offset = e.at("offset").get<std::size_t>();
    const auto length = e.at("bytes").get<std::size_t>();
    const auto shape = e.at("shape").get<Shape>();
    if (offset + length > bytes.size()) {
      throw DataError("checkpoint tensor " + name + " extends past the end of params.bin");
    }
    std::istringstream in(bytes.substr(offset, length), std::ios::binary);
    Tensor t = read_tensor(in);
    if (t.shape() != shape) {
      throw DataError("checkpoint tensor " + name + ": manifest shape " + shape_str(shape) + " but blob shape " +
                      shape_str(t.shape()));
    }
    ckpt.tensors.push_back({name, t});
  }
  manifest.erase("tensors");
  ckpt.meta = std::move(manifest);
  return ckpt;
}

namespace {
bool skipped(const std::string& name, const std::vector<std::string>& prefixes) {
  for (const auto& p : prefixes)
    if (name.starts_with(p)) return true;
  return false;
}
}  // namespace

void assign_parameters(const ParamList& params, const Checkpoint& ckpt,
                       const std::vector<std::string>& skip_prefixes) {
  std::string diffs, missing;
  for (const auto& p : params) {
    if (skipped(p.name, skip_prefixes)) continue;
    const Tensor* src = ckpt.find(p.name);
    if (!src) {
      missing += (missing.empty() ? "" : ", ") + p.name;
    } else if (src->shape() != p.tensor.shape()) {
      diffs += "\n  " + p.name + ": checkpoint " + shape_str(src->shape()) + " vs config " +
               shape_str(p.tensor.shape());
    }
  }
  if (!diffs.empty()) throw DimensionError("checkpoint dimensions do not match the config:" + diffs);
  if (!missing.empty()) throw DataError("checkpoint lacks tensors: " + missing);
  for (const auto& p : params) {
    if (skipped(p.name, skip_prefixes)) continue;
    const auto src = ckpt.find(p.name)->data();
    auto dst = Tensor(p.tensor).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

}  // namespace docformer
