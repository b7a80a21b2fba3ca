#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace occfill {

inline constexpr int kContainerFormatVersion = 1;

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

/// Binary container: 8-byte magic, little-endian u64 header length, a JSON
/// header, then float32 little-endian blobs in header order. The header
/// carries `format_version` and a `blobs` table of {name, shape, offset}.
struct Container {
  nlohmann::json meta;
  std::vector<NamedTensor> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, nlohmann::json meta, const std::vector<NamedTensor>& tensors);
/// Throws CheckpointError on a malformed file or a format_version mismatch.
Container read_container(const std::filesystem::path& path);

/// Parameters and buffers of a module, names prefixed with `prefix`.
std::vector<NamedTensor> module_tensors(const torch::nn::Module& module, const std::string& prefix);

/// Human-readable list of missing or mis-shaped entries; empty when compatible.
std::vector<std::string> module_shape_diff(const torch::nn::Module& module, const Container& container,
                                           const std::string& prefix);

/// Copies container values into the module. Every entry is checked before
/// anything is written; incompatibility throws SpecError with the diff list.
void load_module_tensors(torch::nn::Module& module, const Container& container, const std::string& prefix);

}  // namespace occfill
