#include "occfill/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "occfill/errors.hpp"

namespace occfill {

namespace {

constexpr char kMagic[8] = {'O', 'C', 'C', 'F', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

std::string shape_str(c10::IntArrayRef s) { return c10::str(s); }

}  // namespace

const torch::Tensor* Container::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t.value;
  }
  return nullptr;
}

void write_container(const std::filesystem::path& path, nlohmann::json meta, const std::vector<NamedTensor>& tensors) {
  meta["format_version"] = kContainerFormatVersion;
  auto table = nlohmann::json::array();
  int64_t offset = 0;
  std::vector<torch::Tensor> flat;
  flat.reserve(tensors.size());
  for (const auto& t : tensors) {
    auto f = t.value.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    table.push_back({{"name", t.name}, {"shape", f.sizes().vec()}, {"offset", offset}});
    offset += f.numel();
    flat.push_back(std::move(f));
  }
  meta["blobs"] = table;
  const std::string header = meta.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp);
    const uint64_t len = header.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& f : flat) {
      out.write(reinterpret_cast<const char*>(f.data_ptr<float>()),
                static_cast<std::streamsize>(f.numel() * static_cast<int64_t>(sizeof(float))));
    }
    if (!out) throw IoError("failed writing " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("cannot open " + path.string());
  const auto file_size = static_cast<uint64_t>(in.tellg());
  in.seekg(0);
  char magic[8];
  uint64_t len = 0;
  if (file_size < sizeof(magic) + sizeof(len)) throw CheckpointError(path.string() + ": truncated header");
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (std::memcmp(magic, kMagic, sizeof(magic)) != 0) throw CheckpointError(path.string() + ": bad magic");
  if (len > file_size - sizeof(magic) - sizeof(len)) throw CheckpointError(path.string() + ": header overruns file");
  std::string header(len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(len));

  Container c;
  try {
    c.meta = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt header: " + e.what());
  }
  if (!c.meta.is_object() || !c.meta.contains("format_version") || !c.meta.contains("blobs")) {
    throw CheckpointError(path.string() + ": header lacks format_version or blobs");
  }
  if (c.meta["format_version"] != kContainerFormatVersion) {
    throw CheckpointError(path.string() + ": format_version " + c.meta["format_version"].dump() + " != " +
                          std::to_string(kContainerFormatVersion));
  }
  const uint64_t data_start = sizeof(magic) + sizeof(len) + len;
  const uint64_t data_floats = (file_size - data_start) / sizeof(float);
  try {
    for (const auto& b : c.meta["blobs"]) {
      const auto shape = b.at("shape").get<std::vector<int64_t>>();
      const auto offset = b.at("offset").get<int64_t>();
      int64_t count = 1;
      for (auto d : shape) {
        if (d < 0) throw CheckpointError(path.string() + ": negative dimension");
        count *= d;
      }
      if (offset < 0 || static_cast<uint64_t>(offset + count) > data_floats) {
        throw CheckpointError(path.string() + ": blob '" + b.at("name").get<std::string>() + "' overruns file");
      }
      auto t = torch::empty(shape, torch::kFloat32);
      in.seekg(static_cast<std::streamoff>(data_start + static_cast<uint64_t>(offset) * sizeof(float)));
      in.read(reinterpret_cast<char*>(t.data_ptr<float>()), static_cast<std::streamsize>(count * 4));
      if (!in) throw CheckpointError(path.string() + ": short read");
      c.tensors.push_back({b.at("name").get<std::string>(), std::move(t)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": corrupt blob table: " + e.what());
  }
  return c;
}

std::vector<NamedTensor> module_tensors(const torch::nn::Module& module, const std::string& prefix) {
  std::vector<NamedTensor> out;
  for (const auto& p : module.named_parameters(true)) out.push_back({prefix + p.key(), p.value()});
  for (const auto& b : module.named_buffers(true)) out.push_back({prefix + b.key(), b.value()});
  return out;
}

std::vector<std::string> module_shape_diff(const torch::nn::Module& module, const Container& container,
                                           const std::string& prefix) {
  std::vector<std::string> diff;
  for (const auto& t : module_tensors(module, prefix)) {
    const auto* stored = container.find(t.name);
    if (!stored) {
      diff.push_back(t.name + ": missing (expected " + shape_str(t.value.sizes()) + ")");
    } else if (stored->sizes() != t.value.sizes()) {
      diff.push_back(t.name + ": stored " + shape_str(stored->sizes()) + " vs expected " +
                     shape_str(t.value.sizes()));
    }
  }
  return diff;
}

void load_module_tensors(torch::nn::Module& module, const Container& container, const std::string& prefix) {
  const auto diff = module_shape_diff(module, container, prefix);
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the network:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw SpecError(msg);
  }
  torch::NoGradGuard guard;
  for (auto& t : module_tensors(module, prefix)) {
    t.value.copy_(*container.find(t.name));
  }
}

}  // namespace occfill
