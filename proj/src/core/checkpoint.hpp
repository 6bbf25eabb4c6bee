#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace uniprofile {

struct NamedTensor {
  std::string name;
  std::vector<std::uint64_t> shape;
  std::vector<float> data;

  bool operator==(const NamedTensor&) const = default;
};

// Model checkpoint file, little-endian:
//   "UPCK" | u32 version | u32 meta_len | meta JSON | u32 n_tensors
//   n_tensors x (u32 name_len | name | u32 ndim | ndim x u64 | prod(shape) x f32)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata;
  std::vector<NamedTensor> tensors;

  const NamedTensor& at(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint(const std::string& path);

}  // namespace uniprofile
