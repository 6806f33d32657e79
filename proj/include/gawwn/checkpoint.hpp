#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gawwn/tensor.hpp"

namespace gawwn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// Ordered named tensors plus free-form JSON metadata (step count, config hash, ...).
struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const Tensor* find(std::string_view name) const;
};

// Binary layout, all integers little-endian u64:
//   "GAWWNCK1" | count | count x (name_len, name, rank, extents..., f64 data...) | JSON trailer
std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// 64-bit FNV-1a of a string, rendered as 16 hex digits; used for config hashes.
std::string fnv1a_hex(std::string_view text);

}  // namespace gawwn
