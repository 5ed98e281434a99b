#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mpft/autodiff/tensor.hpp"

namespace mpft::cli {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> data;
};

/// On disk: "MPFT", u32 version, u64 metadata length, metadata JSON
/// ({config, arrays: [{name, shape}], crc32}), then each array as raw
/// little-endian doubles in index order. All integers little-endian.
struct Checkpoint {
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& find(std::string_view name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// FormatError on bad magic/version/metadata, IntegrityError on truncation
/// or checksum mismatch.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace mpft::cli
