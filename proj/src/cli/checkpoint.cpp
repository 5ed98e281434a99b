#include "mpft/cli/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mpft/errors.hpp"

namespace mpft::cli {

namespace {

constexpr char kMagic[4] = {'M', 'P', 'F', 'T'};
constexpr std::size_t kHeader = 4 + 4 + 8;

void put_le(std::string& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_le(std::string_view in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

std::uint32_t checksum(std::string_view payload) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < payload.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(payload.size() - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

const NamedArray& Checkpoint::find(std::string_view name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return a;
  }
  throw FormatError("checkpoint has no array named '" + std::string(name) + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::set<std::string> names;
  std::string payload;
  nlohmann::ordered_json index = nlohmann::ordered_json::array();
  for (const NamedArray& a : ckpt.arrays) {
    if (!names.insert(a.name).second) throw FormatError("duplicate checkpoint array '" + a.name + "'");
    if (ad::numel(a.shape) != a.data.size()) {
      throw DimensionError("checkpoint array '" + a.name + "' has shape " + ad::shape_str(a.shape) +
                           " but " + std::to_string(a.data.size()) + " values");
    }
    index.push_back({{"name", a.name}, {"shape", a.shape}});
    for (double v : a.data) put_le(payload, std::bit_cast<std::uint64_t>(v), 8);
  }
  nlohmann::ordered_json meta;
  meta["config"] = ckpt.config;
  meta["arrays"] = index;
  meta["crc32"] = checksum(payload);
  const std::string meta_text = meta.dump();

  std::string out(kMagic, 4);
  put_le(out, kCheckpointVersion, 4);
  put_le(out, meta_text.size(), 8);
  out += meta_text;
  out += payload;
  return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  if (bytes.size() < kHeader) throw IntegrityError("checkpoint truncated in header");
  const auto version = get_le(bytes, 4, 4);
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t meta_len = get_le(bytes, 8, 8);
  if (meta_len > bytes.size() - kHeader) throw IntegrityError("checkpoint truncated in metadata");

  nlohmann::ordered_json meta;
  try {
    meta = nlohmann::ordered_json::parse(bytes.substr(kHeader, meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }

  Checkpoint ckpt;
  std::size_t expected = 0;
  std::uint32_t crc = 0;
  try {
    crc = meta.at("crc32").get<std::uint32_t>();
    ckpt.config = meta.at("config");
    for (const auto& entry : meta.at("arrays")) {
      NamedArray a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<ad::Shape>();
      a.data.resize(ad::numel(a.shape));
      expected += a.data.size();
      ckpt.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata is malformed: ") + e.what());
  }

  const std::string_view payload = bytes.substr(kHeader + meta_len);
  if (payload.size() < expected * 8) throw IntegrityError("checkpoint truncated in payload");
  if (payload.size() > expected * 8) throw IntegrityError("checkpoint has trailing bytes");
  if (checksum(payload) != crc) {
    throw IntegrityError("checkpoint payload checksum mismatch");
  }
  std::size_t at = 0;
  for (NamedArray& a : ckpt.arrays) {
    for (double& v : a.data) {
      v = std::bit_cast<double>(get_le(payload, at, 8));
      at += 8;
    }
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace mpft::cli
