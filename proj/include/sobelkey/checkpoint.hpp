#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "sobelkey/tensor.hpp"

namespace sobelkey {

enum class CheckpointErrorCode { kIo, kBadMagic, kBadVersion, kBadCrc, kTruncated, kBadNetworkId };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

// Binary container, little-endian:
//   magic "SKCP", u32 version=1, u32 id_len + network id bytes,
//   u64 training step, u64 config hash, u32 tensor count,
//   per tensor: u32 name_len + name, u32 ndims, i32 dims[], u64 count, f32 data[],
//   u32 CRC32 over every byte after the magic.
struct Checkpoint {
  std::string network_id;  // "sobelnet" | "desnet"
  std::uint64_t step = 0;
  std::uint64_t config_hash = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_network_id);

std::uint32_t crc32(const std::uint8_t* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);

}  // namespace sobelkey
