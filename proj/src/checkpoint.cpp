#include "sobelkey/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>

namespace sobelkey {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t c = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) c = table[(c ^ data[i]) & 0xFFu] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

namespace {

constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& buf, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

void put_bytes(std::vector<std::uint8_t>& buf, const void* data, std::size_t len) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  buf.insert(buf.end(), p, p + len);
}

struct Reader {
  const std::uint8_t* p;
  std::size_t remaining;

  template <typename T>
  T get() {
    if (remaining < sizeof(T)) throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: truncated record");
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    remaining -= sizeof(T);
    return v;
  }

  void get_bytes(void* dst, std::size_t len) {
    if (remaining < len) throw CheckpointError(CheckpointErrorCode::kTruncated, "checkpoint: truncated record");
    std::memcpy(dst, p, len);
    p += len;
    remaining -= len;
  }
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::vector<std::uint8_t> payload;
  put(payload, kVersion);
  put(payload, static_cast<std::uint32_t>(ckpt.network_id.size()));
  put_bytes(payload, ckpt.network_id.data(), ckpt.network_id.size());
  put(payload, ckpt.step);
  put(payload, ckpt.config_hash);
  put(payload, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put(payload, static_cast<std::uint32_t>(name.size()));
    put_bytes(payload, name.data(), name.size());
    put(payload, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put(payload, static_cast<std::int32_t>(d));
    put(payload, static_cast<std::uint64_t>(t.numel()));
    put_bytes(payload, t.data().data(), t.numel() * sizeof(float));
  }
  const std::uint32_t crc = crc32(payload.data(), payload.size());

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "checkpoint: cannot write " + path.string());
  out.write("SKCP", 4);
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw CheckpointError(CheckpointErrorCode::kIo, "checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointErrorCode::kIo, "checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), "SKCP", 4) != 0) {
    throw CheckpointError(CheckpointErrorCode::kBadMagic, "checkpoint: bad magic in " + path.string());
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  const std::uint32_t actual = crc32(bytes.data() + 4, bytes.size() - 8);
  if (stored_crc != actual) {
    throw CheckpointError(CheckpointErrorCode::kBadCrc, "checkpoint: CRC mismatch in " + path.string());
  }

  Reader r{bytes.data() + 4, bytes.size() - 8};
  const std::uint32_t version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw CheckpointError(CheckpointErrorCode::kBadVersion,
                          "checkpoint: unsupported version " + std::to_string(version) + " in " + path.string());
  }
  Checkpoint ckpt;
  const std::uint32_t id_len = r.get<std::uint32_t>();
  ckpt.network_id.resize(id_len);
  r.get_bytes(ckpt.network_id.data(), id_len);
  ckpt.step = r.get<std::uint64_t>();
  ckpt.config_hash = r.get<std::uint64_t>();
  const std::uint32_t count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.get<std::uint32_t>();
    std::string name(name_len, '\0');
    r.get_bytes(name.data(), name_len);
    const std::uint32_t ndims = r.get<std::uint32_t>();
    std::vector<int> shape(ndims);
    for (std::uint32_t d = 0; d < ndims; ++d) shape[d] = r.get<std::int32_t>();
    const std::uint64_t n = r.get<std::uint64_t>();
    std::vector<float> data(n);
    r.get_bytes(data.data(), n * sizeof(float));
    ckpt.tensors.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data), false));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::string& expected_network_id) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.network_id != expected_network_id) {
    throw CheckpointError(CheckpointErrorCode::kBadNetworkId, "checkpoint: network id '" + ckpt.network_id +
                                                                  "' in " + path.string() + ", expected '" +
                                                                  expected_network_id + "'");
  }
  return ckpt;
}

}  // namespace sobelkey
