#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "todi/errors.hpp"
#include "todi/nn.hpp"
#include "todi/tensor.hpp"

namespace todi {

// Reflected CRC-32 (polynomial 0xEDB88320), the common zlib/PNG variant;
// crc32 of "123456789" is 0xCBF43926.
inline std::uint32_t crc32(const void* data, std::size_t n) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
      t[i] = c;
    }
    return t;
  }();
  const auto* p = static_cast<const std::uint8_t*>(data);
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

struct CheckpointTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> values;
};

// On-disk layout (all integers and floats little-endian):
//   "TODI" | version u32 | module-tag (u32 length + bytes)
//   | tensor count u32
//   | per tensor: name (u32 length + bytes), rank u32, extents u32[rank],
//                 payload f32[numel]
//   | crc32 u32 over everything above
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  std::string module;
  std::vector<CheckpointTensor> tensors;
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFFu));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFFu));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, sizeof(v));
  put_u32(out, v);
}

inline void put_str(std::vector<std::uint8_t>& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.insert(out.end(), s.begin(), s.end());
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t n, const std::string& origin)
      : data_(data), n_(n), origin_(origin) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | data_[pos_ + static_cast<std::size_t>(i)];
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
  }

  std::string str() {
    const std::uint32_t len = u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), len);
    pos_ += len;
    return s;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  void need(std::size_t k) const {
    if (pos_ + k > n_) throw IoError("truncated checkpoint file " + origin_);
  }

  const std::uint8_t* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
  std::string origin_;
};

inline std::vector<std::uint8_t> checkpoint_bytes(const Checkpoint& ck) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'T', 'O', 'D', 'I'});
  put_u32(out, Checkpoint::kVersion);
  put_str(out, ck.module);
  put_u32(out, static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    put_str(out, t.name);
    put_u32(out, static_cast<std::uint32_t>(t.shape.size()));
    std::size_t numel = 1;
    for (const int e : t.shape) {
      if (e < 1) throw ContractError("checkpoint tensor " + t.name + " has a non-positive extent");
      put_u32(out, static_cast<std::uint32_t>(e));
      numel *= static_cast<std::size_t>(e);
    }
    if (t.values.size() != numel)
      throw ContractError("checkpoint tensor " + t.name + " payload does not match its extents");
    for (const float v : t.values) put_f32(out, v);
  }
  put_u32(out, crc32(out.data(), out.size()));
  return out;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const std::vector<std::uint8_t> bytes = detail::checkpoint_bytes(ck);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint file " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint file " + path);
}

inline void save_checkpoint(const std::string& path, const std::string& module,
                            const NamedParams& params) {
  Checkpoint ck;
  ck.module = module;
  for (const auto& [name, tensor] : params)
    ck.tensors.push_back({name, tensor.shape(), tensor.value()});
  save_checkpoint(path, ck);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint file " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw IoError("truncated checkpoint file " + path);
  if (std::memcmp(bytes.data(), "TODI", 4) != 0)
    throw IoError(path + " is not a checkpoint file (bad magic)");
  const std::uint32_t stored_crc = [&] {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i)
      v = (v << 8) | bytes[bytes.size() - 4 + static_cast<std::size_t>(i)];
    return v;
  }();
  if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
    throw IoError("checkpoint file " + path + " failed its checksum");

  detail::ByteReader r(bytes.data(), bytes.size() - 4, path);
  Checkpoint ck;
  r.u32();  // magic, already verified
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw IoError("checkpoint file " + path + " has format version " + std::to_string(version) +
                  "; this build reads version " + std::to_string(Checkpoint::kVersion) +
                  " — migrate the file first");
  ck.module = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw IoError("checkpoint tensor " + t.name + " has an implausible rank");
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0) throw IoError("checkpoint tensor " + t.name + " has a zero extent");
      t.shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    if (numel > r.remaining() / 4 + 1)
      throw IoError("checkpoint tensor " + t.name + " overruns the file");
    t.values.reserve(numel);
    for (std::size_t v = 0; v < numel; ++v) t.values.push_back(r.f32());
    ck.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw IoError("checkpoint file " + path + " has trailing bytes");
  return ck;
}

// Copy stored values into live parameters, matched by name. Strict: the two
// sides must agree on the module tag, the name set, and every shape.
inline void apply_checkpoint(const Checkpoint& ck, NamedParams params,
                             const std::string& expect_module) {
  if (ck.module != expect_module)
    throw ContractError("checkpoint holds a '" + ck.module + "' model, expected '" +
                        expect_module + "'");
  if (ck.tensors.size() != params.size())
    throw ContractError("checkpoint tensor count " + std::to_string(ck.tensors.size()) +
                        " != model parameter count " + std::to_string(params.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const CheckpointTensor& stored = ck.tensors[i];
    auto& [name, tensor] = params[i];
    if (stored.name != name)
      throw ContractError("checkpoint tensor '" + stored.name + "' does not match parameter '" +
                          name + "'");
    if (stored.shape != tensor.shape())
      throw ContractError("checkpoint tensor '" + stored.name + "' has a mismatched shape");
    tensor.value() = stored.values;
  }
}

}  // namespace todi
