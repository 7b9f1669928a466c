#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "cgrl/model.hpp"

namespace cgrl {

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

// Reflected CRC-32 (zlib polynomial).
inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

struct ByteWriter {
  std::vector<std::uint8_t> bytes;

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > bytes.size()) throw DataError("corrupt checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + static_cast<std::size_t>(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace detail

// Binary checkpoint: "CGRL" magic, version, stage marker, global step, config
// snapshot, length-prefixed named tensors as 64-bit little-endian values,
// trailing CRC32 of everything before it.
inline void save_checkpoint(const CgrlModel& model, int stage, std::uint64_t global_step,
                            const std::string& path) {
  detail::ByteWriter w;
  w.raw("CGRL", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(stage));
  w.u64(global_step);
  w.str(config_json(model.config).dump());
  w.u32(static_cast<std::uint32_t>(model.store.size()));
  for (std::size_t i = 0; i < model.store.size(); ++i) {
    const Parameter& p = model.store[i];
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape) w.u32(static_cast<std::uint32_t>(d));
    for (double v : p.value.data) w.f64(v);
  }
  const std::uint32_t crc = detail::crc32(w.bytes.data(), w.bytes.size());
  w.u32(crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.bytes.data()),
            static_cast<std::streamsize>(w.bytes.size()));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

struct LoadedCheckpoint {
  CgrlModel model;
  int stage = 0;
  std::uint64_t global_step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw DataError("corrupt checkpoint: truncated file");

  const std::uint32_t stored_crc =
      static_cast<std::uint32_t>(bytes[bytes.size() - 4]) << 0 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 3]) << 8 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 2]) << 16 |
      static_cast<std::uint32_t>(bytes[bytes.size() - 1]) << 24;
  if (detail::crc32(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw DataError("corrupt checkpoint: checksum mismatch");
  }

  detail::ByteReader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), "CGRL", 4) != 0) {
    throw DataError("corrupt checkpoint: bad magic");
  }
  r.pos = 4;
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint version mismatch: found " + std::to_string(version) +
                    ", expected " + std::to_string(kCheckpointVersion));
  }
  LoadedCheckpoint out;
  out.stage = static_cast<int>(r.u32());
  out.global_step = r.u64();
  const std::string config_str = r.str();
  nlohmann::json config_doc = nlohmann::json::parse(config_str, nullptr, false);
  if (config_doc.is_discarded()) throw DataError("corrupt checkpoint: bad config snapshot");
  out.model = build_model(parse_config(config_doc));

  const std::uint32_t count = r.u32();
  if (count != out.model.store.size()) {
    throw DataError("corrupt checkpoint: parameter count mismatch");
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    Parameter* p = out.model.store.find(name);
    if (!p) throw DataError("corrupt checkpoint: unknown parameter " + name);
    const std::uint32_t rank = r.u32();
    if (rank != p->value.rank()) throw DataError("corrupt checkpoint: rank mismatch for " + name);
    for (std::size_t d = 0; d < rank; ++d) {
      if (r.u32() != p->value.shape[d]) {
        throw DataError("corrupt checkpoint: shape mismatch for " + name);
      }
    }
    for (std::size_t k = 0; k < p->value.size(); ++k) p->value.data[k] = r.f64();
  }
  return out;
}

}  // namespace cgrl
