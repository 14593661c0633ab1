// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <type_traits>

#include "skelflow/param_store.hpp"

namespace skelflow {

// Checkpoint container, little-endian throughout:
//   magic "SKCK" | version u16 | config text (u32 length + UTF-8 bytes)
//   then per tensor: name (u32 length + bytes) | dtype u8 (0=f32, 1=f64)
//   | rank u8 | dims u32[rank] | frozen u8 | raw element data.
// Round-trips are bit-exact.

namespace detail {

inline void put_u8(std::string& b, std::uint8_t v) { b.push_back(static_cast<char>(v)); }
inline void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, errc on_truncation = errc::corrupt_sample)
      : buf_(buf), err_(on_truncation) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() {
    const char* p = take(2);
    return static_cast<std::uint16_t>(static_cast<unsigned char>(p[0]) |
                                      (static_cast<unsigned char>(p[1]) << 8));
  }
  std::uint32_t u32() {
    const char* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const char* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) { return std::string(take(n), n); }
  const char* take(std::size_t n) {
    require(pos_ + n <= buf_.size(), err_, "truncated data at offset " + std::to_string(pos_));
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
  errc err_;
};

inline std::string read_file(const std::string& path, errc on_missing = errc::io_error) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), on_missing, "cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), errc::io_error, "cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  require(static_cast<bool>(out), errc::io_error, "short write to " + path);
}

}  // namespace detail

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <typename T>
inline std::uint8_t dtype_code() {
  if constexpr (std::is_same_v<T, float>) return 0;
  else if constexpr (std::is_same_v<T, double>) return 1;
  else static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "unsupported dtype");
}

template <typename T>
inline std::string encode_checkpoint(const ParamStore<T>& params, const std::string& config_text) {
  using namespace detail;
  std::string b;
  b += "SKCK";
  put_u16(b, kCheckpointVersion);
  put_u32(b, static_cast<std::uint32_t>(config_text.size()));
  b += config_text;
  for (const auto& [name, e] : params) {
    put_u32(b, static_cast<std::uint32_t>(name.size()));
    b += name;
    put_u8(b, dtype_code<T>());
    put_u8(b, static_cast<std::uint8_t>(e.value.rank()));
    for (int d : e.value.shape) put_u32(b, static_cast<std::uint32_t>(d));
    put_u8(b, e.frozen ? 1 : 0);
    b.append(reinterpret_cast<const char*>(e.value.data.data()), e.value.data.size() * sizeof(T));
  }
  return b;
}

template <typename T>
inline void save_checkpoint(const std::string& path, const ParamStore<T>& params,
                            const std::string& config_text) {
  detail::write_file(path, encode_checkpoint(params, config_text));
}

template <typename T>
inline ParamStore<T> decode_checkpoint(const std::string& buf, std::string* config_text) {
  using namespace detail;
  Reader r(buf, errc::corrupt_sample);
  require(buf.size() >= 4 && buf.compare(0, 4, "SKCK") == 0, errc::bad_magic,
          "not a checkpoint file");
  r.take(4);
  std::uint16_t version = r.u16();
  require(version == kCheckpointVersion, errc::version_mismatch,
          "checkpoint version " + std::to_string(version));
  std::uint32_t cfg_len = r.u32();
  std::string cfg = r.bytes(cfg_len);
  if (config_text) *config_text = cfg;
  ParamStore<T> params;
  while (!r.at_end()) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint8_t dtype = r.u8();
    require(dtype == dtype_code<T>(), errc::dtype_mismatch,
            "tensor " + name + " stored with dtype code " + std::to_string(dtype));
    std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (int i = 0; i < rank; ++i) shape[static_cast<std::size_t>(i)] = static_cast<int>(r.u32());
    bool frozen = r.u8() != 0;
    std::size_t n = shape_numel(shape);
    Tensor<T> t(shape);
    const char* raw = r.take(n * sizeof(T));
    std::memcpy(t.data.data(), raw, n * sizeof(T));
    params.add(name, std::move(t), frozen);
  }
  return params;
}

template <typename T>
inline ParamStore<T> load_checkpoint(const std::string& path, std::string* config_text) {
  return decode_checkpoint<T>(detail::read_file(path), config_text);
}

}  // namespace skelflow
