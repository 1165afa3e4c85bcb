#pragma once

// Checkpoint file layout, all integers and floats little-endian:
//
//   "CYDF"                       magic
//   u32 version
//   u32 n, i32 x n               architecture descriptor
//   u32 len, bytes               training config as `key = value` text
//   u32 epoch                    next epoch to run
//   u32 count, then per tensor:  u32 rows, u32 cols, f64 x rows*cols
//   u64 adam step
//   m tensors, v tensors         same encoding as the parameters
//   u32 len, bytes               RNG state (textual engine dump)
//   u32 crc32                    over every preceding byte

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <zlib.h>

#include "cycledeform/training.hpp"

namespace cycledeform {

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(const std::string& s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  void tensor(const ad::Tensor<double>& t) {
    u32(static_cast<std::uint32_t>(t.rows()));
    u32(static_cast<std::uint32_t>(t.cols()));
    for (Eigen::Index i = 0; i < t.size(); ++i) f64(t.data()[i]);
  }
  void tensors(const std::vector<ad::Tensor<double>>& ts) {
    u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) tensor(t);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(data_[pos_++]) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::string str() { return raw(u32()); }
  ad::Tensor<double> tensor() {
    const std::uint32_t rows = u32(), cols = u32();
    need(static_cast<std::size_t>(rows) * cols * 8);
    ad::Tensor<double> t(rows, cols);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = f64();
    return t;
  }
  std::vector<ad::Tensor<double>> tensors() {
    const std::uint32_t n = u32();
    need(static_cast<std::size_t>(n) * 8);
    std::vector<ad::Tensor<double>> out;
    for (std::uint32_t i = 0; i < n; ++i) out.push_back(tensor());
    return out;
  }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw CorruptFile("checkpoint is truncated");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t size) {
  return static_cast<std::uint32_t>(::crc32(::crc32(0L, Z_NULL, 0), data, static_cast<uInt>(size)));
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  detail::ByteWriter w;
  w.raw("CYDF");
  w.u32(Checkpoint::kVersion);
  const auto desc = ck.architecture.descriptor();
  w.u32(static_cast<std::uint32_t>(desc.size()));
  for (int d : desc) w.i32(d);
  w.str(ck.config.to_text());
  w.u32(static_cast<std::uint32_t>(ck.epoch));
  w.tensors(ck.parameters);
  w.u64(ck.adam_step);
  w.tensors(ck.adam_m);
  w.tensors(ck.adam_v);
  w.str(ck.rng_state);
  auto& bytes = w.bytes();
  w.u32(detail::crc32_of(bytes.data(), bytes.size()));
  return std::move(bytes);
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12) throw CorruptFile("checkpoint is truncated");
  if (std::memcmp(bytes.data(), "CYDF", 4) != 0) throw CorruptFile("not a checkpoint file (bad magic)");
  detail::ByteReader tail(bytes.data() + bytes.size() - 4, 4);
  if (tail.u32() != detail::crc32_of(bytes.data(), bytes.size() - 4)) throw CorruptFile("checkpoint checksum mismatch");

  detail::ByteReader r(bytes.data() + 4, bytes.size() - 8);
  const std::uint32_t version = r.u32();
  if (version != Checkpoint::kVersion)
    throw VersionMismatch("checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(Checkpoint::kVersion));
  Checkpoint ck;
  std::vector<int> desc(r.u32());
  for (auto& d : desc) d = r.i32();
  ck.architecture = Architecture::from_descriptor(desc);
  ck.config = TrainConfig::from_text(r.str());
  ck.epoch = static_cast<int>(r.u32());
  ck.parameters = r.tensors();
  ck.adam_step = r.u64();
  ck.adam_m = r.tensors();
  ck.adam_v = r.tensors();
  ck.rng_state = r.str();
  if (r.remaining() != 0) throw CorruptFile("trailing bytes in checkpoint");
  // Validates tensor shapes against the architecture.
  (void)ck.model<double>();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  const auto bytes = encode_checkpoint(ck);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace cycledeform
