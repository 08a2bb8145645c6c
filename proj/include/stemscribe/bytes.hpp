#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "stemscribe/error.hpp"

namespace stemscribe {

using Bytes = std::vector<unsigned char>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline std::size_t write_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  return bytes.size();
}

inline void put_le32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

inline void put_le64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

inline void put_be16(Bytes& out, std::uint16_t v) {
  out.push_back(v >> 8);
  out.push_back(v & 0xFF);
}

inline void put_be32(Bytes& out, std::uint32_t v) {
  for (int i = 3; i >= 0; --i) out.push_back((v >> (8 * i)) & 0xFF);
}

// Bounds-checked cursor over a byte buffer.
class ByteReader {
 public:
  ByteReader(const Bytes& bytes, std::string what, std::size_t begin = 0,
             std::size_t end = std::string::npos)
      : bytes_(bytes), what_(std::move(what)), pos_(begin),
        end_(std::min(end, bytes.size())) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }
  bool done() const { return pos_ >= end_; }

  void need(std::size_t n) const {
    if (remaining() < n)
      throw Error(ErrorCode::kTruncated,
                  what_ + ": need " + std::to_string(n) + " bytes at offset " +
                      std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    need(1);
    return bytes_[pos_];
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }
  std::uint32_t le32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t le64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::uint16_t be16() {
    need(2);
    const std::uint16_t v = (bytes_[pos_] << 8) | bytes_[pos_ + 1];
    pos_ += 2;
    return v;
  }
  std::uint32_t be32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

 private:
  const Bytes& bytes_;
  std::string what_;
  std::size_t pos_;
  std::size_t end_;
};

}  // namespace stemscribe
