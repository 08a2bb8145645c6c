#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "stemscribe/nn/tensor.hpp"

// Checkpoint layout (little-endian):
//   "SSNN" | u32 version | records...
//   record: u32 name_len | name bytes | u32 rank | u32 dims[rank] | f32 payload
// Records run to end of file.
namespace stemscribe::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using TensorList = std::vector<NamedTensor>;

inline const Tensor* find_tensor(const TensorList& list, const std::string& name) {
  for (const auto& nt : list)
    if (nt.name == name) return &nt.tensor;
  return nullptr;
}

inline const Tensor& require_tensor(const TensorList& list, const std::string& name) {
  const Tensor* t = find_tensor(list, name);
  if (!t) throw Error(ErrorCode::kShapeMismatch, "checkpoint lacks tensor '" + name + "'");
  return *t;
}

namespace ckpt_detail {

inline void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

class Reader {
 public:
  explicit Reader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  float f32() {
    const std::uint32_t raw = u32();
    float f;
    std::memcpy(&f, &raw, sizeof f);
    return f;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n)
      throw Error(ErrorCode::kTruncated, "checkpoint ends mid-record");
  }
  const std::vector<unsigned char>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace ckpt_detail

inline std::vector<unsigned char> encode_checkpoint(const TensorList& tensors) {
  using ckpt_detail::put_u32;
  std::vector<unsigned char> out{'S', 'S', 'N', 'N'};
  put_u32(out, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data) {
      const float f = static_cast<float>(v);
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put_u32(out, raw);
    }
  }
  return out;
}

inline TensorList decode_checkpoint(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "SSNN", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "checkpoint does not start with SSNN");
  ckpt_detail::Reader in(bytes);
  in.str(4);
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorCode::kUnsupportedCodec,
                "checkpoint version " + std::to_string(version));
  TensorList out;
  while (!in.done()) {
    NamedTensor nt;
    nt.name = in.str(in.u32());
    const std::uint32_t rank = in.u32();
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = in.u32();
    nt.tensor = Tensor(dims);
    for (double& v : nt.tensor.data) v = in.f32();
    out.push_back(std::move(nt));
  }
  return out;
}

inline TensorList snapshot(const ParamList& params) {
  TensorList out;
  for (const auto* p : params) out.push_back({p->name, p->value});
  return out;
}

// Copies values for every parameter; shapes must agree.
inline void restore(const ParamList& params, const TensorList& tensors) {
  for (auto* p : params) {
    const Tensor& t = require_tensor(tensors, p->name);
    if (t.shape != p->value.shape)
      throw Error(ErrorCode::kShapeMismatch,
                  p->name + ": checkpoint " + shape_string(t.shape) + " vs model " +
                      shape_string(p->value.shape));
    p->value.data = t.data;
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const TensorList& tensors) {
  const auto bytes = encode_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kUnwritablePath, path.string());
}

inline TensorList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace stemscribe::nn
