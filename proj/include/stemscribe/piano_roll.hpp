#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "stemscribe/bytes.hpp"
#include "stemscribe/error.hpp"

namespace stemscribe {

inline constexpr int kLowestPitch = 21;
inline constexpr int kHighestPitch = 108;
inline constexpr std::size_t kPitchRows = kHighestPitch - kLowestPitch + 1;

struct FrameTiming {
  int hop_length = 512;
  int sample_rate = 22050;

  double time_per_frame() const {
    return static_cast<double>(hop_length) / static_cast<double>(sample_rate);
  }
  double frame_start(std::size_t t) const { return static_cast<double>(t) * time_per_frame(); }
};

inline double time_per_frame(int hop_length, int sample_rate) {
  return FrameTiming{hop_length, sample_rate}.time_per_frame();
}

// Binary pitch x frame grid, row-major, row r = MIDI pitch r + 21.
struct PianoRoll {
  std::size_t frames = 0;
  double frame_time = FrameTiming{}.time_per_frame();
  std::vector<std::uint8_t> cells;

  PianoRoll() = default;
  PianoRoll(std::size_t num_frames, double dt)
      : frames(num_frames), frame_time(dt), cells(kPitchRows * num_frames, 0) {}

  static constexpr std::size_t rows() { return kPitchRows; }

  std::uint8_t& at(std::size_t row, std::size_t t) { return cells[row * frames + t]; }
  std::uint8_t at(std::size_t row, std::size_t t) const { return cells[row * frames + t]; }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (auto c : cells) n += c != 0;
    return n;
  }
  bool frame_active(std::size_t t) const {
    for (std::size_t r = 0; r < kPitchRows; ++r)
      if (at(r, t)) return true;
    return false;
  }

  void validate() const {
    if (!(frame_time > 0.0))
      throw Error(ErrorCode::kInvalidArgument, "frame_time must be positive");
    if (cells.size() != kPitchRows * frames)
      throw Error(ErrorCode::kShapeMismatch, "piano roll must have 88 rows");
    for (auto c : cells)
      if (c > 1) throw Error(ErrorCode::kInvalidArgument, "piano roll entries must be 0 or 1");
  }

  bool operator==(const PianoRoll&) const = default;
};

inline void expect_same_shape(const PianoRoll& a, const PianoRoll& b) {
  if (a.frames != b.frames)
    throw Error(ErrorCode::kShapeMismatch, "piano rolls have " + std::to_string(a.frames) +
                                               " and " + std::to_string(b.frames) + " frames");
}

// "PROL" | u32 rows | u32 cols | f64 frame_time | bits, MSB first, row-major.
inline Bytes encode_roll(const PianoRoll& roll) {
  roll.validate();
  Bytes out{'P', 'R', 'O', 'L'};
  put_le32(out, static_cast<std::uint32_t>(kPitchRows));
  put_le32(out, static_cast<std::uint32_t>(roll.frames));
  put_le64(out, std::bit_cast<std::uint64_t>(roll.frame_time));
  const std::size_t start = out.size();
  out.resize(start + (roll.cells.size() + 7) / 8, 0);
  for (std::size_t i = 0; i < roll.cells.size(); ++i)
    if (roll.cells[i]) out[start + i / 8] |= 0x80 >> (i % 8);
  return out;
}

inline PianoRoll decode_roll(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PROL", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "piano roll does not start with PROL");
  ByteReader in(bytes, "piano roll", 4);
  const std::uint32_t rows = in.le32();
  const std::uint32_t cols = in.le32();
  const double dt = std::bit_cast<double>(in.le64());
  if (rows != kPitchRows)
    throw Error(ErrorCode::kShapeMismatch, "piano roll has " + std::to_string(rows) + " rows");
  PianoRoll roll(cols, dt);
  const std::size_t nbytes = (roll.cells.size() + 7) / 8;
  in.need(nbytes);
  const std::size_t start = in.pos();
  for (std::size_t i = 0; i < roll.cells.size(); ++i)
    roll.cells[i] = (bytes[start + i / 8] >> (7 - i % 8)) & 1;
  roll.validate();
  return roll;
}

inline void write_roll(const PianoRoll& roll, const std::filesystem::path& path) {
  write_file(path, encode_roll(roll));
}

inline PianoRoll read_roll(const std::filesystem::path& path) { return decode_roll(read_file(path)); }

}  // namespace stemscribe
