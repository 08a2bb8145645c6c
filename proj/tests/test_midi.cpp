#include "stemscribe/midi.hpp"

#include <gtest/gtest.h>

#include <random>

#include "test_util.hpp"

using namespace stemscribe;
using namespace stemscribe::midi;

namespace {

PianoRoll random_roll(std::mt19937_64& rng, std::size_t frames, double density) {
  PianoRoll roll(frames, FrameTiming{}.time_per_frame());
  std::bernoulli_distribution on(density);
  for (auto& c : roll.cells) c = on(rng);
  return roll;
}

// Non-overlapping notes per pitch, each at least 10 ms long.
std::vector<NoteEvent> random_notes(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(0, 30), pitch(21, 108), vel(1, 127);
  std::uniform_real_distribution<double> gap(0.0, 0.5), len(0.01, 1.5);
  std::vector<NoteEvent> notes;
  std::map<int, double> free_at;
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const int p = pitch(rng);
    const double start = free_at[p] + gap(rng);
    const double end = start + len(rng);
    free_at[p] = end + 0.01;
    notes.push_back({p, start, end, vel(rng)});
  }
  return notes;
}

struct ScanResult {
  bool nonnegative = true;
  bool balanced = true;
  std::map<int, int> depth;
};

// Independent byte scanner for files produced by encode_smf (no running status).
ScanResult scan(const Bytes& b) {
  ScanResult r;
  std::size_t pos = 22;  // MThd(14) + "MTrk" + length
  auto vlq = [&] {
    std::uint32_t v = 0;
    while (true) {
      const auto c = b.at(pos++);
      v = (v << 7) | (c & 0x7F);
      if (!(c & 0x80)) return v;
    }
  };
  while (pos < b.size()) {
    vlq();
    const auto st = b.at(pos++);
    if (st == 0xFF) {
      pos++;
      const auto len = vlq();
      pos += len;
      continue;
    }
    const int pitch = b.at(pos++);
    const int vel = b.at(pos++);
    if ((st & 0xF0) == 0x90 && vel > 0) {
      r.depth[pitch]++;
    } else {
      if (--r.depth[pitch] < 0) r.balanced = false;
    }
  }
  for (auto& [p, d] : r.depth)
    if (d != 0) r.balanced = false;
  return r;
}

}  // namespace

TEST(FrameTiming, DefaultFrameDuration) {
  EXPECT_NEAR(time_per_frame(512, 22050), 0.0232199546, 1e-9);
  EXPECT_LT(std::abs(time_per_frame(512, 22050) - 0.0232), 0.05e-3);
}

TEST(RollToNotes, EmptyAndSingleRun) {
  const FrameTiming tm;
  EXPECT_TRUE(roll_to_notes(PianoRoll(50, tm.time_per_frame()), tm).empty());

  PianoRoll roll(40, tm.time_per_frame());
  for (std::size_t t = 10; t <= 20; ++t) roll.at(39, t) = 1;
  const auto notes = roll_to_notes(roll, tm);
  ASSERT_EQ(notes.size(), 1u);
  EXPECT_EQ(notes[0].pitch, 60);
  EXPECT_EQ(notes[0].velocity, 100);
  EXPECT_DOUBLE_EQ(notes[0].start, 10 * 512.0 / 22050.0);
  EXPECT_DOUBLE_EQ(notes[0].end, 21 * 512.0 / 22050.0);
  EXPECT_NEAR(notes[0].start, 0.23219, 1e-5);
  EXPECT_NEAR(notes[0].end, 0.48760, 1e-4);
}

TEST(RollToNotes, RunsSplitOnGaps) {
  const FrameTiming tm;
  PianoRoll roll(10, tm.time_per_frame());
  roll.at(0, 0) = roll.at(0, 1) = roll.at(0, 3) = roll.at(87, 9) = 1;
  const auto notes = roll_to_notes(roll, tm);
  ASSERT_EQ(notes.size(), 3u);
  EXPECT_EQ(notes[0].pitch, 21);
  EXPECT_EQ(notes[0].end, tm.frame_start(2));
  EXPECT_EQ(notes[1].start, tm.frame_start(3));
  EXPECT_EQ(notes[2].pitch, 108);
  EXPECT_EQ(notes[2].end, tm.frame_start(10));
}

TEST(NotesToRoll, SingleFrameAndOverlapUnion) {
  const FrameTiming tm;
  const double dt = tm.time_per_frame();
  auto roll = notes_to_roll({{60, 0.0, dt, 100}}, tm, 10);
  EXPECT_EQ(roll.active_count(), 1u);
  EXPECT_EQ(roll.at(39, 0), 1);

  const std::vector<NoteEvent> notes{{64, 0.05, 0.2, 100}, {64, 0.15, 0.4, 90}};
  roll = notes_to_roll(notes, tm, 30);
  for (std::size_t t = 0; t < 30; ++t) {
    const double time = t * dt;
    const bool expect = (time >= 0.05 && time < 0.2) || (time >= 0.15 && time < 0.4);
    EXPECT_EQ(roll.at(43, t), expect) << t;
  }
}

TEST(NotesToRoll, RejectsOutOfRange) {
  try {
    notes_to_roll({{20, 0.0, 1.0, 100}}, FrameTiming{}, 10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kPitchOutOfRange);
  }
}

TEST(RollRoundTrip, IdentityOnRandomRolls) {
  std::mt19937_64 rng(1);
  const FrameTiming tm;
  for (int i = 0; i < 100; ++i) {
    const auto roll = random_roll(rng, 1 + rng() % 300, 0.05 + 0.4 * (i % 3));
    EXPECT_EQ(notes_to_roll(roll_to_notes(roll, tm), tm, roll.frames), roll) << i;
  }
}

TEST(Vlq, Examples) {
  EXPECT_EQ(decode_vlq({0x81, 0x48}), 200u);
  EXPECT_EQ(encode_vlq(200), (Bytes{0x81, 0x48}));
  EXPECT_EQ(encode_vlq(0), (Bytes{0x00}));
  EXPECT_EQ(encode_vlq(0x7F), (Bytes{0x7F}));
  EXPECT_EQ(encode_vlq(0x80), (Bytes{0x81, 0x00}));
  EXPECT_EQ(encode_vlq(0x3FFF), (Bytes{0xFF, 0x7F}));
  EXPECT_EQ(encode_vlq(0x4000), (Bytes{0x81, 0x80, 0x00}));
  EXPECT_EQ(encode_vlq(kMaxVlq), (Bytes{0xFF, 0xFF, 0xFF, 0x7F}));
  EXPECT_THROW(encode_vlq(kMaxVlq + 1), Error);
}

TEST(Vlq, InverseAroundBoundaries) {
  std::vector<std::uint32_t> values;
  for (std::uint32_t b : {0x7Fu, 0x80u, 0x3FFFu, 0x4000u, 0x1FFFFFu, 0x200000u, kMaxVlq})
    for (int d = -3; d <= 3; ++d) {
      const long long v = static_cast<long long>(b) + d;
      if (v >= 0 && v <= kMaxVlq) values.push_back(static_cast<std::uint32_t>(v));
    }
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) values.push_back(rng() % (kMaxVlq + 1ull));
  for (auto v : values) {
    const auto enc = encode_vlq(v);
    EXPECT_EQ(decode_vlq(enc), v);
    EXPECT_EQ(enc.size(), v < 0x80 ? 1u : v < 0x4000 ? 2u : v < 0x200000 ? 3u : 4u);
  }
}

TEST(Smf, EmptyFileLayout) {
  const auto bytes = encode_smf({});
  const Bytes expect{0x4D, 0x54, 0x68, 0x64, 0, 0, 0, 6, 0, 0, 0, 1, 0x01, 0xE0,
                     'M',  'T',  'r',  'k',  0, 0, 0, 11,
                     0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,
                     0x00, 0xFF, 0x2F, 0x00};
  EXPECT_EQ(bytes, expect);
  const auto parsed = parse_smf(bytes);
  EXPECT_TRUE(parsed.notes.empty());
  EXPECT_EQ(parsed.document.tempo, 500000u);
  EXPECT_EQ(parsed.document.ticks_per_quarter, 480);
}

TEST(Smf, OneSecondNoteIsTick960) {
  const auto bytes = encode_smf({{60, 0.0, 1.0, 100}});
  // tempo (7) | 00 90 3C 64 | 87 40 80 3C 00 | 00 FF 2F 00
  const Bytes events(bytes.begin() + 29, bytes.end());
  EXPECT_EQ(events, (Bytes{0x00, 0x90, 0x3C, 0x64, 0x87, 0x40, 0x80, 0x3C, 0x00, 0x00, 0xFF,
                           0x2F, 0x00}));
  const auto parsed = parse_smf(bytes);
  ASSERT_EQ(parsed.document.tracks.size(), 1u);
  std::uint64_t off_tick = 0;
  for (const auto& e : parsed.document.tracks[0])
    if (e.kind == EventKind::kNoteOff) off_tick = e.tick;
  EXPECT_EQ(off_tick, 960u);
  ASSERT_EQ(parsed.notes.size(), 1u);
  EXPECT_EQ(parsed.notes[0], (NoteEvent{60, 0.0, 1.0, 100}));
}

TEST(Smf, RandomRoundTripsAndByteScan) {
  std::mt19937_64 rng(3);
  const double half_tick = 1.0 / (2.0 * 960.0);
  for (int i = 0; i < 100; ++i) {
    const auto notes = random_notes(rng);
    const auto bytes = encode_smf(notes);
    ASSERT_EQ(Bytes(bytes.begin(), bytes.begin() + 4), (Bytes{0x4D, 0x54, 0x68, 0x64}));
    const auto scanned = scan(bytes);
    EXPECT_TRUE(scanned.balanced);

    auto back = parse_smf(bytes).notes;
    ASSERT_EQ(back.size(), notes.size());
    auto sorted = notes;
    auto key = [](const NoteEvent& n) { return std::make_pair(n.pitch, n.start); };
    std::sort(sorted.begin(), sorted.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
    std::sort(back.begin(), back.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
    for (std::size_t k = 0; k < notes.size(); ++k) {
      EXPECT_EQ(back[k].pitch, sorted[k].pitch);
      EXPECT_EQ(back[k].velocity, sorted[k].velocity);
      EXPECT_LE(std::abs(back[k].start - sorted[k].start), half_tick + 1e-12);
      EXPECT_LE(std::abs(back[k].end - sorted[k].end), half_tick + 1e-12);
    }
  }
}

TEST(Smf, RunningStatusVelocityZeroAndTempoChange) {
  // Division 96; tempo 1 s/qn; running status; note-on vel 0 ends the note;
  // tempo halves at tick 96.
  Bytes track{0x00, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40,  //
              0x00, 0x90, 0x40, 0x50,                    //
              0x60, 0x40, 0x00,                          // running status, vel 0 at tick 96
              0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,  //
              0x00, 0x45, 0x20,                          // no status after a meta event
              0x60, 0x80, 0x45, 0x00, 0x00, 0xFF, 0x2F, 0x00};
  Bytes file{'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1, 0, 96, 'M', 'T', 'r', 'k'};
  put_be32(file, static_cast<std::uint32_t>(track.size()));
  file.insert(file.end(), track.begin(), track.end());
  EXPECT_THROW(parse_smf(file), Error);

  track = {0x00, 0xFF, 0x51, 0x03, 0x0F, 0x42, 0x40,  //
           0x00, 0x90, 0x40, 0x50,                    //
           0x60, 0x40, 0x00,                          // tick 96
           0x00, 0xFF, 0x51, 0x03, 0x07, 0xA1, 0x20,  //
           0x00, 0x90, 0x45, 0x20,                    //
           0x60, 0x80, 0x45, 0x00,                    // tick 192
           0x00, 0xFF, 0x2F, 0x00};
  file.resize(18);
  put_be32(file, static_cast<std::uint32_t>(track.size()));
  file.insert(file.end(), track.begin(), track.end());
  const auto parsed = parse_smf(file);
  ASSERT_EQ(parsed.notes.size(), 2u);
  EXPECT_EQ(parsed.notes[0], (NoteEvent{64, 0.0, 1.0, 0x50}));
  EXPECT_EQ(parsed.notes[1], (NoteEvent{69, 1.0, 1.5, 0x20}));
  EXPECT_EQ(parsed.document.tempo, 1000000u);
}

TEST(Smf, Errors) {
  auto code = [](const Bytes& b) {
    try {
      parse_smf(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  EXPECT_EQ(code({'R', 'I', 'F', 'F', 0, 0}), ErrorCode::kBadMagic);
  auto bytes = encode_smf({{60, 0.0, 1.0, 100}});
  EXPECT_EQ(code(Bytes(bytes.begin(), bytes.end() - 5)), ErrorCode::kTruncated);

  // Drop the note-off (4 bytes before end-of-track) and patch the length.
  Bytes dangling(bytes.begin(), bytes.end() - 9);
  dangling.insert(dangling.end(), {0x00, 0xFF, 0x2F, 0x00});
  const std::uint32_t len = static_cast<std::uint32_t>(dangling.size() - 22);
  for (int i = 0; i < 4; ++i) dangling[18 + i] = (len >> (8 * (3 - i))) & 0xFF;
  try {
    parse_smf(dangling);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDanglingNote);
    EXPECT_NE(std::string(e.what()).find("pitch 60"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("tick 0"), std::string::npos);
  }
  EXPECT_THROW(encode_smf({{60, 1.0, 0.5, 100}}), Error);
  EXPECT_THROW(encode_smf({{60, 0.0, 0.5, 0}}), Error);
}

TEST(Smf, WriteAndReadFile) {
  testutil::TempDir dir;
  const std::vector<NoteEvent> notes{{48, 0.5, 1.25, 100}, {72, 0.0, 2.0, 100}};
  const auto n = write_smf(notes, dir.path() / "x.mid");
  EXPECT_EQ(n, std::filesystem::file_size(dir.path() / "x.mid"));
  const auto back = read_smf(dir.path() / "x.mid").notes;
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].pitch, 72);
  EXPECT_EQ(back[1].pitch, 48);
  EXPECT_THROW(write_smf(notes, dir.path() / "missing" / "x.mid"), Error);
}

TEST(PianoRollFile, RoundTripAndErrors) {
  std::mt19937_64 rng(4);
  const auto roll = random_roll(rng, 13, 0.3);
  const auto bytes = encode_roll(roll);
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 8 + (88 * 13 + 7) / 8);
  // First payload byte holds cells 0..7, MSB first.
  std::uint8_t first = 0;
  for (int i = 0; i < 8; ++i) first |= roll.cells[i] << (7 - i);
  EXPECT_EQ(bytes[20], first);
  EXPECT_EQ(decode_roll(bytes), roll);

  testutil::TempDir dir;
  write_roll(roll, dir.path() / "r.prol");
  EXPECT_EQ(read_roll(dir.path() / "r.prol"), roll);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_roll(bad), Error);
  EXPECT_THROW(decode_roll(Bytes(bytes.begin(), bytes.end() - 1)), Error);
}
