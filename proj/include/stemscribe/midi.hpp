#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stemscribe/bytes.hpp"
#include "stemscribe/error.hpp"
#include "stemscribe/piano_roll.hpp"

namespace stemscribe::midi {

struct NoteEvent {
  int pitch = 60;
  double start = 0.0;
  double end = 0.0;
  int velocity = 100;

  void validate() const {
    if (pitch < kLowestPitch || pitch > kHighestPitch)
      throw Error(ErrorCode::kPitchOutOfRange, "pitch " + std::to_string(pitch));
    if (!(end > start) || !std::isfinite(start) || !std::isfinite(end))
      throw Error(ErrorCode::kInvalidArgument, "note end must follow start");
    if (velocity < 0 || velocity > 127)
      throw Error(ErrorCode::kInvalidArgument, "velocity " + std::to_string(velocity));
  }

  bool operator==(const NoteEvent&) const = default;
};

// ---- piano roll <-> notes --------------------------------------------------

// Each maximal run [a..b] of active frames on row r becomes
// pitch r+21, start a*dt, end (b+1)*dt. Ordered by start, then pitch.
inline std::vector<NoteEvent> roll_to_notes(const PianoRoll& roll, const FrameTiming& timing,
                                            int velocity = 100) {
  std::vector<NoteEvent> notes;
  for (std::size_t r = 0; r < kPitchRows; ++r) {
    std::size_t t = 0;
    while (t < roll.frames) {
      if (!roll.at(r, t)) {
        ++t;
        continue;
      }
      const std::size_t a = t;
      while (t < roll.frames && roll.at(r, t)) ++t;
      notes.push_back({static_cast<int>(r) + kLowestPitch, timing.frame_start(a),
                       timing.frame_start(t), velocity});
    }
  }
  std::stable_sort(notes.begin(), notes.end(), [](const NoteEvent& x, const NoteEvent& y) {
    return x.start != y.start ? x.start < y.start : x.pitch < y.pitch;
  });
  return notes;
}

// Frame t of row p-21 is active iff t*dt lies in [start, end).
inline PianoRoll notes_to_roll(const std::vector<NoteEvent>& notes, const FrameTiming& timing,
                               std::size_t total_frames) {
  PianoRoll roll(total_frames, timing.time_per_frame());
  const double dt = timing.time_per_frame();
  for (const auto& n : notes) {
    if (n.pitch < kLowestPitch || n.pitch > kHighestPitch)
      throw Error(ErrorCode::kPitchOutOfRange, "pitch " + std::to_string(n.pitch));
    const std::size_t row = static_cast<std::size_t>(n.pitch - kLowestPitch);
    const double lo = std::max(0.0, std::floor(n.start / dt) - 1.0);
    const double hi = std::min(static_cast<double>(total_frames), std::ceil(n.end / dt) + 1.0);
    for (auto t = static_cast<std::size_t>(lo); static_cast<double>(t) < hi; ++t) {
      const double time = timing.frame_start(t);
      if (time >= n.start && time < n.end) roll.at(row, t) = 1;
    }
  }
  return roll;
}

// ---- variable-length quantities -------------------------------------------

inline constexpr std::uint32_t kMaxVlq = (1u << 28) - 1;

inline void encode_vlq(std::uint32_t value, Bytes& out) {
  if (value > kMaxVlq)
    throw Error(ErrorCode::kInvalidArgument, "VLQ value exceeds 28 bits");
  unsigned char buf[4];
  int n = 0;
  buf[n++] = value & 0x7F;
  while (value >>= 7) buf[n++] = 0x80 | (value & 0x7F);
  while (n > 0) out.push_back(buf[--n]);
}

inline Bytes encode_vlq(std::uint32_t value) {
  Bytes out;
  encode_vlq(value, out);
  return out;
}

inline std::uint32_t read_vlq(ByteReader& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const std::uint8_t b = in.u8();
    v = (v << 7) | (b & 0x7F);
    if (!(b & 0x80)) return v;
  }
  throw Error(ErrorCode::kMalformedHeader, "VLQ longer than 4 bytes");
}

inline std::uint32_t decode_vlq(const Bytes& bytes) {
  ByteReader in(bytes, "VLQ");
  return read_vlq(in);
}

// ---- SMF documents ----------------------------------------------------------

enum class EventKind { kNoteOn, kNoteOff, kTempo, kEndOfTrack, kOther };

struct SmfEvent {
  std::uint32_t delta = 0;
  std::uint64_t tick = 0;  // absolute, filled in by the parser
  EventKind kind = EventKind::kOther;
  int channel = 0;
  int pitch = 0;
  int velocity = 0;
  std::uint32_t tempo = 0;
};

struct SmfDocument {
  int format = 0;
  int ticks_per_quarter = 480;
  std::uint32_t tempo = 500000;  // first tempo event, or the 120 BPM default
  std::vector<std::vector<SmfEvent>> tracks;
  std::size_t skipped_out_of_range = 0;
};

struct SmfOptions {
  int ticks_per_quarter = 480;
  std::uint32_t tempo = 500000;  // microseconds per quarter note
  int channel = 0;
};

inline std::uint64_t seconds_to_ticks(double sec, const SmfOptions& opt) {
  return static_cast<std::uint64_t>(
      std::llround(sec * opt.ticks_per_quarter * 1e6 / static_cast<double>(opt.tempo)));
}

// Format-0 file with one track: tempo meta, note events, end of track.
// At equal ticks note-offs precede note-ons.
inline Bytes encode_smf(const std::vector<NoteEvent>& notes, const SmfOptions& opt = {}) {
  if (opt.ticks_per_quarter <= 0 || opt.ticks_per_quarter > 0x7FFF)
    throw Error(ErrorCode::kInvalidArgument, "division must be in 1..32767");
  if (opt.tempo == 0 || opt.tempo > 0xFFFFFF)
    throw Error(ErrorCode::kInvalidArgument, "tempo must fit 24 bits");

  struct Raw {
    std::uint64_t tick;
    int order;  // 0 = off, 1 = on
    int pitch;
    int velocity;
  };
  std::vector<Raw> raw;
  raw.reserve(notes.size() * 2);
  for (const auto& n : notes) {
    n.validate();
    if (n.velocity == 0)
      throw Error(ErrorCode::kInvalidArgument, "velocity 0 would read back as a note-off");
    if (n.start < 0.0) throw Error(ErrorCode::kInvalidArgument, "negative note start");
    const std::uint64_t on = seconds_to_ticks(n.start, opt);
    const std::uint64_t off = std::max(seconds_to_ticks(n.end, opt), on + 1);
    raw.push_back({on, 1, n.pitch, n.velocity});
    raw.push_back({off, 0, n.pitch, 0});
  }
  std::stable_sort(raw.begin(), raw.end(), [](const Raw& a, const Raw& b) {
    return a.tick != b.tick ? a.tick < b.tick : a.order < b.order;
  });

  Bytes track;
  encode_vlq(0, track);
  track.insert(track.end(), {0xFF, 0x51, 0x03});
  track.push_back((opt.tempo >> 16) & 0xFF);
  track.push_back((opt.tempo >> 8) & 0xFF);
  track.push_back(opt.tempo & 0xFF);
  std::uint64_t prev = 0;
  for (const auto& e : raw) {
    encode_vlq(static_cast<std::uint32_t>(e.tick - prev), track);
    prev = e.tick;
    track.push_back((e.order ? 0x90 : 0x80) | (opt.channel & 0x0F));
    track.push_back(static_cast<unsigned char>(e.pitch));
    track.push_back(static_cast<unsigned char>(e.order ? e.velocity : 0));
  }
  encode_vlq(0, track);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  Bytes out{'M', 'T', 'h', 'd'};
  put_be32(out, 6);
  put_be16(out, 0);
  put_be16(out, 1);
  put_be16(out, static_cast<std::uint16_t>(opt.ticks_per_quarter));
  out.insert(out.end(), {'M', 'T', 'r', 'k'});
  put_be32(out, static_cast<std::uint32_t>(track.size()));
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

inline std::size_t write_smf(const std::vector<NoteEvent>& notes,
                             const std::filesystem::path& path, const SmfOptions& opt = {}) {
  return write_file(path, encode_smf(notes, opt));
}

struct ParsedMidi {
  SmfDocument document;
  std::vector<NoteEvent> notes;
};

namespace detail {

inline std::vector<SmfEvent> parse_track(const Bytes& bytes, std::size_t begin, std::size_t end) {
  ByteReader in(bytes, "MTrk", begin, end);
  std::vector<SmfEvent> events;
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  while (!in.done()) {
    SmfEvent ev;
    ev.delta = read_vlq(in);
    tick += ev.delta;
    ev.tick = tick;
    std::uint8_t status = in.peek();
    if (status & 0x80) {
      in.u8();
    } else {
      if (!running) throw Error(ErrorCode::kMalformedHeader, "data byte without running status");
      status = running;
    }
    if (status == 0xFF) {
      const std::uint8_t type = in.u8();
      const std::uint32_t len = read_vlq(in);
      in.need(len);
      const std::size_t at = in.pos();
      if (type == 0x51 && len == 3) {
        ev.kind = EventKind::kTempo;
        ev.tempo = (std::uint32_t(bytes[at]) << 16) | (std::uint32_t(bytes[at + 1]) << 8) |
                   bytes[at + 2];
      } else if (type == 0x2F) {
        ev.kind = EventKind::kEndOfTrack;
      }
      in.skip(len);
      running = 0;
    } else if (status == 0xF0 || status == 0xF7) {
      in.skip(read_vlq(in));
      running = 0;
    } else if (status >= 0x80 && status < 0xF0) {
      running = status;
      const int hi = status & 0xF0;
      ev.channel = status & 0x0F;
      const int d1 = in.u8() & 0x7F;
      const int d2 = (hi == 0xC0 || hi == 0xD0) ? 0 : (in.u8() & 0x7F);
      if (hi == 0x90 && d2 > 0) {
        ev.kind = EventKind::kNoteOn;
      } else if (hi == 0x80 || hi == 0x90) {
        ev.kind = EventKind::kNoteOff;
      }
      ev.pitch = d1;
      ev.velocity = d2;
    } else {
      throw Error(ErrorCode::kMalformedHeader, "unsupported status byte in track");
    }
    events.push_back(ev);
    if (ev.kind == EventKind::kEndOfTrack) break;
  }
  return events;
}

// Tick -> seconds under a piecewise-constant tempo map.
class TempoMap {
 public:
  TempoMap(const std::vector<std::vector<SmfEvent>>& tracks, int division)
      : division_(division) {
    std::map<std::uint64_t, std::uint32_t> changes;
    for (const auto& tr : tracks)
      for (const auto& e : tr)
        if (e.kind == EventKind::kTempo) changes[e.tick] = e.tempo;
    std::uint64_t tick = 0;
    double sec = 0.0;
    std::uint32_t tempo = 500000;
    points_.push_back({0, 0.0, tempo});
    for (const auto& [t, tp] : changes) {
      sec += span_seconds(t - tick, tempo);
      tick = t;
      tempo = tp;
      points_.push_back({tick, sec, tempo});
    }
  }

  double seconds(std::uint64_t tick) const {
    auto it = std::upper_bound(points_.begin(), points_.end(), tick,
                               [](std::uint64_t t, const Point& p) { return t < p.tick; });
    const Point& p = *std::prev(it);
    return p.sec + span_seconds(tick - p.tick, p.tempo);
  }

 private:
  struct Point {
    std::uint64_t tick;
    double sec;
    std::uint32_t tempo;
  };
  double span_seconds(std::uint64_t ticks, std::uint32_t tempo) const {
    return static_cast<double>(ticks) * tempo / (1e6 * division_);
  }
  int division_;
  std::vector<Point> points_;
};

}  // namespace detail

// Accepts format 0 and 1 with metrical division. Notes are paired FIFO per
// (channel, pitch); pitches outside 21..108 are counted and dropped.
inline ParsedMidi parse_smf(const Bytes& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "MThd", 4) != 0)
    throw Error(ErrorCode::kBadMagic, "SMF does not start with MThd");
  ByteReader in(bytes, "MThd", 4);
  const std::uint32_t header_len = in.be32();
  if (header_len < 6) throw Error(ErrorCode::kMalformedHeader, "MThd length below 6");
  in.need(header_len);
  ParsedMidi out;
  SmfDocument& doc = out.document;
  doc.format = in.be16();
  const std::uint16_t ntracks = in.be16();
  const std::uint16_t division = in.be16();
  in.skip(header_len - 6);
  if (doc.format > 1)
    throw Error(ErrorCode::kUnsupportedCodec, "SMF format " + std::to_string(doc.format));
  if (division & 0x8000 || division == 0)
    throw Error(ErrorCode::kUnsupportedCodec, "SMPTE time division");
  doc.ticks_per_quarter = division;

  for (std::uint16_t k = 0; k < ntracks; ++k) {
    in.need(8);
    const std::size_t at = in.pos();
    const bool is_track = std::memcmp(bytes.data() + at, "MTrk", 4) == 0;
    in.skip(4);
    const std::uint32_t len = in.be32();
    in.need(len);
    if (is_track) doc.tracks.push_back(detail::parse_track(bytes, in.pos(), in.pos() + len));
    else --k;  // unknown chunk, skip without counting
    in.skip(len);
  }

  bool first_tempo = true;
  for (const auto& tr : doc.tracks)
    for (const auto& e : tr)
      if (e.kind == EventKind::kTempo && first_tempo) {
        doc.tempo = e.tempo;
        first_tempo = false;
      }

  struct Flat {
    std::uint64_t tick;
    std::size_t seq;
    const SmfEvent* ev;
  };
  std::vector<Flat> flat;
  std::size_t seq = 0;
  for (const auto& tr : doc.tracks)
    for (const auto& e : tr)
      if (e.kind == EventKind::kNoteOn || e.kind == EventKind::kNoteOff)
        flat.push_back({e.tick, seq++, &e});
  std::stable_sort(flat.begin(), flat.end(),
                   [](const Flat& a, const Flat& b) { return a.tick < b.tick; });

  const detail::TempoMap tempo_map(doc.tracks, doc.ticks_per_quarter);
  std::map<std::pair<int, int>, std::deque<std::pair<std::uint64_t, int>>> open;
  for (const auto& f : flat) {
    const SmfEvent& e = *f.ev;
    auto& q = open[{e.channel, e.pitch}];
    if (e.kind == EventKind::kNoteOn) {
      q.emplace_back(e.tick, e.velocity);
    } else if (!q.empty()) {
      const auto [on_tick, vel] = q.front();
      q.pop_front();
      if (e.pitch < kLowestPitch || e.pitch > kHighestPitch) {
        ++doc.skipped_out_of_range;
        continue;
      }
      out.notes.push_back({e.pitch, tempo_map.seconds(on_tick), tempo_map.seconds(e.tick), vel});
    }
  }
  for (const auto& [key, q] : open)
    if (!q.empty())
      throw Error(ErrorCode::kDanglingNote, "note-on without note-off: pitch " +
                                                std::to_string(key.second) + " at tick " +
                                                std::to_string(q.front().first));
  std::stable_sort(out.notes.begin(), out.notes.end(), [](const NoteEvent& x, const NoteEvent& y) {
    return x.start != y.start ? x.start < y.start : x.pitch < y.pitch;
  });
  return out;
}

inline ParsedMidi read_smf(const std::filesystem::path& path) { return parse_smf(read_file(path)); }

}  // namespace stemscribe::midi
