#include "themegen/midi_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <map>

#include "themegen/errors.hpp"

namespace themegen {
namespace {

constexpr int kTicksPerQuarter = 480;
constexpr int kTicksPerSubbeat = kTicksPerQuarter / kSubbeatsPerBeat;

bool iequals(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i])))
      return false;
  }
  return true;
}

// --- byte-level reader ------------------------------------------------------

struct Reader {
  const std::vector<std::uint8_t>& data;
  std::size_t pos = 0;

  bool eof() const { return pos >= data.size(); }

  std::uint8_t u8() {
    if (pos >= data.size()) throw DataError("truncated MIDI file");
    return data[pos++];
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>((u8() << 8) | u8()); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::uint32_t vlq() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7f);
      if (!(b & 0x80)) return v;
    }
    throw DataError("over-long variable-length quantity");
  }
  std::string bytes(std::uint32_t n) {
    if (pos + n > data.size()) throw DataError("truncated MIDI chunk");
    std::string s(reinterpret_cast<const char*>(&data[pos]), n);
    pos += n;
    return s;
  }
  void skip(std::uint32_t n) {
    if (pos + n > data.size()) throw DataError("truncated MIDI chunk");
    pos += n;
  }
};

struct RawNote {
  long on_tick;
  long off_tick;
  int pitch;
  int velocity;
};

struct RawTrack {
  std::string name;
  std::vector<RawNote> notes;
  int unmatched_ons = 0;
};

struct RawFile {
  int tpq = kTicksPerQuarter;
  std::vector<RawTrack> tracks;
  std::vector<std::pair<long, double>> tempo;           // tick, bpm
  std::vector<std::pair<long, Key>> keys;               // tick, key
};

Key key_from_signature(int sharps, bool minor) {
  // Walk the circle of fifths from C (major) or A (minor).
  const int base = minor ? 9 : 0;
  return Key{((base + sharps * 7) % 12 + 12) % 12, minor ? Mode::Minor : Mode::Major};
}

void parse_track(Reader& r, std::uint32_t length, RawFile& file) {
  const std::size_t end = r.pos + length;
  RawTrack track;
  long tick = 0;
  std::uint8_t status = 0;
  // FIFO per pitch so overlapping repeats pair in order.
  std::map<int, std::deque<std::pair<long, int>>> open;

  while (r.pos < end) {
    tick += r.vlq();
    std::uint8_t b = r.u8();
    if (b < 0x80) {
      if (status == 0) throw DataError("MIDI data byte without running status");
      --r.pos;
      b = status;
    } else {
      status = b;
    }

    const std::uint8_t type = b & 0xf0;
    if (type == 0x90 || type == 0x80) {
      const int pitch = r.u8();
      const int velocity = r.u8();
      if (type == 0x90 && velocity > 0) {
        open[pitch].push_back({tick, velocity});
      } else {
        auto it = open.find(pitch);
        if (it != open.end() && !it->second.empty()) {
          auto [on_tick, on_vel] = it->second.front();
          it->second.pop_front();
          track.notes.push_back({on_tick, tick, pitch, on_vel});
        }
      }
    } else if (type == 0xa0 || type == 0xb0 || type == 0xe0) {
      r.skip(2);
    } else if (type == 0xc0 || type == 0xd0) {
      r.skip(1);
    } else if (b == 0xff) {
      const std::uint8_t meta = r.u8();
      const std::uint32_t len = r.vlq();
      if (meta == 0x03 && track.name.empty()) {
        track.name = r.bytes(len);
      } else if (meta == 0x51 && len == 3) {
        const std::uint32_t uspq = (r.u8() << 16) | (r.u8() << 8) | r.u8();
        if (uspq == 0) throw DataError("zero microseconds per quarter");
        file.tempo.push_back({tick, 60e6 / uspq});
      } else if (meta == 0x58 && len >= 2) {
        const int nn = r.u8();
        const int dd = r.u8();
        r.skip(len - 2);
        if (nn != 4 || dd != 2) {
          throw DataError("unsupported time signature " + std::to_string(nn) + "/" +
                          std::to_string(1 << dd) + " (only 4/4 input is handled)");
        }
      } else if (meta == 0x59 && len >= 2) {
        const int sf = static_cast<std::int8_t>(r.u8());
        const int mi = r.u8();
        r.skip(len - 2);
        file.keys.push_back({tick, key_from_signature(sf, mi == 1)});
      } else {
        r.skip(len);
      }
      if (meta == 0x2f) break;  // end of track
    } else if (b == 0xf0 || b == 0xf7) {
      r.skip(r.vlq());
    } else {
      throw DataError("unsupported MIDI event 0x" + std::to_string(b));
    }
  }
  for (const auto& [pitch, stack] : open) track.unmatched_ons += static_cast<int>(stack.size());
  r.pos = end;
  file.tracks.push_back(std::move(track));
}

RawFile parse_midi(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open MIDI file: " + path.string());
  std::vector<std::uint8_t> data((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  Reader r{data};

  if (r.bytes(4) != "MThd") throw DataError("not a MIDI file: " + path.string());
  const std::uint32_t header_len = r.u32();
  const int format = r.u16();
  const int ntrks = r.u16();
  const int division = r.u16();
  r.skip(header_len - 6);
  if (format != 0 && format != 1) {
    throw DataError("unsupported MIDI format " + std::to_string(format));
  }
  if (division & 0x8000) throw DataError("SMPTE time division is not supported");
  if (division == 0) throw DataError("zero ticks per quarter");

  RawFile file;
  file.tpq = division;
  for (int i = 0; i < ntrks && !r.eof(); ++i) {
    if (r.bytes(4) != "MTrk") throw DataError("missing MTrk chunk");
    parse_track(r, r.u32(), file);
  }
  return file;
}

int to_subbeat(long tick, int tpq) {
  return static_cast<int>(std::llround(tick * double(kSubbeatsPerBeat) / tpq));
}

// --- byte-level writer ------------------------------------------------------

struct TrackBuffer {
  std::vector<std::uint8_t> bytes;
  long last_tick = 0;

  void vlq(long delta) {
    std::uint8_t buf[4];
    int n = 0;
    buf[n++] = delta & 0x7f;
    while (delta >>= 7) buf[n++] = 0x80 | (delta & 0x7f);
    while (n--) bytes.push_back(buf[n]);
  }
  void event(long tick, std::initializer_list<std::uint8_t> payload) {
    vlq(tick - last_tick);
    last_tick = tick;
    bytes.insert(bytes.end(), payload);
  }
  void meta(long tick, std::uint8_t type, const std::string& payload) {
    vlq(tick - last_tick);
    last_tick = tick;
    bytes.push_back(0xff);
    bytes.push_back(type);
    vlq(static_cast<long>(payload.size()));
    bytes.insert(bytes.end(), payload.begin(), payload.end());
  }
};

void write_chunk(std::ofstream& out, const char* tag, const std::vector<std::uint8_t>& body) {
  out.write(tag, 4);
  const std::uint32_t n = static_cast<std::uint32_t>(body.size());
  for (int i = 3; i >= 0; --i) out.put(static_cast<char>((n >> (8 * i)) & 0xff));
  out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
}

}  // namespace

Piece load_midi(const std::filesystem::path& file, const TrackMap& tracks,
                MidiLoadReport* report) {
  const RawFile raw = parse_midi(file);
  MidiLoadReport local;
  MidiLoadReport& rep = report ? *report : local;

  Piece piece;
  piece.id = file.stem().string();

  for (const RawTrack& t : raw.tracks) {
    Track role;
    if (iequals(t.name, tracks.melody)) {
      role = Track::Melody;
    } else if (iequals(t.name, tracks.accomp)) {
      role = Track::Accompaniment;
    } else {
      if (!t.notes.empty()) rep.ignored_tracks.push_back(t.name);
      rep.unmatched_note_ons += t.unmatched_ons;
      continue;
    }
    rep.unmatched_note_ons += t.unmatched_ons;
    for (const RawNote& n : t.notes) {
      Note note;
      note.track = role;
      note.onset = to_subbeat(n.on_tick, raw.tpq);
      note.duration = std::max(1, to_subbeat(n.off_tick, raw.tpq) - note.onset);
      note.pitch = n.pitch;
      note.velocity = n.velocity;
      piece.notes.push_back(note);
    }
  }

  for (const auto& [tick, bpm] : raw.tempo) {
    piece.tempo.push_back({to_subbeat(tick, raw.tpq), snap_tempo_to_grid(bpm)});
  }
  std::stable_sort(piece.tempo.begin(), piece.tempo.end(),
                   [](const TempoEvent& a, const TempoEvent& b) { return a.onset < b.onset; });
  if (piece.tempo.empty() || piece.tempo.front().onset > 0) {
    // Files are at the MIDI default of 120 bpm until the first tempo event.
    piece.tempo.insert(piece.tempo.begin(), {0, snap_tempo_to_grid(120)});
    rep.inserted_default_tempo = true;
  }

  for (const auto& [tick, key] : raw.keys) {
    piece.key_events.push_back({to_subbeat(tick, raw.tpq), key});
  }

  rep.clamped_values += canonicalize(piece);
  return piece;
}

void save_midi(const std::filesystem::path& file, const Piece& piece, const TrackMap& tracks) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw DataError("cannot write MIDI file: " + file.string());

  // Header: format 1, three tracks, fixed resolution.
  const std::vector<std::uint8_t> header = {
      0, 1, 0, 3, static_cast<std::uint8_t>(kTicksPerQuarter >> 8),
      static_cast<std::uint8_t>(kTicksPerQuarter & 0xff)};
  write_chunk(out, "MThd", header);

  TrackBuffer conductor;
  conductor.meta(0, 0x58, std::string({4, 2, 24, 8}));  // 4/4
  for (const auto& [onset, key] : piece.key_events) {
    int sharps = 0;
    // Invert the circle-of-fifths mapping used on load.
    for (int sf = -7; sf <= 7; ++sf) {
      if (key_from_signature(sf, key.mode == Mode::Minor) == key) {
        sharps = sf;
        break;
      }
    }
    conductor.meta(long(onset) * kTicksPerSubbeat, 0x59,
                   std::string({static_cast<char>(sharps),
                                static_cast<char>(key.mode == Mode::Minor ? 1 : 0)}));
  }
  for (const TempoEvent& t : piece.tempo) {
    const std::uint32_t uspq = static_cast<std::uint32_t>(std::llround(60e6 / t.bpm));
    conductor.meta(long(t.onset) * kTicksPerSubbeat, 0x51,
                   std::string({static_cast<char>((uspq >> 16) & 0xff),
                                static_cast<char>((uspq >> 8) & 0xff),
                                static_cast<char>(uspq & 0xff)}));
  }
  conductor.meta(conductor.last_tick, 0x2f, "");
  write_chunk(out, "MTrk", conductor.bytes);

  struct Edge {
    long tick;
    bool on;
    int pitch;
    int velocity;
  };
  for (Track role : {Track::Melody, Track::Accompaniment}) {
    TrackBuffer buf;
    buf.meta(0, 0x03, role == Track::Melody ? tracks.melody : tracks.accomp);
    std::vector<Edge> edges;
    for (const Note& n : piece.notes) {
      if (n.track != role) continue;
      edges.push_back({long(n.onset) * kTicksPerSubbeat, true, n.pitch, n.velocity});
      edges.push_back({long(n.onset + n.duration) * kTicksPerSubbeat, false, n.pitch, 0});
    }
    std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
      return std::tuple(a.tick, a.on, a.pitch) < std::tuple(b.tick, b.on, b.pitch);
    });
    const std::uint8_t channel = role == Track::Melody ? 0 : 1;
    for (const Edge& e : edges) {
      buf.event(e.tick, {static_cast<std::uint8_t>((e.on ? 0x90 : 0x80) | channel),
                         static_cast<std::uint8_t>(e.pitch),
                         static_cast<std::uint8_t>(e.on ? e.velocity : 64)});
    }
    buf.meta(buf.last_tick, 0x2f, "");
    write_chunk(out, "MTrk", buf.bytes);
  }
  if (!out) throw DataError("short write: " + file.string());
}

}  // namespace themegen
