#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace themegen {

// Time grid: 4/4 bars only, sixteen subbeats per bar (sixteenth-note grid).
inline constexpr int kSubbeatsPerBeat = 4;
inline constexpr int kBeatsPerBar = 4;
inline constexpr int kSubbeatsPerBar = kSubbeatsPerBeat * kBeatsPerBar;

inline constexpr int kMinPitch = 1;
inline constexpr int kMaxPitch = 127;
inline constexpr int kMinVelocity = 1;
inline constexpr int kMaxVelocity = 126;
inline constexpr int kMinDuration = 1;  // subbeats
inline constexpr int kMaxDuration = 64;

// Tempo is kept on a coarse grid: bpm = kTempoMin + k * kTempoStep, k in [0, kTempoBins).
inline constexpr int kTempoMin = 17;
inline constexpr int kTempoStep = 3;
inline constexpr int kTempoBins = 76;
inline constexpr int kTempoMax = kTempoMin + kTempoStep * (kTempoBins - 1);  // 242

enum class Track : std::uint8_t { Melody = 0, Accompaniment = 1 };

const char* track_name(Track t);

struct Note {
  Track track = Track::Melody;
  int onset = 0;     // subbeats from piece start, >= 0
  int pitch = 60;    // [1, 127]
  int velocity = 64; // [1, 126]
  int duration = 4;  // subbeats, [1, 64]

  friend bool operator==(const Note&, const Note&) = default;
};

// Canonical note order: time, then melody before accompaniment, then ascending
// pitch / duration / velocity.
bool note_less(const Note& a, const Note& b);

struct TempoEvent {
  int onset = 0;  // subbeats, beat-aligned after canonicalize()
  int bpm = 119;  // on the tempo grid after canonicalize()

  friend bool operator==(const TempoEvent&, const TempoEvent&) = default;
};

enum class Mode : std::uint8_t { Major = 0, Minor = 1 };

struct Key {
  int tonic = 0;  // pitch class 0..11, 0 = C
  Mode mode = Mode::Major;

  friend bool operator==(const Key&, const Key&) = default;
};

std::string key_name(const Key& k);
std::optional<Key> parse_key(const std::string& text);  // "C:maj", "F#:min", "Eb:maj"

// Half-open bar interval [begin, end).
struct BarSpan {
  int begin = 0;
  int end = 0;

  int length() const { return end - begin; }
  friend bool operator==(const BarSpan&, const BarSpan&) = default;
};

struct Piece {
  std::string id;
  std::vector<Note> notes;             // canonical order after canonicalize()
  std::vector<TempoEvent> tempo;       // sorted, deduplicated
  std::vector<std::pair<int, Key>> key_events;  // (onset subbeat, key), sorted
  std::optional<Key> key;              // annotated or estimated overall key
  std::vector<BarSpan> theme_spans;    // known theme occurrences, bar-aligned

  int end_subbeat() const;  // one past the last note end / event onset
  int bar_count() const;    // ceil(end / 16), at least 0
  bool has_key_change() const;

  friend bool operator==(const Piece&, const Piece&) = default;
};

// Clamp ranges, snap tempo to the grid and to whole beats, sort and deduplicate
// everything.  Returns the number of values that had to be clamped (useful for
// warnings on messy input).
int canonicalize(Piece& piece);

int snap_tempo_to_grid(double bpm);

// Duration-weighted pitch-class profile correlated against major/minor key
// templates; used when no key annotation is available.
Key estimate_key(const Piece& piece);

// Drops pieces whose key annotations change mid-piece.  Returns kept pieces.
std::vector<Piece> filter_key_changes(std::vector<Piece> corpus,
                                      std::vector<std::string>* dropped_ids = nullptr);

std::vector<Note> notes_in_bars(const Piece& piece, BarSpan span);
std::vector<Note> melody_notes(const Piece& piece);

}  // namespace themegen
