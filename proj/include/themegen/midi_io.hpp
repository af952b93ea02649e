#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "themegen/piece.hpp"

namespace themegen {

// Which named MIDI tracks feed which role.  Comparison is case-insensitive;
// tracks matching neither name are ignored (e.g. secondary feature tracks).
struct TrackMap {
  std::string melody = "MELODY";
  std::string accomp = "PIANO";
};

struct MidiLoadReport {
  int clamped_values = 0;
  int unmatched_note_ons = 0;
  bool inserted_default_tempo = false;
  std::vector<std::string> ignored_tracks;
};

// Reads a format 0/1 standard MIDI file onto the sixteenth-note grid
// (nearest-neighbour rounding; zero-length notes become one subbeat).
// Only 4/4 material is supported: any other time signature raises DataError.
// The result is canonical (sorted, clamped, tempo on the grid).
Piece load_midi(const std::filesystem::path& file, const TrackMap& tracks = {},
                MidiLoadReport* report = nullptr);

// Writes a format 1 file: conductor track (time signature, tempo map, key
// signatures) plus one named track per role at 480 ticks per quarter.
void save_midi(const std::filesystem::path& file, const Piece& piece,
               const TrackMap& tracks = {});

}  // namespace themegen
