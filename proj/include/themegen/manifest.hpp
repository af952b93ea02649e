#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "themegen/piece.hpp"

namespace themegen {

// One corpus entry: where the MIDI lives and which named tracks carry the
// melody / accompaniment.  Paths are relative to the manifest file.
struct ManifestEntry {
  std::string id;
  std::string path;
  std::string melody_track = "MELODY";
  std::string accomp_track = "PIANO";
  std::optional<Key> key;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;

  std::filesystem::path resolve(const ManifestEntry& e) const { return base_dir / e.path; }
};

Manifest read_manifest(const std::filesystem::path& file);
void write_manifest(const std::filesystem::path& file, const Manifest& m);

// Ground-truth / predicted theme locations, as beat indices from piece start.
// Bar-aligned two-bar spans correspond to 8 consecutive beats each.
struct BeatLabels {
  std::map<std::string, std::vector<int>> beats_by_id;
};

BeatLabels read_beat_labels(const std::filesystem::path& file);
void write_beat_labels(const std::filesystem::path& file, const BeatLabels& labels);

std::vector<int> spans_to_beats(const std::vector<BarSpan>& spans);

// Covering bar spans of the labelled beats: each maximal run of consecutive
// beats becomes one span, and overlapping covers are merged.
std::vector<BarSpan> beats_to_spans(const std::vector<int>& beats);

// Generic key=value line splitter shared by the text formats above.
std::map<std::string, std::string> parse_kv_line(const std::string& line);

}  // namespace themegen
