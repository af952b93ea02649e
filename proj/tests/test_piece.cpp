#include <doctest.h>

#include "themegen/piece.hpp"

using namespace themegen;

TEST_CASE("tempo grid snapping") {
  CHECK(snap_tempo_to_grid(17) == 17);
  CHECK(snap_tempo_to_grid(119) == 119);
  CHECK(snap_tempo_to_grid(120) == 119);  // 119 and 122 straddle 120; 119 is nearer
  CHECK(snap_tempo_to_grid(121) == 122);
  CHECK(snap_tempo_to_grid(242) == 242);
  CHECK(snap_tempo_to_grid(5) == 17);     // clamped to the lowest bin
  CHECK(snap_tempo_to_grid(999) == 242);  // clamped to the highest bin
}

TEST_CASE("canonicalize clamps, sorts and deduplicates") {
  Piece p;
  p.notes = {
      {Track::Accompaniment, 16, 60, 64, 4},
      {Track::Melody, 16, 60, 64, 4},
      {Track::Melody, 0, 140, 200, 99},  // pitch/velocity/duration out of range
      {Track::Melody, 16, 60, 64, 4},    // duplicate
  };
  p.tempo = {{18, 120}, {0, 119}, {0, 121}};  // unsorted; same-onset keeps the later entry

  const int clamped = canonicalize(p);
  CHECK(clamped >= 3);

  REQUIRE(p.notes.size() == 3);
  CHECK(p.notes[0].pitch == 127);
  CHECK(p.notes[0].velocity == 126);
  CHECK(p.notes[0].duration == 64);
  CHECK(p.notes[1].track == Track::Melody);      // melody sorts before accompaniment
  CHECK(p.notes[2].track == Track::Accompaniment);

  // 18 subbeats sits exactly between beats 4 and 5; nearest-with-ties-up gives
  // 20.  121 bpm snaps to grid value 122.
  REQUIRE(p.tempo.size() == 2);
  CHECK(p.tempo[0] == TempoEvent{0, 122});
  CHECK(p.tempo[1] == TempoEvent{20, 119});
}

TEST_CASE("canonicalize drops repeated tempo values") {
  Piece p;
  p.tempo = {{0, 119}, {16, 119}, {32, 140}};
  canonicalize(p);
  REQUIRE(p.tempo.size() == 2);
  CHECK(p.tempo[0] == TempoEvent{0, 119});
  CHECK(p.tempo[1] == TempoEvent{32, 140});
}

TEST_CASE("bar count covers trailing note tails") {
  Piece p;
  p.notes = {{Track::Melody, 15, 60, 64, 2}};  // ends at subbeat 17
  CHECK(p.bar_count() == 2);
  CHECK(p.end_subbeat() == 17);

  Piece empty;
  CHECK(empty.bar_count() == 0);
}

TEST_CASE("key parsing and naming") {
  CHECK(parse_key("C:maj") == Key{0, Mode::Major});
  CHECK(parse_key("F#:min") == Key{6, Mode::Minor});
  CHECK(parse_key("Eb:maj") == Key{3, Mode::Major});
  CHECK(parse_key("Cb:maj") == Key{11, Mode::Major});
  CHECK(!parse_key("H:maj").has_value());
  CHECK(!parse_key("C").has_value());
  CHECK(key_name(Key{6, Mode::Minor}) == "F#:min");
  CHECK(key_name(Key{0, Mode::Major}) == "C:maj");
}

TEST_CASE("key estimation recovers a plain scale") {
  Piece p;
  // C major scale, one bar per note.
  int onset = 0;
  for (int pitch : {60, 62, 64, 65, 67, 69, 71, 72}) {
    p.notes.push_back({Track::Melody, onset, pitch, 64, 8});
    onset += 16;
  }
  const Key k = estimate_key(p);
  CHECK(k.tonic == 0);
  CHECK(k.mode == Mode::Major);

  Piece minor;
  onset = 0;
  for (int pitch : {57, 59, 60, 62, 64, 65, 68, 69}) {  // A harmonic-ish minor
    minor.notes.push_back({Track::Melody, onset, pitch, 64, 8});
    onset += 16;
  }
  const Key km = estimate_key(minor);
  CHECK(km.tonic == 9);
  CHECK(km.mode == Mode::Minor);
}

TEST_CASE("key change filter") {
  Piece stable;
  stable.id = "stable";
  stable.key_events = {{0, Key{0, Mode::Major}}};

  Piece shifting;
  shifting.id = "shifting";
  shifting.key_events = {{0, Key{0, Mode::Major}}, {64, Key{7, Mode::Major}}};

  std::vector<std::string> dropped;
  auto kept = filter_key_changes({stable, shifting}, &dropped);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].id == "stable");
  REQUIRE(dropped.size() == 1);
  CHECK(dropped[0] == "shifting");
}

TEST_CASE("theme span note selection") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4},
             {Track::Melody, 16, 62, 64, 4},
             {Track::Accompaniment, 18, 48, 50, 2},
             {Track::Melody, 32, 64, 64, 4}};
  auto bar1 = notes_in_bars(p, {1, 2});
  REQUIRE(bar1.size() == 2);
  CHECK(bar1[0].pitch == 62);
  CHECK(bar1[1].pitch == 48);
  CHECK(melody_notes(p).size() == 3);
}
