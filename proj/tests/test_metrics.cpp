#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "themegen/metrics.hpp"

using namespace themegen;
namespace fs = std::filesystem;

namespace {

// Deterministic stand-in embedder: summarizes a melody as (weighted pitch sum,
// total duration, event count).  Identical melodies embed identically, so
// zero-distance oracles hold without any trained network.
Row<double> toy_embed(const MelodySeq& melody) {
  Row<double> v = Row<double>::Zero(3);
  for (std::size_t i = 0; i < melody.size(); ++i) {
    v(0) += melody[i].pitch * double(i + 1);
    v(1) += melody[i].duration;
  }
  v(2) = static_cast<double>(melody.size());
  return v;
}

Piece bar_piece(const std::vector<std::vector<int>>& onsets_per_bar, int pitch = 60) {
  Piece p;
  for (std::size_t bar = 0; bar < onsets_per_bar.size(); ++bar) {
    for (int onset : onsets_per_bar[bar]) {
      p.notes.push_back(
          {Track::Melody, static_cast<int>(bar) * kSubbeatsPerBar + onset, pitch, 64, 2});
    }
  }
  canonicalize(p);
  return p;
}

}  // namespace

TEST_CASE("grooving consistency is 1 for identical bars") {
  const Piece p = bar_piece({{0, 4, 8, 12}, {0, 4, 8, 12}, {0, 4, 8, 12}});
  CHECK(grooving_consistency(p) == doctest::Approx(1.0));
}

TEST_CASE("grooving consistency counts differing onset bits") {
  // Bars differ in exactly one of sixteen positions.
  const Piece p = bar_piece({{0}, {0, 8}});
  CHECK(grooving_consistency(p) == doctest::Approx(15.0 / 16.0));

  const Piece q = bar_piece({{0, 2}, {4, 6}});  // disjoint onsets: 4 bits differ
  CHECK(grooving_consistency(q) == doctest::Approx(12.0 / 16.0));
}

TEST_CASE("pitch class consistency ignores octave and empty bars") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4},                       // C4, bar 0
             {Track::Melody, 2 * kSubbeatsPerBar, 72, 64, 4}};    // C5, bar 2 (bar 1 empty)
  canonicalize(p);
  CHECK(pitch_class_consistency(p) == doctest::Approx(1.0));

  Piece mixed;
  mixed.notes = {{Track::Melody, 0, 60, 64, 4},
                 {Track::Melody, 4, 64, 64, 4},
                 {Track::Melody, kSubbeatsPerBar, 60, 64, 4},
                 {Track::Melody, kSubbeatsPerBar + 4, 67, 64, 4}};
  canonicalize(mixed);
  // Bar histograms: {C: .5, E: .5} vs {C: .5, G: .5} -> overlap .5.
  CHECK(pitch_class_consistency(mixed) == doctest::Approx(0.5));

  Piece single;
  single.notes = {{Track::Melody, 0, 60, 64, 4}};
  CHECK(std::isnan(pitch_class_consistency(single)));
}

TEST_CASE("melody inconsistency is zero when the opening recurs late") {
  Piece p;
  // Opening two bars: a short motif.
  p.notes = {{Track::Melody, 0, 60, 64, 4}, {Track::Melody, 8, 64, 64, 4}};
  // Exact copy at bar 40.
  p.notes.push_back({Track::Melody, 40 * kSubbeatsPerBar, 60, 64, 4});
  p.notes.push_back({Track::Melody, 40 * kSubbeatsPerBar + 8, 64, 64, 4});
  // A decoy at bar 34.
  p.notes.push_back({Track::Melody, 34 * kSubbeatsPerBar, 72, 90, 8});
  // Pad the piece out to 64 bars.
  p.notes.push_back({Track::Accompaniment, 63 * kSubbeatsPerBar, 40, 50, 4});
  canonicalize(p);

  CHECK(melody_inconsistency(p, toy_embed) == doctest::Approx(0.0));
}

TEST_CASE("melody inconsistency is NaN without melody on either side") {
  Piece p;
  p.notes = {{Track::Accompaniment, 0, 40, 50, 4}};
  CHECK(std::isnan(melody_inconsistency(p, toy_embed)));

  Piece only_opening;
  only_opening.notes = {{Track::Melody, 0, 60, 64, 4}};
  CHECK(std::isnan(melody_inconsistency(only_opening, toy_embed)));
}

TEST_CASE("theme inconsistency measures pairwise spread of restatements") {
  Piece p;
  auto put = [&p](int bar, int pitch) {
    p.notes.push_back({Track::Melody, bar * kSubbeatsPerBar, pitch, 64, 4});
  };
  put(0, 60);
  put(4, 60);
  put(8, 60);
  p.theme_spans = {{0, 2}, {4, 6}, {8, 10}};
  canonicalize(p);
  CHECK(theme_inconsistency(p, toy_embed) == doctest::Approx(0.0));

  // Perturb one statement: with embeddings a, a, b the mean pairwise
  // distance is (0 + d + d) / 3.
  Piece q = p;
  q.notes[1].pitch = 62;
  const double d = melody_distance(toy_embed({{60, 4}}), toy_embed({{62, 4}}));
  CHECK(theme_inconsistency(q, toy_embed) == doctest::Approx(2.0 * d / 3.0));

  Piece none;
  CHECK(std::isnan(theme_inconsistency(none, toy_embed)));
}

TEST_CASE("theme uncontrollability compares statements to the condition") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4}, {Track::Melody, 4 * kSubbeatsPerBar, 62, 64, 4}};
  canonicalize(p);
  p.theme_spans = {{0, 2}, {4, 6}};

  const MelodySeq condition = {{60, 4}};
  const double d = melody_distance(toy_embed(condition), toy_embed({{62, 4}}));
  CHECK(theme_uncontrollability(p, toy_embed, condition) == doctest::Approx(d / 2.0));
  CHECK(std::isnan(theme_uncontrollability(p, toy_embed, {})));
}

TEST_CASE("theme gaps are measured between consecutive starts") {
  Piece p;
  p.theme_spans = {{0, 2}, {9, 11}, {16, 18}};
  const std::vector<double> gaps = theme_gap_bars(p);
  REQUIRE(gaps.size() == 2);
  CHECK(gaps[0] == doctest::Approx(9.0));
  CHECK(gaps[1] == doctest::Approx(7.0));

  Piece single;
  single.theme_spans = {{0, 2}};
  CHECK(theme_gap_bars(single).empty());
}

TEST_CASE("distance curve marks melody-free windows as NaN") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4},                      // opening
             {Track::Melody, 2 * kSubbeatsPerBar, 60, 64, 4},    // window 1: identical
             {Track::Accompaniment, 4 * kSubbeatsPerBar, 40, 50, 4},  // window 2: no melody
             {Track::Melody, 6 * kSubbeatsPerBar, 67, 64, 4},    // window 3: different
             {Track::Accompaniment, 7 * kSubbeatsPerBar + 12, 40, 50, 4}};  // pad to 8 bars
  canonicalize(p);

  const std::vector<double> curve = melody_distance_curve(p, toy_embed);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0] == doctest::Approx(0.0));
  CHECK(std::isnan(curve[1]));
  CHECK(curve[2] > 0.0);

  const fs::path file = fs::temp_directory_path() / "themegen_curve.csv";
  write_distance_curve(file, curve);
  std::ifstream in(file);
  std::string header, l1, l2, l3;
  std::getline(in, header);
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  CHECK(header == "window_index,start_bar,distance");
  CHECK(l1 == "1,2,0.000000");
  CHECK(l2.find("nan") != std::string::npos);
}

TEST_CASE("metric report includes NaN-aware summary rows") {
  std::vector<MetricRow> rows(2);
  rows[0].piece_id = "a";
  rows[0].pitch_class = 0.8;
  rows[0].melody_incon = std::nan("");
  rows[0].grooving = 1.0;
  rows[0].theme_incon = 0.1;
  rows[0].theme_uncontrol = 0.2;
  rows[0].theme_gap = 8.0;
  rows[1].piece_id = "b";
  rows[1].pitch_class = 0.6;
  rows[1].melody_incon = 0.5;
  rows[1].grooving = 0.5;
  rows[1].theme_incon = 0.3;
  rows[1].theme_uncontrol = 0.4;
  rows[1].theme_gap = 10.0;

  const fs::path file = fs::temp_directory_path() / "themegen_report.csv";
  write_metric_report(file, rows, true);

  std::ifstream in(file);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] ==
        "piece_id,pitch_class_consistency,melody_inconsistency,grooving_consistency,"
        "theme_inconsistency,theme_uncontrollability,theme_gap_bars");
  CHECK(lines[1].find("a,0.800000,nan,1.000000") == 0);
  // Mean of melody_incon skips the NaN: 0.5; pitch mean 0.7.
  CHECK(lines[3] == "mean,0.700000,0.500000,0.750000,0.200000,0.300000,9.000000");
  // Population std of {0.8, 0.6} is 0.1.
  CHECK(lines[4].find("std,0.100000,0.000000") == 0);

  // Without theme columns the header shrinks.
  write_metric_report(file, rows, false);
  std::ifstream in2(file);
  std::getline(in2, line);
  CHECK(line == "piece_id,pitch_class_consistency,melody_inconsistency,grooving_consistency");
}
