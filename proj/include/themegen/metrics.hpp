#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "themegen/codec.hpp"
#include "themegen/eigen_types.hpp"
#include "themegen/piece.hpp"

namespace themegen {

// Maps a monophonic melody to its embedding row; empty melodies are the
// caller's concern (metrics skip them before calling).
using Embedder = std::function<Row<double>(const MelodySeq&)>;

double melody_distance(const Row<double>& a, const Row<double>& b);  // Euclidean

// Mean pairwise overlap (sum of element-wise minima) between per-bar
// pitch-class histograms over note onsets of both tracks.  Bars without notes
// are skipped; fewer than two occupied bars gives NaN.
double pitch_class_consistency(const Piece& piece);

// Mean pairwise agreement of per-bar 16-bit onset grids: 1 - hamming/16 over
// all bar pairs in the piece.
double grooving_consistency(const Piece& piece);

// Distance from the opening two bars to the nearest two-bar melody window
// among bars [32, 64).  NaN when either side has no melody.
double melody_inconsistency(const Piece& piece, const Embedder& embed);

// Mean pairwise distance between the melodies of the piece's theme spans.
// NaN with fewer than two melodic spans.
double theme_inconsistency(const Piece& piece, const Embedder& embed);

// Mean distance from the condition melody to each theme span's melody.
// NaN when the piece has no melodic theme span.
double theme_uncontrollability(const Piece& piece, const Embedder& embed,
                               const MelodySeq& condition);

// Bar gaps between consecutive theme span starts (empty with < 2 spans).
std::vector<double> theme_gap_bars(const Piece& piece);

// Distance from the opening two-bar melody to every later aligned two-bar
// window, NaN where a window has no melody.  Entry i is the window starting
// at bar 2(i+1).
std::vector<double> melody_distance_curve(const Piece& piece, const Embedder& embed);

// --- report ------------------------------------------------------------------

struct MetricRow {
  std::string piece_id;
  double pitch_class = 0;
  double melody_incon = 0;
  double grooving = 0;
  double theme_incon = 0;
  double theme_uncontrol = 0;
  double theme_gap = 0;  // mean gap for the piece
};

// CSV with one row per piece plus `mean` and `std` summary rows (population
// standard deviation, NaN entries excluded per column).  Theme columns are
// dropped when `theme_columns` is false.
void write_metric_report(const std::filesystem::path& file, const std::vector<MetricRow>& rows,
                         bool theme_columns);

void write_distance_curve(const std::filesystem::path& file, const std::vector<double>& curve);

std::string format_metric(double v);  // fixed 6 decimals, "nan" for NaN

}  // namespace themegen
