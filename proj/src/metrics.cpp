#include "themegen/metrics.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>

#include "themegen/errors.hpp"

namespace themegen {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::array<double, 12>> bar_pitch_histograms(const Piece& piece) {
  const int bars = piece.bar_count();
  std::vector<std::array<double, 12>> hist(bars);
  for (const Note& n : piece.notes) {
    const int bar = n.onset / kSubbeatsPerBar;
    if (bar < bars) hist[bar][n.pitch % 12] += 1;
  }
  for (auto& h : hist) {
    double total = 0;
    for (double v : h) total += v;
    if (total > 0) {
      for (double& v : h) v /= total;
    }
  }
  return hist;
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return kNaN;
  double sum = 0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

double melody_distance(const Row<double>& a, const Row<double>& b) {
  return (a - b).norm();
}

double pitch_class_consistency(const Piece& piece) {
  const auto hist = bar_pitch_histograms(piece);
  std::vector<int> occupied;
  for (std::size_t b = 0; b < hist.size(); ++b) {
    double total = 0;
    for (double v : hist[b]) total += v;
    if (total > 0) occupied.push_back(static_cast<int>(b));
  }
  if (occupied.size() < 2) return kNaN;

  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < occupied.size(); ++i) {
    for (std::size_t j = i + 1; j < occupied.size(); ++j) {
      double overlap = 0;
      for (int pc = 0; pc < 12; ++pc) {
        overlap += std::min(hist[occupied[i]][pc], hist[occupied[j]][pc]);
      }
      sum += overlap;
      ++pairs;
    }
  }
  return sum / pairs;
}

double grooving_consistency(const Piece& piece) {
  const int bars = piece.bar_count();
  if (bars < 2) return kNaN;
  std::vector<std::uint32_t> grid(bars, 0);
  for (const Note& n : piece.notes) {
    const int bar = n.onset / kSubbeatsPerBar;
    if (bar < bars) grid[bar] |= 1u << (n.onset % kSubbeatsPerBar);
  }
  double sum = 0;
  int pairs = 0;
  for (int i = 0; i < bars; ++i) {
    for (int j = i + 1; j < bars; ++j) {
      const int hamming = std::popcount(grid[i] ^ grid[j]);
      sum += 1.0 - double(hamming) / kSubbeatsPerBar;
      ++pairs;
    }
  }
  return sum / pairs;
}

double melody_inconsistency(const Piece& piece, const Embedder& embed) {
  const MelodySeq opening = melody_events_in(piece, {0, 2});
  if (opening.empty()) return kNaN;
  const Row<double> ref = embed(opening);

  double best = kNaN;
  for (int bar = 32; bar + 2 <= 64; bar += 2) {
    const MelodySeq candidate = melody_events_in(piece, {bar, bar + 2});
    if (candidate.empty()) continue;
    const double d = melody_distance(ref, embed(candidate));
    if (std::isnan(best) || d < best) best = d;
  }
  return best;
}

double theme_inconsistency(const Piece& piece, const Embedder& embed) {
  std::vector<Row<double>> embeddings;
  for (const BarSpan& span : piece.theme_spans) {
    const MelodySeq melody = melody_events_in(piece, span);
    if (!melody.empty()) embeddings.push_back(embed(melody));
  }
  if (embeddings.size() < 2) return kNaN;
  double sum = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    for (std::size_t j = i + 1; j < embeddings.size(); ++j) {
      sum += melody_distance(embeddings[i], embeddings[j]);
      ++pairs;
    }
  }
  return sum / pairs;
}

double theme_uncontrollability(const Piece& piece, const Embedder& embed,
                               const MelodySeq& condition) {
  if (condition.empty()) return kNaN;
  const Row<double> ref = embed(condition);
  std::vector<double> distances;
  for (const BarSpan& span : piece.theme_spans) {
    const MelodySeq melody = melody_events_in(piece, span);
    if (!melody.empty()) {
      distances.push_back(melody_distance(ref, embed(melody)));
    }
  }
  return mean_of(distances);
}

std::vector<double> theme_gap_bars(const Piece& piece) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < piece.theme_spans.size(); ++i) {
    gaps.push_back(piece.theme_spans[i].begin - piece.theme_spans[i - 1].begin);
  }
  return gaps;
}

std::vector<double> melody_distance_curve(const Piece& piece, const Embedder& embed) {
  std::vector<double> curve;
  const MelodySeq opening = melody_events_in(piece, {0, 2});
  const bool have_ref = !opening.empty();
  const Row<double> ref = have_ref ? embed(opening) : Row<double>();

  const int bars = piece.bar_count();
  for (int bar = 2; bar + 2 <= bars; bar += 2) {
    const MelodySeq window = melody_events_in(piece, {bar, bar + 2});
    if (!have_ref || window.empty()) {
      curve.push_back(kNaN);
      continue;
    }
    curve.push_back(melody_distance(ref, embed(window)));
  }
  return curve;
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void write_metric_report(const std::filesystem::path& file, const std::vector<MetricRow>& rows,
                         bool theme_columns) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write report: " + file.string());

  out << "piece_id,pitch_class_consistency,melody_inconsistency,grooving_consistency";
  if (theme_columns) {
    out << ",theme_inconsistency,theme_uncontrollability,theme_gap_bars";
  }
  out << "\n";

  auto values_of = [theme_columns](const MetricRow& r) {
    std::vector<double> v = {r.pitch_class, r.melody_incon, r.grooving};
    if (theme_columns) {
      v.push_back(r.theme_incon);
      v.push_back(r.theme_uncontrol);
      v.push_back(r.theme_gap);
    }
    return v;
  };

  const std::size_t cols = theme_columns ? 6 : 3;
  std::vector<std::vector<double>> columns(cols);
  for (const MetricRow& r : rows) {
    out << r.piece_id;
    const auto vals = values_of(r);
    for (std::size_t c = 0; c < cols; ++c) {
      out << ',' << format_metric(vals[c]);
      if (!std::isnan(vals[c])) columns[c].push_back(vals[c]);
    }
    out << "\n";
  }

  out << "mean";
  std::vector<double> means(cols);
  for (std::size_t c = 0; c < cols; ++c) {
    means[c] = mean_of(columns[c]);
    out << ',' << format_metric(means[c]);
  }
  out << "\nstd";
  for (std::size_t c = 0; c < cols; ++c) {
    if (columns[c].empty()) {
      out << ",nan";
      continue;
    }
    double var = 0;
    for (double v : columns[c]) var += (v - means[c]) * (v - means[c]);
    out << ',' << format_metric(std::sqrt(var / static_cast<double>(columns[c].size())));
  }
  out << "\n";
}

void write_distance_curve(const std::filesystem::path& file, const std::vector<double>& curve) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write curve: " + file.string());
  out << "window_index,start_bar,distance\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << (i + 1) << ',' << 2 * (i + 1) << ',' << format_metric(curve[i]) << "\n";
  }
}

}  // namespace themegen
