#include "themegen/piece.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "themegen/errors.hpp"

namespace themegen {

const char* track_name(Track t) {
  return t == Track::Melody ? "Melody" : "Accompaniment";
}

bool note_less(const Note& a, const Note& b) {
  auto key = [](const Note& n) {
    return std::tuple(n.onset, static_cast<int>(n.track), n.pitch, n.duration, n.velocity);
  };
  return key(a) < key(b);
}

std::string key_name(const Key& k) {
  static const std::array<const char*, 12> names = {"C",  "C#", "D",  "D#", "E",  "F",
                                                    "F#", "G",  "G#", "A",  "A#", "B"};
  std::string out = names[((k.tonic % 12) + 12) % 12];
  out += k.mode == Mode::Major ? ":maj" : ":min";
  return out;
}

std::optional<Key> parse_key(const std::string& text) {
  auto colon = text.find(':');
  if (colon == std::string::npos) return std::nullopt;
  std::string root = text.substr(0, colon);
  std::string mode = text.substr(colon + 1);
  if (root.empty()) return std::nullopt;

  static const std::map<char, int> base = {{'C', 0}, {'D', 2}, {'E', 4}, {'F', 5},
                                           {'G', 7}, {'A', 9}, {'B', 11}};
  auto it = base.find(static_cast<char>(std::toupper(root[0])));
  if (it == base.end()) return std::nullopt;
  int tonic = it->second;
  for (size_t i = 1; i < root.size(); ++i) {
    if (root[i] == '#') tonic += 1;
    else if (root[i] == 'b') tonic -= 1;
    else return std::nullopt;
  }
  tonic = ((tonic % 12) + 12) % 12;

  Key k{tonic, Mode::Major};
  if (mode == "maj" || mode == "major") k.mode = Mode::Major;
  else if (mode == "min" || mode == "minor") k.mode = Mode::Minor;
  else return std::nullopt;
  return k;
}

int Piece::end_subbeat() const {
  int end = 0;
  for (const Note& n : notes) end = std::max(end, n.onset + n.duration);
  for (const TempoEvent& t : tempo) end = std::max(end, t.onset + 1);
  for (const auto& [onset, key] : key_events) end = std::max(end, onset + 1);
  return end;
}

int Piece::bar_count() const {
  return (end_subbeat() + kSubbeatsPerBar - 1) / kSubbeatsPerBar;
}

bool Piece::has_key_change() const {
  for (size_t i = 1; i < key_events.size(); ++i) {
    if (!(key_events[i].second == key_events[0].second)) return true;
  }
  return false;
}

int snap_tempo_to_grid(double bpm) {
  double k = std::round((bpm - kTempoMin) / kTempoStep);
  k = std::clamp(k, 0.0, static_cast<double>(kTempoBins - 1));
  return kTempoMin + kTempoStep * static_cast<int>(k);
}

int canonicalize(Piece& piece) {
  int clamped = 0;
  auto clamp_count = [&clamped](int v, int lo, int hi) {
    int c = std::clamp(v, lo, hi);
    if (c != v) ++clamped;
    return c;
  };

  for (Note& n : piece.notes) {
    if (n.onset < 0) {
      n.onset = 0;
      ++clamped;
    }
    n.pitch = clamp_count(n.pitch, kMinPitch, kMaxPitch);
    n.velocity = clamp_count(n.velocity, kMinVelocity, kMaxVelocity);
    n.duration = clamp_count(n.duration, kMinDuration, kMaxDuration);
  }
  std::sort(piece.notes.begin(), piece.notes.end(), note_less);
  piece.notes.erase(std::unique(piece.notes.begin(), piece.notes.end()), piece.notes.end());

  for (TempoEvent& t : piece.tempo) {
    int beat_aligned = static_cast<int>(std::llround(t.onset / double(kSubbeatsPerBeat))) *
                       kSubbeatsPerBeat;
    if (beat_aligned != t.onset) ++clamped;
    t.onset = std::max(0, beat_aligned);
    int snapped = snap_tempo_to_grid(t.bpm);
    if (snapped != t.bpm) ++clamped;
    t.bpm = snapped;
  }
  std::stable_sort(piece.tempo.begin(), piece.tempo.end(),
                   [](const TempoEvent& a, const TempoEvent& b) { return a.onset < b.onset; });
  // Same onset: keep the last event; then drop no-op changes.
  std::vector<TempoEvent> tempo;
  for (const TempoEvent& t : piece.tempo) {
    if (!tempo.empty() && tempo.back().onset == t.onset) tempo.back() = t;
    else tempo.push_back(t);
  }
  std::vector<TempoEvent> dedup;
  for (const TempoEvent& t : tempo) {
    if (dedup.empty() || dedup.back().bpm != t.bpm) dedup.push_back(t);
  }
  piece.tempo = std::move(dedup);

  std::stable_sort(piece.key_events.begin(), piece.key_events.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<std::pair<int, Key>> keys;
  for (const auto& e : piece.key_events) {
    if (!keys.empty() && keys.back().second == e.second) continue;
    keys.push_back(e);
  }
  piece.key_events = std::move(keys);
  if (!piece.key && !piece.key_events.empty()) piece.key = piece.key_events[0].second;

  std::sort(piece.theme_spans.begin(), piece.theme_spans.end(),
            [](const BarSpan& a, const BarSpan& b) { return a.begin < b.begin; });
  return clamped;
}

Key estimate_key(const Piece& piece) {
  // Krumhansl-Schmuckler style template correlation over a duration-weighted
  // pitch-class histogram.
  static const std::array<double, 12> major = {6.35, 2.23, 3.48, 2.33, 4.38, 4.09,
                                               2.52, 5.19, 2.39, 3.66, 2.29, 2.88};
  static const std::array<double, 12> minor = {6.33, 2.68, 3.52, 5.38, 2.60, 3.53,
                                               2.54, 4.75, 3.98, 2.69, 3.34, 3.17};

  std::array<double, 12> hist{};
  for (const Note& n : piece.notes) hist[n.pitch % 12] += n.duration;

  auto correlation = [&hist](const std::array<double, 12>& tpl, int shift) {
    double mx = 0, my = 0;
    for (int i = 0; i < 12; ++i) {
      mx += hist[(i + shift) % 12];
      my += tpl[i];
    }
    mx /= 12;
    my /= 12;
    double num = 0, dx = 0, dy = 0;
    for (int i = 0; i < 12; ++i) {
      double a = hist[(i + shift) % 12] - mx;
      double b = tpl[i] - my;
      num += a * b;
      dx += a * a;
      dy += b * b;
    }
    double den = std::sqrt(dx * dy);
    return den > 0 ? num / den : 0.0;
  };

  Key best{0, Mode::Major};
  double best_r = -2;
  for (int tonic = 0; tonic < 12; ++tonic) {
    double rmaj = correlation(major, tonic);
    double rmin = correlation(minor, tonic);
    if (rmaj > best_r) {
      best_r = rmaj;
      best = Key{tonic, Mode::Major};
    }
    if (rmin > best_r) {
      best_r = rmin;
      best = Key{tonic, Mode::Minor};
    }
  }
  return best;
}

std::vector<Piece> filter_key_changes(std::vector<Piece> corpus,
                                      std::vector<std::string>* dropped_ids) {
  std::vector<Piece> kept;
  kept.reserve(corpus.size());
  for (Piece& p : corpus) {
    if (p.has_key_change()) {
      if (dropped_ids) dropped_ids->push_back(p.id);
      continue;
    }
    kept.push_back(std::move(p));
  }
  return kept;
}

std::vector<Note> notes_in_bars(const Piece& piece, BarSpan span) {
  std::vector<Note> out;
  const int lo = span.begin * kSubbeatsPerBar;
  const int hi = span.end * kSubbeatsPerBar;
  for (const Note& n : piece.notes) {
    if (n.onset >= lo && n.onset < hi) out.push_back(n);
  }
  return out;
}

std::vector<Note> melody_notes(const Piece& piece) {
  std::vector<Note> out;
  for (const Note& n : piece.notes) {
    if (n.track == Track::Melody) out.push_back(n);
  }
  return out;
}

}  // namespace themegen
