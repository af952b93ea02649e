#include "themegen/synth.hpp"

#include <algorithm>
#include <array>
#include <random>
#include <sstream>

#include "themegen/augment.hpp"
#include "themegen/errors.hpp"

namespace themegen {
namespace {

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

int nearest_scale_index(const std::vector<int>& scale, int pitch) {
  auto it = std::lower_bound(scale.begin(), scale.end(), pitch);
  if (it == scale.end()) return static_cast<int>(scale.size()) - 1;
  if (it == scale.begin()) return 0;
  return (*it - pitch < pitch - *(it - 1)) ? static_cast<int>(it - scale.begin())
                                           : static_cast<int>(it - scale.begin() - 1);
}

// Random walk over the scale; durations tile the requested subbeat length.
MelodySeq random_melody(std::mt19937_64& rng, const Key& key, int total_subbeats,
                        const std::vector<int>& durations) {
  const std::vector<int> scale = scale_pitches(key);
  int idx = nearest_scale_index(scale, 64 + uniform_int(rng, -4, 4));
  MelodySeq seq;
  int used = 0;
  while (used < total_subbeats) {
    int d = durations[uniform_int(rng, 0, static_cast<int>(durations.size()) - 1)];
    d = std::min(d, total_subbeats - used);
    idx = std::clamp(idx + uniform_int(rng, -2, 2), 0, static_cast<int>(scale.size()) - 1);
    seq.push_back({scale[idx], d});
    used += d;
  }
  return seq;
}

// Places a melody sequence on the grid starting at `start` subbeats.
void place_melody(Piece& piece, const MelodySeq& seq, int start, std::mt19937_64& rng) {
  int onset = start;
  for (const MelodyEvent& e : seq) {
    if (e.pitch != kRestPitch) {
      piece.notes.push_back(
          {Track::Melody, onset, e.pitch, uniform_int(rng, 48, 100), e.duration});
    }
    onset += e.duration;
  }
}

// Arpeggiated triads over scale degrees I, vi, IV, V (or the minor analogues).
void place_accompaniment(Piece& piece, const Key& key, int from_bar, int bars,
                         std::mt19937_64& rng) {
  const std::vector<int> scale = scale_pitches(key);
  static constexpr std::array<int, 4> kProgression = {0, 5, 3, 4};  // scale-degree roots
  const int phase = uniform_int(rng, 0, 3);
  const int velocity = uniform_int(rng, 40, 60);

  // Scale index of the tonic nearest C3; chords are stacked from there.
  const int tonic_pitch = 48 + (((key.tonic - 48) % 12) + 12) % 12;
  const int tonic_idx = nearest_scale_index(scale, tonic_pitch);

  for (int b = 0; b < bars; ++b) {
    const int degree = kProgression[(phase + b) % kProgression.size()];
    const int safe_root =
        std::clamp(tonic_idx + degree, 0, static_cast<int>(scale.size()) - 5);
    // Chord tones as scale offsets: root, third, fifth.
    const std::array<int, 4> pattern = {0, 4, 2, 4};
    for (int step = 0; step < kSubbeatsPerBar / 2; ++step) {
      const int tone = std::clamp(safe_root + pattern[step % 4], 0,
                                  static_cast<int>(scale.size()) - 1);
      piece.notes.push_back({Track::Accompaniment, (from_bar + b) * kSubbeatsPerBar + step * 2,
                             scale[tone], velocity, 2});
    }
  }
}

int even_in(std::mt19937_64& rng, int lo, int hi) {
  lo += lo % 2;
  hi -= hi % 2;
  if (hi < lo) return lo;
  return lo + 2 * uniform_int(rng, 0, (hi - lo) / 2);
}

// What a two-bar window will actually contain: durations clipped to the span,
// trailing overflow dropped.  Distinctness must be judged on this view, or a
// lengthened final note could alias another statement.
MelodySeq clip_to_span(const MelodySeq& seq, int span_subbeats) {
  MelodySeq out;
  int pos = 0;
  for (const MelodyEvent& e : seq) {
    if (pos >= span_subbeats) break;
    MelodyEvent clipped = e;
    clipped.duration = std::min(e.duration, span_subbeats - pos);
    out.push_back(clipped);
    pos += clipped.duration;
  }
  return out;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Piece synth_piece(const std::string& id, std::uint64_t seed, const SynthConfig& cfg,
                  SynthAudit* audit) {
  if (cfg.occurrences < 1) throw ConfigError("occurrences must be >= 1");
  if (cfg.min_filler_bars < 0 || cfg.max_filler_bars < cfg.min_filler_bars) {
    throw ConfigError("bad filler bar range");
  }

  std::mt19937_64 rng(seed);
  Piece piece;
  piece.id = id;

  const Key key{uniform_int(rng, 0, 11), rng() % 2 == 0 ? Mode::Major : Mode::Minor};
  piece.key = key;
  piece.key_events = {{0, key}};
  piece.tempo = {{0, Vocabulary::bpm_of_bin(uniform_int(rng, 20, 50))}};

  const MelodySeq theme =
      random_melody(rng, key, 2 * kSubbeatsPerBar, std::vector<int>{2, 4, 8});

  if (audit) audit->piece_id = id;

  // Pairwise-distinct theme statements: the original plus varied restatements.
  const int span_subbeats = 2 * kSubbeatsPerBar;
  std::vector<MelodySeq> statements = {theme};
  std::vector<MelodySeq> clipped = {clip_to_span(theme, span_subbeats)};
  std::vector<std::vector<AugmentOp>> trails(1);
  for (int occ = 1; occ < cfg.occurrences; ++occ) {
    MelodySeq variant;
    std::vector<AugmentOp> trail;
    for (int attempt = 0; attempt < 64; ++attempt) {
      variant = theme;
      trail.clear();
      for (int v = 0; v < cfg.variation_budget; ++v) {
        // An operator draw may be a no-op (nothing to split/combine); redraw
        // until the melody actually changes.
        MelodySeq next = variant;
        for (int retry = 0; retry < 32 && next == variant; ++retry) {
          AugmentOp op;
          next = apply_random_augmentation(variant, key, rng, &op);
          if (next != variant) trail.push_back(op);
        }
        variant = std::move(next);
      }
      if (std::find(clipped.begin(), clipped.end(), clip_to_span(variant, span_subbeats)) ==
          clipped.end()) {
        break;
      }
    }
    clipped.push_back(clip_to_span(variant, span_subbeats));
    statements.push_back(variant);
    trails.push_back(trail);
  }

  // Layout: optional even intro, then statements separated by even filler.
  int bar = rng() % 2 == 0 ? 0 : even_in(rng, cfg.min_filler_bars, cfg.max_filler_bars);
  if (bar > 0) {
    const MelodySeq filler =
        random_melody(rng, key, bar * kSubbeatsPerBar, std::vector<int>{2, 4});
    place_melody(piece, filler, 0, rng);
  }

  for (int occ = 0; occ < cfg.occurrences; ++occ) {
    place_melody(piece, statements[occ], bar * kSubbeatsPerBar, rng);
    piece.theme_spans.push_back({bar, bar + 2});
    if (audit) {
      std::ostringstream line;
      line << "statement=" << occ << " bar=" << bar << " ops=";
      if (trails[occ].empty()) {
        line << "none";
      } else {
        for (std::size_t i = 0; i < trails[occ].size(); ++i) {
          if (i) line << ',';
          line << augment_op_name(trails[occ][i]);
        }
      }
      audit->lines.push_back(line.str());
    }
    bar += 2;

    if (occ + 1 < cfg.occurrences) {
      const int filler_bars = even_in(rng, cfg.min_filler_bars, cfg.max_filler_bars);
      if (filler_bars > 0) {
        const bool melodic = cfg.melodic_filler && rng() % 5 != 0;
        if (melodic) {
          const MelodySeq filler =
              random_melody(rng, key, filler_bars * kSubbeatsPerBar, std::vector<int>{2, 4});
          place_melody(piece, filler, bar * kSubbeatsPerBar, rng);
        }
        bar += filler_bars;
      }
    }
  }

  place_accompaniment(piece, key, 0, bar, rng);
  canonicalize(piece);
  return piece;
}

SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.pieces < 1) throw ConfigError("pieces must be >= 1");
  SynthCorpus corpus;
  for (int i = 0; i < cfg.pieces; ++i) {
    std::ostringstream id;
    id << "synth-";
    id.width(3);
    id.fill('0');
    id << i;
    SynthAudit audit;
    Piece piece = synth_piece(id.str(), mix_seed(cfg.seed, i), cfg, &audit);
    corpus.labels.beats_by_id[piece.id] = spans_to_beats(piece.theme_spans);
    corpus.pieces.push_back(std::move(piece));
    corpus.audits.push_back(std::move(audit));
  }
  return corpus;
}

}  // namespace themegen
