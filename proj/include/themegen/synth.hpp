#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "themegen/manifest.hpp"
#include "themegen/piece.hpp"

namespace themegen {

// Synthetic corpus with planted ground truth: each piece repeats one two-bar
// theme several times (with audited melodic variations) amid filler material,
// over an arpeggiated accompaniment.
struct SynthConfig {
  int pieces = 20;
  std::uint64_t seed = 1;
  int occurrences = 3;       // theme statements per piece, >= 1
  int variation_budget = 2;  // variation operators applied per restatement
  int min_filler_bars = 2;   // filler between statements; rounded to even
  int max_filler_bars = 4;
  bool melodic_filler = true;  // filler may also be accompaniment-only
};

struct SynthAudit {
  std::string piece_id;
  std::vector<std::string> lines;  // one per theme statement: bar + operator trail
};

Piece synth_piece(const std::string& id, std::uint64_t seed, const SynthConfig& cfg,
                  SynthAudit* audit = nullptr);

struct SynthCorpus {
  std::vector<Piece> pieces;
  BeatLabels labels;  // ground-truth theme beats per piece
  std::vector<SynthAudit> audits;
};

SynthCorpus synth_corpus(const SynthConfig& cfg);

// Stateless 64-bit mix used to derive per-piece seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace themegen
