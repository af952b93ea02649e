#pragma once

#include <random>
#include <vector>

#include "themegen/codec.hpp"
#include "themegen/piece.hpp"

namespace themegen {

// Melody variations used both to plant theme variants in synthetic pieces and
// to build positive pairs for the contrastive embedding.

// All scale member pitches of `key` in [1, 127], ascending.
std::vector<int> scale_pitches(const Key& key);

// Moves a pitch `steps` positions along the key's scale.  Off-scale pitches
// first snap to the nearest scale tone (ties resolve downward).  The result
// saturates at the pitch range ends.
int shift_on_scale(int pitch, const Key& key, int steps);

MelodySeq pitch_shift_on_scale(const MelodySeq& seq, const Key& key, int steps);

// Replaces the duration of the last sounded (non-rest) note.
MelodySeq vary_last_duration(const MelodySeq& seq, int new_duration);

// Splits the note at `index` into two halves of the same pitch.
MelodySeq split_note(const MelodySeq& seq, std::size_t index);

// Merges the notes at `index` and `index + 1` (both sounded, combined
// duration <= 64) into one note with the first pitch.
MelodySeq combine_notes(const MelodySeq& seq, std::size_t index);

enum class AugmentOp : std::uint8_t { PitchShift = 0, LastDuration = 1, SplitCombine = 2 };

const char* augment_op_name(AugmentOp op);

// One random application of `op`.  May return the input unchanged when no
// valid site exists (e.g. nothing to split or combine).
MelodySeq apply_augmentation(AugmentOp op, const MelodySeq& seq, const Key& key,
                             std::mt19937_64& rng);

// Uniformly picks one of the three operators and applies it.
MelodySeq apply_random_augmentation(const MelodySeq& seq, const Key& key, std::mt19937_64& rng,
                                    AugmentOp* chosen = nullptr);

}  // namespace themegen
