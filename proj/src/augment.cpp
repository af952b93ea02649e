#include "themegen/augment.hpp"

#include <algorithm>
#include <array>

#include "themegen/errors.hpp"

namespace themegen {

namespace {

constexpr std::array<int, 7> kMajorDegrees = {0, 2, 4, 5, 7, 9, 11};
constexpr std::array<int, 7> kMinorDegrees = {0, 2, 3, 5, 7, 8, 10};

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  // Inclusive bounds; bias-free enough for desk use and, unlike
  // std::uniform_int_distribution, identical across standard libraries.
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
}

}  // namespace

std::vector<int> scale_pitches(const Key& key) {
  const auto& degrees = key.mode == Mode::Major ? kMajorDegrees : kMinorDegrees;
  std::vector<int> pitches;
  for (int p = kMinPitch; p <= kMaxPitch; ++p) {
    const int pc = ((p - key.tonic) % 12 + 12) % 12;
    if (std::find(degrees.begin(), degrees.end(), pc) != degrees.end()) pitches.push_back(p);
  }
  return pitches;
}

int shift_on_scale(int pitch, const Key& key, int steps) {
  const std::vector<int> scale = scale_pitches(key);
  // Nearest scale tone, preferring the lower one on ties.
  auto it = std::lower_bound(scale.begin(), scale.end(), pitch);
  std::size_t idx;
  if (it == scale.end()) {
    idx = scale.size() - 1;
  } else if (it == scale.begin()) {
    idx = 0;
  } else {
    const int above = *it;
    const int below = *(it - 1);
    idx = (above - pitch < pitch - below) ? (it - scale.begin()) : (it - scale.begin() - 1);
  }
  const long shifted = static_cast<long>(idx) + steps;
  const long clamped = std::clamp(shifted, 0L, static_cast<long>(scale.size()) - 1);
  return scale[static_cast<std::size_t>(clamped)];
}

MelodySeq pitch_shift_on_scale(const MelodySeq& seq, const Key& key, int steps) {
  MelodySeq out = seq;
  for (MelodyEvent& e : out) {
    if (e.pitch != kRestPitch) e.pitch = shift_on_scale(e.pitch, key, steps);
  }
  return out;
}

MelodySeq vary_last_duration(const MelodySeq& seq, int new_duration) {
  if (new_duration < kMinDuration || new_duration > kMaxDuration) {
    throw DataError("duration out of range: " + std::to_string(new_duration));
  }
  MelodySeq out = seq;
  for (auto it = out.rbegin(); it != out.rend(); ++it) {
    if (it->pitch != kRestPitch) {
      it->duration = new_duration;
      return out;
    }
  }
  return out;  // all rests: nothing to vary
}

MelodySeq split_note(const MelodySeq& seq, std::size_t index) {
  if (index >= seq.size() || seq[index].pitch == kRestPitch || seq[index].duration < 2) {
    throw DataError("cannot split note at index " + std::to_string(index));
  }
  MelodySeq out;
  out.reserve(seq.size() + 1);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i == index) {
      const int d = seq[i].duration;
      out.push_back({seq[i].pitch, (d + 1) / 2});
      out.push_back({seq[i].pitch, d / 2});
    } else {
      out.push_back(seq[i]);
    }
  }
  return out;
}

MelodySeq combine_notes(const MelodySeq& seq, std::size_t index) {
  if (index + 1 >= seq.size() || seq[index].pitch == kRestPitch ||
      seq[index + 1].pitch == kRestPitch ||
      seq[index].duration + seq[index + 1].duration > kMaxDuration) {
    throw DataError("cannot combine notes at index " + std::to_string(index));
  }
  MelodySeq out;
  out.reserve(seq.size() - 1);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i == index) {
      out.push_back({seq[i].pitch, seq[i].duration + seq[i + 1].duration});
      ++i;
    } else {
      out.push_back(seq[i]);
    }
  }
  return out;
}

const char* augment_op_name(AugmentOp op) {
  switch (op) {
    case AugmentOp::PitchShift:
      return "pitch-shift";
    case AugmentOp::LastDuration:
      return "last-duration";
    case AugmentOp::SplitCombine:
      return "split-combine";
  }
  return "unknown";
}

MelodySeq apply_augmentation(AugmentOp op, const MelodySeq& seq, const Key& key,
                             std::mt19937_64& rng) {
  switch (op) {
    case AugmentOp::PitchShift: {
      // Nonzero shift of up to four scale steps either way.
      int steps = uniform_int(rng, 1, 4);
      if (uniform_int(rng, 0, 1) == 1) steps = -steps;
      return pitch_shift_on_scale(seq, key, steps);
    }
    case AugmentOp::LastDuration:
      return vary_last_duration(seq, uniform_int(rng, kMinDuration, kMaxDuration));
    case AugmentOp::SplitCombine: {
      std::vector<std::pair<bool, std::size_t>> sites;  // (is_split, index)
      for (std::size_t i = 0; i < seq.size(); ++i) {
        if (seq[i].pitch != kRestPitch && seq[i].duration >= 2) sites.push_back({true, i});
        if (i + 1 < seq.size() && seq[i].pitch != kRestPitch &&
            seq[i + 1].pitch != kRestPitch &&
            seq[i].duration + seq[i + 1].duration <= kMaxDuration) {
          sites.push_back({false, i});
        }
      }
      if (sites.empty()) return seq;
      const auto& [is_split, index] = sites[uniform_int(rng, 0, int(sites.size()) - 1)];
      return is_split ? split_note(seq, index) : combine_notes(seq, index);
    }
  }
  return seq;
}

MelodySeq apply_random_augmentation(const MelodySeq& seq, const Key& key, std::mt19937_64& rng,
                                    AugmentOp* chosen) {
  const auto op = static_cast<AugmentOp>(uniform_int(rng, 0, 2));
  if (chosen) *chosen = op;
  return apply_augmentation(op, seq, key, rng);
}

}  // namespace themegen
