#pragma once

#include <optional>
#include <string>
#include <vector>

#include "themegen/piece.hpp"

namespace themegen {

enum class TokenType : std::uint8_t {
  NotePitch,
  NoteDuration,
  NoteVelocity,
  Tempo,
  Bar,
  Subbeat,
  ThemeStart,
  ThemeEnd,
  Padding,
};

struct TokenInfo {
  TokenType type;
  Track track = Track::Melody;  // meaningful for the three note families
  int value = 0;                // pitch / duration / velocity / bpm / subbeat index
};

// Fixed id layout for the piano token alphabet.  Families are laid out
// contiguously: melody pitch, accompaniment pitch, melody duration,
// accompaniment duration, melody velocity, accompaniment velocity, tempo grid,
// bar, subbeat positions, theme delimiters, padding.  730 ids total.
class Vocabulary {
 public:
  Vocabulary();

  int size() const { return padding_ + 1; }

  int note_pitch(Track t, int pitch) const;        // pitch in [1, 127]
  int note_duration(Track t, int duration) const;  // duration in [1, 64]
  int note_velocity(Track t, int velocity) const;  // velocity in [1, 126]
  int tempo_token(int bpm) const;                  // bpm on the tempo grid
  int tempo_token_for_bin(int bin) const;          // bin in [0, kTempoBins)
  int bar() const { return bar_; }
  int subbeat(int position) const;                 // position in [0, 16)
  int theme_start() const { return theme_start_; }
  int theme_end() const { return theme_end_; }
  int padding() const { return padding_; }

  TokenInfo info(int id) const;
  bool is_theme_delimiter(int id) const { return id == theme_start_ || id == theme_end_; }

  std::string name(int id) const;
  std::optional<int> id_of(const std::string& name) const;

  // Nearest grid value / bin for an arbitrary bpm.
  static int tempo_bin_of(int bpm);   // floor bin of an in-range bpm
  static int bpm_of_bin(int bin);

 private:
  int melody_pitch_base_;
  int accomp_pitch_base_;
  int melody_duration_base_;
  int accomp_duration_base_;
  int melody_velocity_base_;
  int accomp_velocity_base_;
  int tempo_base_;
  int bar_;
  int subbeat_base_;
  int theme_start_;
  int theme_end_;
  int padding_;
};

// Melody-only alphabet used by the fragment embedding: 127 pitches, a rest
// marker, 64 durations, padding.  193 ids total.
class MelodyVocabulary {
 public:
  int size() const { return kPadding + 1; }

  int pitch(int p) const;     // [1, 127] -> [0, 127)
  int rest() const { return kRest; }
  int duration(int d) const;  // [1, 64] -> [128, 192)
  int padding() const { return kPadding; }

  bool is_pitch_or_rest(int id) const { return id >= 0 && id <= kRest; }
  bool is_duration(int id) const { return id >= kRest + 1 && id < kPadding; }

  std::string name(int id) const;

 private:
  static constexpr int kRest = 127;
  static constexpr int kPadding = 127 + 1 + 64;  // 192
};

enum class TokenKind : std::uint16_t { Piano = 0, Melody = 1 };

struct TokenSequence {
  TokenKind kind = TokenKind::Piano;
  std::vector<int> ids;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

using ThemeMask = std::vector<std::uint8_t>;

}  // namespace themegen
