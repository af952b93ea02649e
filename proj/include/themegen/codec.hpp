#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "themegen/piece.hpp"
#include "themegen/vocab.hpp"

namespace themegen {

// --- Piano token codec ------------------------------------------------------
//
// Layout per bar: a Bar token, then for every occupied subbeat (one holding
// note onsets or a tempo change) an ascending Subbeat token, an optional Tempo
// token, and pitch/velocity/duration triples for each note starting there
// (melody notes before accompaniment, then ascending pitch).

TokenSequence encode_piece(const Piece& piece, const Vocabulary& vocab);

// Encodes only the notes inside `span`, rebased so the span's first bar is
// bar 0.  Tempo events are dropped: conditions describe notes, not pacing.
TokenSequence encode_span(const Piece& piece, BarSpan span, const Vocabulary& vocab);

// Inverse of encode_piece.  Validates grammar and throws DataError on the
// first violation.  Theme delimiters become theme_spans (see bar accounting
// in theme_spans_of).
Piece decode_tokens(const TokenSequence& tokens, const Vocabulary& vocab);

// --- Grammar ----------------------------------------------------------------

// Streaming acceptor for the piano token grammar.  Used both by offline
// validation and to mask invalid candidates during sampling.
class GrammarCursor {
 public:
  explicit GrammarCursor(const Vocabulary& vocab) : vocab_(&vocab) {}

  bool accepts(int id) const { return reject_reason(id) == nullptr; }
  // Null when acceptable, otherwise a short rule name.
  const char* reject_reason(int id) const;
  void advance(int id);  // throws DataError if not accepted

  bool theme_open() const { return theme_open_; }
  bool bar_open() const { return bar_seen_; }
  int bars_emitted() const { return bars_; }

 private:
  enum class Pending : std::uint8_t { None, Velocity, Duration };

  const Vocabulary* vocab_;
  bool padded_ = false;
  bool theme_open_ = false;
  bool bar_seen_ = false;
  bool after_subbeat_ = false;  // previous token was a Subbeat
  int current_subbeat_ = -1;    // last Subbeat in the open bar, -1 if none yet
  int bars_ = 0;
  Pending pending_ = Pending::None;
  Track pending_track_ = Track::Melody;
};

struct GrammarCheck {
  bool ok = true;
  std::size_t position = 0;  // first offending token
  std::string rule;
};

GrammarCheck validate_grammar(const TokenSequence& tokens, const Vocabulary& vocab);

// --- Theme annotation -------------------------------------------------------

// Inserts Theme-Start immediately before the Bar token opening each span and
// Theme-End immediately after the last token of the span.  Spans must be
// sorted, non-overlapping, and inside the encoded bar range.
TokenSequence annotate_theme_tokens(const TokenSequence& tokens, const Vocabulary& vocab,
                                    const std::vector<BarSpan>& spans);

// 1 for every position from Theme-Start through the matching Theme-End,
// inclusive; 0 elsewhere.  Throws on unbalanced delimiters.
ThemeMask theme_mask_of(const TokenSequence& tokens, const Vocabulary& vocab);

// Bar spans implied by the delimiters: a delimiter's bar index is the number
// of Bar tokens strictly before it.
std::vector<BarSpan> theme_spans_of(const TokenSequence& tokens, const Vocabulary& vocab);

TokenSequence strip_theme_tokens(const TokenSequence& tokens, const Vocabulary& vocab);

// --- Melody fragments -------------------------------------------------------

// pitch == 0 marks a rest.
inline constexpr int kRestPitch = 0;

struct MelodyEvent {
  int pitch = kRestPitch;
  int duration = 1;  // subbeats, [1, 64]

  friend auto operator<=>(const MelodyEvent&, const MelodyEvent&) = default;
};

using MelodySeq = std::vector<MelodyEvent>;

struct Fragment {
  int piece_index = 0;  // position in the source corpus
  std::string piece_id;
  int start_bar = 0;  // span is [start_bar, start_bar + 2)
  Key key;
  MelodySeq melody;

  BarSpan span() const { return {start_bar, start_bar + 2}; }
};

// Cuts a piece into two-bar melody fragments: start at the bar holding the
// first melody onset (or the next bar when the onset falls in its second
// half), take consecutive two-bar windows until one is melody-free, then
// restart after the gap.  Windows without any melody onset are skipped.
std::vector<Fragment> slice_fragments(const Piece& piece, int piece_index = 0);

// Monophonic pitch/duration timeline of the melody within `span`: highest
// pitch wins at shared onsets, durations are truncated at the next onset and
// at the span end, and interior gaps become rests (split at 64 subbeats).
// Empty when the span holds no melody onset.
MelodySeq melody_events_in(const Piece& piece, BarSpan span);

TokenSequence melody_tokens(const MelodySeq& events, const MelodyVocabulary& vocab);
MelodySeq melody_events_of(const TokenSequence& tokens, const MelodyVocabulary& vocab);

}  // namespace themegen
