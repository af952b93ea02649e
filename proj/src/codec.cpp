#include "themegen/codec.hpp"

#include <algorithm>
#include <map>

#include "themegen/errors.hpp"

namespace themegen {

namespace {

// Notes grouped by onset, in canonical order; value also flags tempo changes.
struct OnsetSlot {
  std::vector<const Note*> notes;
  const TempoEvent* tempo = nullptr;
};

std::map<int, OnsetSlot> build_slots(const std::vector<Note>& notes,
                                     const std::vector<TempoEvent>& tempo) {
  std::map<int, OnsetSlot> slots;
  for (const Note& n : notes) slots[n.onset].notes.push_back(&n);
  for (const TempoEvent& t : tempo) slots[t.onset].tempo = &t;
  return slots;
}

void emit_bars(const std::map<int, OnsetSlot>& slots, int bar_count, const Vocabulary& vocab,
               std::vector<int>& out) {
  auto it = slots.begin();
  for (int bar = 0; bar < bar_count; ++bar) {
    out.push_back(vocab.bar());
    const int bar_end = (bar + 1) * kSubbeatsPerBar;
    while (it != slots.end() && it->first < bar_end) {
      const auto& [onset, slot] = *it;
      out.push_back(vocab.subbeat(onset % kSubbeatsPerBar));
      if (slot.tempo) out.push_back(vocab.tempo_token(slot.tempo->bpm));
      for (const Note* n : slot.notes) {
        out.push_back(vocab.note_pitch(n->track, n->pitch));
        out.push_back(vocab.note_velocity(n->track, n->velocity));
        out.push_back(vocab.note_duration(n->track, n->duration));
      }
      ++it;
    }
  }
}

}  // namespace

TokenSequence encode_piece(const Piece& piece, const Vocabulary& vocab) {
  TokenSequence seq{TokenKind::Piano, {}};
  auto slots = build_slots(piece.notes, piece.tempo);
  emit_bars(slots, piece.bar_count(), vocab, seq.ids);
  return seq;
}

TokenSequence encode_span(const Piece& piece, BarSpan span, const Vocabulary& vocab) {
  std::vector<Note> notes = notes_in_bars(piece, span);
  const int base = span.begin * kSubbeatsPerBar;
  for (Note& n : notes) n.onset -= base;
  TokenSequence seq{TokenKind::Piano, {}};
  const std::vector<TempoEvent> no_tempo;
  auto slots = build_slots(notes, no_tempo);
  emit_bars(slots, span.length(), vocab, seq.ids);
  return seq;
}

const char* GrammarCursor::reject_reason(int id) const {
  const TokenInfo info = vocab_->info(id);

  if (padded_ && info.type != TokenType::Padding) return "padding-must-trail";

  if (pending_ != Pending::None) {
    const TokenType expected =
        pending_ == Pending::Velocity ? TokenType::NoteVelocity : TokenType::NoteDuration;
    if (info.type != expected) return "incomplete-note-triple";
    if (info.track != pending_track_) return "note-triple-track-mismatch";
    return nullptr;
  }

  switch (info.type) {
    case TokenType::NotePitch:
      if (!bar_seen_ || current_subbeat_ < 0) return "note-needs-subbeat";
      return nullptr;
    case TokenType::NoteVelocity:
    case TokenType::NoteDuration:
      return "note-triple-order";
    case TokenType::Tempo:
      if (!after_subbeat_) return "tempo-needs-subbeat";
      return nullptr;
    case TokenType::Bar:
      return nullptr;
    case TokenType::Subbeat:
      if (!bar_seen_) return "subbeat-outside-bar";
      if (info.value <= current_subbeat_) return "subbeat-not-increasing";
      return nullptr;
    case TokenType::ThemeStart:
      if (theme_open_) return "theme-already-open";
      return nullptr;
    case TokenType::ThemeEnd:
      if (!theme_open_) return "theme-not-open";
      return nullptr;
    case TokenType::Padding:
      return nullptr;
  }
  return "unknown-token";
}

void GrammarCursor::advance(int id) {
  if (const char* rule = reject_reason(id)) {
    throw DataError(std::string("grammar violation (") + rule + ") at token " +
                    vocab_->name(id));
  }
  const TokenInfo info = vocab_->info(id);
  after_subbeat_ = false;
  switch (info.type) {
    case TokenType::NotePitch:
      pending_ = Pending::Velocity;
      pending_track_ = info.track;
      break;
    case TokenType::NoteVelocity:
      pending_ = Pending::Duration;
      break;
    case TokenType::NoteDuration:
      pending_ = Pending::None;
      break;
    case TokenType::Tempo:
      break;
    case TokenType::Bar:
      bar_seen_ = true;
      current_subbeat_ = -1;
      ++bars_;
      break;
    case TokenType::Subbeat:
      current_subbeat_ = info.value;
      after_subbeat_ = true;
      break;
    case TokenType::ThemeStart:
      theme_open_ = true;
      break;
    case TokenType::ThemeEnd:
      theme_open_ = false;
      break;
    case TokenType::Padding:
      padded_ = true;
      break;
  }
}

GrammarCheck validate_grammar(const TokenSequence& tokens, const Vocabulary& vocab) {
  if (tokens.kind != TokenKind::Piano) {
    return {false, 0, "not-a-piano-sequence"};
  }
  GrammarCursor cursor(vocab);
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (const char* rule = cursor.reject_reason(tokens.ids[i])) return {false, i, rule};
    cursor.advance(tokens.ids[i]);
  }
  return {};
}

Piece decode_tokens(const TokenSequence& tokens, const Vocabulary& vocab) {
  GrammarCheck check = validate_grammar(tokens, vocab);
  if (!check.ok) {
    throw DataError("invalid token sequence at position " + std::to_string(check.position) +
                    ": " + check.rule);
  }

  Piece piece;
  int bar = -1;
  int subbeat = 0;
  Track note_track = Track::Melody;
  int note_pitch = 0;
  int note_velocity = 0;

  for (int id : tokens.ids) {
    const TokenInfo info = vocab.info(id);
    switch (info.type) {
      case TokenType::Bar:
        ++bar;
        break;
      case TokenType::Subbeat:
        subbeat = info.value;
        break;
      case TokenType::Tempo:
        piece.tempo.push_back({bar * kSubbeatsPerBar + subbeat, info.value});
        break;
      case TokenType::NotePitch:
        note_track = info.track;
        note_pitch = info.value;
        break;
      case TokenType::NoteVelocity:
        note_velocity = info.value;
        break;
      case TokenType::NoteDuration:
        piece.notes.push_back(
            {note_track, bar * kSubbeatsPerBar + subbeat, note_pitch, note_velocity, info.value});
        break;
      case TokenType::ThemeStart:
      case TokenType::ThemeEnd:
      case TokenType::Padding:
        break;
    }
  }
  piece.theme_spans = theme_spans_of(tokens, vocab);
  std::sort(piece.notes.begin(), piece.notes.end(), note_less);
  return piece;
}

TokenSequence annotate_theme_tokens(const TokenSequence& tokens, const Vocabulary& vocab,
                                    const std::vector<BarSpan>& spans) {
  if (tokens.kind != TokenKind::Piano) throw DataError("theme annotation needs piano tokens");
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (spans[i].begin < 0 || spans[i].length() <= 0)
      throw DataError("theme span must be a non-empty bar range");
    if (i > 0 && spans[i].begin < spans[i - 1].end)
      throw DataError("theme spans overlap");
  }

  TokenSequence out{TokenKind::Piano, {}};
  out.ids.reserve(tokens.ids.size() + 2 * spans.size());
  std::size_t next = 0;
  bool open = false;
  int bar = 0;  // number of Bar tokens seen so far
  for (int id : tokens.ids) {
    const bool is_bar = vocab.info(id).type == TokenType::Bar;
    if (is_bar) {
      if (open && next < spans.size() && bar == spans[next].end) {
        out.ids.push_back(vocab.theme_end());
        open = false;
        ++next;
      }
      if (!open && next < spans.size() && bar == spans[next].begin) {
        out.ids.push_back(vocab.theme_start());
        open = true;
      }
      ++bar;
    }
    out.ids.push_back(id);
  }
  if (open) {
    if (bar < spans[next].end) throw DataError("theme span extends past the encoded bars");
    out.ids.push_back(vocab.theme_end());
    open = false;
    ++next;
  }
  if (next < spans.size()) throw DataError("theme span starts past the encoded bars");
  return out;
}

ThemeMask theme_mask_of(const TokenSequence& tokens, const Vocabulary& vocab) {
  ThemeMask mask(tokens.ids.size(), 0);
  bool open = false;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const TokenInfo info = vocab.info(tokens.ids[i]);
    if (info.type == TokenType::ThemeStart) {
      if (open) throw DataError("nested Theme-Start");
      open = true;
    }
    if (open) mask[i] = 1;
    if (info.type == TokenType::ThemeEnd) {
      if (!open) throw DataError("Theme-End without Theme-Start");
      open = false;
    }
  }
  if (open) throw DataError("unterminated theme region");
  return mask;
}

std::vector<BarSpan> theme_spans_of(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::vector<BarSpan> spans;
  int bar = 0;
  int begin = -1;
  for (int id : tokens.ids) {
    const TokenInfo info = vocab.info(id);
    if (info.type == TokenType::Bar) ++bar;
    else if (info.type == TokenType::ThemeStart) begin = bar;
    else if (info.type == TokenType::ThemeEnd) {
      spans.push_back({begin, bar});
      begin = -1;
    }
  }
  return spans;
}

TokenSequence strip_theme_tokens(const TokenSequence& tokens, const Vocabulary& vocab) {
  TokenSequence out{tokens.kind, {}};
  out.ids.reserve(tokens.ids.size());
  for (int id : tokens.ids) {
    if (!vocab.is_theme_delimiter(id)) out.ids.push_back(id);
  }
  return out;
}

MelodySeq melody_events_in(const Piece& piece, BarSpan span) {
  const int lo = span.begin * kSubbeatsPerBar;
  const int hi = span.end * kSubbeatsPerBar;

  // Skyline: highest pitch at each onset.
  std::map<int, Note> best;
  for (const Note& n : piece.notes) {
    if (n.track != Track::Melody || n.onset < lo || n.onset >= hi) continue;
    auto [it, inserted] = best.try_emplace(n.onset, n);
    if (!inserted && n.pitch > it->second.pitch) it->second = n;
  }
  if (best.empty()) return {};

  MelodySeq events;
  int cursor = 0;
  for (auto it = best.begin(); it != best.end(); ++it) {
    const Note& n = it->second;
    if (it != best.begin()) {
      int gap = n.onset - cursor;
      while (gap > kMaxDuration) {
        events.push_back({kRestPitch, kMaxDuration});
        gap -= kMaxDuration;
      }
      if (gap > 0) events.push_back({kRestPitch, gap});
    }
    int end = n.onset + n.duration;
    auto next = std::next(it);
    if (next != best.end()) end = std::min(end, next->second.onset);
    end = std::min(end, hi);
    end = std::max(end, n.onset + 1);
    events.push_back({n.pitch, end - n.onset});
    cursor = end;
  }
  return events;
}

std::vector<Fragment> slice_fragments(const Piece& piece, int piece_index) {
  std::vector<int> onsets;
  for (const Note& n : piece.notes) {
    if (n.track == Track::Melody) onsets.push_back(n.onset);
  }
  std::sort(onsets.begin(), onsets.end());
  onsets.erase(std::unique(onsets.begin(), onsets.end()), onsets.end());

  const Key key = piece.key ? *piece.key : estimate_key(piece);
  const int total_bars = piece.bar_count();

  auto has_onset_in = [&onsets](int lo, int hi) {
    auto it = std::lower_bound(onsets.begin(), onsets.end(), lo);
    return it != onsets.end() && *it < hi;
  };

  std::vector<Fragment> fragments;
  std::size_t next_onset = 0;
  while (next_onset < onsets.size()) {
    const int onset = onsets[next_onset];
    int bar = onset / kSubbeatsPerBar;
    // Onsets in the second half of a bar belong to the next window.
    if (onset % kSubbeatsPerBar >= kSubbeatsPerBar / 2) ++bar;

    int start = bar;
    while (start < total_bars &&
           has_onset_in(start * kSubbeatsPerBar, (start + 2) * kSubbeatsPerBar)) {
      Fragment f;
      f.piece_index = piece_index;
      f.piece_id = piece.id;
      f.start_bar = start;
      f.key = key;
      f.melody = melody_events_in(piece, f.span());
      if (!f.melody.empty()) fragments.push_back(std::move(f));
      start += 2;
    }
    // Skip onsets consumed by the run, then restart after the gap.
    while (next_onset < onsets.size() && onsets[next_onset] < start * kSubbeatsPerBar) {
      ++next_onset;
    }
  }
  return fragments;
}

TokenSequence melody_tokens(const MelodySeq& events, const MelodyVocabulary& vocab) {
  TokenSequence seq{TokenKind::Melody, {}};
  seq.ids.reserve(events.size() * 2);
  for (const MelodyEvent& e : events) {
    seq.ids.push_back(e.pitch == kRestPitch ? vocab.rest() : vocab.pitch(e.pitch));
    seq.ids.push_back(vocab.duration(e.duration));
  }
  return seq;
}

MelodySeq melody_events_of(const TokenSequence& tokens, const MelodyVocabulary& vocab) {
  if (tokens.kind != TokenKind::Melody) throw DataError("expected melody tokens");
  MelodySeq events;
  for (std::size_t i = 0; i + 1 < tokens.ids.size(); i += 2) {
    const int p = tokens.ids[i];
    const int d = tokens.ids[i + 1];
    if (!vocab.is_pitch_or_rest(p) || !vocab.is_duration(d)) {
      throw DataError("malformed melody pair at position " + std::to_string(i));
    }
    events.push_back({p == vocab.rest() ? kRestPitch : p + kMinPitch, d - vocab.rest()});
  }
  if (tokens.ids.size() % 2 != 0) throw DataError("odd melody token count");
  return events;
}

}  // namespace themegen
