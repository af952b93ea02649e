#include <doctest.h>

#include "themegen/codec.hpp"
#include "themegen/errors.hpp"
#include "themegen/synth.hpp"

using namespace themegen;

namespace {

Piece single_note_piece() {
  Piece p;
  p.id = "one";
  p.notes = {{Track::Melody, 0, 72, 64, 4}};
  p.tempo = {{0, 119}};
  return p;
}

}  // namespace

TEST_CASE("encoding a single-note bar emits the documented six tokens") {
  Vocabulary v;
  const TokenSequence seq = encode_piece(single_note_piece(), v);
  const std::vector<int> expected = {
      v.bar(), v.subbeat(0), v.tempo_token(119),
      v.note_pitch(Track::Melody, 72), v.note_velocity(Track::Melody, 64),
      v.note_duration(Track::Melody, 4)};
  CHECK(seq.ids == expected);
  CHECK(seq.ids == std::vector<int>{710, 711, 668, 71, 445, 257});
}

TEST_CASE("subbeats ascend and melody precedes accompaniment") {
  Vocabulary v;
  Piece p;
  p.notes = {{Track::Accompaniment, 8, 48, 50, 2},
             {Track::Melody, 8, 72, 64, 2},
             {Track::Melody, 2, 60, 64, 2}};
  canonicalize(p);
  const TokenSequence seq = encode_piece(p, v);
  const std::vector<int> expected = {
      v.bar(),
      v.subbeat(2), v.note_pitch(Track::Melody, 60), v.note_velocity(Track::Melody, 64),
      v.note_duration(Track::Melody, 2),
      v.subbeat(8), v.note_pitch(Track::Melody, 72), v.note_velocity(Track::Melody, 64),
      v.note_duration(Track::Melody, 2), v.note_pitch(Track::Accompaniment, 48),
      v.note_velocity(Track::Accompaniment, 50), v.note_duration(Track::Accompaniment, 2)};
  CHECK(seq.ids == expected);
}

TEST_CASE("tempo changes occupy their own subbeat when no note starts there") {
  Vocabulary v;
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4}};
  p.tempo = {{0, 119}, {20, 140}};  // change on a beat where no note starts
  canonicalize(p);
  const TokenSequence seq = encode_piece(p, v);
  const std::vector<int> expected = {
      v.bar(), v.subbeat(0), v.tempo_token(119), v.note_pitch(Track::Melody, 60),
      v.note_velocity(Track::Melody, 64), v.note_duration(Track::Melody, 4),
      v.bar(), v.subbeat(4), v.tempo_token(140)};
  CHECK(seq.ids == expected);
}

TEST_CASE("decode inverts encode on canonical pieces") {
  Vocabulary v;
  for (std::uint64_t seed : {1ULL, 7ULL, 42ULL}) {
    SynthConfig cfg;
    cfg.occurrences = 2;
    Piece p = synth_piece("rt", seed, cfg);
    p.theme_spans.clear();  // delimiters are annotated separately
    p.key_events.clear();   // keys live in MIDI/manifest metadata, not tokens
    p.key.reset();

    const TokenSequence seq = encode_piece(p, v);
    Piece back = decode_tokens(seq, v);
    back.id = p.id;
    CHECK(back == p);
    CHECK(encode_piece(back, v).ids == seq.ids);
  }
}

TEST_CASE("decode rejects ungrammatical sequences with position and rule") {
  Vocabulary v;

  auto check_rejects = [&](std::vector<int> ids, std::size_t pos, const std::string& rule) {
    const GrammarCheck check = validate_grammar({TokenKind::Piano, ids}, v);
    CHECK(!check.ok);
    CHECK(check.position == pos);
    CHECK(check.rule == rule);
    CHECK_THROWS_AS(decode_tokens({TokenKind::Piano, ids}, v), DataError);
  };

  check_rejects({v.subbeat(0)}, 0, "subbeat-outside-bar");
  check_rejects({v.bar(), v.tempo_token(119)}, 1, "tempo-needs-subbeat");
  check_rejects({v.bar(), v.subbeat(4), v.subbeat(4)}, 2, "subbeat-not-increasing");
  check_rejects({v.bar(), v.subbeat(4), v.subbeat(2)}, 2, "subbeat-not-increasing");
  check_rejects({v.bar(), v.note_pitch(Track::Melody, 60)}, 1, "note-needs-subbeat");
  check_rejects({v.bar(), v.subbeat(0), v.note_pitch(Track::Melody, 60), v.bar()}, 3,
                "incomplete-note-triple");
  check_rejects({v.bar(), v.subbeat(0), v.note_pitch(Track::Melody, 60),
                 v.note_velocity(Track::Accompaniment, 64)},
                3, "note-triple-track-mismatch");
  check_rejects({v.bar(), v.subbeat(0), v.note_velocity(Track::Melody, 64)}, 2,
                "note-triple-order");
  check_rejects({v.theme_end()}, 0, "theme-not-open");
  check_rejects({v.theme_start(), v.bar(), v.theme_start()}, 2, "theme-already-open");
  check_rejects({v.padding(), v.bar()}, 1, "padding-must-trail");
}

TEST_CASE("grammar accepts a fully-formed themed sequence") {
  Vocabulary v;
  const std::vector<int> ids = {
      v.theme_start(), v.bar(), v.subbeat(0), v.tempo_token(119),
      v.note_pitch(Track::Melody, 60), v.note_velocity(Track::Melody, 64),
      v.note_duration(Track::Melody, 4), v.theme_end(), v.bar(),
      v.padding(), v.padding()};
  const GrammarCheck check = validate_grammar({TokenKind::Piano, ids}, v);
  CHECK(check.ok);
}

TEST_CASE("theme annotation brackets the spans and masks cover them") {
  Vocabulary v;
  Piece p;
  for (int bar = 0; bar < 4; ++bar) {
    p.notes.push_back({Track::Melody, bar * kSubbeatsPerBar, 60 + bar, 64, 4});
  }
  const TokenSequence plain = encode_piece(p, v);
  const TokenSequence annotated = annotate_theme_tokens(plain, v, {{1, 3}});

  REQUIRE(annotated.ids.size() == plain.ids.size() + 2);
  // Theme-Start sits immediately before the second Bar token.
  int bars_seen = 0;
  for (std::size_t i = 0; i < annotated.ids.size(); ++i) {
    if (annotated.ids[i] == v.theme_start()) {
      REQUIRE(i + 1 < annotated.ids.size());
      CHECK(annotated.ids[i + 1] == v.bar());
      CHECK(bars_seen == 1);
    }
    if (annotated.ids[i] == v.bar()) ++bars_seen;
  }
  // Theme-End sits immediately before the fourth Bar token.
  const auto spans = theme_spans_of(annotated, v);
  REQUIRE(spans.size() == 1);
  CHECK(spans[0] == BarSpan{1, 3});

  const ThemeMask mask = theme_mask_of(annotated, v);
  std::size_t start = 0, end = 0;
  for (std::size_t i = 0; i < annotated.ids.size(); ++i) {
    if (annotated.ids[i] == v.theme_start()) start = i;
    if (annotated.ids[i] == v.theme_end()) end = i;
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    CHECK(mask[i] == (i >= start && i <= end ? 1 : 0));
  }

  CHECK(validate_grammar(annotated, v).ok);
  CHECK(strip_theme_tokens(annotated, v).ids == plain.ids);
}

TEST_CASE("annotation supports spans touching the final bar and rejects bad spans") {
  Vocabulary v;
  Piece p;
  for (int bar = 0; bar < 4; ++bar) {
    p.notes.push_back({Track::Melody, bar * kSubbeatsPerBar, 60, 64, 4});
  }
  const TokenSequence plain = encode_piece(p, v);

  const TokenSequence tail = annotate_theme_tokens(plain, v, {{2, 4}});
  CHECK(tail.ids.back() == v.theme_end());
  CHECK(theme_spans_of(tail, v) == std::vector<BarSpan>{{2, 4}});

  // Adjacent spans close and reopen between the same two bars.
  const TokenSequence adjacent = annotate_theme_tokens(plain, v, {{0, 2}, {2, 4}});
  CHECK(theme_spans_of(adjacent, v) == std::vector<BarSpan>{{0, 2}, {2, 4}});
  CHECK(validate_grammar(adjacent, v).ok);

  CHECK_THROWS_AS(annotate_theme_tokens(plain, v, {{0, 3}, {2, 4}}), DataError);
  CHECK_THROWS_AS(annotate_theme_tokens(plain, v, {{3, 5}}), DataError);
  CHECK_THROWS_AS(annotate_theme_tokens(plain, v, {{4, 6}}), DataError);
  CHECK_THROWS_AS(annotate_theme_tokens(plain, v, {{2, 2}}), DataError);
}

TEST_CASE("fragment slicing follows the two-bar window procedure") {
  Piece p;
  // Melody in bars 0-3 and 6-7; nothing in bars 4-5.
  for (int bar : {0, 1, 2, 3, 6, 7}) {
    p.notes.push_back({Track::Melody, bar * kSubbeatsPerBar, 60 + bar, 64, 4});
  }
  p.notes.push_back({Track::Accompaniment, 4 * kSubbeatsPerBar, 40, 50, 4});

  const auto fragments = slice_fragments(p, 3);
  REQUIRE(fragments.size() == 3);
  CHECK(fragments[0].start_bar == 0);
  CHECK(fragments[1].start_bar == 2);
  CHECK(fragments[2].start_bar == 6);
  CHECK(fragments[0].piece_index == 3);
}

TEST_CASE("fragment slicing starts at the next bar for late first onsets") {
  Piece p;
  p.notes = {{Track::Melody, 8, 55, 64, 2},   // second half of bar 0
             {Track::Melody, 16, 60, 64, 4},
             {Track::Melody, 32, 62, 64, 4}};
  const auto fragments = slice_fragments(p);
  REQUIRE(fragments.size() == 1);
  CHECK(fragments[0].start_bar == 1);

  Piece early;
  early.notes = {{Track::Melody, 7, 55, 64, 2}};  // first half of bar 0
  const auto f2 = slice_fragments(early);
  REQUIRE(f2.size() == 1);
  CHECK(f2[0].start_bar == 0);
}

TEST_CASE("melody events form a monophonic timeline with rests") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 4},
             {Track::Melody, 4, 64, 64, 4},
             {Track::Accompaniment, 4, 30, 50, 8},  // ignored: wrong track
             {Track::Melody, 4, 55, 64, 4},         // ignored: skyline keeps 64
             {Track::Melody, 12, 67, 64, 2}};
  const MelodySeq events = melody_events_in(p, {0, 1});
  const MelodySeq expected = {{60, 4}, {64, 4}, {kRestPitch, 4}, {67, 2}};
  CHECK(events == expected);
}

TEST_CASE("melody durations truncate at the next onset and the span end") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 16}, {Track::Melody, 4, 62, 64, 64}};
  const MelodySeq events = melody_events_in(p, {0, 1});
  const MelodySeq expected = {{60, 4}, {62, 12}};
  CHECK(events == expected);

  CHECK(melody_events_in(p, {1, 2}).empty());  // tails without onsets do not count
}

TEST_CASE("long gaps split into multiple rests") {
  Piece p;
  p.notes = {{Track::Melody, 0, 60, 64, 2}, {Track::Melody, 80, 62, 64, 2}};
  const MelodySeq events = melody_events_in(p, {0, 6});
  const MelodySeq expected = {{60, 2}, {kRestPitch, 64}, {kRestPitch, 14}, {62, 2}};
  CHECK(events == expected);
}

TEST_CASE("melody token pairs round-trip") {
  MelodyVocabulary mv;
  const MelodySeq events = {{60, 4}, {kRestPitch, 8}, {72, 2}};
  const TokenSequence seq = melody_tokens(events, mv);
  CHECK(seq.kind == TokenKind::Melody);
  CHECK(seq.ids == std::vector<int>{59, 131, 127, 135, 71, 129});
  CHECK(melody_events_of(seq, mv) == events);
}
