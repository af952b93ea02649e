#include <doctest.h>

#include <set>

#include "themegen/codec.hpp"
#include "themegen/errors.hpp"
#include "themegen/synth.hpp"

using namespace themegen;

TEST_CASE("synthesis is deterministic per seed") {
  SynthConfig cfg;
  const Piece a = synth_piece("p", 5, cfg);
  const Piece b = synth_piece("p", 5, cfg);
  const Piece c = synth_piece("p", 6, cfg);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("pieces come out canonical with the requested theme statements") {
  SynthConfig cfg;
  cfg.occurrences = 4;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Piece p = synth_piece("p", seed, cfg);

    Piece copy = p;
    CHECK(canonicalize(copy) == 0);
    CHECK(copy == p);

    REQUIRE(p.theme_spans.size() == 4);
    for (const BarSpan& span : p.theme_spans) {
      CHECK(span.length() == 2);
      CHECK(span.begin % 2 == 0);  // statements stay on the two-bar grid
      // Each statement carries melody notes.
      CHECK(!melody_events_in(p, span).empty());
    }
    // Statements are separated, in order.
    for (std::size_t i = 1; i < p.theme_spans.size(); ++i) {
      CHECK(p.theme_spans[i].begin >= p.theme_spans[i - 1].end);
    }
    REQUIRE(p.tempo.size() == 1);
    CHECK(p.tempo[0].onset == 0);
    REQUIRE(p.key.has_value());
  }
}

TEST_CASE("zero variation budget restates the theme verbatim") {
  SynthConfig cfg;
  cfg.occurrences = 3;
  cfg.variation_budget = 0;
  const Piece p = synth_piece("p", 11, cfg);
  const MelodySeq original = melody_events_in(p, p.theme_spans[0]);
  for (const BarSpan& span : p.theme_spans) {
    CHECK(melody_events_in(p, span) == original);
  }
}

TEST_CASE("statements with a variation budget are pairwise distinct") {
  SynthConfig cfg;
  cfg.occurrences = 4;
  cfg.variation_budget = 2;
  int distinct_runs = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Piece p = synth_piece("p", seed, cfg);
    std::set<MelodySeq> versions;
    for (const BarSpan& span : p.theme_spans) {
      versions.insert(melody_events_in(p, span));
    }
    if (versions.size() == p.theme_spans.size()) ++distinct_runs;
  }
  CHECK(distinct_runs == 10);
}

TEST_CASE("variation audit names the operators applied") {
  SynthConfig cfg;
  cfg.occurrences = 3;
  cfg.variation_budget = 1;
  SynthAudit audit;
  synth_piece("p", 21, cfg, &audit);
  CHECK(audit.piece_id == "p");
  REQUIRE(audit.lines.size() == 3);
  CHECK(audit.lines[0].find("ops=none") != std::string::npos);
  for (std::size_t i = 1; i < audit.lines.size(); ++i) {
    CHECK(audit.lines[i].find("ops=") != std::string::npos);
    CHECK(audit.lines[i].find("ops=none") == std::string::npos);
  }
}

TEST_CASE("corpus generation produces labelled pieces") {
  SynthConfig cfg;
  cfg.pieces = 5;
  cfg.seed = 77;
  const SynthCorpus corpus = synth_corpus(cfg);
  REQUIRE(corpus.pieces.size() == 5);
  REQUIRE(corpus.audits.size() == 5);
  std::set<std::string> ids;
  for (const Piece& p : corpus.pieces) {
    ids.insert(p.id);
    const auto& beats = corpus.labels.beats_by_id.at(p.id);
    CHECK(beats.size() == p.theme_spans.size() * 8);  // two bars = eight beats
    CHECK(beats == spans_to_beats(p.theme_spans));
  }
  CHECK(ids.size() == 5);

  const SynthCorpus again = synth_corpus(cfg);
  CHECK(again.pieces.size() == corpus.pieces.size());
  for (std::size_t i = 0; i < corpus.pieces.size(); ++i) {
    CHECK(again.pieces[i] == corpus.pieces[i]);
  }
}

TEST_CASE("synthetic pieces slice into fragments aligned with the statements") {
  SynthConfig cfg;
  cfg.occurrences = 3;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Piece p = synth_piece("p", seed, cfg);
    const auto fragments = slice_fragments(p);
    std::set<int> starts;
    for (const Fragment& f : fragments) starts.insert(f.start_bar);
    for (const BarSpan& span : p.theme_spans) {
      CHECK(starts.count(span.begin) == 1);
    }
  }
}

TEST_CASE("config validation") {
  SynthConfig cfg;
  cfg.occurrences = 0;
  CHECK_THROWS_AS(synth_piece("p", 1, cfg), ConfigError);
  SynthConfig bad_filler;
  bad_filler.min_filler_bars = 4;
  bad_filler.max_filler_bars = 2;
  CHECK_THROWS_AS(synth_piece("p", 1, bad_filler), ConfigError);
  SynthConfig no_pieces;
  no_pieces.pieces = 0;
  CHECK_THROWS_AS(synth_corpus(no_pieces), ConfigError);
}
