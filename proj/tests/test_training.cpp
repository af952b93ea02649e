#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "themegen/synth.hpp"
#include "themegen/training.hpp"

using namespace themegen;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

// One synthetic piece with its delimited stream and tokenized theme excerpt.
TrainPiece themed_piece(std::uint64_t seed = 11) {
  SynthConfig sc;
  sc.pieces = 1;
  sc.seed = seed;
  SynthCorpus corpus = synth_corpus(sc);
  const Piece& piece = corpus.pieces[0];
  TrainPiece out;
  out.piece_index = 0;
  out.tokens = annotate_theme_tokens(encode_piece(piece, vocab()), vocab(), piece.theme_spans);
  out.condition = encode_span(piece, piece.theme_spans.at(0), vocab()).ids;
  return out;
}

ModelConfig tiny_theme_config() {
  ModelConfig cfg;
  cfg.variant = ModelVariant::ThemeTransformer;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.hidden = 16;
  cfg.ffn = 32;
  cfg.max_condition = 128;
  cfg.dropout = 0.0;
  return cfg;
}

}  // namespace

TEST_CASE("admissible window offsets follow the delimiter intervals") {
  // One region whose delimiters sit at exactly tokens 100 and 220 of an
  // 800-token stream.
  TrainPiece piece;
  piece.piece_index = 7;
  piece.tokens.ids.assign(800, vocab().bar());
  piece.tokens.ids[100] = vocab().theme_start();
  piece.tokens.ids[220] = vocab().theme_end();
  piece.condition = {vocab().bar()};

  WindowConfig wc;
  wc.T = 512;
  const std::vector<TrainWindow> windows =
      make_windows({piece}, wc, ModelVariant::ThemeTransformer, vocab());

  // Interval oracle: [s, s+512) meets {100, 220} iff s <= 220 (clipped to the
  // 288 legal offsets), so exactly offsets 0..220 qualify.
  REQUIRE(windows.size() == 221);
  for (std::size_t i = 0; i < windows.size(); ++i) {
    CHECK(windows[i].offset == static_cast<int>(i));
    CHECK(windows[i].piece_index == 7);
    CHECK(windows[i].ids.size() == 512);
    CHECK(windows[i].condition == piece.condition);
  }

  // A window opening mid-region keeps the region's running count.
  const TrainWindow& mid = windows[150];
  CHECK(mid.mask.front() == 1);
  CHECK(mid.cross_positions.front() == 51);  // token 150 is the 51st of the region
  CHECK(mid.mask[70] == 1);                  // token 220 closes the region
  CHECK(mid.cross_positions[70] == 121);
  CHECK(mid.mask[71] == 0);
  CHECK(mid.cross_positions[71] == 1);
}

TEST_CASE("window masks and positions agree with per-window recomputation") {
  WindowConfig wc;
  wc.T = 192;
  wc.tau_max = 160;
  const std::vector<TrainWindow> windows =
      make_windows({themed_piece()}, wc, ModelVariant::ThemeTransformer, vocab());
  REQUIRE(windows.size() > 4);

  int balanced = 0, clipped = 0;
  for (const TrainWindow& w : windows) {
    bool delimiter = false;
    for (int id : w.ids) delimiter |= vocab().is_theme_delimiter(id);
    CHECK(delimiter);
    try {
      const TokenSequence slice{TokenKind::Piano, w.ids};
      const ThemeMask recomputed = theme_mask_of(slice, vocab());
      CHECK(recomputed == w.mask);
      ++balanced;
    } catch (const DataError&) {
      ++clipped;  // window cuts a region open; the sliced mask is the contract
    }
  }
  CHECK(balanced > 0);
  CHECK(clipped > 0);
}

TEST_CASE("prompt windows are stripped, unmasked, and reproducibly subsampled") {
  const TrainPiece piece = themed_piece();
  WindowConfig wc;
  wc.T = 64;
  wc.count = 5;
  wc.seed = 21;

  const auto a = make_windows({piece}, wc, ModelVariant::PromptDecoder, vocab());
  const auto b = make_windows({piece}, wc, ModelVariant::PromptDecoder, vocab());
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].offset == b[i].offset);
    CHECK(a[i].ids == b[i].ids);
    for (int id : a[i].ids) CHECK_FALSE(vocab().is_theme_delimiter(id));
    CHECK(std::all_of(a[i].mask.begin(), a[i].mask.end(), [](auto m) { return m == 0; }));
    CHECK(a[i].condition.empty());
  }
  CHECK(std::is_sorted(a.begin(), a.end(),
                       [](const TrainWindow& x, const TrainWindow& y) {
                         return x.offset < y.offset;
                       }));
}

TEST_CASE("windowing skips short pieces and themeless streams") {
  TrainPiece generous = themed_piece();
  TrainPiece stub;
  stub.piece_index = 3;
  stub.tokens.ids.assign(10, vocab().bar());
  stub.condition = {vocab().bar()};

  WindowConfig wc;
  wc.T = 64;
  wc.tau_max = 128;
  std::vector<int> skipped;
  const auto windows = make_windows({generous, stub}, wc, ModelVariant::ThemeTransformer,
                                    vocab(), &skipped);
  CHECK(windows.size() > 0);
  CHECK(skipped == std::vector<int>{3});

  TrainPiece plain;
  plain.piece_index = 4;
  plain.tokens.ids.assign(200, vocab().bar());
  plain.condition = {vocab().bar()};
  CHECK(make_windows({plain}, wc, ModelVariant::ThemeTransformer, vocab()).empty());

  WindowConfig bad;
  bad.T = 1;
  CHECK_THROWS_AS(make_windows({generous}, bad, ModelVariant::PromptDecoder, vocab()),
                  ConfigError);
  TrainPiece no_condition = generous;
  no_condition.condition.clear();
  CHECK_THROWS_AS(make_windows({no_condition}, wc, ModelVariant::ThemeTransformer, vocab()),
                  DataError);
}

TEST_CASE("window NLL averages the shifted next-token log-probabilities") {
  const ModelConfig cfg = tiny_theme_config();
  std::mt19937_64 rng(31);
  ParamStore<double> store = init_model_params<double>(cfg, rng);

  TrainWindow w;
  w.ids = {vocab().bar(), vocab().subbeat(0), vocab().bar()};
  w.mask = {0, 0, 0};
  w.cross_positions = {1, 1, 1};
  w.condition = {vocab().bar(), vocab().subbeat(0)};

  Graph<double> g;
  TransformerNet<double> net(g, store, cfg);
  const double reported = window_nll(net, cfg, w).value()(0, 0);

  AttentionMemory<double> memory = net.encode_condition(w.condition);
  PositionalPlan plan{{1, 2, 3}, {1, 1, 1}};
  const Mat<double> logits = net.decoder_forward(w.ids, w.mask, &memory, &plan).value();
  double manual = 0;
  for (int t = 0; t < 2; ++t) {
    const auto row = logits.row(t);
    const double peak = row.maxCoeff();
    const double lse = peak + std::log((row.array() - peak).exp().sum());
    manual -= row(w.ids[static_cast<std::size_t>(t) + 1]) - lse;
  }
  CHECK(reported == doctest::Approx(manual / 2).epsilon(1e-12));
}

TEST_CASE("training lowers the loss, reproduces curves, and survives checkpoints") {
  const ModelConfig cfg = tiny_theme_config();
  WindowConfig wc;
  wc.T = 48;
  wc.count = 4;
  wc.tau_max = 128;
  const auto windows = make_windows({themed_piece()}, wc, ModelVariant::ThemeTransformer,
                                    vocab());
  REQUIRE(windows.size() == 4);

  TrainConfig tc;
  tc.steps = 60;
  tc.batch = 2;
  tc.lr = 2e-3;
  tc.seed = 5;

  auto run = [&]() {
    std::mt19937_64 rng(41);
    ParamStore<float> store = init_model_params<float>(cfg, rng);
    auto curve = train_model(store, cfg, tc, windows);
    return std::make_pair(std::move(store), std::move(curve));
  };
  auto [store, curve] = run();
  REQUIRE(curve.size() == 60);
  CHECK(curve.back().second < 0.7 * curve.front().second);

  const auto again = run().second;
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(curve[i].second == again[i].second);

  // The teacher-forced loss is identical after a checkpoint round trip.
  const auto path = std::filesystem::temp_directory_path() / "themegen_train_ckpt.bin";
  save_model(path, store, cfg);
  ParamStore<float> loaded = load_model<float>(path, cfg);
  std::filesystem::remove(path);
  auto nll_value = [&](ParamStore<float>& s) {
    Graph<float> g;
    TransformerNet<float> net(g, s, cfg);
    return window_nll(net, cfg, windows[0]).value()(0, 0);
  };
  CHECK(nll_value(store) == nll_value(loaded));
}

TEST_CASE("training validates windows and aborts on divergence") {
  const ModelConfig cfg = tiny_theme_config();
  std::mt19937_64 rng(43);
  ParamStore<float> store = init_model_params<float>(cfg, rng);
  TrainConfig tc;
  tc.steps = 1;

  CHECK_THROWS_AS(train_model(store, cfg, tc, {}), ConfigError);

  TrainWindow bare;
  bare.ids = {vocab().bar(), vocab().bar()};
  bare.mask = {0, 0};
  bare.cross_positions = {1, 1};
  CHECK_THROWS_AS(train_model(store, cfg, tc, {bare}), DataError);

  bare.condition = {vocab().bar()};
  store.entry("head.b").value.setConstant(std::numeric_limits<float>::quiet_NaN());
  CHECK_THROWS_AS(train_model(store, cfg, tc, {bare}), NumericError);
}

TEST_CASE("periodic checkpoints appear during training") {
  const ModelConfig cfg = tiny_theme_config();
  std::mt19937_64 rng(47);
  ParamStore<float> store = init_model_params<float>(cfg, rng);
  TrainWindow w;
  w.ids = {vocab().bar(), vocab().subbeat(0), vocab().bar(), vocab().subbeat(1)};
  w.mask = {0, 0, 0, 0};
  w.cross_positions = {1, 1, 1, 1};
  w.condition = {vocab().bar()};

  const auto path = std::filesystem::temp_directory_path() / "themegen_periodic_ckpt.bin";
  TrainConfig tc;
  tc.steps = 3;
  tc.batch = 1;
  tc.checkpoint_every = 2;
  tc.checkpoint_path = path;
  train_model(store, cfg, tc, {w});
  ParamStore<float> loaded = load_model<float>(path, cfg);
  CHECK(loaded.step == store.step);
  std::filesystem::remove(path);
}

TEST_CASE("generation respects the prefix contract and stays deterministic") {
  const TrainPiece piece = themed_piece();

  for (ModelVariant variant :
       {ModelVariant::PromptDecoder, ModelVariant::Seq2SeqSE, ModelVariant::ThemeTransformer}) {
    CAPTURE(variant_name(variant));
    ModelConfig cfg = tiny_theme_config();
    cfg.variant = variant;
    std::mt19937_64 rng(53);
    ParamStore<float> store = init_model_params<float>(cfg, rng);

    GenConfig gen;
    gen.temperature = 1.2;
    gen.max_bars = 4;
    gen.max_tokens = 600;
    gen.seed = 9;

    const GenResult a = generate(store, cfg, piece.condition, gen, vocab());
    const GenResult b = generate(store, cfg, piece.condition, gen, vocab());
    CHECK(a.tokens.ids == b.tokens.ids);
    CHECK(a.bars <= gen.max_bars);

    if (variant == ModelVariant::PromptDecoder) {
      REQUIRE(a.tokens.ids.size() >= piece.condition.size());
      CHECK(std::equal(piece.condition.begin(), piece.condition.end(), a.tokens.ids.begin()));
      for (int id : a.tokens.ids) CHECK_FALSE(vocab().is_theme_delimiter(id));
    } else {
      CHECK(a.tokens.ids.front() == vocab().theme_start());
      int opens = 0, closes = 0;
      for (int id : a.tokens.ids) {
        opens += id == vocab().theme_start();
        closes += id == vocab().theme_end();
      }
      CHECK(opens == closes);
      CHECK_NOTHROW(theme_mask_of(a.tokens, vocab()));
    }
    const GrammarCheck check = validate_grammar(a.tokens, vocab());
    CAPTURE(check.rule);
    CAPTURE(check.position);
    CHECK(check.ok);

    // Greedy decoding is deterministic by construction.
    GenConfig greedy = gen;
    greedy.temperature = 0;
    greedy.max_tokens = 80;
    const GenResult g1 = generate(store, cfg, piece.condition, greedy, vocab());
    const GenResult g2 = generate(store, cfg, piece.condition, greedy, vocab());
    CHECK(g1.tokens.ids == g2.tokens.ids);
  }
}

TEST_CASE("a bar-hungry model stops exactly at the bar limit") {
  ModelConfig cfg = tiny_theme_config();
  std::mt19937_64 rng(59);
  ParamStore<float> store = init_model_params<float>(cfg, rng);
  store.entry("head.b").value(0, vocab().bar()) = 50.0f;  // Bar dominates every step

  GenConfig gen;
  gen.temperature = 1.0;
  gen.max_bars = 5;
  gen.max_tokens = 400;
  const GenResult out = generate(store, cfg, {vocab().bar(), vocab().subbeat(0)}, gen, vocab());
  CHECK(out.stop == StopReason::BarLimit);
  CHECK(out.bars == 5);
  CHECK(out.tokens.ids.back() == vocab().theme_end());  // the open region was closed
}

TEST_CASE("free-running sampling still balances delimiters") {
  ModelConfig cfg = tiny_theme_config();
  std::mt19937_64 rng(61);
  ParamStore<float> store = init_model_params<float>(cfg, rng);

  GenConfig gen;
  gen.grammar = false;
  gen.temperature = 1.8;
  gen.max_tokens = 120;
  gen.max_bars = 64;
  const GenResult out = generate(store, cfg, {vocab().bar()}, gen, vocab());
  CHECK(out.tokens.ids.size() > 1);
  int depth = 0;
  bool ordered = true;
  for (int id : out.tokens.ids) {
    if (id == vocab().theme_start()) ordered &= depth == 0, depth = 1;
    if (id == vocab().theme_end()) ordered &= depth == 1, depth = 0;
  }
  CHECK(depth == 0);

  GenConfig bad;
  bad.temperature = -1;
  CHECK_THROWS_AS(generate(store, cfg, {vocab().bar()}, bad, vocab()), ConfigError);
  CHECK_THROWS_AS(generate(store, cfg, {}, gen, vocab()), DataError);
}
