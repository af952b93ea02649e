#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "themegen/transformer.hpp"

namespace themegen {

// ---- windowing -----------------------------------------------------------------

// One annotated piece ready for windowing: the delimited token stream plus
// the condition tokens its windows are trained against (empty for the prompt
// variant, whose streams are stripped of delimiters instead).
struct TrainPiece {
  int piece_index = 0;
  TokenSequence tokens;
  std::vector<int> condition;
};

struct WindowConfig {
  int T = 512;        // window length in tokens
  int count = 0;      // 0 keeps every admissible window, otherwise subsample
  int tau_max = 512;  // longest admissible theme run / condition length
  unsigned seed = 1;
};

// A fixed-length training slice.  Positions restart at 1 per window; cross
// positions are sliced from the piece-level plan so a window that starts
// inside a theme region keeps that region's running count.
struct TrainWindow {
  int piece_index = 0;
  int offset = 0;
  std::vector<int> ids;
  ThemeMask mask;
  std::vector<int> cross_positions;
  std::vector<int> condition;
};

// Theme-aware variants admit exactly the offsets whose window contains a
// Theme-Start or Theme-End token; the prompt variant strips the delimiters
// and admits every offset.  Pieces shorter than T contribute nothing (their
// indices land in `skipped` when given).
std::vector<TrainWindow> make_windows(const std::vector<TrainPiece>& pieces,
                                      const WindowConfig& cfg, ModelVariant variant,
                                      const Vocabulary& vocab,
                                      std::vector<int>* skipped = nullptr);

// ---- teacher-forced training ---------------------------------------------------

struct TrainConfig {
  int steps = 200;
  int batch = 8;
  double lr = 2e-4;
  unsigned seed = 1;
  int checkpoint_every = 0;               // extra saves every k steps (0 = final only)
  std::filesystem::path checkpoint_path;  // empty = never write checkpoints

  void validate() const {
    if (steps < 0 || batch <= 0 || lr <= 0) {
      throw ConfigError("training needs steps >= 0, batch >= 1 and a positive learning rate");
    }
  }
};

// Mean negative log-likelihood of the window's tokens given their prefixes
// (the first token is input only, never predicted).
template <class Scalar>
Var<Scalar> window_nll(const TransformerNet<Scalar>& net, const ModelConfig& cfg,
                       const TrainWindow& window) {
  if (window.ids.size() < 2) throw DataError("a training window needs at least two tokens");
  PositionalPlan plan;
  plan.self_positions = count_from_one(static_cast<int>(window.ids.size()));
  plan.cross_positions = window.cross_positions;

  const AttentionMemory<Scalar>* memory = nullptr;
  AttentionMemory<Scalar> storage;
  if (cfg.has_encoder()) {
    storage = net.encode_condition(window.condition);
    memory = &storage;
  }
  Var<Scalar> logits = net.decoder_forward(window.ids, window.mask, memory, &plan);

  std::vector<int> targets(window.ids.begin() + 1, window.ids.end());
  targets.push_back(-1);  // nothing follows the last token
  return cross_entropy_with_logits(logits, targets, -1);
}

// Adam on batches of windows sampled with replacement.  Returns the loss
// curve; throws NumericError the moment the loss stops being finite.
template <class Scalar>
std::vector<std::pair<int, double>> train_model(ParamStore<Scalar>& store,
                                                const ModelConfig& model_cfg,
                                                const TrainConfig& train_cfg,
                                                const std::vector<TrainWindow>& windows) {
  model_cfg.validate();
  train_cfg.validate();
  if (windows.empty()) throw ConfigError("no training windows; widen the corpus or shrink T");
  for (const TrainWindow& w : windows) {
    if (model_cfg.has_encoder() && w.condition.empty()) {
      throw DataError("window without a condition cannot train an encoder variant");
    }
  }

  std::mt19937_64 rng(train_cfg.seed);
  std::vector<std::pair<int, double>> curve;
  curve.reserve(static_cast<std::size_t>(train_cfg.steps));
  for (int step = 0; step < train_cfg.steps; ++step) {
    Graph<Scalar> g;
    std::mt19937_64 dropout_rng(rng());
    TransformerNet<Scalar> net(g, store, model_cfg, &dropout_rng);

    Var<Scalar> total;
    for (int b = 0; b < train_cfg.batch; ++b) {
      const TrainWindow& w = windows[rng() % windows.size()];
      Var<Scalar> nll = window_nll(net, model_cfg, w);
      total = b == 0 ? nll : add(total, nll);
    }
    Var<Scalar> loss = scale(total, Scalar(1) / static_cast<Scalar>(train_cfg.batch));
    const double loss_value = static_cast<double>(loss.value()(0, 0));
    if (!std::isfinite(loss_value)) {
      throw NumericError("training diverged (non-finite loss) at step " + std::to_string(step));
    }
    g.backward(loss);
    adam_step(store, train_cfg.lr);
    curve.emplace_back(step, loss_value);

    if (!train_cfg.checkpoint_path.empty() && train_cfg.checkpoint_every > 0 &&
        (step + 1) % train_cfg.checkpoint_every == 0) {
      save_model(train_cfg.checkpoint_path, store, model_cfg);
    }
  }
  if (!train_cfg.checkpoint_path.empty()) {
    save_model(train_cfg.checkpoint_path, store, model_cfg);
  }
  return curve;
}

// ---- sampling ------------------------------------------------------------------

struct GenConfig {
  double temperature = 1.2;  // 0 means greedy argmax
  int max_bars = 64;
  int max_tokens = 2048;
  unsigned seed = 1;
  bool grammar = true;  // mask candidates the token grammar rejects

  void validate() const {
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
    if (max_bars < 1) throw ConfigError("generation needs max_bars >= 1");
    if (max_tokens < 1) throw ConfigError("generation needs max_tokens >= 1");
  }
};

enum class StopReason { BarLimit, TokenCap, NoValidCandidate };

struct GenResult {
  TokenSequence tokens{TokenKind::Piano, {}};
  StopReason stop = StopReason::TokenCap;
  int bars = 0;
};

namespace detail {

// Inverse-CDF draw over exp((logit - peak)/t) restricted to `allowed`;
// temperature 0 collapses to argmax.  Returns -1 when nothing is allowed.
template <class Scalar>
int sample_token(const Row<Scalar>& logits, const std::vector<char>& allowed, double temperature,
                 std::mt19937_64& rng) {
  int best = -1;
  double peak = -HUGE_VAL;
  for (int i = 0; i < logits.cols(); ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    const double v = static_cast<double>(logits(0, i));
    if (!std::isfinite(v)) throw NumericError("generation produced a non-finite logit");
    if (v > peak) {
      peak = v;
      best = i;
    }
  }
  if (best < 0) return -1;
  if (temperature == 0) return best;

  std::vector<double> weights(static_cast<std::size_t>(logits.cols()), 0.0);
  double total = 0;
  for (int i = 0; i < logits.cols(); ++i) {
    if (!allowed[static_cast<std::size_t>(i)]) continue;
    const double w = std::exp((static_cast<double>(logits(0, i)) - peak) / temperature);
    weights[static_cast<std::size_t>(i)] = w;
    total += w;
  }
  const double mark = uniform01(rng) * total;
  double running = 0;
  for (int i = 0; i < logits.cols(); ++i) {
    running += weights[static_cast<std::size_t>(i)];
    if (running >= mark && allowed[static_cast<std::size_t>(i)]) return i;
  }
  return best;  // floating-point shortfall lands on the peak
}

}  // namespace detail

// Autoregressive temperature sampling.  Theme-aware variants open with a
// single Theme-Start and keep the mask and aligned positions updated as
// delimiters are emitted; the prompt variant instead seeds the stream with
// the condition tokens themselves.  Stops at the max_bars-th Bar token or at
// the token cap, whichever is first; an open theme region is closed (adding
// the Theme-End the region is owed) so delimiters always balance.  Padding
// never leaves the sampler, and the prompt variant never emits delimiters it
// was not trained on.
template <class Scalar>
GenResult generate(ParamStore<Scalar>& store, const ModelConfig& model_cfg,
                   const std::vector<int>& condition, const GenConfig& gen_cfg,
                   const Vocabulary& vocab) {
  model_cfg.validate();
  gen_cfg.validate();
  const bool prompt = model_cfg.variant == ModelVariant::PromptDecoder;
  if (condition.empty()) throw DataError("generation needs a non-empty condition");

  IncrementalDecoder<Scalar> decoder(store, model_cfg,
                                     prompt ? std::vector<int>{} : condition);
  OnlinePositionalPlan plan(model_cfg.max_condition);
  GrammarCursor cursor(vocab);  // advanced only while constrained sampling is on
  GenResult result;
  std::mt19937_64 rng(gen_cfg.seed);

  Row<Scalar> logits;
  int bars = 0;
  auto consume = [&](int id) {
    const auto step = plan.push(id, vocab);
    if (gen_cfg.grammar) cursor.advance(id);
    if (id == vocab.bar()) ++bars;
    logits = decoder.step(id, step.mask_bit, step.cross_position);
    result.tokens.ids.push_back(id);
  };

  const std::vector<int> prefix = prompt ? condition : std::vector<int>{vocab.theme_start()};
  for (int id : prefix) consume(id);

  result.stop = StopReason::TokenCap;
  while (static_cast<int>(result.tokens.ids.size()) < gen_cfg.max_tokens) {
    std::vector<char> allowed(static_cast<std::size_t>(model_cfg.vocab), 0);
    for (int id = 0; id < model_cfg.vocab; ++id) {
      if (id == vocab.padding()) continue;  // infrastructure token, never sampled
      if (prompt && vocab.is_theme_delimiter(id)) continue;
      allowed[static_cast<std::size_t>(id)] = !gen_cfg.grammar || cursor.accepts(id);
    }
    const int next = detail::sample_token(logits, allowed, gen_cfg.temperature, rng);
    if (next < 0) {
      result.stop = StopReason::NoValidCandidate;
      break;
    }
    consume(next);
    if (bars >= gen_cfg.max_bars) {
      result.stop = StopReason::BarLimit;
      break;
    }
  }

  // Balance the delimiters: close the open region, first dropping any
  // dangling note triple that would keep the closing token ungrammatical.
  if (plan.in_theme()) {
    if (gen_cfg.grammar) {
      while (!result.tokens.ids.empty()) {
        GrammarCursor replay(vocab);
        for (int id : result.tokens.ids) replay.advance(id);
        if (replay.accepts(vocab.theme_end())) break;
        result.tokens.ids.pop_back();
      }
    }
    result.tokens.ids.push_back(vocab.theme_end());
  }
  result.bars = 0;
  for (int id : result.tokens.ids) {
    if (id == vocab.bar()) ++result.bars;
  }
  return result;
}

}  // namespace themegen
