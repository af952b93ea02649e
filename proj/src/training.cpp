#include "themegen/training.hpp"

#include <algorithm>
#include <random>

namespace themegen {

namespace {

struct PieceView {
  int piece_index = 0;
  const std::vector<int>* condition = nullptr;
  TokenSequence stream;        // stripped for the prompt variant
  ThemeMask mask;              // empty for the prompt variant
  PositionalPlan plan;         // likewise
  std::vector<int> delimiters; // prefix counts of Theme-Start/End tokens
};

}  // namespace

std::vector<TrainWindow> make_windows(const std::vector<TrainPiece>& pieces,
                                      const WindowConfig& cfg, ModelVariant variant,
                                      const Vocabulary& vocab, std::vector<int>* skipped) {
  if (cfg.T < 2) throw ConfigError("window length must be at least 2 tokens");
  if (cfg.count < 0) throw ConfigError("window count cannot be negative");
  if (cfg.tau_max < 1) throw ConfigError("tau_max must be at least 1");
  const bool prompt = variant == ModelVariant::PromptDecoder;

  std::vector<PieceView> views;
  std::vector<std::pair<int, int>> candidates;  // (view index, offset)
  for (const TrainPiece& piece : pieces) {
    PieceView view;
    view.piece_index = piece.piece_index;
    view.condition = &piece.condition;
    view.stream = prompt ? strip_theme_tokens(piece.tokens, vocab) : piece.tokens;
    const int length = static_cast<int>(view.stream.ids.size());
    if (length < cfg.T) {
      if (skipped) skipped->push_back(piece.piece_index);
      continue;
    }

    if (!prompt) {
      if (piece.condition.empty()) {
        throw DataError("piece " + std::to_string(piece.piece_index) +
                        " has no theme condition to train against");
      }
      if (static_cast<int>(piece.condition.size()) > cfg.tau_max) {
        throw DataError("piece " + std::to_string(piece.piece_index) + " condition of " +
                        std::to_string(piece.condition.size()) + " tokens exceeds tau_max " +
                        std::to_string(cfg.tau_max));
      }
      view.mask = theme_mask_of(view.stream, vocab);
      view.plan = build_positional_plan(view.stream, vocab, cfg.tau_max);
      view.delimiters.assign(static_cast<std::size_t>(length) + 1, 0);
      for (int i = 0; i < length; ++i) {
        view.delimiters[static_cast<std::size_t>(i) + 1] =
            view.delimiters[static_cast<std::size_t>(i)] +
            (vocab.is_theme_delimiter(view.stream.ids[static_cast<std::size_t>(i)]) ? 1 : 0);
      }
    }

    const int view_index = static_cast<int>(views.size());
    for (int s = 0; s + cfg.T <= length; ++s) {
      if (!prompt) {
        const int inside = view.delimiters[static_cast<std::size_t>(s + cfg.T)] -
                           view.delimiters[static_cast<std::size_t>(s)];
        if (inside == 0) continue;  // a themed window must see a delimiter
      }
      candidates.emplace_back(view_index, s);
    }
    views.push_back(std::move(view));
  }

  if (cfg.count > 0 && static_cast<int>(candidates.size()) > cfg.count) {
    std::mt19937_64 rng(cfg.seed);
    for (int i = 0; i < cfg.count; ++i) {  // partial Fisher-Yates
      const std::size_t j = i + rng() % (candidates.size() - static_cast<std::size_t>(i));
      std::swap(candidates[static_cast<std::size_t>(i)], candidates[j]);
    }
    candidates.resize(static_cast<std::size_t>(cfg.count));
    std::sort(candidates.begin(), candidates.end());
  }

  std::vector<TrainWindow> windows;
  windows.reserve(candidates.size());
  for (const auto& [view_index, s] : candidates) {
    const PieceView& view = views[static_cast<std::size_t>(view_index)];
    TrainWindow w;
    w.piece_index = view.piece_index;
    w.offset = s;
    const auto begin = view.stream.ids.begin() + s;
    w.ids.assign(begin, begin + cfg.T);
    if (prompt) {
      w.mask.assign(static_cast<std::size_t>(cfg.T), 0);
      w.cross_positions.assign(static_cast<std::size_t>(cfg.T), 1);
    } else {
      w.mask.assign(view.mask.begin() + s, view.mask.begin() + s + cfg.T);
      w.cross_positions.assign(view.plan.cross_positions.begin() + s,
                               view.plan.cross_positions.begin() + s + cfg.T);
      w.condition = *view.condition;
    }
    windows.push_back(std::move(w));
  }
  return windows;
}

}  // namespace themegen
