#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "themegen/checkpoint.hpp"
#include "themegen/codec.hpp"
#include "themegen/graph.hpp"

namespace themegen {

// Three generator architectures over the piano token alphabet:
//  - PromptDecoder: a plain causal decoder; the condition is just a prefix.
//  - Seq2SeqSE: encoder/decoder with cascaded self+cross attention and a
//    learned two-entry segment table marking in-theme positions.
//  - ThemeTransformer: encoder/decoder whose decoder layers run self- and
//    cross-attention in parallel and blend them with a gate driven by the
//    theme-region mask; inside theme regions the upper half of the layers
//    drops the self route entirely.  Cross-attention queries use positions
//    that restart at 1 on every Theme-Start so in-theme tokens line up with
//    condition positions 1..tau.
enum class ModelVariant { PromptDecoder, Seq2SeqSE, ThemeTransformer };

inline const char* variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::PromptDecoder: return "prompt";
    case ModelVariant::Seq2SeqSE: return "seq2seq";
    case ModelVariant::ThemeTransformer: return "theme";
  }
  throw ConfigError("unknown model variant");
}

inline ModelVariant variant_from_name(const std::string& name) {
  if (name == "prompt") return ModelVariant::PromptDecoder;
  if (name == "seq2seq") return ModelVariant::Seq2SeqSE;
  if (name == "theme") return ModelVariant::ThemeTransformer;
  throw ConfigError("unknown model variant '" + name + "' (prompt, seq2seq, theme)");
}

struct ModelConfig {
  ModelVariant variant = ModelVariant::ThemeTransformer;
  int vocab = Vocabulary{}.size();
  int layers = 6;  // decoder depth; the two-stream variants add as many encoder layers
  int heads = 8;
  int hidden = 256;
  int ffn = 1024;
  int max_condition = 512;  // longest condition the encoder (and the aligned positions) accepts
  double dropout = 0.1;

  bool has_encoder() const { return variant != ModelVariant::PromptDecoder; }

  void validate() const {
    if (vocab <= 0 || layers <= 0 || heads <= 0 || hidden <= 0 || ffn <= 0 ||
        max_condition <= 0) {
      throw ConfigError("model config fields must be positive");
    }
    if (layers % 2 != 0) throw ConfigError("layer count must be even (the gate splits halves)");
    if (hidden % heads != 0) {
      throw ConfigError("hidden size " + std::to_string(hidden) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    }
    if (hidden % 2 != 0) throw ConfigError("hidden size must be even for sinusoidal positions");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  }

  std::string config_string() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "gen %s v%d l%d h%d hd%d f%d c%d d%g", variant_name(variant),
                  vocab, layers, hidden, heads, ffn, max_condition, dropout);
    return buf;
  }
  std::uint64_t config_hash() const { return fnv1a64(config_string()); }
};

// ---- positions -----------------------------------------------------------------

// Classic fixed encoding; positions are 1-based throughout this module.
template <class Scalar>
Mat<Scalar> sinusoidal_encoding(const std::vector<int>& positions, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ConfigError("sinusoidal encoding needs an even dimension");
  Mat<Scalar> pe(static_cast<int>(positions.size()), dim);
  for (int r = 0; r < pe.rows(); ++r) {
    for (int i = 0; i < dim / 2; ++i) {
      const double angle =
          positions[static_cast<std::size_t>(r)] / std::pow(10000.0, (2.0 * i) / dim);
      pe(r, 2 * i) = static_cast<Scalar>(std::sin(angle));
      pe(r, 2 * i + 1) = static_cast<Scalar>(std::cos(angle));
    }
  }
  return pe;
}

inline std::vector<int> count_from_one(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 1);
  return v;
}

// Per-token position indices for the decoder.  self_positions run 1..T.
// cross_positions restart at 1 on each Theme-Start, count up until the
// matching Theme-End, and hold the inert value 1 outside theme regions
// (where the gate multiplies the cross route by zero anyway).
struct PositionalPlan {
  std::vector<int> self_positions;
  std::vector<int> cross_positions;
};

// Mask form: every maximal run of 1s counts 1..run length.  A mask cannot
// tell two back-to-back regions apart; build from tokens when that matters.
inline PositionalPlan build_positional_plan(const ThemeMask& mask, int tau_max) {
  PositionalPlan plan;
  plan.self_positions = count_from_one(static_cast<int>(mask.size()));
  plan.cross_positions.resize(mask.size(), 1);
  int run = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    run = mask[i] ? run + 1 : 0;
    if (run > tau_max) {
      throw DataError("theme region exceeds the configured condition capacity of " +
                      std::to_string(tau_max));
    }
    if (run > 0) plan.cross_positions[i] = run;
  }
  return plan;
}

// Token form: restarts exactly at each Theme-Start, so adjacent regions get
// independent counts.  Delimiters sit inside their region (mask and position
// both cover them).  Unbalanced delimiters are rejected here; the online
// variant below tolerates a still-open region.
inline PositionalPlan build_positional_plan(const TokenSequence& tokens, const Vocabulary& vocab,
                                            int tau_max) {
  theme_mask_of(tokens, vocab);  // validates the alternation
  PositionalPlan plan;
  plan.self_positions = count_from_one(static_cast<int>(tokens.ids.size()));
  plan.cross_positions.assign(tokens.ids.size(), 1);
  bool open = false;
  int run = 0;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const int id = tokens.ids[i];
    if (id == vocab.theme_start()) {
      open = true;
      run = 0;
    }
    if (open) {
      if (++run > tau_max) {
        throw DataError("theme region exceeds the configured condition capacity of " +
                        std::to_string(tau_max));
      }
      plan.cross_positions[i] = run;
    }
    if (id == vocab.theme_end()) open = false;
  }
  return plan;
}

// Incremental form used while sampling: feed each token as it is emitted.
// Deliberately lenient where the offline builder throws — the count restarts
// at every Theme-Start (even a nested one from an unconstrained model), a
// stray Theme-End is inert, an unterminated region is simply still open, and
// the position saturates at tau_max instead of failing mid-generation.
class OnlinePositionalPlan {
 public:
  struct Step {
    int self_position;
    int cross_position;
    int mask_bit;
  };

  explicit OnlinePositionalPlan(int tau_max) : tau_max_(tau_max) {
    if (tau_max <= 0) throw ConfigError("online positional plan needs tau_max >= 1");
  }

  Step push(int token_id, const Vocabulary& vocab) {
    ++self_;
    if (token_id == vocab.theme_start()) {
      open_ = true;
      run_ = 0;
    }
    Step step;
    step.self_position = self_;
    step.mask_bit = open_ ? 1 : 0;
    step.cross_position = open_ ? std::min(++run_, tau_max_) : 1;
    if (token_id == vocab.theme_end()) {
      open_ = false;  // the delimiter itself already got mask bit 1 above
    }
    return step;
  }

  bool in_theme() const { return open_; }
  int length() const { return self_; }

 private:
  int tau_max_;
  int self_ = 0;
  int run_ = 0;
  bool open_ = false;
};

// ---- parameters ----------------------------------------------------------------

template <class Scalar>
ParamStore<Scalar> init_model_params(const ModelConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ParamStore<Scalar> store;
  auto block = [&](const std::string& L, bool parallel_cross, bool cascaded_cross) {
    store.create(L + ".ln1.g", Mat<Scalar>::Ones(1, cfg.hidden));
    store.create(L + ".ln1.b", Mat<Scalar>::Zero(1, cfg.hidden));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
      store.create(L + w, xavier_init<Scalar>(cfg.hidden, cfg.hidden, rng));
    }
    if (parallel_cross) {  // extra key/value projections; query and output shared
      store.create(L + ".attn.xk", xavier_init<Scalar>(cfg.hidden, cfg.hidden, rng));
      store.create(L + ".attn.xv", xavier_init<Scalar>(cfg.hidden, cfg.hidden, rng));
    }
    if (cascaded_cross) {  // a full second attention sublayer
      store.create(L + ".lnx.g", Mat<Scalar>::Ones(1, cfg.hidden));
      store.create(L + ".lnx.b", Mat<Scalar>::Zero(1, cfg.hidden));
      for (const char* w : {".xattn.wq", ".xattn.wk", ".xattn.wv", ".xattn.wo"}) {
        store.create(L + w, xavier_init<Scalar>(cfg.hidden, cfg.hidden, rng));
      }
    }
    store.create(L + ".ln2.g", Mat<Scalar>::Ones(1, cfg.hidden));
    store.create(L + ".ln2.b", Mat<Scalar>::Zero(1, cfg.hidden));
    store.create(L + ".ffn.w1", xavier_init<Scalar>(cfg.hidden, cfg.ffn, rng));
    store.create(L + ".ffn.b1", Mat<Scalar>::Zero(1, cfg.ffn));
    store.create(L + ".ffn.w2", xavier_init<Scalar>(cfg.ffn, cfg.hidden, rng));
    store.create(L + ".ffn.b2", Mat<Scalar>::Zero(1, cfg.hidden));
  };

  store.create("tok", normal_init<Scalar>(cfg.vocab, cfg.hidden, 0.02, rng));
  if (cfg.has_encoder()) {
    for (int l = 0; l < cfg.layers; ++l) block("enc.l" + std::to_string(l), false, false);
    store.create("enc.ln.g", Mat<Scalar>::Ones(1, cfg.hidden));
    store.create("enc.ln.b", Mat<Scalar>::Zero(1, cfg.hidden));
  }
  if (cfg.variant == ModelVariant::Seq2SeqSE) {
    store.create("se", normal_init<Scalar>(2, cfg.hidden, 0.02, rng));
  }
  for (int l = 0; l < cfg.layers; ++l) {
    block("dec.l" + std::to_string(l), cfg.variant == ModelVariant::ThemeTransformer,
          cfg.variant == ModelVariant::Seq2SeqSE);
  }
  store.create("dec.ln.g", Mat<Scalar>::Ones(1, cfg.hidden));
  store.create("dec.ln.b", Mat<Scalar>::Zero(1, cfg.hidden));
  store.create("head.w", xavier_init<Scalar>(cfg.hidden, cfg.vocab, rng));
  store.create("head.b", Mat<Scalar>::Zero(1, cfg.vocab));
  return store;
}

// Per-decoder-layer key/value tensors projected from the condition.
template <class Scalar>
struct AttentionMemory {
  std::vector<Var<Scalar>> keys;
  std::vector<Var<Scalar>> values;
  int length = 0;
};

// ---- the network ---------------------------------------------------------------

// Binds one parameter store into one graph; build a fresh instance per batch
// graph.  Pass a dropout engine only while training.
template <class Scalar>
class TransformerNet {
 public:
  TransformerNet(Graph<Scalar>& graph, ParamStore<Scalar>& store, const ModelConfig& cfg,
                 std::mt19937_64* dropout_rng = nullptr)
      : g_(&graph), cfg_(cfg), rng_(dropout_rng) {
    cfg_.validate();
    for (const auto& [name, entry] : store.entries) vars_.emplace(name, graph.param(store, name));
  }

  // Runs the bidirectional condition encoder and projects each layer's
  // normalized output through the matching decoder layer's key/value maps.
  AttentionMemory<Scalar> encode_condition(const std::vector<int>& condition_ids) const {
    if (!cfg_.has_encoder()) throw ConfigError("the prompt variant has no condition encoder");
    const int tau = static_cast<int>(condition_ids.size());
    if (tau < 1) throw DataError("cannot encode an empty condition");
    if (tau > cfg_.max_condition) {
      throw DataError("condition of " + std::to_string(tau) +
                      " tokens exceeds the configured capacity of " +
                      std::to_string(cfg_.max_condition));
    }
    const bool theme = cfg_.variant == ModelVariant::ThemeTransformer;
    Var<Scalar> pe = g_->constant(sinusoidal_encoding<Scalar>(count_from_one(tau), cfg_.hidden));

    Var<Scalar> x = add(lookup_rows(p("tok"), condition_ids), pe);
    if (cfg_.variant == ModelVariant::Seq2SeqSE) {
      x = add(x, lookup_rows(p("se"), std::vector<int>(condition_ids.size(), 1)));
    }
    x = maybe_dropout(x);

    AttentionMemory<Scalar> memory;
    memory.length = tau;
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string L = "enc.l" + std::to_string(l);
      Var<Scalar> h = layer_norm_rows(x, p(L + ".ln1.g"), p(L + ".ln1.b"));
      Var<Scalar> hqk = theme ? add(h, pe) : h;
      Var<Scalar> ctx = attention(matmul(hqk, p(L + ".attn.wq")), matmul(hqk, p(L + ".attn.wk")),
                                  matmul(h, p(L + ".attn.wv")), nullptr);
      x = add(x, maybe_dropout(matmul(ctx, p(L + ".attn.wo"))));
      x = feed_forward(x, L);

      Var<Scalar> m = layer_norm_rows(x, p("enc.ln.g"), p("enc.ln.b"));
      const std::string D = "dec.l" + std::to_string(l);
      if (theme) {
        memory.keys.push_back(matmul(add(m, pe), p(D + ".attn.xk")));
        memory.values.push_back(matmul(m, p(D + ".attn.xv")));
      } else {
        memory.keys.push_back(matmul(m, p(D + ".xattn.wk")));
        memory.values.push_back(matmul(m, p(D + ".xattn.wv")));
      }
    }
    return memory;
  }

  // Causal forward over one window; returns T x vocab logits.  The memory is
  // required (and the mask meaningful) only for the two-stream variants; a
  // null plan derives positions from the mask.
  Var<Scalar> decoder_forward(const std::vector<int>& ids, const ThemeMask& mask,
                              const AttentionMemory<Scalar>* memory,
                              const PositionalPlan* plan = nullptr) const {
    const int T = static_cast<int>(ids.size());
    if (T < 1) throw DataError("cannot run the decoder on an empty window");
    const bool theme = cfg_.variant == ModelVariant::ThemeTransformer;
    const bool cascaded = cfg_.variant == ModelVariant::Seq2SeqSE;
    if (cfg_.has_encoder()) {
      if (static_cast<int>(mask.size()) != T) {
        throw DataError("theme mask of " + std::to_string(mask.size()) +
                        " entries does not match " + std::to_string(T) + " tokens");
      }
      if (memory == nullptr || static_cast<int>(memory->keys.size()) != cfg_.layers) {
        throw DataError("decoder needs one memory layer per decoder layer");
      }
    }
    PositionalPlan local;
    if (plan == nullptr) {
      local = cfg_.has_encoder() ? build_positional_plan(mask, cfg_.max_condition)
                                 : build_positional_plan(ThemeMask(ids.size(), 0), 1);
      plan = &local;
    }
    if (static_cast<int>(plan->self_positions.size()) != T ||
        static_cast<int>(plan->cross_positions.size()) != T) {
      throw DataError("positional plan does not match the token window");
    }

    Var<Scalar> pe_self =
        g_->constant(sinusoidal_encoding<Scalar>(plan->self_positions, cfg_.hidden));
    BoolMat causal(T, T);
    for (int i = 0; i < T; ++i) {
      for (int j = 0; j < T; ++j) causal(i, j) = j > i;
    }

    Var<Scalar> x = add(lookup_rows(p("tok"), ids), pe_self);
    if (cascaded) {
      std::vector<int> bits(mask.begin(), mask.end());
      x = add(x, lookup_rows(p("se"), bits));
    }
    x = maybe_dropout(x);

    Var<Scalar> pe_cross;
    Mat<Scalar> gate_m, gate_top, gate_bottom;
    if (theme) {
      pe_cross = g_->constant(sinusoidal_encoding<Scalar>(plan->cross_positions, cfg_.hidden));
      gate_m.resize(T, 1);
      for (int i = 0; i < T; ++i) gate_m(i, 0) = Scalar(mask[static_cast<std::size_t>(i)]);
      gate_bottom = Mat<Scalar>::Ones(T, 1);
      gate_top = gate_bottom - gate_m;
    }

    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string L = "dec.l" + std::to_string(l);
      Var<Scalar> h = layer_norm_rows(x, p(L + ".ln1.g"), p(L + ".ln1.b"));
      if (theme) {
        Var<Scalar> hs = add(h, pe_self);
        Var<Scalar> self_ctx = attention(matmul(hs, p(L + ".attn.wq")),
                                         matmul(hs, p(L + ".attn.wk")),
                                         matmul(h, p(L + ".attn.wv")), &causal);
        Var<Scalar> cross_ctx = attention(matmul(add(h, pe_cross), p(L + ".attn.wq")),
                                          memory->keys[static_cast<std::size_t>(l)],
                                          memory->values[static_cast<std::size_t>(l)], nullptr);
        // In-theme positions take the cross route; the self route survives
        // everywhere in the lower half and only outside themes in the upper.
        Var<Scalar> self_gate = g_->constant(l < cfg_.layers / 2 ? gate_bottom : gate_top);
        Var<Scalar> ctx =
            add(mul(cross_ctx, g_->constant(gate_m)), mul(self_ctx, self_gate));
        x = add(x, maybe_dropout(matmul(ctx, p(L + ".attn.wo"))));
      } else {
        Var<Scalar> ctx = attention(matmul(h, p(L + ".attn.wq")), matmul(h, p(L + ".attn.wk")),
                                    matmul(h, p(L + ".attn.wv")), &causal);
        x = add(x, maybe_dropout(matmul(ctx, p(L + ".attn.wo"))));
        if (cascaded) {
          Var<Scalar> c = layer_norm_rows(x, p(L + ".lnx.g"), p(L + ".lnx.b"));
          Var<Scalar> cross_ctx = attention(matmul(c, p(L + ".xattn.wq")),
                                            memory->keys[static_cast<std::size_t>(l)],
                                            memory->values[static_cast<std::size_t>(l)], nullptr);
          x = add(x, maybe_dropout(matmul(cross_ctx, p(L + ".xattn.wo"))));
        }
      }
      x = feed_forward(x, L);
    }
    x = layer_norm_rows(x, p("dec.ln.g"), p("dec.ln.b"));
    return add(matmul(x, p("head.w")), p("head.b"));
  }

 private:
  Var<Scalar> p(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw Error("parameter store lacks " + name);
    return it->second;
  }
  Var<Scalar> maybe_dropout(Var<Scalar> x) const {
    if (rng_ == nullptr || cfg_.dropout == 0.0) return x;
    return dropout(x, cfg_.dropout, *rng_);
  }

  Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v,
                        const BoolMat* blocked) const {
    const int dh = cfg_.hidden / cfg_.heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    Var<Scalar> ctx;
    for (int head = 0; head < cfg_.heads; ++head) {
      Var<Scalar> qh = slice_cols(q, head * dh, dh);
      Var<Scalar> kh = slice_cols(k, head * dh, dh);
      Var<Scalar> vh = slice_cols(v, head * dh, dh);
      Var<Scalar> scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      if (blocked != nullptr) scores = masked_fill(scores, *blocked, Scalar(-1e30));
      Var<Scalar> ctx_h = matmul(softmax_rows(scores), vh);
      ctx = head == 0 ? ctx_h : concat_cols(ctx, ctx_h);
    }
    return ctx;
  }

  Var<Scalar> feed_forward(Var<Scalar> x, const std::string& L) const {
    Var<Scalar> f = layer_norm_rows(x, p(L + ".ln2.g"), p(L + ".ln2.b"));
    Var<Scalar> inner = gelu(add(matmul(f, p(L + ".ffn.w1")), p(L + ".ffn.b1")));
    return add(x, maybe_dropout(add(matmul(inner, p(L + ".ffn.w2")), p(L + ".ffn.b2"))));
  }

  Graph<Scalar>* g_;
  ModelConfig cfg_;
  std::mt19937_64* rng_;
  std::map<std::string, Var<Scalar>> vars_;
};

// ---- checkpoints ---------------------------------------------------------------

template <class Scalar>
void save_model(const std::filesystem::path& path, const ParamStore<Scalar>& store,
                const ModelConfig& cfg) {
  save_checkpoint(path, store, cfg.config_hash(),
                  {{"kind", "generator"},
                   {"variant", variant_name(cfg.variant)},
                   {"config", cfg.config_string()}});
}

template <class Scalar>
ParamStore<Scalar> load_model(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::map<std::string, std::string> meta;
  ParamStore<Scalar> store = load_checkpoint<Scalar>(path, cfg.config_hash(), &meta);
  const auto it = meta.find("variant");
  if (it == meta.end() || it->second != variant_name(cfg.variant)) {
    throw DataError("checkpoint variant '" + (it == meta.end() ? "?" : it->second) +
                    "' does not match the requested '" + variant_name(cfg.variant) + "'");
  }
  return store;
}

// ---- incremental decoding ------------------------------------------------------

// Value-only decoder with per-layer key/value caches so sampling costs
// O(length) per emitted token.  The condition is encoded once through the
// same graph code used in training; each step mirrors decoder_forward row
// by row (dropout off).
template <class Scalar>
class IncrementalDecoder {
 public:
  IncrementalDecoder(ParamStore<Scalar>& store, const ModelConfig& cfg,
                     const std::vector<int>& condition_ids)
      : store_(&store), cfg_(cfg) {
    cfg_.validate();
    if (cfg_.has_encoder()) {
      Graph<Scalar> g;
      TransformerNet<Scalar> net(g, store, cfg_);
      AttentionMemory<Scalar> memory = net.encode_condition(condition_ids);
      for (int l = 0; l < cfg_.layers; ++l) {
        mem_k_.push_back(memory.keys[static_cast<std::size_t>(l)].value());
        mem_v_.push_back(memory.values[static_cast<std::size_t>(l)].value());
      }
    }
    k_self_.assign(static_cast<std::size_t>(cfg_.layers), Mat<Scalar>(0, cfg_.hidden));
    v_self_.assign(static_cast<std::size_t>(cfg_.layers), Mat<Scalar>(0, cfg_.hidden));
  }

  int length() const { return t_; }

  // Consumes one token (with its mask bit and theme-aligned position) and
  // returns the logits row that predicts the following token.
  Row<Scalar> step(int token_id, int mask_bit, int cross_position) {
    if (token_id < 0 || token_id >= cfg_.vocab) {
      throw DataError("token id " + std::to_string(token_id) + " outside the vocabulary");
    }
    const bool theme = cfg_.variant == ModelVariant::ThemeTransformer;
    const bool cascaded = cfg_.variant == ModelVariant::Seq2SeqSE;
    ++t_;

    const Row<Scalar> pe_self = position_row(t_);
    Row<Scalar> x = value("tok").row(token_id) + pe_self;
    if (cascaded) x += value("se").row(mask_bit ? 1 : 0);

    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string L = "dec.l" + std::to_string(l);
      const std::size_t li = static_cast<std::size_t>(l);
      const Row<Scalar> h = ln_row(x, L + ".ln1");
      if (theme) {
        const Row<Scalar> hs = h + pe_self;
        append_row(k_self_[li], hs * value(L + ".attn.wk"));
        append_row(v_self_[li], h * value(L + ".attn.wv"));
        const Row<Scalar> self_ctx =
            attend_row(hs * value(L + ".attn.wq"), k_self_[li], v_self_[li]);
        const Row<Scalar> qc = (h + position_row(cross_position)) * value(L + ".attn.wq");
        const Row<Scalar> cross_ctx = attend_row(qc, mem_k_[li], mem_v_[li]);
        const Scalar m = Scalar(mask_bit ? 1 : 0);
        const Scalar self_gate = l < cfg_.layers / 2 ? Scalar(1) : Scalar(1) - m;
        x += (m * cross_ctx + self_gate * self_ctx) * value(L + ".attn.wo");
      } else {
        append_row(k_self_[li], h * value(L + ".attn.wk"));
        append_row(v_self_[li], h * value(L + ".attn.wv"));
        x += attend_row(h * value(L + ".attn.wq"), k_self_[li], v_self_[li]) *
             value(L + ".attn.wo");
        if (cascaded) {
          const Row<Scalar> c = ln_row(x, L + ".lnx");
          x += attend_row(c * value(L + ".xattn.wq"), mem_k_[li], mem_v_[li]) *
               value(L + ".xattn.wo");
        }
      }
      const Row<Scalar> f = ln_row(x, L + ".ln2");
      Row<Scalar> inner = f * value(L + ".ffn.w1") + value(L + ".ffn.b1").row(0);
      inner = inner.unaryExpr([](Scalar v) {
        return v * Scalar(0.5) * std::erfc(-v / std::sqrt(Scalar(2)));
      });
      x += inner * value(L + ".ffn.w2") + value(L + ".ffn.b2").row(0);
    }
    const Row<Scalar> out = ln_row(x, "dec.ln");
    return out * value("head.w") + value("head.b").row(0);
  }

 private:
  const Mat<Scalar>& value(const std::string& name) const { return store_->entry(name).value; }

  Row<Scalar> position_row(int position) const {
    return sinusoidal_encoding<Scalar>({position}, cfg_.hidden).row(0);
  }

  Row<Scalar> ln_row(const Row<Scalar>& x, const std::string& prefix) const {
    const Scalar mu = x.mean();
    const Scalar var = (x.array() - mu).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(1e-5));
    return (((x.array() - mu) * inv) * value(prefix + ".g").row(0).array() +
            value(prefix + ".b").row(0).array())
        .matrix();
  }

  static void append_row(Mat<Scalar>& cache, const Row<Scalar>& row) {
    cache.conservativeResize(cache.rows() + 1, Eigen::NoChange);
    cache.row(cache.rows() - 1) = row;
  }

  Row<Scalar> attend_row(const Row<Scalar>& q, const Mat<Scalar>& k, const Mat<Scalar>& v) const {
    const int dh = cfg_.hidden / cfg_.heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    Row<Scalar> ctx(cfg_.hidden);
    for (int head = 0; head < cfg_.heads; ++head) {
      const auto qh = q.segment(head * dh, dh);
      const auto kh = k.middleCols(head * dh, dh);
      const auto vh = v.middleCols(head * dh, dh);
      Row<Scalar> scores = (qh * kh.transpose()) * inv_sqrt_dh;
      const Scalar peak = scores.maxCoeff();
      Row<Scalar> weights = (scores.array() - peak).exp();
      weights /= weights.sum();
      ctx.segment(head * dh, dh) = weights * vh;
    }
    return ctx;
  }

  ParamStore<Scalar>* store_;
  ModelConfig cfg_;
  int t_ = 0;
  std::vector<Mat<Scalar>> mem_k_, mem_v_;
  std::vector<Mat<Scalar>> k_self_, v_self_;
};

}  // namespace themegen
