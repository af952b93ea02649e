#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "themegen/augment.hpp"
#include "themegen/checkpoint.hpp"
#include "themegen/codec.hpp"
#include "themegen/graph.hpp"
#include "themegen/metrics.hpp"

namespace themegen {

// Bidirectional self-attention encoder that maps a melody token sequence to a
// fixed-size vector: token+position embeddings, pre-norm attention/FFN blocks,
// mean pooling over positions of the final layer, then a linear head.
struct EmbedConfig {
  int vocab = MelodyVocabulary{}.size();
  int layers = 6;
  int heads = 4;
  int hidden = 256;
  int ffn = 1024;
  int out_dim = 128;
  int max_len = 128;
  double alpha = 0.5;  // contrastive temperature
  int batch = 128;     // fragments per step (each contributes 3 rows)
  double lr = 2e-4;
  double dropout = 0.0;

  void validate() const {
    if (vocab <= 0 || layers <= 0 || heads <= 0 || hidden <= 0 || ffn <= 0 || max_len <= 0 ||
        batch <= 0 || alpha <= 0 || lr <= 0) {
      throw ConfigError("embedding config fields must be positive");
    }
    if (hidden % heads != 0) {
      throw ConfigError("embedding hidden size " + std::to_string(hidden) +
                        " is not divisible by " + std::to_string(heads) + " heads");
    }
    if (out_dim != 128) throw ConfigError("embedding output dimension is fixed at 128");
    if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  }

  std::string config_string() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "emb v%d l%d h%d hd%d f%d o%d m%d a%g d%g", vocab, layers,
                  hidden, heads, ffn, out_dim, max_len, alpha, dropout);
    return buf;
  }
  std::uint64_t config_hash() const { return fnv1a64(config_string()); }
};

template <class Scalar>
ParamStore<Scalar> init_embedding_params(const EmbedConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  ParamStore<Scalar> store;
  auto normal = [&rng](int r, int c, double sd) { return normal_init<Scalar>(r, c, sd, rng); };
  store.create("emb.tok", normal(cfg.vocab, cfg.hidden, 0.02));
  store.create("emb.pos", normal(cfg.max_len, cfg.hidden, 0.02));
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string L = "emb.l" + std::to_string(l);
    store.create(L + ".ln1.g", Mat<Scalar>::Ones(1, cfg.hidden));
    store.create(L + ".ln1.b", Mat<Scalar>::Zero(1, cfg.hidden));
    for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"}) {
      store.create(L + w, xavier_init<Scalar>(cfg.hidden, cfg.hidden, rng));
    }
    store.create(L + ".ln2.g", Mat<Scalar>::Ones(1, cfg.hidden));
    store.create(L + ".ln2.b", Mat<Scalar>::Zero(1, cfg.hidden));
    store.create(L + ".ffn.w1", xavier_init<Scalar>(cfg.hidden, cfg.ffn, rng));
    store.create(L + ".ffn.b1", Mat<Scalar>::Zero(1, cfg.ffn));
    store.create(L + ".ffn.w2", xavier_init<Scalar>(cfg.ffn, cfg.hidden, rng));
    store.create(L + ".ffn.b2", Mat<Scalar>::Zero(1, cfg.hidden));
  }
  store.create("emb.ln.g", Mat<Scalar>::Ones(1, cfg.hidden));
  store.create("emb.ln.b", Mat<Scalar>::Zero(1, cfg.hidden));
  store.create("emb.head.w", xavier_init<Scalar>(cfg.hidden, cfg.out_dim, rng));
  store.create("emb.head.b", Mat<Scalar>::Zero(1, cfg.out_dim));
  return store;
}

// Binds the store's embedding parameters into one graph so repeated forward
// calls (a whole batch) share the same nodes.  Pass a dropout engine only
// while training.
template <class Scalar>
class EmbeddingNet {
 public:
  EmbeddingNet(Graph<Scalar>& graph, ParamStore<Scalar>& store, const EmbedConfig& cfg,
               std::mt19937_64* dropout_rng = nullptr)
      : g_(&graph), cfg_(cfg), rng_(dropout_rng) {
    cfg_.validate();
    for (const auto& [name, entry] : store.entries) {
      if (name.starts_with("emb.")) vars_.emplace(name, graph.param(store, name));
    }
  }

  // Token ids -> 1 x out_dim row.  Items are independent: batching never
  // changes an individual result.
  Var<Scalar> forward(const std::vector<int>& ids) const {
    if (ids.empty()) throw DataError("cannot embed an empty melody sequence");
    if (static_cast<int>(ids.size()) > cfg_.max_len) {
      throw DataError("melody sequence of " + std::to_string(ids.size()) +
                      " tokens exceeds the position table (" + std::to_string(cfg_.max_len) +
                      ")");
    }
    std::vector<int> positions(ids.size());
    std::iota(positions.begin(), positions.end(), 0);

    Var<Scalar> x = add(lookup_rows(p("emb.tok"), ids), lookup_rows(p("emb.pos"), positions));
    x = maybe_dropout(x);
    const int dh = cfg_.hidden / cfg_.heads;
    const Scalar inv_sqrt_dh = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string L = "emb.l" + std::to_string(l);
      Var<Scalar> h = layer_norm_rows(x, p(L + ".ln1.g"), p(L + ".ln1.b"));
      Var<Scalar> q = matmul(h, p(L + ".attn.wq"));
      Var<Scalar> k = matmul(h, p(L + ".attn.wk"));
      Var<Scalar> v = matmul(h, p(L + ".attn.wv"));
      Var<Scalar> ctx;
      for (int head = 0; head < cfg_.heads; ++head) {
        Var<Scalar> qh = slice_cols(q, head * dh, dh);
        Var<Scalar> kh = slice_cols(k, head * dh, dh);
        Var<Scalar> vh = slice_cols(v, head * dh, dh);
        Var<Scalar> att = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
        Var<Scalar> ctx_h = matmul(att, vh);
        ctx = head == 0 ? ctx_h : concat_cols(ctx, ctx_h);
      }
      x = add(x, maybe_dropout(matmul(ctx, p(L + ".attn.wo"))));
      Var<Scalar> f = layer_norm_rows(x, p(L + ".ln2.g"), p(L + ".ln2.b"));
      Var<Scalar> inner = gelu(add(matmul(f, p(L + ".ffn.w1")), p(L + ".ffn.b1")));
      x = add(x, maybe_dropout(add(matmul(inner, p(L + ".ffn.w2")), p(L + ".ffn.b2"))));
    }
    x = layer_norm_rows(x, p("emb.ln.g"), p("emb.ln.b"));
    return add(matmul(colwise_mean(x), p("emb.head.w")), p("emb.head.b"));
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

  Graph<Scalar>* g_;
  EmbedConfig cfg_;
  std::mt19937_64* rng_;
  std::map<std::string, Var<Scalar>> vars_;
};

// ---- contrastive objective ---------------------------------------------------

struct ContrastivePair {
  int anchor = 0;
  int positive = 0;
};

// Mean over anchors of -log( exp(cos(z_a, z_p)/alpha) / sum over the anchor's
// candidate set ).  The candidate set is the designated positive plus every
// row from a different group; other rows of the anchor's own group (its
// sibling augmentations and itself) stay out of the denominator.
template <class Scalar>
Var<Scalar> contrastive_loss(Var<Scalar> embeddings, const std::vector<ContrastivePair>& pairs,
                             const std::vector<int>& group_of_row, double alpha) {
  Graph<Scalar>& g = *embeddings.graph;
  const int rows = embeddings.rows();
  if (rows < 2) throw Error("contrastive loss needs at least two embeddings");
  if (pairs.empty()) throw Error("contrastive loss needs at least one anchor/positive pair");
  if (static_cast<int>(group_of_row.size()) != rows) {
    throw Error("contrastive loss: group list length does not match embedding rows");
  }
  for (const ContrastivePair& p : pairs) {
    if (p.anchor < 0 || p.anchor >= rows || p.positive < 0 || p.positive >= rows ||
        p.anchor == p.positive) {
      throw Error("contrastive loss: bad anchor/positive pair");
    }
  }

  Var<Scalar> z = l2_normalize_rows(embeddings);
  Var<Scalar> sim = scale(matmul(z, transpose(z)), static_cast<Scalar>(1.0 / alpha));

  std::vector<int> anchor_rows(pairs.size());
  std::vector<int> pos_rows(pairs.size()), pos_cols(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    anchor_rows[i] = pairs[i].anchor;
    pos_rows[i] = static_cast<int>(i);
    pos_cols[i] = pairs[i].positive;
  }
  Var<Scalar> anchor_sims = lookup_rows(sim, anchor_rows);  // one row per pair

  BoolMat blocked(pairs.size(), rows);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    for (int k = 0; k < rows; ++k) {
      const bool candidate =
          k == pairs[i].positive || group_of_row[k] != group_of_row[pairs[i].anchor];
      blocked(static_cast<int>(i), k) = !candidate;
    }
  }
  Var<Scalar> masked = masked_fill(anchor_sims, blocked, Scalar(-1e30));
  Var<Scalar> denom = log_sum_exp_rows(masked);
  Var<Scalar> pos = select_elements(anchor_sims, pos_rows, pos_cols);
  return mean_all(sub(denom, pos));
}

// ---- training ----------------------------------------------------------------

// One step: sample `batch` fragments from distinct pieces, derive two
// augmented versions of each, and pull each version toward its designated
// positive (original <-> first augmentation, both augmentations -> original).
template <class Scalar>
std::vector<std::pair<int, double>> train_embedding(ParamStore<Scalar>& store,
                                                    const EmbedConfig& cfg,
                                                    const std::vector<Fragment>& fragments,
                                                    int steps, unsigned seed) {
  cfg.validate();
  std::map<int, std::vector<int>> by_piece;
  for (std::size_t i = 0; i < fragments.size(); ++i) {
    by_piece[fragments[i].piece_index].push_back(static_cast<int>(i));
  }
  std::vector<std::vector<int>> pieces;
  pieces.reserve(by_piece.size());
  for (auto& [piece, idx] : by_piece) pieces.push_back(std::move(idx));
  if (static_cast<int>(pieces.size()) < cfg.batch) {
    throw ConfigError("only " + std::to_string(pieces.size()) +
                      " distinct pieces; lower the embedding batch below that");
  }

  const MelodyVocabulary melody_vocab;
  std::mt19937_64 rng(seed);
  std::vector<std::pair<int, double>> curve;
  curve.reserve(static_cast<std::size_t>(std::max(steps, 0)));

  for (int step = 0; step < steps; ++step) {
    std::vector<int> order(pieces.size());
    std::iota(order.begin(), order.end(), 0);
    for (int i = 0; i < cfg.batch; ++i) {  // partial Fisher-Yates
      const std::size_t j = i + rng() % (order.size() - i);
      std::swap(order[i], order[j]);
    }

    Graph<Scalar> g;
    std::mt19937_64 dropout_rng(rng());
    EmbeddingNet<Scalar> net(g, store, cfg, &dropout_rng);
    Var<Scalar> batch_rows;
    std::vector<int> groups;
    std::vector<ContrastivePair> pairs;
    for (int b = 0; b < cfg.batch; ++b) {
      const std::vector<int>& pool = pieces[order[b]];
      const Fragment& fragment = fragments[pool[rng() % pool.size()]];
      const MelodySeq& original = fragment.melody;
      const MelodySeq aug1 = apply_random_augmentation(original, fragment.key, rng);
      const MelodySeq aug2 = apply_random_augmentation(original, fragment.key, rng);

      const int base = 3 * b;
      for (const MelodySeq* seq : {&original, &aug1, &aug2}) {
        Var<Scalar> row = net.forward(melody_tokens(*seq, melody_vocab).ids);
        batch_rows = groups.empty() ? row : concat_rows(batch_rows, row);
        groups.push_back(b);
      }
      pairs.push_back({base, base + 1});
      pairs.push_back({base + 1, base});
      pairs.push_back({base + 2, base});
    }

    Var<Scalar> loss = contrastive_loss(batch_rows, pairs, groups, cfg.alpha);
    g.backward(loss);
    adam_step(store, cfg.lr);
    curve.emplace_back(step, static_cast<double>(loss.value()(0, 0)));
  }
  return curve;
}

inline void write_loss_curve(const std::filesystem::path& file,
                             const std::vector<std::pair<int, double>>& curve) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write loss curve: " + file.string());
  out << "step,loss\n";
  for (const auto& [step, loss] : curve) out << step << ',' << format_metric(loss) << "\n";
}

// ---- inference adapters --------------------------------------------------------

template <class Scalar>
Row<double> embed_melody(ParamStore<Scalar>& store, const EmbedConfig& cfg,
                         const MelodySeq& melody) {
  const MelodyVocabulary melody_vocab;
  Graph<Scalar> g;
  EmbeddingNet<Scalar> net(g, store, cfg);
  Var<Scalar> out = net.forward(melody_tokens(melody, melody_vocab).ids);
  Row<double> row(out.cols());
  for (int j = 0; j < out.cols(); ++j) row(j) = static_cast<double>(out.value()(0, j));
  return row;
}

template <class Scalar>
double melody_pair_distance(ParamStore<Scalar>& store, const EmbedConfig& cfg,
                            const MelodySeq& a, const MelodySeq& b) {
  return melody_distance(embed_melody(store, cfg, a), embed_melody(store, cfg, b));
}

// Metrics-compatible closure; shares ownership of the store.
template <class Scalar>
Embedder make_embedder(std::shared_ptr<ParamStore<Scalar>> store, EmbedConfig cfg) {
  return [store = std::move(store), cfg](const MelodySeq& melody) {
    return embed_melody(*store, cfg, melody);
  };
}

}  // namespace themegen
