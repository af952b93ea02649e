// Pipeline driver: every subcommand reads upstream artifacts, writes its own
// run directory (outputs plus a run.txt key=value manifest), and stays
// byte-deterministic for a fixed config and seed.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "themegen/codec.hpp"
#include "themegen/dbscan.hpp"
#include "themegen/embedding.hpp"
#include "themegen/manifest.hpp"
#include "themegen/metrics.hpp"
#include "themegen/midi_io.hpp"
#include "themegen/retrieval.hpp"
#include "themegen/synth.hpp"
#include "themegen/token_file.hpp"
#include "themegen/training.hpp"
#include "themegen/transformer.hpp"

namespace fs = std::filesystem;
using namespace themegen;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v;
  return v;
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string pad3(int k) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%03d", k);
  return buf;
}

double mean_or_nan(const std::vector<double>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

// ---- run directories ---------------------------------------------------------

struct RunLog {
  std::vector<std::pair<std::string, std::string>> rows;

  RunLog(const std::string& subcommand) {
    put("subcommand", subcommand);
    put("version", THEMEGEN_VERSION);
  }
  void put(const std::string& k, const std::string& v) { rows.emplace_back(k, v); }
  void put(const std::string& k, const char* v) { rows.emplace_back(k, v); }
  void put(const std::string& k, long long v) { rows.emplace_back(k, std::to_string(v)); }
  void put(const std::string& k, int v) { rows.emplace_back(k, std::to_string(v)); }
  void put(const std::string& k, double v) { rows.emplace_back(k, fmt_g(v)); }

  void write(const fs::path& dir) const {
    std::ofstream out(dir / "run.txt");
    if (!out) throw DataError("cannot write run manifest in " + dir.string());
    for (const auto& [k, v] : rows) out << k << '=' << v << "\n";
  }
};

std::map<std::string, std::string> read_run_kv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot read run manifest: " + file.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

fs::path make_run_dir(const std::string& out) {
  if (out.empty()) throw ConfigError("--out must name a run directory");
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

void require_file(const fs::path& p, const std::string& what, const std::string& producer) {
  if (fs::exists(p)) return;
  throw DataError(what + " not found: " + p.string() + " — run `themegen " + producer +
                  "` first (or fix the path)");
}

// ---- corpus loading ------------------------------------------------------------

struct CorpusPiece {
  ManifestEntry entry;
  Piece piece;
  MidiLoadReport report;
};

std::vector<CorpusPiece> load_corpus(const std::string& manifest_file) {
  require_file(manifest_file, "corpus manifest", "corpus-synth (or ingest)");
  const Manifest m = read_manifest(manifest_file);
  if (m.entries.empty()) throw DataError("manifest lists no pieces: " + manifest_file);

  std::vector<CorpusPiece> corpus;
  corpus.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries) {
    const fs::path midi = m.resolve(e);
    require_file(midi, "MIDI file for piece '" + e.id + "'", "corpus-synth (or ingest)");
    CorpusPiece cp;
    cp.entry = e;
    cp.piece = load_midi(midi, TrackMap{e.melody_track, e.accomp_track}, &cp.report);
    cp.piece.id = e.id;
    if (e.key) cp.piece.key = e.key;
    if (!cp.piece.key && !cp.piece.key_events.empty()) {
      cp.piece.key = cp.piece.key_events.front().second;
    }
    if (!cp.piece.key) cp.piece.key = estimate_key(cp.piece);
    corpus.push_back(std::move(cp));
  }
  return corpus;
}

// ---- checkpoint adapters ---------------------------------------------------------

struct EmbeddingModel {
  EmbedConfig cfg;
  std::shared_ptr<ParamStore<float>> store;

  Embedder embedder() const { return make_embedder(store, cfg); }
};

EmbeddingModel load_embedding(const std::string& path) {
  require_file(path, "embedding checkpoint", "embed-train");
  std::map<std::string, std::string> meta;
  ParamStore<float> store = load_checkpoint<float>(path, 0, &meta);
  if (meta["kind"] != "embedding") {
    throw DataError("checkpoint " + path + " holds a '" + meta["kind"] +
                    "' model, not an embedding — embed-train writes embedding.bin");
  }
  EmbedConfig cfg;
  if (std::sscanf(meta["config"].c_str(), "emb v%d l%d h%d hd%d f%d o%d m%d a%lf d%lf",
                  &cfg.vocab, &cfg.layers, &cfg.hidden, &cfg.heads, &cfg.ffn, &cfg.out_dim,
                  &cfg.max_len, &cfg.alpha, &cfg.dropout) != 9) {
    throw DataError("cannot parse embedding config from checkpoint " + path);
  }
  cfg.validate();
  return {cfg, std::make_shared<ParamStore<float>>(std::move(store))};
}

struct GeneratorModel {
  ModelConfig cfg;
  std::shared_ptr<ParamStore<float>> store;
};

GeneratorModel load_generator(const std::string& path) {
  require_file(path, "model checkpoint", "train");
  std::map<std::string, std::string> meta;
  ParamStore<float> store = load_checkpoint<float>(path, 0, &meta);
  if (meta["kind"] != "generator") {
    throw DataError("checkpoint " + path + " holds a '" + meta["kind"] +
                    "' model, not a generator — train writes model.bin");
  }
  ModelConfig cfg;
  char name[16] = {};
  if (std::sscanf(meta["config"].c_str(), "gen %15s v%d l%d h%d hd%d f%d c%d d%lf", name,
                  &cfg.vocab, &cfg.layers, &cfg.hidden, &cfg.heads, &cfg.ffn,
                  &cfg.max_condition, &cfg.dropout) != 8) {
    throw DataError("cannot parse model config from checkpoint " + path);
  }
  cfg.variant = variant_from_name(name);
  cfg.validate();
  return {cfg, std::make_shared<ParamStore<float>>(std::move(store))};
}

// ---- corpus-synth ---------------------------------------------------------------

struct SynthOpts {
  std::string out;
  int pieces = 20;
  std::uint64_t seed = 1;
  int occurrences = 3;
  int variation_budget = 2;
  int min_filler = 2;
  int max_filler = 4;
  bool accomp_filler = false;
};

void run_corpus_synth(const SynthOpts& o) {
  SynthConfig cfg;
  cfg.pieces = o.pieces;
  cfg.seed = o.seed;
  cfg.occurrences = o.occurrences;
  cfg.variation_budget = o.variation_budget;
  cfg.min_filler_bars = o.min_filler;
  cfg.max_filler_bars = o.max_filler;
  cfg.melodic_filler = !o.accomp_filler;

  const SynthCorpus corpus = synth_corpus(cfg);
  const fs::path dir = make_run_dir(o.out);
  fs::create_directories(dir / "midi");

  Manifest m;
  m.base_dir = dir;
  for (const Piece& piece : corpus.pieces) {
    const std::string rel = "midi/" + piece.id + ".mid";
    save_midi(dir / rel, piece);
    m.entries.push_back({piece.id, rel, "MELODY", "PIANO", piece.key});
  }
  write_manifest(dir / "corpus.txt", m);
  write_beat_labels(dir / "labels.txt", corpus.labels);

  std::ofstream audits(dir / "audits.txt");
  if (!audits) throw DataError("cannot write audits in " + dir.string());
  for (const SynthAudit& a : corpus.audits) {
    for (const std::string& line : a.lines) audits << a.piece_id << ' ' << line << "\n";
  }

  RunLog log("corpus-synth");
  log.put("pieces", o.pieces);
  log.put("seed", static_cast<long long>(o.seed));
  log.put("occurrences", o.occurrences);
  log.put("variation_budget", o.variation_budget);
  log.put("min_filler", o.min_filler);
  log.put("max_filler", o.max_filler);
  log.put("melodic_filler", cfg.melodic_filler ? 1 : 0);
  log.write(dir);
  std::cout << "wrote " << corpus.pieces.size() << " pieces to " << dir.string() << "\n";
}

// ---- ingest ---------------------------------------------------------------------

struct IngestOpts {
  std::string manifest;
  std::string out;
};

void run_ingest(const IngestOpts& o) {
  const std::vector<CorpusPiece> corpus = load_corpus(o.manifest);
  const fs::path dir = make_run_dir(o.out);
  fs::create_directories(dir / "midi");

  Manifest m;
  m.base_dir = dir;
  std::ofstream report(dir / "ingest.txt");
  if (!report) throw DataError("cannot write ingest report in " + dir.string());

  int kept = 0;
  for (const CorpusPiece& cp : corpus) {
    report << "id=" << cp.entry.id << " clamped=" << cp.report.clamped_values
           << " unmatched=" << cp.report.unmatched_note_ons
           << " default_tempo=" << (cp.report.inserted_default_tempo ? 1 : 0);
    if (!cp.report.ignored_tracks.empty()) {
      report << " ignored=";
      for (std::size_t i = 0; i < cp.report.ignored_tracks.size(); ++i) {
        if (i) report << ';';
        report << cp.report.ignored_tracks[i];
      }
    }
    if (cp.piece.has_key_change()) {
      report << " dropped=key-change\n";
      continue;
    }
    report << "\n";
    const std::string rel = "midi/" + cp.entry.id + ".mid";
    save_midi(dir / rel, cp.piece);
    m.entries.push_back({cp.entry.id, rel, "MELODY", "PIANO", cp.piece.key});
    ++kept;
  }
  if (kept == 0) throw DataError("every piece was dropped; nothing to ingest");
  write_manifest(dir / "corpus.txt", m);

  RunLog log("ingest");
  log.put("manifest", o.manifest);
  log.put("pieces_in", static_cast<int>(corpus.size()));
  log.put("pieces_kept", kept);
  log.write(dir);
  std::cout << "ingested " << kept << "/" << corpus.size() << " pieces into " << dir.string()
            << "\n";
}

// ---- tokenize -------------------------------------------------------------------

struct TokenizeOpts {
  std::string manifest;
  std::string labels;
  std::string out;
  std::string format = "text";
};

void run_tokenize(const TokenizeOpts& o) {
  TokenFileFormat format;
  if (o.format == "text") format = TokenFileFormat::Text;
  else if (o.format == "binary") format = TokenFileFormat::Binary;
  else throw ConfigError("--format must be text or binary, not '" + o.format + "'");

  const std::vector<CorpusPiece> corpus = load_corpus(o.manifest);
  std::optional<BeatLabels> labels;
  if (!o.labels.empty()) {
    require_file(o.labels, "theme label file", "corpus-synth (ground truth) or cluster");
    labels = read_beat_labels(o.labels);
  }

  const fs::path dir = make_run_dir(o.out);
  fs::create_directories(dir / "tokens");
  if (labels) fs::create_directories(dir / "conditions");

  RunLog log("tokenize");
  log.put("manifest", o.manifest);
  log.put("labels", o.labels);
  log.put("format", o.format);
  for (const CorpusPiece& cp : corpus) {
    try {
      TokenSequence tokens = encode_piece(cp.piece, vocab());
      if (labels) {
        const auto it = labels->beats_by_id.find(cp.entry.id);
        if (it == labels->beats_by_id.end() || it->second.empty()) {
          throw DataError("no theme beats for piece '" + cp.entry.id + "' in " + o.labels +
                          " — corpus-synth writes ground-truth labels, cluster writes "
                          "predicted ones");
        }
        const std::vector<BarSpan> spans = beats_to_spans(it->second);
        tokens = annotate_theme_tokens(tokens, vocab(), spans);
        write_tokens(dir / "conditions" / (cp.entry.id + ".tok"),
                     encode_span(cp.piece, spans.front(), vocab()), format);
      }
      write_tokens(dir / "tokens" / (cp.entry.id + ".tok"), tokens, format);
      log.put("tokens_" + cp.entry.id, static_cast<int>(tokens.ids.size()));
    } catch (const DataError& e) {
      throw DataError("piece '" + cp.entry.id + "': " + e.what());
    }
  }
  log.write(dir);
  std::cout << "tokenized " << corpus.size() << " pieces into " << dir.string() << "\n";
}

// ---- embed-train ------------------------------------------------------------------

struct EmbedTrainOpts {
  std::string manifest;
  std::string out;
  int steps = 200;
  unsigned seed = 1;
  int batch = 16;
  int layers = 6;
  int heads = 4;
  int hidden = 256;
  int ffn = 1024;
  int max_len = 128;
  double alpha = 0.5;
  double lr = 2e-4;
  double dropout = 0.0;
};

void run_embed_train(const EmbedTrainOpts& o) {
  EmbedConfig cfg;
  cfg.layers = o.layers;
  cfg.heads = o.heads;
  cfg.hidden = o.hidden;
  cfg.ffn = o.ffn;
  cfg.max_len = o.max_len;
  cfg.alpha = o.alpha;
  cfg.batch = o.batch;
  cfg.lr = o.lr;
  cfg.dropout = o.dropout;
  cfg.validate();

  const std::vector<CorpusPiece> corpus = load_corpus(o.manifest);
  std::vector<Fragment> fragments;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::vector<Fragment> f = slice_fragments(corpus[i].piece, static_cast<int>(i));
    fragments.insert(fragments.end(), f.begin(), f.end());
  }
  if (fragments.empty()) throw DataError("the corpus yields no melody fragments");

  std::mt19937_64 rng(o.seed);
  ParamStore<float> store = init_embedding_params<float>(cfg, rng);
  const auto curve = train_embedding(store, cfg, fragments, o.steps, o.seed);

  const fs::path dir = make_run_dir(o.out);
  save_checkpoint(dir / "embedding.bin", store, cfg.config_hash(),
                  {{"kind", "embedding"}, {"config", cfg.config_string()}});
  write_loss_curve(dir / "loss.csv", curve);

  RunLog log("embed-train");
  log.put("manifest", o.manifest);
  log.put("pieces", static_cast<int>(corpus.size()));
  log.put("fragments", static_cast<int>(fragments.size()));
  log.put("steps", o.steps);
  log.put("seed", static_cast<long long>(o.seed));
  log.put("batch", o.batch);
  log.put("config", cfg.config_string());
  log.write(dir);
  std::cout << "trained embedding on " << fragments.size() << " fragments; checkpoint in "
            << dir.string() << "\n";
}

// ---- cluster ---------------------------------------------------------------------

struct ClusterOpts {
  std::string manifest;
  std::string embedding;
  std::string out;
  double epsilon = DbscanConfig{}.epsilon;
  int min_points = DbscanConfig{}.min_points;
  bool fallback_first = false;
};

void run_cluster(const ClusterOpts& o) {
  const std::vector<CorpusPiece> corpus = load_corpus(o.manifest);
  const EmbeddingModel model = load_embedding(o.embedding);
  const Embedder embed = model.embedder();
  const DbscanConfig dbscan_cfg{o.epsilon, o.min_points};

  const fs::path dir = make_run_dir(o.out);
  std::ofstream report(dir / "report.txt");
  if (!report) throw DataError("cannot write cluster report in " + dir.string());

  BeatLabels predicted;
  int fallbacks = 0;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string& id = corpus[i].entry.id;
    std::vector<Fragment> fragments = slice_fragments(corpus[i].piece, static_cast<int>(i));
    if (fragments.empty()) {
      report << "piece=" << id << " fragments=0 skipped=no-melody\n";
      continue;
    }
    Matd points(static_cast<int>(fragments.size()), model.cfg.out_dim);
    for (std::size_t j = 0; j < fragments.size(); ++j) {
      points.row(static_cast<int>(j)) = embed(fragments[j].melody);
    }

    const ClusterReport rep = cluster_fragments(fragments, points, dbscan_cfg);
    std::optional<ThemeChoice> choice = choose_theme(rep);
    bool fell_back = false;
    if (!choice) {
      if (!o.fallback_first) {
        throw DataError("piece '" + id + "': every fragment is noise at epsilon=" +
                        fmt_g(o.epsilon) + "; raise --epsilon or pass --fallback-first");
      }
      choice = ThemeChoice{0, rep.fragments.front().span(), {rep.fragments.front().span()}};
      fell_back = true;
      ++fallbacks;
    }
    predicted.beats_by_id[id] = spans_to_beats(choice->occurrence_spans);

    report << "piece=" << id << " fragments=" << rep.fragments.size()
           << " clusters=" << rep.clustering.cluster_count
           << " theme_cluster=" << rep.theme_cluster << " condition_bar="
           << choice->condition_span.begin << (fell_back ? " fallback=first" : "") << "\n";
    for (std::size_t j = 0; j < rep.fragments.size(); ++j) {
      report << "  fragment=" << j << " bars=[" << rep.fragments[j].start_bar << ","
             << rep.fragments[j].start_bar + 2 << ") cluster="
             << rep.clustering.labels[j] << "\n";
    }
    if (rep.fragments.size() > 1) {
      double lo = HUGE_VAL, hi = 0, sum = 0;
      int n = 0;
      for (int a = 0; a < points.rows(); ++a) {
        for (int b = a + 1; b < points.rows(); ++b) {
          const double d = (points.row(a) - points.row(b)).norm();
          lo = std::min(lo, d);
          hi = std::max(hi, d);
          sum += d;
          ++n;
        }
      }
      report << "  distances min=" << format_metric(lo) << " mean=" << format_metric(sum / n)
             << " max=" << format_metric(hi) << "\n";
    }
  }
  if (predicted.beats_by_id.empty()) {
    throw DataError("no piece produced a theme prediction; the corpus has no melody");
  }
  write_beat_labels(dir / "predicted.txt", predicted);

  RunLog log("cluster");
  log.put("manifest", o.manifest);
  log.put("embedding", o.embedding);
  log.put("epsilon", o.epsilon);
  log.put("min_points", o.min_points);
  log.put("fallbacks", fallbacks);
  log.put("pieces", static_cast<int>(predicted.beats_by_id.size()));
  log.write(dir);
  std::cout << "predicted themes for " << predicted.beats_by_id.size() << " pieces in "
            << dir.string() << "\n";
}

// ---- train -----------------------------------------------------------------------

struct TrainOpts {
  std::string manifest;
  std::string labels;
  std::string out;
  std::string variant = "theme";
  int T = 512;
  int window_count = 0;
  int steps = 200;
  int batch = 8;
  double lr = 2e-4;
  unsigned seed = 1;
  int checkpoint_every = 0;
  int layers = 6;
  int heads = 8;
  int hidden = 256;
  int ffn = 1024;
  int max_condition = 512;
  double dropout = 0.1;
};

void run_train(const TrainOpts& o) {
  const ModelVariant variant = variant_from_name(o.variant);
  ModelConfig mc;
  mc.variant = variant;
  mc.layers = o.layers;
  mc.heads = o.heads;
  mc.hidden = o.hidden;
  mc.ffn = o.ffn;
  mc.max_condition = o.max_condition;
  mc.dropout = o.dropout;
  mc.validate();

  const std::vector<CorpusPiece> corpus = load_corpus(o.manifest);
  std::optional<BeatLabels> labels;
  if (mc.has_encoder()) {
    if (o.labels.empty()) {
      throw ConfigError("--labels is required for the seq2seq/theme variants — corpus-synth "
                        "writes ground-truth labels, cluster writes predicted ones");
    }
    require_file(o.labels, "theme label file", "corpus-synth (ground truth) or cluster");
    labels = read_beat_labels(o.labels);
  }

  std::vector<TrainPiece> pieces;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string& id = corpus[i].entry.id;
    try {
      TrainPiece tp;
      tp.piece_index = static_cast<int>(i);
      tp.tokens = encode_piece(corpus[i].piece, vocab());
      if (labels) {
        const auto it = labels->beats_by_id.find(id);
        if (it == labels->beats_by_id.end() || it->second.empty()) {
          throw DataError("no theme beats in " + o.labels);
        }
        const std::vector<BarSpan> spans = beats_to_spans(it->second);
        tp.tokens = annotate_theme_tokens(tp.tokens, vocab(), spans);
        tp.condition = encode_span(corpus[i].piece, spans.front(), vocab()).ids;
      }
      pieces.push_back(std::move(tp));
    } catch (const DataError& e) {
      throw DataError("piece '" + id + "': " + e.what());
    }
  }

  WindowConfig wc;
  wc.T = o.T;
  wc.count = o.window_count;
  wc.tau_max = o.max_condition;
  wc.seed = o.seed;
  std::vector<int> skipped;
  const std::vector<TrainWindow> windows = make_windows(pieces, wc, variant, vocab(), &skipped);

  const fs::path dir = make_run_dir(o.out);
  TrainConfig tc;
  tc.steps = o.steps;
  tc.batch = o.batch;
  tc.lr = o.lr;
  tc.seed = o.seed;
  tc.checkpoint_every = o.checkpoint_every;
  tc.checkpoint_path = dir / "model.bin";

  std::mt19937_64 rng(o.seed);
  ParamStore<float> store = init_model_params<float>(mc, rng);
  const auto curve = train_model(store, mc, tc, windows);
  write_loss_curve(dir / "loss.csv", curve);

  RunLog log("train");
  log.put("manifest", o.manifest);
  log.put("labels", o.labels);
  log.put("variant", o.variant);
  log.put("config", mc.config_string());
  log.put("T", o.T);
  log.put("windows", static_cast<int>(windows.size()));
  for (int s : skipped) log.put("skipped", corpus[static_cast<std::size_t>(s)].entry.id);
  log.put("steps", o.steps);
  log.put("batch", o.batch);
  log.put("lr", o.lr);
  log.put("seed", static_cast<long long>(o.seed));
  if (!curve.empty()) log.put("final_loss", curve.back().second);
  log.write(dir);
  std::cout << "trained " << o.variant << " on " << windows.size() << " windows; model in "
            << dir.string() << "\n";
}

// ---- generate --------------------------------------------------------------------

const char* stop_name(StopReason r) {
  switch (r) {
    case StopReason::BarLimit: return "bar-limit";
    case StopReason::TokenCap: return "token-cap";
    case StopReason::NoValidCandidate: return "no-candidate";
  }
  return "?";
}

struct GenerateOpts {
  std::string model;
  std::string condition;
  std::string out;
  int count = 1;
  double temperature = 1.2;
  int max_bars = 32;
  int max_tokens = 2048;
  unsigned seed = 1;
  bool no_grammar = false;
};

void run_generate(const GenerateOpts& o) {
  if (o.count < 1) throw ConfigError("--count must be at least 1");
  const GeneratorModel model = load_generator(o.model);
  require_file(o.condition, "condition token file", "tokenize --labels");
  const TokenSequence condition = read_tokens(o.condition);
  if (condition.kind != TokenKind::Piano) {
    throw DataError("condition file holds melody tokens; tokenize writes piano-token "
                    "conditions under conditions/");
  }

  const fs::path dir = make_run_dir(o.out);
  RunLog log("generate");
  log.put("model", o.model);
  log.put("condition", o.condition);
  log.put("variant", variant_name(model.cfg.variant));
  log.put("count", o.count);
  log.put("temperature", o.temperature);
  log.put("max_bars", o.max_bars);
  log.put("max_tokens", o.max_tokens);
  log.put("seed", static_cast<long long>(o.seed));
  log.put("grammar", o.no_grammar ? 0 : 1);

  for (int k = 0; k < o.count; ++k) {
    GenConfig gc;
    gc.temperature = o.temperature;
    gc.max_bars = o.max_bars;
    gc.max_tokens = o.max_tokens;
    gc.seed = o.seed + static_cast<unsigned>(k);
    gc.grammar = !o.no_grammar;
    const GenResult r = generate(*model.store, model.cfg, condition.ids, gc, vocab());

    const std::string name = "gen_" + pad3(k);
    write_tokens(dir / (name + ".tok"), r.tokens);
    if (gc.grammar) {  // free-running output may not decode; keep tokens only
      Piece piece = decode_tokens(r.tokens, vocab());
      piece.id = name;
      save_midi(dir / (name + ".mid"), piece);
    }
    log.put(name + "_stop", stop_name(r.stop));
    log.put(name + "_bars", r.bars);
    log.put(name + "_tokens", static_cast<int>(r.tokens.ids.size()));
  }
  log.write(dir);
  std::cout << "generated " << o.count << " sample(s) in " << dir.string() << "\n";
}

// ---- evaluate --------------------------------------------------------------------

std::vector<fs::path> token_files_in(const fs::path& dir) {
  require_file(dir, "generation directory", "generate");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".tok") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw DataError("no .tok files in " + dir.string() + " — run `themegen generate` first");
  }
  return files;
}

struct EvaluateOpts {
  std::string gen;
  std::string embedding;
  std::string out;
  std::string condition;
  std::string variant;  // empty: read from the generation run manifest
};

void run_evaluate(const EvaluateOpts& o) {
  const std::vector<fs::path> files = token_files_in(o.gen);
  const EmbeddingModel model = load_embedding(o.embedding);
  const Embedder embed = model.embedder();

  std::string variant = o.variant;
  if (variant.empty()) {
    const fs::path run = fs::path(o.gen) / "run.txt";
    if (!fs::exists(run)) {
      throw DataError(o.gen + " has no run.txt to read the variant from; pass --variant");
    }
    const auto kv = read_run_kv(run);
    const auto it = kv.find("variant");
    if (it == kv.end()) throw DataError(o.gen + "/run.txt lacks variant=; pass --variant");
    variant = it->second;
  }
  variant_from_name(variant);  // validates the name
  const bool theme_columns = variant != "prompt";

  std::optional<MelodySeq> condition_melody;
  if (!o.condition.empty()) {
    require_file(o.condition, "condition token file", "tokenize --labels");
    const Piece cond = decode_tokens(read_tokens(o.condition), vocab());
    MelodySeq melody = melody_events_in(cond, {0, cond.bar_count()});
    if (!melody.empty()) condition_melody = std::move(melody);
  }

  std::vector<MetricRow> rows;
  for (const fs::path& file : files) {
    Piece piece = decode_tokens(read_tokens(file), vocab());
    piece.id = file.stem().string();
    MetricRow row;
    row.piece_id = piece.id;
    row.pitch_class = pitch_class_consistency(piece);
    row.grooving = grooving_consistency(piece);
    row.melody_incon = melody_inconsistency(piece, embed);
    if (theme_columns) {
      row.theme_incon = theme_inconsistency(piece, embed);
      row.theme_uncontrol = condition_melody
                                ? theme_uncontrollability(piece, embed, *condition_melody)
                                : std::numeric_limits<double>::quiet_NaN();
      row.theme_gap = mean_or_nan(theme_gap_bars(piece));
    }
    rows.push_back(std::move(row));
  }

  const fs::path dir = make_run_dir(o.out);
  write_metric_report(dir / "metrics.csv", rows, theme_columns);

  RunLog log("evaluate");
  log.put("gen", o.gen);
  log.put("embedding", o.embedding);
  log.put("condition", o.condition);
  log.put("variant", variant);
  log.put("pieces", static_cast<int>(rows.size()));
  log.write(dir);
  std::cout << "metrics for " << rows.size() << " pieces in " << dir.string() << "\n";
}

// ---- curve -----------------------------------------------------------------------

struct CurveOpts {
  std::string gen;
  std::vector<std::string> midi;
  std::string embedding;
  std::string out;
};

void run_curve(const CurveOpts& o) {
  if (o.gen.empty() && o.midi.empty()) {
    throw ConfigError("nothing to plot: pass --gen and/or --midi");
  }
  const EmbeddingModel model = load_embedding(o.embedding);
  const Embedder embed = model.embedder();

  std::vector<Piece> pieces;
  if (!o.gen.empty()) {
    for (const fs::path& file : token_files_in(o.gen)) {
      Piece piece = decode_tokens(read_tokens(file), vocab());
      piece.id = file.stem().string();
      pieces.push_back(std::move(piece));
    }
  }
  for (const std::string& path : o.midi) {
    require_file(path, "MIDI file", "corpus-synth (or ingest)");
    Piece piece = load_midi(path);
    piece.id = fs::path(path).stem().string();
    pieces.push_back(std::move(piece));
  }

  const fs::path dir = make_run_dir(o.out);
  RunLog log("curve");
  log.put("gen", o.gen);
  log.put("embedding", o.embedding);
  for (const Piece& piece : pieces) {
    write_distance_curve(dir / ("curve_" + piece.id + ".csv"),
                         melody_distance_curve(piece, embed));
    log.put("curve", piece.id);
  }
  log.write(dir);
  std::cout << "wrote " << pieces.size() << " distance curves in " << dir.string() << "\n";
}

// ---- f1 --------------------------------------------------------------------------

struct F1Opts {
  std::string predicted;
  std::string labels;
  std::string out;
};

void run_f1(const F1Opts& o) {
  require_file(o.predicted, "predicted beat labels", "cluster");
  require_file(o.labels, "annotated beat labels", "corpus-synth");
  const BeatLabels predicted = read_beat_labels(o.predicted);
  const BeatLabels annotated = read_beat_labels(o.labels);
  if (annotated.beats_by_id.empty()) throw DataError("no annotations in " + o.labels);

  std::vector<std::pair<std::string, PRF1>> scored;
  PRF1 mean;
  for (const auto& [id, beats] : annotated.beats_by_id) {
    if (beats.empty()) throw DataError("piece '" + id + "' has no annotated beats");
    const auto it = predicted.beats_by_id.find(id);
    const std::vector<int> empty;
    const PRF1 r = retrieval_f1(it == predicted.beats_by_id.end() ? empty : it->second, beats);
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.f1 += r.f1;
    scored.emplace_back(id, r);
  }
  const double n = static_cast<double>(scored.size());
  mean.precision /= n;
  mean.recall /= n;
  mean.f1 /= n;

  if (!o.out.empty()) {
    const fs::path dir = make_run_dir(o.out);
    std::ofstream csv(dir / "f1.csv");
    if (!csv) throw DataError("cannot write f1.csv in " + dir.string());
    csv << "piece,precision,recall,f1\n";
    for (const auto& [id, r] : scored) {
      csv << id << ',' << format_metric(r.precision) << ',' << format_metric(r.recall) << ','
          << format_metric(r.f1) << "\n";
    }
    csv << "mean," << format_metric(mean.precision) << ',' << format_metric(mean.recall) << ','
        << format_metric(mean.f1) << "\n";
    RunLog log("f1");
    log.put("predicted", o.predicted);
    log.put("labels", o.labels);
    log.put("pieces", static_cast<int>(scored.size()));
    log.put("mean_f1", mean.f1);
    log.write(dir);
  }
  std::printf("pieces=%zu mean_precision=%s mean_recall=%s mean_f1=%s\n", scored.size(),
              format_metric(mean.precision).c_str(), format_metric(mean.recall).c_str(),
              format_metric(mean.f1).c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"theme-conditioned music generation pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(THEMEGEN_VERSION));
  app.set_config("--config", "", "key=value config file; command-line flags take precedence");

  int threads = 1;
  app.add_option("--threads", threads, "worker thread count")->envname("THEMEGEN_THREADS");

  auto synth_opts = std::make_shared<SynthOpts>();
  CLI::App* synth = app.add_subcommand("corpus-synth", "write a synthetic corpus with labels");
  synth->add_option("--out", synth_opts->out, "run directory")->required();
  synth->add_option("--pieces", synth_opts->pieces, "piece count");
  synth->add_option("--seed", synth_opts->seed, "corpus seed");
  synth->add_option("--occurrences", synth_opts->occurrences, "theme statements per piece");
  synth->add_option("--variation-budget", synth_opts->variation_budget,
                    "variation operators per restatement");
  synth->add_option("--min-filler", synth_opts->min_filler, "minimum filler bars");
  synth->add_option("--max-filler", synth_opts->max_filler, "maximum filler bars");
  synth->add_flag("--accomp-filler", synth_opts->accomp_filler,
                  "make filler accompaniment-only");

  auto ingest_opts = std::make_shared<IngestOpts>();
  CLI::App* ingest = app.add_subcommand("ingest", "normalize a MIDI corpus onto the grid");
  ingest->add_option("--manifest", ingest_opts->manifest, "corpus manifest")->required();
  ingest->add_option("--out", ingest_opts->out, "run directory")->required();

  auto tok_opts = std::make_shared<TokenizeOpts>();
  CLI::App* tokenize = app.add_subcommand("tokenize", "encode pieces as token files");
  tokenize->add_option("--manifest", tok_opts->manifest, "corpus manifest")->required();
  tokenize->add_option("--labels", tok_opts->labels,
                       "theme beat labels; adds delimiters and writes condition files");
  tokenize->add_option("--out", tok_opts->out, "run directory")->required();
  tokenize->add_option("--format", tok_opts->format, "text or binary");

  auto embed_opts = std::make_shared<EmbedTrainOpts>();
  CLI::App* embed = app.add_subcommand("embed-train", "train the melody embedding");
  embed->add_option("--manifest", embed_opts->manifest, "corpus manifest")->required();
  embed->add_option("--out", embed_opts->out, "run directory")->required();
  embed->add_option("--steps", embed_opts->steps, "training steps");
  embed->add_option("--seed", embed_opts->seed, "training seed");
  embed->add_option("--batch", embed_opts->batch, "fragments per step");
  embed->add_option("--layers", embed_opts->layers, "encoder layers");
  embed->add_option("--heads", embed_opts->heads, "attention heads");
  embed->add_option("--hidden", embed_opts->hidden, "hidden size");
  embed->add_option("--ffn", embed_opts->ffn, "feed-forward size");
  embed->add_option("--max-len", embed_opts->max_len, "longest melody token sequence");
  embed->add_option("--alpha", embed_opts->alpha, "contrastive temperature");
  embed->add_option("--lr", embed_opts->lr, "learning rate");
  embed->add_option("--dropout", embed_opts->dropout, "dropout probability");

  auto cluster_opts = std::make_shared<ClusterOpts>();
  CLI::App* cluster = app.add_subcommand("cluster", "retrieve each piece's theme");
  cluster->add_option("--manifest", cluster_opts->manifest, "corpus manifest")->required();
  cluster->add_option("--embedding", cluster_opts->embedding, "embedding checkpoint")
      ->required();
  cluster->add_option("--out", cluster_opts->out, "run directory")->required();
  cluster->add_option("--epsilon", cluster_opts->epsilon, "neighbourhood radius");
  cluster->add_option("--min-points", cluster_opts->min_points, "core point threshold");
  cluster->add_flag("--fallback-first", cluster_opts->fallback_first,
                    "use the first fragment when everything is noise");

  auto train_opts = std::make_shared<TrainOpts>();
  CLI::App* train = app.add_subcommand("train", "train a generation model");
  train->add_option("--manifest", train_opts->manifest, "corpus manifest")->required();
  train->add_option("--labels", train_opts->labels, "theme beat labels (themed variants)");
  train->add_option("--out", train_opts->out, "run directory")->required();
  train->add_option("--variant", train_opts->variant, "prompt, seq2seq, or theme");
  train->add_option("--T", train_opts->T, "window length");
  train->add_option("--window-count", train_opts->window_count,
                    "windows to keep (0 keeps all)");
  train->add_option("--steps", train_opts->steps, "training steps");
  train->add_option("--batch", train_opts->batch, "windows per step");
  train->add_option("--lr", train_opts->lr, "learning rate");
  train->add_option("--seed", train_opts->seed, "training seed");
  train->add_option("--checkpoint-every", train_opts->checkpoint_every,
                    "extra checkpoint period (0 = final only)");
  train->add_option("--layers", train_opts->layers, "decoder layers");
  train->add_option("--heads", train_opts->heads, "attention heads");
  train->add_option("--hidden", train_opts->hidden, "hidden size");
  train->add_option("--ffn", train_opts->ffn, "feed-forward size");
  train->add_option("--max-condition", train_opts->max_condition, "longest condition");
  train->add_option("--dropout", train_opts->dropout, "dropout probability");

  auto gen_opts = std::make_shared<GenerateOpts>();
  CLI::App* generate = app.add_subcommand("generate", "sample from a trained model");
  generate->add_option("--model", gen_opts->model, "model checkpoint")->required();
  generate->add_option("--condition", gen_opts->condition, "condition token file")->required();
  generate->add_option("--out", gen_opts->out, "run directory")->required();
  generate->add_option("--count", gen_opts->count, "samples to draw");
  generate->add_option("--temperature", gen_opts->temperature, "sampling temperature");
  generate->add_option("--max-bars", gen_opts->max_bars, "stop after this many bars");
  generate->add_option("--max-tokens", gen_opts->max_tokens, "hard token cap");
  generate->add_option("--seed", gen_opts->seed, "sampling seed (sample k uses seed+k)");
  generate->add_flag("--no-grammar", gen_opts->no_grammar, "disable constrained sampling");

  auto eval_opts = std::make_shared<EvaluateOpts>();
  CLI::App* evaluate = app.add_subcommand("evaluate", "score generated pieces");
  evaluate->add_option("--gen", eval_opts->gen, "generation run directory")->required();
  evaluate->add_option("--embedding", eval_opts->embedding, "embedding checkpoint")
      ->required();
  evaluate->add_option("--out", eval_opts->out, "run directory")->required();
  evaluate->add_option("--condition", eval_opts->condition,
                       "condition token file (enables the controllability column)");
  evaluate->add_option("--variant", eval_opts->variant,
                       "override the variant read from the generation run");

  auto curve_opts = std::make_shared<CurveOpts>();
  CLI::App* curve = app.add_subcommand("curve", "per-piece melody distance curves");
  curve->add_option("--gen", curve_opts->gen, "generation run directory");
  curve->add_option("--midi", curve_opts->midi, "extra MIDI files to plot");
  curve->add_option("--embedding", curve_opts->embedding, "embedding checkpoint")->required();
  curve->add_option("--out", curve_opts->out, "run directory")->required();

  auto f1_opts = std::make_shared<F1Opts>();
  CLI::App* f1 = app.add_subcommand("f1", "beat-level retrieval score");
  f1->add_option("--predicted", f1_opts->predicted, "predicted beat labels")->required();
  f1->add_option("--labels", f1_opts->labels, "annotated beat labels")->required();
  f1->add_option("--out", f1_opts->out, "optional run directory for f1.csv");

  try {
    app.parse(argc, argv);
    Eigen::setNbThreads(threads);
    if (app.got_subcommand(synth)) run_corpus_synth(*synth_opts);
    else if (app.got_subcommand(ingest)) run_ingest(*ingest_opts);
    else if (app.got_subcommand(tokenize)) run_tokenize(*tok_opts);
    else if (app.got_subcommand(embed)) run_embed_train(*embed_opts);
    else if (app.got_subcommand(cluster)) run_cluster(*cluster_opts);
    else if (app.got_subcommand(train)) run_train(*train_opts);
    else if (app.got_subcommand(generate)) run_generate(*gen_opts);
    else if (app.got_subcommand(evaluate)) run_evaluate(*eval_opts);
    else if (app.got_subcommand(curve)) run_curve(*curve_opts);
    else if (app.got_subcommand(f1)) run_f1(*f1_opts);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
