#include "themegen/manifest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "themegen/errors.hpp"

namespace themegen {

std::map<std::string, std::string> parse_kv_line(const std::string& line) {
  std::map<std::string, std::string> kv;
  std::istringstream in(line);
  std::string tok;
  while (in >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    kv[tok.substr(0, eq)] = tok.substr(eq + 1);
  }
  return kv;
}

Manifest read_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open manifest: " + file.string());
  Manifest m;
  m.base_dir = file.parent_path();

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "piece") continue;
    auto kv = parse_kv_line(line.substr(tag.size()));
    ManifestEntry e;
    if (!kv.count("id") || !kv.count("path")) {
      throw DataError(file.string() + ":" + std::to_string(lineno) +
                      ": manifest piece line needs id= and path=");
    }
    e.id = kv["id"];
    e.path = kv["path"];
    if (kv.count("melody")) e.melody_track = kv["melody"];
    if (kv.count("accomp")) e.accomp_track = kv["accomp"];
    if (kv.count("key")) {
      e.key = parse_key(kv["key"]);
      if (!e.key) {
        throw DataError(file.string() + ":" + std::to_string(lineno) + ": bad key '" +
                        kv["key"] + "'");
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& file, const Manifest& m) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write manifest: " + file.string());
  for (const ManifestEntry& e : m.entries) {
    out << "piece id=" << e.id << " path=" << e.path << " melody=" << e.melody_track
        << " accomp=" << e.accomp_track;
    if (e.key) out << " key=" << key_name(*e.key);
    out << "\n";
  }
}

BeatLabels read_beat_labels(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open labels: " + file.string());
  BeatLabels labels;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag != "labels") continue;
    auto kv = parse_kv_line(line.substr(tag.size()));
    if (!kv.count("id")) {
      throw DataError(file.string() + ":" + std::to_string(lineno) + ": labels line needs id=");
    }
    std::vector<int> beats;
    if (kv.count("beats") && !kv["beats"].empty()) {
      std::istringstream bs(kv["beats"]);
      std::string item;
      while (std::getline(bs, item, ',')) beats.push_back(std::stoi(item));
    }
    labels.beats_by_id[kv["id"]] = std::move(beats);
  }
  return labels;
}

void write_beat_labels(const std::filesystem::path& file, const BeatLabels& labels) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write labels: " + file.string());
  for (const auto& [id, beats] : labels.beats_by_id) {
    out << "labels id=" << id << " beats=";
    for (size_t i = 0; i < beats.size(); ++i) {
      if (i) out << ',';
      out << beats[i];
    }
    out << "\n";
  }
}

std::vector<int> spans_to_beats(const std::vector<BarSpan>& spans) {
  std::vector<int> beats;
  for (const BarSpan& s : spans) {
    for (int b = s.begin * kBeatsPerBar; b < s.end * kBeatsPerBar; ++b) beats.push_back(b);
  }
  std::sort(beats.begin(), beats.end());
  beats.erase(std::unique(beats.begin(), beats.end()), beats.end());
  return beats;
}

std::vector<BarSpan> beats_to_spans(const std::vector<int>& beats) {
  std::vector<int> sorted = beats;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (!sorted.empty() && sorted.front() < 0) throw DataError("negative beat label");

  std::vector<BarSpan> spans;
  for (size_t i = 0; i < sorted.size();) {
    size_t j = i + 1;
    while (j < sorted.size() && sorted[j] == sorted[j - 1] + 1) ++j;
    const BarSpan cover{sorted[i] / kBeatsPerBar, sorted[j - 1] / kBeatsPerBar + 1};
    if (!spans.empty() && cover.begin < spans.back().end) {
      spans.back().end = std::max(spans.back().end, cover.end);
    } else {
      spans.push_back(cover);
    }
    i = j;
  }
  return spans;
}

}  // namespace themegen
