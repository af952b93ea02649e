#include "themegen/retrieval.hpp"

#include <algorithm>
#include <climits>

#include "themegen/errors.hpp"

namespace themegen {

ClusterReport cluster_fragments(std::vector<Fragment> fragments, const Matd& embeddings,
                                const DbscanConfig& cfg) {
  if (embeddings.rows() != static_cast<Eigen::Index>(fragments.size())) {
    throw DataError("embedding count does not match fragment count");
  }
  ClusterReport report;
  report.fragments = std::move(fragments);
  report.clustering = dbscan(embeddings, cfg);

  const std::vector<int> sizes = report.clustering.cluster_sizes();
  int best = kNoise;
  int best_size = 0;
  int best_first = 0;
  for (int c = 0; c < report.clustering.cluster_count; ++c) {
    int first = INT_MAX;
    for (std::size_t i = 0; i < report.fragments.size(); ++i) {
      if (report.clustering.labels[i] == c) {
        first = std::min(first, report.fragments[i].start_bar);
      }
    }
    if (sizes[c] > best_size || (sizes[c] == best_size && first < best_first)) {
      best = c;
      best_size = sizes[c];
      best_first = first;
    }
  }
  report.theme_cluster = best;
  if (best != kNoise) report.theme_fragments = report.clustering.members(best);
  return report;
}

std::optional<ThemeChoice> choose_theme(const ClusterReport& report) {
  if (report.theme_cluster == kNoise || report.theme_fragments.empty()) return std::nullopt;
  ThemeChoice choice;
  choice.fragment_index = report.theme_fragments.front();
  for (int i : report.theme_fragments) {
    if (report.fragments[i].start_bar < report.fragments[choice.fragment_index].start_bar) {
      choice.fragment_index = i;
    }
    choice.occurrence_spans.push_back(report.fragments[i].span());
  }
  std::sort(choice.occurrence_spans.begin(), choice.occurrence_spans.end(),
            [](const BarSpan& a, const BarSpan& b) { return a.begin < b.begin; });
  choice.condition_span = report.fragments[choice.fragment_index].span();
  return choice;
}

PRF1 retrieval_f1(const std::vector<int>& predicted_beats,
                  const std::vector<int>& annotated_beats) {
  if (annotated_beats.empty()) throw DataError("annotated theme beats are empty");

  std::vector<int> pred = predicted_beats;
  std::vector<int> anno = annotated_beats;
  std::sort(pred.begin(), pred.end());
  pred.erase(std::unique(pred.begin(), pred.end()), pred.end());
  std::sort(anno.begin(), anno.end());
  anno.erase(std::unique(anno.begin(), anno.end()), anno.end());

  std::vector<int> both;
  std::set_intersection(pred.begin(), pred.end(), anno.begin(), anno.end(),
                        std::back_inserter(both));

  PRF1 out;
  out.precision = pred.empty() ? 0.0 : double(both.size()) / double(pred.size());
  out.recall = double(both.size()) / double(anno.size());
  out.f1 = (out.precision + out.recall) > 0
               ? 2 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

double calibrate_epsilon(std::vector<double> positive, std::vector<double> negative) {
  if (positive.empty()) throw DataError("no positive pair distances to calibrate from");
  auto quantile = [](std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const double idx = q * (static_cast<double>(v.size()) - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1 - frac) + v[hi] * frac;
  };

  const double pos_hi = quantile(positive, 0.9);
  if (negative.empty()) return pos_hi * 1.05;
  const double neg_lo = quantile(negative, 0.1);
  if (neg_lo <= pos_hi) return pos_hi * 1.05;  // overlapping: favour recall
  return 0.5 * (pos_hi + neg_lo);
}

}  // namespace themegen
