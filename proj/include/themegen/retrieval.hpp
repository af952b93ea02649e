#pragma once

#include <optional>
#include <vector>

#include "themegen/codec.hpp"
#include "themegen/dbscan.hpp"

namespace themegen {

// Groups a piece's fragments by embedding distance and picks the theme: the
// biggest cluster wins (ties go to the cluster whose earliest fragment starts
// first), and the theme condition is that cluster's earliest fragment.
struct ClusterReport {
  std::vector<Fragment> fragments;       // as sliced, ascending start bar
  DbscanResult clustering;
  int theme_cluster = kNoise;            // kNoise when everything is noise
  std::vector<int> theme_fragments;      // indices into fragments
};

// `embeddings` holds one row per fragment, in fragment order.
ClusterReport cluster_fragments(std::vector<Fragment> fragments, const Matd& embeddings,
                                const DbscanConfig& cfg);

struct ThemeChoice {
  int fragment_index = -1;               // earliest fragment of the theme cluster
  BarSpan condition_span;                // its two bars
  std::vector<BarSpan> occurrence_spans; // every fragment in the cluster
};

// Empty when no cluster survived (all fragments are noise).
std::optional<ThemeChoice> choose_theme(const ClusterReport& report);

struct PRF1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
};

// Beat-level overlap between predicted and annotated theme beats.  The
// annotation must be non-empty; an empty prediction scores zero.
PRF1 retrieval_f1(const std::vector<int>& predicted_beats,
                  const std::vector<int>& annotated_beats);

// Data-driven neighbourhood radius: positive distances come from
// variation pairs (which must cluster together), negative ones from unrelated
// fragment pairs.  Returns a radius between the bulk of the two distributions.
double calibrate_epsilon(std::vector<double> positive, std::vector<double> negative);

}  // namespace themegen
