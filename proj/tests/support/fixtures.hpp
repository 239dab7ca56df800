#pragma once

#include <string>
#include <vector>

#include "schemadapt/schema.hpp"

namespace schemadapt::testing {

// Pinned metric fixtures with values worked out by hand (threshold 0.5).
struct MetricFixture {
  std::vector<double> probabilities;  // N x L row-major
  std::vector<LabelValue> labels;
  std::vector<std::string> names;
  std::vector<double> auroc, auc_pr, f1, balanced_accuracy;
};

// Label A: scores .9 .8 .7 .6 .55 .2, labels 1 0 1 1 0 0.
//   AUROC 7/9. PR points (1/3,1) (1/3,1/2) (2/3,2/3) (1,3/4) (1,3/5) (1,1/2)
//   from (0,1): 1/3 + 7/36 + 17/72 = 55/72. At 0.5: TP 3 FP 2 TN 1 FN 0,
//   F1 6/8, balanced accuracy (1 + 1/3) / 2.
// Label B: scores .1 .4 .4 .8 .65 .3, labels 0 0 1 1 0 1 (one tied pair).
//   AUROC 5.5/9. PR points (1/3,1) (1/3,1/2) (2/3,1/2) (1,3/5) (1,1/2):
//   1/3 + 1/6 + 11/60 = 41/60. At 0.5: TP 1 FP 1 TN 2 FN 2, F1 2/5,
//   balanced accuracy (1/3 + 2/3) / 2.
inline const MetricFixture& metric_fixture_6x2() {
  static const MetricFixture f{
      {0.9, 0.1, 0.8, 0.4, 0.7, 0.4, 0.6, 0.8, 0.55, 0.65, 0.2, 0.3},
      {1, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 1},
      {"A", "B"},
      {7.0 / 9.0, 11.0 / 18.0},
      {55.0 / 72.0, 41.0 / 60.0},
      {0.75, 0.4},
      {2.0 / 3.0, 0.5},
  };
  return f;
}

// Scores .2 .6 .9, labels 0 1 0. AUROC 1/2. PR points (0,0) (1,1/2) (1,1/3):
// area 1/4. At 0.5: TP 1 FP 1 TN 1, F1 2/3, balanced accuracy 3/4.
inline const MetricFixture& metric_fixture_3x1() {
  static const MetricFixture f{
      {0.2, 0.6, 0.9}, {0, 1, 0}, {"A"}, {0.5}, {0.25}, {2.0 / 3.0}, {0.75},
  };
  return f;
}

// Pairwise count: P(s+ > s-) + 0.5 P(s+ = s-).
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[i] != 1 || y[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

}  // namespace schemadapt::testing
