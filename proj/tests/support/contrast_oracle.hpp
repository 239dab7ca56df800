#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "schemadapt/autodiff.hpp"
#include "schemadapt/schema.hpp"

namespace schemadapt::testing {

inline ad::Matrix unit_rows(std::mt19937_64& rng, ad::Index n, ad::Index d) {
  std::normal_distribution<double> g;
  ad::Matrix m(n, d);
  for (ad::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  m.rowwise().normalize();
  return m;
}

// Straight double loop over the dual-temperature formula with the weights
// passed in (frozen) or computed from `reps` when `frozen` is empty.
inline double contrast_oracle(const ad::Matrix& reps, const std::vector<LabelValue>& y, double ta, double tb,
                              std::vector<double>* weights_out, const std::vector<double>* frozen) {
  double total = 0.0;
  int anchors = 0;
  const auto n = reps.rows();
  for (ad::Index i = 0; i < n; ++i) {
    if (y[i] < 0) continue;
    double pa = 0, na = 0, pb = 0, nb = 0;
    bool has_pos = false;
    for (ad::Index j = 0; j < n; ++j) {
      if (j == i || y[j] < 0) continue;
      const double s = reps.row(i).dot(reps.row(j));
      if (y[j] == y[i]) {
        pa += std::exp(s / ta);
        pb += std::exp(s / tb);
        has_pos = true;
      } else {
        na += std::exp(s / ta);
        nb += std::exp(s / tb);
      }
    }
    if (!has_pos) continue;
    const double w = na > 0 ? (nb / (pb + nb)) / (na / (pa + na)) : 1.0;
    const double wi = frozen ? (*frozen)[anchors] : w;
    if (weights_out) weights_out->push_back(w);
    total += -wi * std::log(pa / (pa + na));
    ++anchors;
  }
  return total / anchors;
}

}  // namespace schemadapt::testing
