#pragma once

#include <optional>
#include <span>
#include <vector>

#include "schemadapt/autodiff.hpp"
#include "schemadapt/schema.hpp"

namespace schemadapt {

inline constexpr double kProbEpsilon = 1e-7;

struct FocalParams {
  double gamma = 2.0;
  std::vector<double> alpha;  // one per label
  void validate(std::size_t num_labels) const;
};

// alpha_k = N / (2 N_k+) clipped to [0.25, 4]; rows with a missing label are
// not counted. A label with no positives gets the upper clip.
std::vector<double> balanced_alpha(std::span<const Row> rows, std::size_t num_labels);

struct ContrastParams {
  double tau_alpha = 0.1;
  double tau_beta = 0.5;
  void validate() const;
};

// Per-sample focal loss on a probability (clamped to [eps, 1 - eps]).
double focal_loss(double p, int y, double alpha, double gamma);

// Mean focal loss over samples whose label is observed, from a column of
// logits. Returns nullopt-equivalent (invalid Var) when every label is missing.
ad::Var focal_loss(ad::Var logits, std::span<const LabelValue> labels, double alpha, double gamma);

// Dual-temperature supervised contrastive loss for one label over a batch of
// unit-norm representations (N x c). Samples with a missing label take no part.
// For anchor i, over j != i:
//   loss_i = -sg(W_beta / W_alpha) * log( sum_{y_j = y_i} e^{s_ij/ta} / sum_j e^{s_ij/ta} )
// with W_tau the softmax mass on different-label peers at temperature tau
// (the anchor's hardness). Anchors with no same-label peer are skipped; an
// anchor with no different-label peer contributes 0.
// Returns the mean over valid anchors and reports the count.
struct ContrastStats {
  std::size_t anchors = 0;
  std::size_t skipped = 0;
};
ad::Var contrastive_loss(ad::Var reps, std::span<const LabelValue> labels, const ContrastParams& params,
                         ContrastStats* stats = nullptr);

// Straight-line scalar version for one anchor; nullopt when it has no
// same-label peer, 0 when it has no different-label peer.
std::optional<double> contrastive_anchor_loss(const ad::Matrix& reps, std::span<const LabelValue> labels,
                                              const ContrastParams& params, std::size_t anchor);

}  // namespace schemadapt
