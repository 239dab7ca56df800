#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "schemadapt/schema.hpp"

namespace schemadapt {

// Probability that a random positive outranks a random negative, ties 0.5.
// nullopt when either class is absent.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels);

// Area under the precision-recall curve: trapezoid over the points reached by
// lowering the threshold through each distinct score, starting at (0, 1).
std::optional<double> auc_pr(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};
// Predictions are score >= threshold.
Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold);
double f1_score(const Confusion& c);
double balanced_accuracy(const Confusion& c);

struct LabelMetrics {
  std::string name;
  std::size_t positives = 0;
  std::size_t negatives = 0;
  bool defined = false;  // both classes present
  double auroc = 0.0;
  double auc_pr = 0.0;
  double f1 = 0.0;
  double balanced_accuracy = 0.0;
};

struct MetricReport {
  std::vector<LabelMetrics> labels;
  double macro_auroc = 0.0;
  double macro_auc_pr = 0.0;
  double macro_f1 = 0.0;
  double macro_balanced_accuracy = 0.0;
  std::size_t defined_labels = 0;
  std::vector<std::string> excluded;

  std::string to_json(int indent = 2) const;
  std::string to_table() const;
};

// probabilities and labels are row-major N x L. Label cells equal to
// kMissingLabel are ignored for that label only.
MetricReport metric_report(std::span<const double> probabilities, std::span<const LabelValue> labels,
                           std::size_t num_labels, std::span<const std::string> label_names = {},
                           double threshold = 0.5);

}  // namespace schemadapt
