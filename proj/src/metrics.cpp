#include "schemadapt/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "schemadapt/error.hpp"

namespace schemadapt {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("metrics: scores and labels differ in length");
}

std::vector<std::size_t> order_desc(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

}  // namespace

std::optional<double> auroc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Midranks, 1-based.
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[idx[k]] == 1) {
        pos_rank_sum += mid;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

std::optional<double> auc_pr(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const auto total_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (total_pos == 0 || total_pos == labels.size()) return std::nullopt;
  const auto idx = order_desc(scores);
  double prev_recall = 0.0, prev_precision = 1.0, area = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) {
      tp += labels[idx[j]] == 1;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(total_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    area += (recall - prev_recall) * 0.5 * (precision + prev_precision);
    prev_recall = recall;
    prev_precision = precision;
    i = j;
  }
  return area;
}

Confusion confusion_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1) {
      (pred ? c.tp : c.fn)++;
    } else {
      (pred ? c.fp : c.tn)++;
    }
  }
  return c;
}

double f1_score(const Confusion& c) {
  const std::size_t denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double balanced_accuracy(const Confusion& c) {
  const double tpr = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = c.tn + c.fp == 0 ? 0.0 : static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return 0.5 * (tpr + tnr);
}

MetricReport metric_report(std::span<const double> probabilities, std::span<const LabelValue> labels,
                           std::size_t num_labels, std::span<const std::string> label_names, double threshold) {
  if (num_labels == 0) throw ShapeError("metric_report: no labels");
  if (probabilities.size() != labels.size() || probabilities.size() % num_labels != 0) {
    throw ShapeError("metric_report: probabilities and labels must both be N x " + std::to_string(num_labels));
  }
  if (!label_names.empty() && label_names.size() != num_labels) throw ShapeError("metric_report: label name count");
  const std::size_t n = probabilities.size() / num_labels;
  MetricReport report;
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t k = 0; k < num_labels; ++k) {
    s.clear();
    y.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const LabelValue v = labels[i * num_labels + k];
      if (v == kMissingLabel) continue;
      s.push_back(probabilities[i * num_labels + k]);
      y.push_back(v);
    }
    LabelMetrics m;
    m.name = label_names.empty() ? "label" + std::to_string(k) : label_names[k];
    m.positives = static_cast<std::size_t>(std::count(y.begin(), y.end(), 1));
    m.negatives = y.size() - m.positives;
    m.defined = m.positives > 0 && m.negatives > 0;
    if (m.defined) {
      m.auroc = *auroc(s, y);
      m.auc_pr = *auc_pr(s, y);
      const Confusion c = confusion_at(s, y, threshold);
      m.f1 = f1_score(c);
      m.balanced_accuracy = balanced_accuracy(c);
      report.macro_auroc += m.auroc;
      report.macro_auc_pr += m.auc_pr;
      report.macro_f1 += m.f1;
      report.macro_balanced_accuracy += m.balanced_accuracy;
      ++report.defined_labels;
    } else {
      report.excluded.push_back(m.name);
    }
    report.labels.push_back(std::move(m));
  }
  if (report.defined_labels > 0) {
    const double d = static_cast<double>(report.defined_labels);
    report.macro_auroc /= d;
    report.macro_auc_pr /= d;
    report.macro_f1 /= d;
    report.macro_balanced_accuracy /= d;
  }
  return report;
}

std::string MetricReport::to_json(int indent) const {
  nlohmann::ordered_json j;
  j["macro"] = {{"auroc", macro_auroc},
                {"auc_pr", macro_auc_pr},
                {"f1", macro_f1},
                {"balanced_accuracy", macro_balanced_accuracy},
                {"labels_used", defined_labels}};
  auto& per = j["labels"] = nlohmann::ordered_json::array();
  for (const auto& m : labels) {
    nlohmann::ordered_json e = {{"name", m.name}, {"positives", m.positives}, {"negatives", m.negatives}};
    if (m.defined) {
      e["auroc"] = m.auroc;
      e["auc_pr"] = m.auc_pr;
      e["f1"] = m.f1;
      e["balanced_accuracy"] = m.balanced_accuracy;
    } else {
      e["excluded"] = true;
    }
    per.push_back(std::move(e));
  }
  j["excluded"] = excluded;
  return j.dump(indent);
}

std::string MetricReport::to_table() const {
  std::size_t width = 5;
  for (const auto& m : labels) width = std::max(width, m.name.size());
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %7s  %7s  %6s\n", static_cast<int>(width), "label", "auroc",
                "auc_pr", "f1", "bal_acc", "pos");
  out << buf;
  for (const auto& m : labels) {
    if (m.defined) {
      std::snprintf(buf, sizeof buf, "%-*s  %7.4f  %7.4f  %7.4f  %7.4f  %6zu\n", static_cast<int>(width),
                    m.name.c_str(), m.auroc, m.auc_pr, m.f1, m.balanced_accuracy, m.positives);
    } else {
      std::snprintf(buf, sizeof buf, "%-*s  %7s  %7s  %7s  %7s  %6zu\n", static_cast<int>(width), m.name.c_str(),
                    "-", "-", "-", "-", m.positives);
    }
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-*s  %7.4f  %7.4f  %7.4f  %7.4f\n", static_cast<int>(width), "macro",
                macro_auroc, macro_auc_pr, macro_f1, macro_balanced_accuracy);
  out << buf;
  return out.str();
}

}  // namespace schemadapt
