#include "schemadapt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "schemadapt/error.hpp"

namespace schemadapt {

void FocalParams::validate(std::size_t num_labels) const {
  if (!std::isfinite(gamma) || gamma < 0) throw ValidationError("focal.gamma must be finite and >= 0");
  if (alpha.size() != num_labels) {
    throw ValidationError("focal.alpha has " + std::to_string(alpha.size()) + " entries, expected " +
                          std::to_string(num_labels));
  }
  for (double a : alpha) {
    if (!(a > 0) || !std::isfinite(a)) throw ValidationError("focal.alpha entries must be positive");
  }
}

std::vector<double> balanced_alpha(std::span<const Row> rows, std::size_t num_labels) {
  std::vector<double> alpha(num_labels, 4.0);
  for (std::size_t k = 0; k < num_labels; ++k) {
    std::size_t n = 0, pos = 0;
    for (const Row& r : rows) {
      if (r.labels[k] == kMissingLabel) continue;
      ++n;
      pos += r.labels[k] == 1;
    }
    if (pos > 0) alpha[k] = std::clamp(static_cast<double>(n) / (2.0 * static_cast<double>(pos)), 0.25, 4.0);
  }
  return alpha;
}

void ContrastParams::validate() const {
  if (!(tau_alpha > 0) || !std::isfinite(tau_alpha)) throw ValidationError("contrast.tau_alpha must be > 0");
  if (!(tau_beta > 0) || !std::isfinite(tau_beta)) throw ValidationError("contrast.tau_beta must be > 0");
}

double focal_loss(double p, int y, double alpha, double gamma) {
  p = std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon);
  if (y == 1) return -alpha * std::pow(1.0 - p, gamma) * std::log(p);
  return -alpha * std::pow(p, gamma) * std::log(1.0 - p);
}

ad::Var focal_loss(ad::Var logits, std::span<const LabelValue> labels, double alpha, double gamma) {
  using ad::Matrix;
  if (logits.shape().cols != 1 || logits.shape().rows != static_cast<ad::Index>(labels.size())) {
    throw ShapeError("focal_loss: logits " + logits.shape().str() + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  const Matrix& z = logits.value();
  const auto n = static_cast<ad::Index>(labels.size());
  auto dz = std::make_shared<Matrix>(Matrix::Zero(n, 1));
  double total = 0.0;
  std::size_t count = 0;
  for (ad::Index i = 0; i < n; ++i) {
    if (labels[i] == kMissingLabel) continue;
    ++count;
    const double raw = 1.0 / (1.0 + std::exp(-z(i, 0)));
    const bool clamped = raw < kProbEpsilon || raw > 1.0 - kProbEpsilon;
    const double p = std::clamp(raw, kProbEpsilon, 1.0 - kProbEpsilon);
    total += focal_loss(p, labels[i], alpha, gamma);
    if (clamped) continue;
    // d loss / dz, with dp/dz = p(1-p) folded in.
    if (labels[i] == 1) {
      (*dz)(i, 0) = alpha * std::pow(1.0 - p, gamma) * (gamma * p * std::log(p) - (1.0 - p));
    } else {
      (*dz)(i, 0) = alpha * std::pow(p, gamma) * (p - gamma * (1.0 - p) * std::log(1.0 - p));
    }
  }
  if (count == 0) return {};
  const double inv = 1.0 / static_cast<double>(count);
  *dz *= inv;
  Matrix out(1, 1);
  out(0, 0) = total * inv;
  return logits.tape()->record(std::move(out), {logits}, [zi = logits.id(), dz](ad::Tape& t, int self) {
    t.accumulate(zi, t.upstream(self)(0, 0) * *dz);
  });
}

namespace {

double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

ad::Var contrastive_loss(ad::Var reps, std::span<const LabelValue> labels, const ContrastParams& params,
                         ContrastStats* stats) {
  using ad::Matrix;
  params.validate();
  const Matrix& R = reps.value();
  const auto n = R.rows();
  if (n != static_cast<ad::Index>(labels.size())) {
    throw ShapeError("contrastive_loss: reps " + reps.shape().str() + " vs " + std::to_string(labels.size()) +
                     " labels");
  }
  std::vector<ad::Index> members;
  for (ad::Index i = 0; i < n; ++i) {
    if (labels[i] != kMissingLabel) members.push_back(i);
  }
  const Matrix sims = R * R.transpose();
  auto dsim = std::make_shared<Matrix>(Matrix::Zero(n, n));
  ContrastStats local;
  double total = 0.0;
  std::vector<double> all, pos, neg_a, all_b, neg_b;
  for (ad::Index i : members) {
    all.clear();
    pos.clear();
    neg_a.clear();
    all_b.clear();
    neg_b.clear();
    for (ad::Index j : members) {
      if (j == i) continue;
      const double a = sims(i, j) / params.tau_alpha, b = sims(i, j) / params.tau_beta;
      all.push_back(a);
      all_b.push_back(b);
      if (labels[j] == labels[i]) {
        pos.push_back(a);
      } else {
        neg_a.push_back(a);
        neg_b.push_back(b);
      }
    }
    if (pos.empty()) {
      ++local.skipped;
      continue;
    }
    ++local.anchors;
    // Without negatives the log term and its gradient are exactly zero.
    if (neg_a.empty()) continue;
    const double log_den = log_sum_exp(all);
    const double log_num = log_sum_exp(pos);
    const double log_w_alpha = log_sum_exp(neg_a) - log_den;
    const double log_w_beta = log_sum_exp(neg_b) - log_sum_exp(all_b);
    const double weight = std::exp(log_w_beta - log_w_alpha);
    total += -weight * (log_num - log_den);
    // d loss_i / d s_ij = -w (softmax_pos_j - softmax_all_j) / tau_alpha.
    for (ad::Index j : members) {
      if (j == i) continue;
      const double a = sims(i, j) / params.tau_alpha;
      double g = std::exp(a - log_den);
      if (labels[j] == labels[i]) g -= std::exp(a - log_num);
      (*dsim)(i, j) += weight * g / params.tau_alpha;
    }
  }
  if (stats) *stats = local;
  if (local.anchors == 0) return {};
  const double inv = 1.0 / static_cast<double>(local.anchors);
  *dsim *= inv;
  Matrix out(1, 1);
  out(0, 0) = total * inv;
  return reps.tape()->record(std::move(out), {reps}, [ri = reps.id(), dsim](ad::Tape& t, int self) {
    const Matrix& r = t.value(ri);
    const double up = t.upstream(self)(0, 0);
    t.accumulate(ri, up * ((*dsim + dsim->transpose()) * r));
  });
}

std::optional<double> contrastive_anchor_loss(const ad::Matrix& reps, std::span<const LabelValue> labels,
                                              const ContrastParams& params, std::size_t anchor) {
  const std::size_t n = labels.size();
  if (labels[anchor] == kMissingLabel) return std::nullopt;
  double pos_a = 0.0, neg_a = 0.0, pos_b = 0.0, neg_b = 0.0;
  bool any = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == anchor || labels[j] == kMissingLabel) continue;
    const double s = reps.row(static_cast<ad::Index>(anchor)).dot(reps.row(static_cast<ad::Index>(j)));
    if (labels[j] == labels[anchor]) {
      pos_a += std::exp(s / params.tau_alpha);
      pos_b += std::exp(s / params.tau_beta);
      any = true;
    } else {
      neg_a += std::exp(s / params.tau_alpha);
      neg_b += std::exp(s / params.tau_beta);
    }
  }
  if (!any) return std::nullopt;
  if (neg_a == 0.0) return 0.0;
  const double w_alpha = neg_a / (pos_a + neg_a), w_beta = neg_b / (pos_b + neg_b);
  return -(w_beta / w_alpha) * std::log(pos_a / (pos_a + neg_a));
}

}  // namespace schemadapt
