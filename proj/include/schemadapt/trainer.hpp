#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "schemadapt/encoder.hpp"
#include "schemadapt/metrics.hpp"
#include "schemadapt/mgda.hpp"
#include "schemadapt/model.hpp"
#include "schemadapt/objectives.hpp"

namespace schemadapt {

// How the per-task losses are combined into one update. `uniform` is the
// equal-weight baseline: one backward pass through the mean loss.
enum class Balancer { mgda, uniform };
Balancer parse_balancer(std::string_view name);
std::string_view to_string(Balancer b);

struct TrainConfig {
  std::size_t epochs = 256;
  std::size_t max_steps = 0;  // 0: epochs * batches
  double learning_rate = 0.003;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::array<double, 3> split = {0.8, 0.1, 0.1};
  double focal_gamma = 2.0;
  std::vector<double> focal_alpha;  // empty: balanced from training rows
  ContrastParams contrast;
  mgda::SolveOptions solver;
  mgda::Normalization normalization = mgda::Normalization::none;
  Balancer balancer = Balancer::mgda;
  bool use_contrastive = true;
  bool keep_best = true;             // restore best-validation weights at the end
  std::size_t curve_train_rows = 0;  // rows of the train split scored per epoch; 0: all
  double skip_norm_sq = 1e-20;       // combined gradient below this is treated as zero

  void validate() const;
};

// Step size at `step` of `total`: lr * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base, std::size_t step, std::size_t total);

class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
  void step(ad::Parameter& p, const ad::Matrix& grad, double lr);
  std::size_t steps_taken(const ad::Parameter& p) const;

 private:
  struct Moments {
    ad::Matrix m, v;
    std::size_t t = 0;
  };
  double beta1_, beta2_, eps_, weight_decay_;
  std::unordered_map<const ad::Parameter*, Moments> state_;
};

struct Split {
  std::vector<std::size_t> train, validation, test;
};
// Subjects (not rows) are shuffled with the seed and assigned by fraction.
Split split_stratified(const DatasetMatrix& data, const std::array<double, 3>& fractions, std::uint64_t seed);

// Model-ready view of a dataset: raw token matrices, optional aux tokens and
// labels, tagged with an origin used by the leakage guard.
struct PreparedData {
  std::string origin;
  const DatasetMatrix* data = nullptr;
  EncodedDataset encoded;
  std::vector<ad::Matrix> aux;
  bool use_tab = true;

  std::size_t size() const { return data->rows.size(); }
  SampleInput sample(std::size_t i) const;
  std::span<const LabelValue> labels(std::size_t i) const { return data->rows[i].labels; }
};

struct PrepareOptions {
  std::string origin = "source";
  TokenizationMode mode = TokenizationMode::semantic;
  bool use_tab = true;
  const AuxTokenSource* aux = nullptr;
};
PreparedData prepare_data(const DatasetMatrix& data, EmbeddingProvider& provider, const PrepareOptions& options);

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean focal loss over labels, eval mode
  double val_loss = 0.0;
  double train_contrast = 0.0;
  double val_contrast = 0.0;
  double val_macro_auroc = 0.0;
  std::vector<double> alpha_mean, alpha_min, alpha_max;
  std::size_t skipped_steps = 0;
  MetricReport val_report;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  double best_val_auroc = 0.0;
  std::size_t best_epoch = 0;
  std::vector<std::string> task_ids;
};

struct TrainOutputs {
  std::filesystem::path dir;  // empty: write nothing
  bool write_checkpoints = true;
};

// Rejects any data whose origin is in `forbidden` before it reaches a
// gradient step.
struct LeakageGuard {
  std::set<std::string> forbidden;
  void check(const PreparedData& data, std::string_view stage) const;
};

TrainResult train(FusionModel& model, const PreparedData& data, const std::vector<std::size_t>& train_rows,
                  const std::vector<std::size_t>& val_rows, const TrainConfig& config,
                  const TrainOutputs& outputs = {}, const LeakageGuard& guard = {});

struct Evaluation {
  ad::Matrix probabilities;
  MetricReport report;
  double focal_loss = 0.0;
  double contrast_loss = 0.0;
};
Evaluation evaluate(FusionModel& model, const PreparedData& data, const std::vector<std::size_t>& rows,
                    const TrainConfig& config, std::span<const double> alpha = {});

std::string epoch_record_json(const EpochRecord& r, const std::vector<std::string>& task_ids, std::uint64_t seed);
std::string curves_csv(const TrainResult& result);

}  // namespace schemadapt
