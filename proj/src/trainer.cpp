#include "schemadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"
#include "schemadapt/log.hpp"

namespace schemadapt {

using ad::Matrix;

void TrainConfig::validate() const {
  if (epochs == 0 && max_steps == 0) throw ValidationError("train.epochs must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("train.learning_rate must be > 0");
  if (batch_size < 2) throw ValidationError("train.batch_size must be >= 2");
  if (weight_decay < 0) throw ValidationError("train.weight_decay must be >= 0");
  double s = 0;
  for (double f : split) {
    if (f < 0) throw ValidationError("train.split fractions must be non-negative");
    s += f;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ValidationError("train.split fractions must sum to 1");
  if (!std::isfinite(focal_gamma) || focal_gamma < 0) throw ValidationError("train.focal_gamma must be >= 0");
  contrast.validate();
  if (solver.max_iters < 1 || !(solver.tol > 0)) throw ValidationError("train.mgda: max_iters >= 1 and tol > 0");
}

Balancer parse_balancer(std::string_view name) {
  if (name == "mgda") return Balancer::mgda;
  if (name == "uniform") return Balancer::uniform;
  throw ValidationError("unknown balancer '" + std::string(name) + "' (expected mgda or uniform)");
}

std::string_view to_string(Balancer b) { return b == Balancer::mgda ? "mgda" : "uniform"; }

double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double x = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * x));
}

void AdamW::step(ad::Parameter& p, const Matrix& grad, double lr) {
  Moments& s = state_[&p];
  if (s.t == 0) {
    s.m = Matrix::Zero(p.value.rows(), p.value.cols());
    s.v = Matrix::Zero(p.value.rows(), p.value.cols());
  }
  ++s.t;
  s.m = beta1_ * s.m + (1.0 - beta1_) * grad;
  s.v = beta2_ * s.v + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(s.t));
  p.value *= 1.0 - lr * weight_decay_;
  p.value.array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
}

std::size_t AdamW::steps_taken(const ad::Parameter& p) const {
  auto it = state_.find(&p);
  return it == state_.end() ? 0 : it->second.t;
}

Split split_stratified(const DatasetMatrix& data, const std::array<double, 3>& fractions, std::uint64_t seed) {
  std::vector<std::string> subjects;
  for (const Row& r : data.rows) subjects.push_back(r.subject_id);
  std::sort(subjects.begin(), subjects.end());
  subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  std::size_t nonzero = 0;
  for (double f : fractions) nonzero += f > 0;
  if (subjects.size() < nonzero) {
    throw ValidationError("split: " + std::to_string(subjects.size()) + " subjects cannot fill " +
                          std::to_string(nonzero) + " splits");
  }
  std::mt19937_64 rng(sub_seed(seed, "split"));
  std::shuffle(subjects.begin(), subjects.end(), rng);
  const auto S = static_cast<double>(subjects.size());
  std::size_t n_val = fractions[1] > 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(S * fractions[1]))) : 0;
  std::size_t n_test = fractions[2] > 0 ? std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(S * fractions[2]))) : 0;
  if (n_val + n_test >= subjects.size() && fractions[0] > 0) {
    throw ValidationError("split: too few subjects for the requested fractions");
  }
  const std::size_t n_train = subjects.size() - n_val - n_test;
  std::unordered_map<std::string, int> where;
  for (std::size_t i = 0; i < subjects.size(); ++i) where[subjects[i]] = i < n_train ? 0 : i < n_train + n_val ? 1 : 2;
  Split out;
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    switch (where[data.rows[r].subject_id]) {
      case 0: out.train.push_back(r); break;
      case 1: out.validation.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

SampleInput PreparedData::sample(std::size_t i) const {
  SampleInput s;
  if (use_tab) s.tab = &encoded.rows[i].raw;
  if (!aux.empty()) s.aux = &aux[i];
  return s;
}

PreparedData prepare_data(const DatasetMatrix& data, EmbeddingProvider& provider, const PrepareOptions& options) {
  PreparedData out;
  out.origin = options.origin;
  out.data = &data;
  out.use_tab = options.use_tab;
  if (options.use_tab) {
    out.encoded = encode_dataset(data, provider, options.mode);
  } else {
    out.encoded.dimension = provider.dimension();
    out.encoded.rows.resize(data.rows.size());
  }
  if (options.aux && options.aux->count > 0) {
    out.aux.reserve(data.rows.size());
    for (const Row& r : data.rows) out.aux.push_back(options.aux->tokens(r.subject_id, r.labels));
  }
  return out;
}

void LeakageGuard::check(const PreparedData& data, std::string_view stage) const {
  if (forbidden.count(data.origin)) {
    throw LeakageError("leakage guard: " + std::string(stage) + " touched rows from '" + data.origin + "'");
  }
}

namespace {

std::vector<LabelValue> label_column(const PreparedData& data, std::span<const std::size_t> rows, std::size_t k) {
  std::vector<LabelValue> y;
  y.reserve(rows.size());
  for (std::size_t r : rows) y.push_back(data.labels(r)[k]);
  return y;
}

std::vector<SampleInput> inputs_of(const PreparedData& data, std::span<const std::size_t> rows) {
  std::vector<SampleInput> in;
  in.reserve(rows.size());
  for (std::size_t r : rows) in.push_back(data.sample(r));
  return in;
}

std::vector<Row> rows_of(const PreparedData& data, std::span<const std::size_t> rows) {
  std::vector<Row> out;
  for (std::size_t r : rows) out.push_back(data.data->rows[r]);
  return out;
}

struct AlphaStats {
  std::vector<double> sum, min, max;
  std::size_t n = 0;
  explicit AlphaStats(std::size_t tasks)
      : sum(tasks, 0.0), min(tasks, std::numeric_limits<double>::infinity()), max(tasks, 0.0) {}
  void add(const std::vector<double>& a) {
    for (std::size_t t = 0; t < a.size(); ++t) {
      sum[t] += a[t];
      min[t] = std::min(min[t], a[t]);
      max[t] = std::max(max[t], a[t]);
    }
    ++n;
  }
};

std::vector<const ad::Parameter*> const_params(FusionModel& model) {
  auto p = model.parameters();
  return {p.begin(), p.end()};
}

}  // namespace

Evaluation evaluate(FusionModel& model, const PreparedData& data, const std::vector<std::size_t>& rows,
                    const TrainConfig& config, std::span<const double> alpha) {
  const std::size_t L = model.config().num_labels;
  if (rows.empty()) throw ValidationError("evaluate: empty row set");
  Evaluation ev;
  ev.probabilities.resize(static_cast<ad::Index>(rows.size()), static_cast<ad::Index>(L));
  std::vector<LabelValue> labels(rows.size() * L);
  double focal_total = 0.0, contrast_total = 0.0;
  std::size_t focal_count = 0, contrast_count = 0;
  for (std::size_t b = 0; b < rows.size(); b += config.batch_size) {
    const std::size_t n = std::min(config.batch_size, rows.size() - b);
    std::span<const std::size_t> chunk(rows.data() + b, n);
    const auto in = inputs_of(data, chunk);
    ad::Tape tape(false);
    FusionOutputs out = model.forward(tape, in);
    for (std::size_t k = 0; k < L; ++k) {
      const auto y = label_column(data, chunk, k);
      const Matrix& z = out.logits[k].value();
      for (std::size_t i = 0; i < n; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-z(static_cast<ad::Index>(i), 0)));
        ev.probabilities(static_cast<ad::Index>(b + i), static_cast<ad::Index>(k)) = p;
        labels[(b + i) * L + k] = y[i];
        if (y[i] != kMissingLabel) {
          focal_total += focal_loss(p, y[i], alpha.empty() ? 1.0 : alpha[k], config.focal_gamma);
          ++focal_count;
        }
      }
      if (config.use_contrastive && n >= 2) {
        ad::Var c = contrastive_loss(out.reps[k], y, config.contrast);
        if (c.valid()) {
          contrast_total += c.item();
          ++contrast_count;
        }
      }
    }
  }
  // Mean over samples per label, then summed over labels like the training objective.
  ev.focal_loss = focal_count ? focal_total / static_cast<double>(focal_count) * static_cast<double>(L) : 0.0;
  ev.contrast_loss = contrast_count ? contrast_total / static_cast<double>(contrast_count) * static_cast<double>(L) : 0.0;
  ev.report = metric_report({ev.probabilities.data(), static_cast<std::size_t>(ev.probabilities.size())}, labels, L,
                            data.data->schema.label_columns);
  return ev;
}

std::string epoch_record_json(const EpochRecord& r, const std::vector<std::string>& task_ids, std::uint64_t seed) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["seed"] = seed;
  j["lr"] = r.lr;
  j["train_loss"] = r.train_loss;
  j["val_loss"] = r.val_loss;
  j["train_contrast"] = r.train_contrast;
  j["val_contrast"] = r.val_contrast;
  j["skipped_steps"] = r.skipped_steps;
  j["val"] = nlohmann::ordered_json::parse(r.val_report.to_json(-1));
  nlohmann::ordered_json a;
  for (std::size_t t = 0; t < task_ids.size() && t < r.alpha_mean.size(); ++t) {
    a[task_ids[t]] = {{"mean", r.alpha_mean[t]}, {"min", r.alpha_min[t]}, {"max", r.alpha_max[t]}};
  }
  j["alpha"] = a;
  return j.dump();
}

std::string curves_csv(const TrainResult& result) {
  std::ostringstream out;
  out << "epoch,step,lr,train_loss,val_loss,train_contrast,val_contrast,val_macro_auroc\n";
  out.precision(10);
  for (const auto& r : result.epochs) {
    out << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.train_loss << ',' << r.val_loss << ','
        << r.train_contrast << ',' << r.val_contrast << ',' << r.val_macro_auroc << '\n';
  }
  return out.str();
}

TrainResult train(FusionModel& model, const PreparedData& data, const std::vector<std::size_t>& train_rows,
                  const std::vector<std::size_t>& val_rows, const TrainConfig& config, const TrainOutputs& outputs,
                  const LeakageGuard& guard) {
  config.validate();
  guard.check(data, "training");
  if (train_rows.empty()) throw ValidationError("train: empty training split");
  if (val_rows.empty()) throw ValidationError("train: empty validation split");
  const std::size_t L = model.config().num_labels;
  if (data.data->schema.num_labels() != L) throw ShapeError("train: dataset label count differs from model");

  std::vector<double> alpha = config.focal_alpha;
  if (alpha.empty()) alpha = balanced_alpha(rows_of(data, train_rows), L);
  FocalParams{config.focal_gamma, alpha}.validate(L);

  TrainResult result;
  for (std::size_t k = 0; k < L; ++k) {
    const std::string& name = data.data->schema.label_columns[k];
    result.task_ids.push_back(name + "/focal");
    if (config.use_contrastive) result.task_ids.push_back(name + "/contrastive");
  }
  const std::size_t T = result.task_ids.size();

  const std::size_t batches = (train_rows.size() + config.batch_size - 1) / config.batch_size;
  std::size_t total_steps = config.epochs * batches;
  if (config.max_steps > 0) total_steps = std::min(total_steps ? total_steps : config.max_steps, config.max_steps);
  const std::size_t epochs = (total_steps + batches - 1) / batches;

  std::vector<std::size_t> curve_rows = train_rows;
  if (config.curve_train_rows > 0 && curve_rows.size() > config.curve_train_rows) {
    std::mt19937_64 crng(sub_seed(config.seed, "curve-rows"));
    std::shuffle(curve_rows.begin(), curve_rows.end(), crng);
    curve_rows.resize(config.curve_train_rows);
    std::sort(curve_rows.begin(), curve_rows.end());
  }

  std::ofstream log_file;
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    log_file.open(outputs.dir / "train_log.ndjson", std::ios::trunc);
    if (!log_file) throw Error("train: cannot write log in " + outputs.dir.string());
  }

  AdamW opt(config.beta1, config.beta2, config.adam_eps, config.weight_decay);
  std::mt19937_64 shuffle_rng(sub_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order = train_rows;
  std::string best_snapshot;
  double best = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= epochs && step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    AlphaStats stats(T);
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < order.size() && step < total_steps; b += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - b);
      if (n < 2) continue;  // contrastive terms need a pair
      std::span<const std::size_t> rows(order.data() + b, n);
      const auto in = inputs_of(data, rows);

      ad::Tape tape;
      FusionOutputs out = model.forward(tape, in);
      std::vector<ad::Var> losses;
      std::vector<std::size_t> present;
      for (std::size_t k = 0; k < L; ++k) {
        const auto y = label_column(data, rows, k);
        ad::Var f = focal_loss(out.logits[k], y, alpha[k], config.focal_gamma);
        const std::size_t base = config.use_contrastive ? 2 * k : k;
        if (f.valid()) {
          losses.push_back(f);
          present.push_back(base);
        }
        if (config.use_contrastive) {
          ad::Var c = contrastive_loss(out.reps[k], y, config.contrast);
          if (c.valid()) {
            losses.push_back(c);
            present.push_back(base + 1);
          }
        }
      }
      for (std::size_t i = 0; i < losses.size(); ++i) {
        if (!std::isfinite(losses[i].item())) {
          throw NumericError("train: non-finite loss for " + result.task_ids[present[i]] + " at epoch " +
                             std::to_string(epoch) + ", step " + std::to_string(step));
        }
      }
      const double lr = cosine_lr(config.learning_rate, step, total_steps);
      ++step;
      if (losses.empty()) {
        ++skipped;
        continue;
      }
      if (config.balancer == Balancer::uniform) {
        ad::Var total = losses[0];
        for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
        tape.backward(ad::scalar_mul(total, 1.0 / static_cast<double>(losses.size())));
        std::vector<double> full(T, 0.0);
        for (std::size_t t : present) full[t] = 1.0 / static_cast<double>(present.size());
        stats.add(full);
        for (const auto& reg : tape.parameters()) opt.step(*reg.param, tape.grad(*reg.param), lr);
        continue;
      }
      std::vector<std::string> ids;
      for (std::size_t t : present) ids.push_back(result.task_ids[t]);
      ad::PerTaskGradients g = ad::grad_per_task(tape, losses, ids);

      // A task whose shared gradient is identically zero (a contrastive term on a
      // batch with a single label value) would pin the min-norm point at the
      // origin. It is left out of the solve and gets weight 0.
      std::vector<ad::Index> active;
      for (ad::Index t = 0; t < g.shared.matrix.rows(); ++t) {
        if (g.shared.matrix.row(t).squaredNorm() >= config.skip_norm_sq) active.push_back(t);
      }
      if (active.empty()) {
        ++skipped;
        log::info("step " + std::to_string(step) + ": no task has a shared gradient, update skipped");
        continue;
      }
      Matrix active_grads(static_cast<ad::Index>(active.size()), g.shared.matrix.cols());
      std::vector<double> active_losses;
      std::vector<std::string> active_ids;
      for (std::size_t i = 0; i < active.size(); ++i) {
        active_grads.row(static_cast<ad::Index>(i)) = g.shared.matrix.row(active[i]);
        active_losses.push_back(g.loss_values[static_cast<std::size_t>(active[i])]);
        active_ids.push_back(ids[static_cast<std::size_t>(active[i])]);
      }
      const auto scales = mgda::normalization_scales(active_grads, active_losses, config.normalization);
      Matrix scaled = active_grads;
      for (std::size_t t = 0; t < scales.size(); ++t) scaled.row(static_cast<ad::Index>(t)) *= scales[t];
      const mgda::Solution sol = mgda::min_norm_solve(scaled, config.solver, active_ids);
      std::vector<double> full(T, 0.0);
      for (std::size_t i = 0; i < active.size(); ++i) full[present[static_cast<std::size_t>(active[i])]] = sol.alpha[i];
      stats.add(full);

      const Eigen::RowVectorXd combined = mgda::combine(active_grads, sol.alpha);
      if (combined.squaredNorm() < config.skip_norm_sq) {
        ++skipped;
        log::info("step " + std::to_string(step) + ": combined gradient vanished, update skipped");
        continue;
      }
      ad::Index offset = 0;
      for (ad::Parameter* p : g.shared_params) {
        const ad::Index sz = p->value.size();
        Matrix grad = Eigen::Map<const Matrix>(combined.data() + offset, p->value.rows(), p->value.cols());
        opt.step(*p, grad, lr);
        offset += sz;
      }
      for (std::size_t i = 0; i < g.unshared_params.size(); ++i) opt.step(*g.unshared_params[i], g.unshared_grads[i], lr);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.step = step;
    rec.lr = cosine_lr(config.learning_rate, step, total_steps);
    rec.skipped_steps = skipped;
    result.skipped_steps += skipped;
    if (stats.n > 0) {
      rec.alpha_mean.resize(T);
      for (std::size_t t = 0; t < T; ++t) rec.alpha_mean[t] = stats.sum[t] / static_cast<double>(stats.n);
      rec.alpha_min = stats.min;
      rec.alpha_max = stats.max;
    }
    const Evaluation tr = evaluate(model, data, curve_rows, config, alpha);
    const Evaluation va = evaluate(model, data, val_rows, config, alpha);
    rec.train_loss = tr.focal_loss;
    rec.train_contrast = tr.contrast_loss;
    rec.val_loss = va.focal_loss;
    rec.val_contrast = va.contrast_loss;
    rec.val_macro_auroc = va.report.macro_auroc;
    rec.val_report = va.report;
    if (log_file) log_file << epoch_record_json(rec, result.task_ids, config.seed) << '\n' << std::flush;
    log::info("epoch " + std::to_string(epoch) + " step " + std::to_string(step) + " val macro AUROC " +
              std::to_string(rec.val_macro_auroc));
    if (rec.val_macro_auroc > best) {
      best = rec.val_macro_auroc;
      result.best_epoch = epoch;
      best_snapshot = ad::serialize_checkpoint(const_params(model));
    }
    result.epochs.push_back(std::move(rec));
  }
  result.steps = step;
  result.best_val_auroc = best;

  const auto params = const_params(model);
  if (!outputs.dir.empty() && outputs.write_checkpoints) {
    ad::save_checkpoint((outputs.dir / "final.ckpt").string(), params);
    write_text_file((outputs.dir / "best.ckpt").string(), best_snapshot);
  }
  if (!outputs.dir.empty()) write_text_file((outputs.dir / "curves.csv").string(), curves_csv(result));
  if (config.keep_best && !best_snapshot.empty()) {
    ad::restore_parameters(model.parameters(), ad::deserialize_checkpoint(best_snapshot));
  }
  return result;
}

}  // namespace schemadapt
