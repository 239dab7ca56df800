#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "schemadapt/bench.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"
#include "schemadapt/log.hpp"

namespace schemadapt::bench {

using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool wanted(const ProtocolOptions& o, std::string_view arm) {
  return o.arms.empty() || std::find(o.arms.begin(), o.arms.end(), arm) != o.arms.end();
}

std::string dir_name(std::string_view arm) {
  std::string s;
  for (char c : arm) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.') ? c : '_';
  return s;
}

std::filesystem::path arm_dir(const ProtocolOptions& o, std::string_view protocol, std::string_view arm) {
  if (o.out.empty()) return {};
  return o.out / std::string(protocol) / dir_name(arm);
}

FusionConfig model_config(const RunConfig& run, std::size_t d_in, std::size_t num_labels) {
  FusionConfig c = run.model;
  c.d_in = d_in;
  c.num_labels = num_labels;
  c.aux_positions = std::max(c.aux_positions, run.aux_tokens);
  return c;
}

AuxTokenSource aux_source(const RunConfig& run, std::uint64_t seed, std::size_t num_labels) {
  AuxTokenSource a;
  a.count = run.aux_tokens;
  a.dimension = run.model.d_model;
  a.seed = sub_seed(seed, "aux");
  a.effect = run.aux_effect;
  a.noise = run.aux_noise;
  for (std::size_t k = 0; k < num_labels; ++k) a.designated_labels.push_back(k);
  return a;
}

nlohmann::ordered_json arm_config(const RunConfig& run, const FusionConfig& model, const TrainConfig& train) {
  auto j = to_json(run);
  j["model"] = to_json(model);
  j["train"] = to_json(train);
  return j;
}

std::vector<std::size_t> all_rows(const DatasetMatrix& d) {
  std::vector<std::size_t> r(d.rows.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
  return r;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

RunConfig desk_run_config(std::size_t num_labels) {
  RunConfig run;
  run.model.num_labels = num_labels;
  run.model.d_model = 128;
  run.train.epochs = 3;
  run.train.batch_size = 32;
  run.train.learning_rate = 0.001;
  run.train.curve_train_rows = 512;
  run.train.keep_best = true;
  return run;
}

const ArmResult& ProtocolResult::arm(std::string_view name) const {
  for (const auto& a : arms) {
    if (a.name == name) return a;
  }
  throw ValidationError("protocol " + protocol + ": no arm '" + std::string(name) + "'");
}

std::string ProtocolResult::to_markdown() const {
  std::ostringstream out;
  out << "| arm | macro AUROC | macro AUC-PR | macro F1 | macro bal. acc. | reference AUROC | final train loss | "
         "final val loss | steps | seconds |\n";
  out << "|---|---|---|---|---|---|---|---|---|---|\n";
  for (const auto& a : arms) {
    const double tl = a.curves.empty() ? 0.0 : a.curves.back().train_loss;
    const double vl = a.curves.empty() ? 0.0 : a.curves.back().val_loss;
    out << "| " << a.name << " | " << fmt(a.report.macro_auroc) << " | " << fmt(a.report.macro_auc_pr) << " | "
        << fmt(a.report.macro_f1) << " | " << fmt(a.report.macro_balanced_accuracy) << " | "
        << (a.reference ? fmt(a.reference->macro_auroc) : "-") << " | " << fmt(tl) << " | " << fmt(vl) << " | "
        << a.steps << " | " << fmt(a.seconds) << " |\n";
  }
  return out.str();
}

std::string ProtocolResult::to_csv() const {
  std::ostringstream out;
  out << "protocol,arm,macro_auroc,macro_auc_pr,macro_f1,macro_balanced_accuracy,reference_auroc,final_train_loss,"
         "final_val_loss,steps,seconds\n";
  out.precision(10);
  for (const auto& a : arms) {
    out << protocol << ',' << a.name << ',' << a.report.macro_auroc << ',' << a.report.macro_auc_pr << ','
        << a.report.macro_f1 << ',' << a.report.macro_balanced_accuracy << ','
        << (a.reference ? std::to_string(a.reference->macro_auroc) : "") << ','
        << (a.curves.empty() ? 0.0 : a.curves.back().train_loss) << ','
        << (a.curves.empty() ? 0.0 : a.curves.back().val_loss) << ',' << a.steps << ',' << a.seconds << '\n';
  }
  return out.str();
}

void ProtocolResult::write(const std::filesystem::path& out) const {
  const auto root = out / protocol;
  std::filesystem::create_directories(root);
  for (const auto& a : arms) {
    const auto dir = root / dir_name(a.name);
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json m;
    m["arm"] = a.name;
    m["seed"] = seed;
    m["metrics"] = nlohmann::ordered_json::parse(a.report.to_json());
    if (a.reference) m["reference"] = nlohmann::ordered_json::parse(a.reference->to_json());
    m["steps"] = a.steps;
    write_text_file((dir / "metrics.json").string(), m.dump(2) + "\n");
    TrainResult tr;
    tr.epochs = a.curves;
    write_text_file((dir / "curves.csv").string(), curves_csv(tr));
    write_text_file((dir / "config.json").string(), a.config.dump(2) + "\n");
  }
  write_text_file((root / "summary.md").string(), to_markdown());
  write_text_file((root / "summary.csv").string(), to_csv());
  nlohmann::ordered_json cfg = config;
  cfg["seed"] = seed;
  write_text_file((root / "config.json").string(), cfg.dump(2) + "\n");
}

ProtocolResult run_zero_shot(const BenchmarkPair& pair, const ProtocolOptions& o) {
  const auto t0 = Clock::now();
  const std::size_t L = pair.source.schema.num_labels();
  if (pair.target.schema.num_labels() != L) throw ValidationError("zero-shot: label counts differ across schemas");
  ProtocolResult result;
  result.protocol = "zero-shot";
  result.seed = o.seed;
  result.config = to_json(o.run);
  result.config["paraphrase"] = std::string(to_string(pair.config.paraphrase));

  RunConfig run = o.run;
  run.seed = o.seed;
  run.train.seed = sub_seed(o.seed, "train");
  const Split split = split_stratified(pair.source, run.train.split, run.train.seed);
  const AuxTokenSource aux = aux_source(run, o.seed, L);
  const LeakageGuard guard{{"target"}};

  for (std::string_view variant : {"semantic", "random_embed", "name_only"}) {
    if (!wanted(o, variant)) continue;
    const auto ta = Clock::now();
    std::unique_ptr<EmbeddingProvider> provider;
    TokenizationMode mode = TokenizationMode::semantic;
    if (variant == "random_embed") {
      provider = std::make_unique<HashEmbedder>(sub_seed(o.seed, "random-embed"), run.provider.dimension);
      mode = TokenizationMode::keyed;
    } else {
      provider = make_provider(run.provider);
      if (variant == "name_only") mode = TokenizationMode::name_only;
    }
    PrepareOptions po{"source", mode, true, run.aux_tokens > 0 ? &aux : nullptr};
    const PreparedData src = prepare_data(pair.source, *provider, po);
    po.origin = "target";
    const PreparedData tgt = prepare_data(pair.target, *provider, po);

    const FusionConfig mc = model_config(run, provider->dimension(), L);
    FusionModel model(mc, run.init_seed());
    TrainOutputs outputs{arm_dir(o, result.protocol, variant), false};
    const TrainResult tr = train(model, src, split.train, split.validation, run.train, outputs, guard);

    ArmResult arm;
    arm.name = std::string(variant);
    arm.report = evaluate(model, tgt, all_rows(pair.target), run.train).report;
    arm.reference = evaluate(model, src, split.test, run.train).report;
    arm.curves = tr.epochs;
    arm.steps = tr.steps;
    arm.config = arm_config(run, mc, run.train);
    arm.config["tokenization"] = std::string(to_string(mode));
    arm.seconds = seconds_since(ta);
    if (o.verbose) {
      log::info("zero-shot " + arm.name + ": target macro AUROC " + fmt(arm.report.macro_auroc) +
                ", source test " + fmt(arm.reference->macro_auroc));
    }
    result.arms.push_back(std::move(arm));
  }
  result.seconds = seconds_since(t0);
  if (!o.out.empty()) result.write(o.out);
  return result;
}

ProtocolResult run_few_shot(const BenchmarkPair& pair, const FewShotOptions& opts) {
  const auto t0 = Clock::now();
  const ProtocolOptions& o = opts.base;
  const std::size_t L = pair.source.schema.num_labels();
  if (!std::is_sorted(opts.grid.begin(), opts.grid.end())) throw ValidationError("few-shot: grid must be ascending");
  ProtocolResult result;
  result.protocol = "few-shot";
  result.seed = o.seed;
  result.config = to_json(o.run);
  result.config["grid"] = opts.grid;
  result.config["min_steps"] = opts.min_steps;
  result.config["min_epochs"] = opts.min_epochs;

  RunConfig run = o.run;
  run.seed = o.seed;
  run.train.seed = sub_seed(o.seed, "train");
  const AuxTokenSource aux = aux_source(run, o.seed, L);
  auto provider = make_provider(run.provider);
  PrepareOptions po{"source", run.tokenization, true, run.aux_tokens > 0 ? &aux : nullptr};
  const PreparedData src = prepare_data(pair.source, *provider, po);
  po.origin = "target";
  const PreparedData tgt = prepare_data(pair.target, *provider, po);

  const Split tsplit = split_stratified(pair.target, {0.8, 0.1, 0.1}, sub_seed(o.seed, "target-split"));
  std::vector<std::size_t> pool = tsplit.train;
  std::mt19937_64 rng(sub_seed(o.seed, "few-shot-pool"));
  std::shuffle(pool.begin(), pool.end(), rng);
  for (std::size_t n : opts.grid) {
    if (n > pool.size()) {
      throw ValidationError("few-shot: grid point " + std::to_string(n) + " exceeds the " +
                            std::to_string(pool.size()) + " available target-train rows");
    }
  }

  const FusionConfig mc = model_config(run, provider->dimension(), L);
  const auto tp = Clock::now();
  FusionModel pretrained(mc, run.init_seed());
  const Split split = split_stratified(pair.source, run.train.split, run.train.seed);
  const TrainResult pre = train(pretrained, src, split.train, split.validation, run.train,
                                {arm_dir(o, result.protocol, "pretrain"), false}, LeakageGuard{{"target"}});
  const std::string snapshot = ad::serialize_checkpoint(pretrained.parameters());
  {
    ArmResult arm;
    arm.name = "pretrain";
    arm.report = evaluate(pretrained, tgt, tsplit.test, run.train).report;
    arm.reference = evaluate(pretrained, src, split.test, run.train).report;
    arm.curves = pre.epochs;
    arm.steps = pre.steps;
    arm.config = arm_config(run, mc, run.train);
    arm.seconds = seconds_since(tp);
    if (o.verbose) log::info("few-shot pretrain: target test macro AUROC " + fmt(arm.report.macro_auroc));
    result.arms.push_back(std::move(arm));
  }

  for (std::size_t n : opts.grid) {
    std::vector<std::size_t> rows(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n));
    std::sort(rows.begin(), rows.end());
    TrainConfig tc = run.train;
    const std::size_t per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
    tc.epochs = std::max(opts.min_epochs, (opts.min_steps + per_epoch - 1) / per_epoch);
    tc.max_steps = 0;
    tc.keep_best = false;
    tc.seed = sub_seed(run.train.seed, "few-shot-" + std::to_string(n));
    for (std::string_view kind : {"finetune", "scratch"}) {
      const std::string name = std::string(kind) + "/n=" + std::to_string(n);
      if (!wanted(o, name) && !wanted(o, kind)) continue;
      const auto ta = Clock::now();
      TrainConfig arm_tc = tc;
      FusionModel model(mc, kind == "scratch" ? sub_seed(run.init_seed(), "scratch") : run.init_seed());
      if (kind == "finetune") {
        ad::restore_parameters(model.parameters(), ad::deserialize_checkpoint(snapshot));
        if (opts.finetune_lr > 0) arm_tc.learning_rate = opts.finetune_lr;
      }
      const TrainResult tr = train(model, tgt, rows, tsplit.validation, arm_tc, {arm_dir(o, result.protocol, name), false});
      ArmResult arm;
      arm.name = name;
      arm.report = evaluate(model, tgt, tsplit.test, arm_tc).report;
      arm.curves = tr.epochs;
      arm.steps = tr.steps;
      arm.config = arm_config(run, mc, arm_tc);
      arm.config["rows"] = n;
      arm.seconds = seconds_since(ta);
      if (o.verbose) log::info("few-shot " + name + ": target test macro AUROC " + fmt(arm.report.macro_auroc));
      result.arms.push_back(std::move(arm));
    }
  }
  result.seconds = seconds_since(t0);
  if (!o.out.empty()) result.write(o.out);
  return result;
}

ProtocolResult run_ablations(const BenchmarkPair& pair, const AblationOptions& opts) {
  const auto t0 = Clock::now();
  const ProtocolOptions& o = opts.base;
  const std::size_t L = pair.source.schema.num_labels();
  ProtocolResult result;
  result.protocol = "ablate";
  result.seed = o.seed;
  result.config = to_json(o.run);
  result.config["rows"] = opts.rows;

  RunConfig run = o.run;
  run.seed = o.seed;
  run.train.seed = sub_seed(o.seed, "train");
  if (run.aux_tokens == 0) throw ValidationError("ablate: aux_tokens must be > 0 for the modality arms");

  DatasetMatrix subset;
  subset.schema = pair.source.schema;
  const std::size_t n = std::min(opts.rows, pair.source.rows.size());
  subset.rows.assign(pair.source.rows.begin(), pair.source.rows.begin() + static_cast<std::ptrdiff_t>(n));
  const Split split = split_stratified(subset, run.train.split, run.train.seed);
  const AuxTokenSource aux = aux_source(run, o.seed, L);
  auto provider = make_provider(run.provider);
  PrepareOptions po{"source", run.tokenization, true, &aux};
  const PreparedData both = prepare_data(subset, *provider, po);
  po.aux = nullptr;
  const PreparedData table_only = prepare_data(subset, *provider, po);
  po.aux = &aux;
  po.use_tab = false;
  const PreparedData aux_only = prepare_data(subset, *provider, po);

  struct Arm {
    std::string name;
    std::size_t layers;
    ProjectionKind projection;
    const PreparedData* data;
  };
  const std::vector<Arm> arms = {
      {"layers=1", 1, ProjectionKind::linear, &both},
      {"layers=2", 2, ProjectionKind::linear, &both},
      {"layers=3", 3, ProjectionKind::linear, &both},
      {"projection=mlp2", 2, ProjectionKind::mlp2, &both},
      {"modality=table", 2, ProjectionKind::linear, &table_only},
      {"modality=aux", 2, ProjectionKind::linear, &aux_only},
      {"modality=table+aux", 2, ProjectionKind::linear, &both},
  };
  std::optional<std::size_t> base;
  for (const Arm& a : arms) {
    if (!wanted(o, a.name)) continue;
    const bool is_base = a.layers == 2 && a.projection == ProjectionKind::linear && a.data == &both;
    if (is_base && base) {
      ArmResult copy = result.arms[*base];
      copy.name = a.name;
      result.arms.push_back(std::move(copy));
      continue;
    }
    const auto ta = Clock::now();
    FusionConfig mc = model_config(run, provider->dimension(), L);
    mc.num_layers = a.layers;
    mc.projection = a.projection;
    FusionModel model(mc, run.init_seed());
    const TrainResult tr = train(model, *a.data, split.train, split.validation, run.train,
                                 {arm_dir(o, result.protocol, a.name), false});
    ArmResult arm;
    arm.name = a.name;
    arm.report = evaluate(model, *a.data, split.test, run.train).report;
    arm.curves = tr.epochs;
    arm.steps = tr.steps;
    arm.config = arm_config(run, mc, run.train);
    arm.seconds = seconds_since(ta);
    if (o.verbose) {
      log::info("ablate " + arm.name + ": test macro AUROC " + fmt(arm.report.macro_auroc) + ", final gap " +
                fmt(arm.curves.back().val_loss - arm.curves.back().train_loss));
    }
    result.arms.push_back(std::move(arm));
    if (is_base) base = result.arms.size() - 1;
  }
  result.seconds = seconds_since(t0);
  if (!o.out.empty()) result.write(o.out);
  return result;
}

}  // namespace schemadapt::bench
