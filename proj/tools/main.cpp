#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "schemadapt/bench.hpp"
#include "schemadapt/config.hpp"
#include "schemadapt/csv.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"
#include "schemadapt/log.hpp"
#include "schemadapt/mgda.hpp"

namespace fs = std::filesystem;
using namespace schemadapt;

namespace {

// Flags shared by every subcommand that runs a model.
struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string provider = "offline";
  std::size_t epochs = 0;
  std::size_t max_steps = 0;
  std::size_t batch_size = 0;
  double lr = 0.0;
  std::size_t layers = 0;
  std::size_t d_model = 0;
  std::size_t ffn_mult = 0;
  std::string projection;
  std::string tokenization;
  std::string normalization;
  std::string balancer;
  std::size_t aux_tokens = 0;
  double aux_effect = -1.0;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c, bool model_flags) {
  app->add_option("--config", c.config_path, "Run configuration JSON")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "Run-level seed (all sub-seeds derive from it)");
  app->add_option("--out", c.out, "Output directory");
  app->add_option("--provider", c.provider, "Embedding provider")->check(CLI::IsMember({"offline", "hash", "remote"}));
  app->add_flag("--quiet", c.quiet, "Only print warnings and errors");
  if (!model_flags) return;
  app->add_option("--epochs", c.epochs, "Training epochs");
  app->add_option("--max-steps", c.max_steps, "Cap on optimizer steps (0: no cap)");
  app->add_option("--batch-size", c.batch_size, "Mini-batch size");
  app->add_option("--lr", c.lr, "Peak learning rate");
  app->add_option("--layers", c.layers, "Transformer layers");
  app->add_option("--d-model", c.d_model, "Model width");
  app->add_option("--ffn-mult", c.ffn_mult, "Feed-forward width multiplier");
  app->add_option("--projection", c.projection, "Projection block")->check(CLI::IsMember({"linear", "mlp2"}));
  app->add_option("--tokenization", c.tokenization, "Token text")
      ->check(CLI::IsMember({"semantic", "name_only", "keyed"}));
  app->add_option("--normalization", c.normalization, "Task-gradient normalization before solving")
      ->check(CLI::IsMember({"none", "l2", "loss", "loss+"}));
  app->add_option("--balancer", c.balancer, "Task weighting: min-norm (mgda) or equal weights (uniform)")
      ->check(CLI::IsMember({"mgda", "uniform"}));
  app->add_option("--aux-tokens", c.aux_tokens, "Synthetic auxiliary tokens per subject");
  app->add_option("--aux-effect", c.aux_effect, "Planted label signal in auxiliary tokens");
}

RunConfig resolve(const Common& c, std::size_t num_labels, const CLI::App* app) {
  RunConfig run = bench::desk_run_config(num_labels);
  if (!c.config_path.empty()) run = load_run_config(c.config_path, run);
  if (app->count("--seed") || c.config_path.empty()) run.seed = c.seed;
  if (app->count("--provider")) run.provider.kind = c.provider;
  if (c.epochs) run.train.epochs = c.epochs;
  if (app->count("--max-steps")) run.train.max_steps = c.max_steps;
  if (c.batch_size) run.train.batch_size = c.batch_size;
  if (c.lr > 0) run.train.learning_rate = c.lr;
  if (c.layers) run.model.num_layers = c.layers;
  if (c.d_model) run.model.d_model = c.d_model;
  if (c.ffn_mult) run.model.ffn_mult = c.ffn_mult;
  if (!c.projection.empty()) run.model.projection = parse_projection_kind(c.projection);
  if (!c.tokenization.empty()) run.tokenization = parse_tokenization_mode(c.tokenization);
  if (!c.normalization.empty()) run.train.normalization = mgda::parse_normalization(c.normalization);
  if (!c.balancer.empty()) run.train.balancer = parse_balancer(c.balancer);
  if (app->count("--aux-tokens")) run.aux_tokens = c.aux_tokens;
  if (c.aux_effect >= 0) run.aux_effect = c.aux_effect;
  if (!c.out.empty()) run.out_dir = c.out;
  run.model.num_labels = num_labels;
  run.train.seed = sub_seed(run.seed, "train");
  return run;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) {
  fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  write_text_file(path.string(), j.dump(2) + "\n");
}

// Schema + data, from either --pair-dir (source side) or explicit files.
struct Inputs {
  std::string pair_dir;
  std::string side = "source";
  std::string schema;
  std::string data;
};

void add_inputs(CLI::App* app, Inputs& in) {
  app->add_option("--pair-dir", in.pair_dir, "Directory written by synth-gen");
  app->add_option("--side", in.side, "Which side of the pair to use")->check(CLI::IsMember({"source", "target"}));
  app->add_option("--schema", in.schema, "Schema metadata JSON");
  app->add_option("--data", in.data, "Data CSV");
}

DatasetMatrix load_inputs(const Inputs& in) {
  std::string schema_path = in.schema, data_path = in.data;
  if (!in.pair_dir.empty()) {
    schema_path = (fs::path(in.pair_dir) / (in.side + "_schema.json")).string();
    data_path = (fs::path(in.pair_dir) / (in.side + ".csv")).string();
  }
  if (schema_path.empty() || data_path.empty()) throw ValidationError("inputs: give --pair-dir or --schema and --data");
  const SchemaDescriptor schema = parse_schema(read_text_file(schema_path), {.require_numeric_stats = false});
  return parse_dataset(read_text_file(data_path), schema);
}

bool has_all_stats(const SchemaDescriptor& s) {
  for (const auto& c : s.columns) {
    if (c.kind == ColumnKind::numerical && (!c.mean || !c.range)) return false;
  }
  return true;
}

bench::BenchmarkPair pair_for(const std::string& dir, const bench::GeneratorConfig& gen) {
  bench::BenchmarkPair pair;
  if (dir.empty()) return bench::generate_pair(gen);
  // Loaded pairs carry no latent matrix; protocols only need the datasets.
  auto loaded = bench::load_pair(dir);
  pair.source = std::move(loaded.source);
  pair.target = std::move(loaded.target);
  pair.config = gen;
  const auto latent = nlohmann::ordered_json::parse(read_text_file((fs::path(dir) / "latent.json").string()));
  pair.config.paraphrase = bench::parse_paraphrase(latent.at("paraphrase").get<std::string>());
  return pair;
}

int cmd_synth_gen(const bench::GeneratorConfig& gen, const std::string& out) {
  if (out.empty()) throw ValidationError("synth-gen: --out is required");
  const auto pair = bench::generate_pair(gen);
  bench::write_pair(pair, out);
  const auto probe_s = bench::bayes_probe(pair.source_z, pair.source);
  const auto probe_t = bench::bayes_probe(pair.target_z, pair.target);
  std::printf("wrote %zu source and %zu target rows to %s\n", pair.source.size(), pair.target.size(), out.c_str());
  std::printf("latent probe macro AUROC: source %.4f, target %.4f\n", probe_s.macro_auroc, probe_t.macro_auroc);
  return 0;
}

int cmd_encode(const Inputs& in, const Common& c, const std::string& mode, const std::string& ndjson) {
  const DatasetMatrix data = load_inputs(in);
  if (!has_all_stats(data.schema)) throw ValidationError("encode: numerical columns need mean and range in the schema");
  ProviderConfig pc;
  pc.kind = c.provider;
  auto provider = make_provider(pc);
  const TokenizationMode m = parse_tokenization_mode(mode);
  std::ostringstream text;
  for (const Row& row : data.rows) {
    for (const auto& tok : tokenize_row(row, data.schema, *provider, m)) text << tok.text << '\n';
  }
  std::fputs(text.str().c_str(), stdout);
  if (!ndjson.empty()) write_text_file(ndjson, statements_ndjson(data, *provider, m));
  return 0;
}

int cmd_train(const Inputs& in, const Common& c, const CLI::App* app) {
  if (c.out.empty()) throw ValidationError("train: --out is required");
  DatasetMatrix data = load_inputs(in);
  RunConfig run = resolve(c, data.schema.num_labels(), app);
  const fs::path out(c.out);
  fs::create_directories(out);
  const Split split = split_stratified(data, run.train.split, run.train.seed);
  if (!has_all_stats(data.schema)) data.schema = compute_numeric_stats(data, split.train);
  auto provider = make_provider(run.provider);
  run.model.d_in = provider->dimension();
  write_json(out / "config.json", to_json(run));

  AuxTokenSource aux;
  aux.count = run.aux_tokens;
  aux.dimension = run.model.d_model;
  aux.seed = sub_seed(run.seed, "aux");
  aux.effect = run.aux_effect;
  aux.noise = run.aux_noise;
  for (std::size_t k = 0; k < data.schema.num_labels(); ++k) aux.designated_labels.push_back(k);
  run.model.aux_positions = std::max(run.model.aux_positions, run.aux_tokens);
  const PreparedData prepared =
      prepare_data(data, *provider, {"train", run.tokenization, true, run.aux_tokens > 0 ? &aux : nullptr});

  FusionModel model(run.model, run.init_seed());
  const TrainResult tr = train(model, prepared, split.train, split.validation, run.train, {out, true});
  const Evaluation test = evaluate(model, prepared, split.test, run.train);
  write_text_file((out / "metrics.json").string(), test.report.to_json() + "\n");
  write_text_file((out / "schema.json").string(), serialize_schema(data.schema));
  if (!c.quiet) {
    std::printf("trained %zu steps; best validation macro AUROC %.4f (epoch %zu)\n", tr.steps, tr.best_val_auroc,
                tr.best_epoch);
    std::fputs(test.report.to_table().c_str(), stdout);
  }
  return 0;
}

int cmd_eval(const Inputs& in, const Common& c, const std::string& checkpoint, const std::string& run_dir,
             bool provider_override) {
  if (run_dir.empty()) throw ValidationError("eval: --run-dir is required");
  const fs::path dir(run_dir);
  RunConfig run = load_run_config((dir / "config.json").string());
  DatasetMatrix data = load_inputs(in);
  if (!has_all_stats(data.schema)) {
    // Fall back to the statistics the model was trained with when columns match.
    const auto trained = parse_schema(read_text_file((dir / "schema.json").string()));
    for (auto& col : data.schema.columns) {
      if (col.kind != ColumnKind::numerical || (col.mean && col.range)) continue;
      auto idx = trained.index_of(col.name);
      if (!idx) throw ValidationError("eval: no statistics for numerical column '" + col.name + "'");
      col.mean = trained.columns[*idx].mean;
      col.range = trained.columns[*idx].range;
    }
  }
  if (provider_override) run.provider.kind = c.provider;
  auto provider = make_provider(run.provider);
  FusionModel model(run.model, run.init_seed());
  const std::string ckpt = checkpoint.empty() ? (dir / "best.ckpt").string() : checkpoint;
  ad::restore_parameters(model.parameters(), ad::load_checkpoint(ckpt));
  AuxTokenSource aux;
  aux.count = run.aux_tokens;
  aux.dimension = run.model.d_model;
  aux.seed = sub_seed(run.seed, "aux");
  aux.effect = run.aux_effect;
  aux.noise = run.aux_noise;
  for (std::size_t k = 0; k < data.schema.num_labels(); ++k) aux.designated_labels.push_back(k);
  const PreparedData prepared =
      prepare_data(data, *provider, {"eval", run.tokenization, true, run.aux_tokens > 0 ? &aux : nullptr});
  std::vector<std::size_t> rows(data.rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const Evaluation ev = evaluate(model, prepared, rows, run.train);
  std::fputs(ev.report.to_table().c_str(), stdout);
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_text_file((fs::path(c.out) / "metrics.json").string(), ev.report.to_json() + "\n");
  }
  return 0;
}

int cmd_mgda(const std::string& input, int max_iters, double tol) {
  const auto records = csv::parse(read_text_file(input));
  if (records.empty()) throw ValidationError("mgda-solve: empty gradient file");
  const std::size_t dims = records[0].fields.size();
  ad::Matrix G(static_cast<ad::Index>(records.size()), static_cast<ad::Index>(dims));
  for (std::size_t r = 0; r < records.size(); ++r) {
    if (records[r].fields.size() != dims) {
      throw ValidationError("mgda-solve: line " + std::to_string(records[r].line) + " has " +
                            std::to_string(records[r].fields.size()) + " values, expected " + std::to_string(dims));
    }
    for (std::size_t c = 0; c < dims; ++c) {
      try {
        std::size_t used = 0;
        G(static_cast<ad::Index>(r), static_cast<ad::Index>(c)) = std::stod(records[r].fields[c], &used);
        if (used != records[r].fields[c].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ParseError("mgda-solve: line " + std::to_string(records[r].line) + ", column " + std::to_string(c + 1) +
                         ": not a number");
      }
    }
  }
  const auto sol = mgda::min_norm_solve(G, {max_iters, tol, true});
  std::string alpha = "alpha=(";
  for (std::size_t t = 0; t < sol.alpha.size(); ++t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%.6g", t ? ", " : "", sol.alpha[t]);
    alpha += buf;
  }
  alpha += ")";
  std::printf("%s\n", alpha.c_str());
  const auto g = mgda::combine(G, sol.alpha);
  std::printf("combined=(");
  for (ad::Index i = 0; i < g.size(); ++i) std::printf("%s%.6g", i ? ", " : "", g(i));
  std::printf(")\nnorm_sq=%.12g\nkkt_violation=%.3e (tol %.1e) %s\n", sol.norm_sq, sol.duality_gap, tol,
              sol.duality_gap <= tol ? "certified" : "NOT certified");
  return sol.duality_gap <= tol ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"schemadapt: schema-adaptive tabular learning toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  bench::GeneratorConfig gen;
  std::string gen_out, paraphrase = "light";
  auto* synth = app.add_subcommand("synth-gen", "Generate a source/target benchmark pair");
  synth->add_option("--out", gen_out, "Output directory")->required();
  synth->add_option("--seed", gen.seed, "Generator seed");
  synth->add_option("--n-source", gen.n_source, "Source rows");
  synth->add_option("--n-target", gen.n_target, "Target rows");
  synth->add_option("--n-features", gen.n_features, "Feature columns");
  synth->add_option("--labels", gen.num_labels, "Label count");
  synth->add_option("--paraphrase", paraphrase, "Target description paraphrase level")
      ->check(CLI::IsMember({"identical", "light", "heavy"}));

  Inputs enc_in;
  Common enc_common;
  std::string enc_mode = "semantic", enc_ndjson;
  auto* encode = app.add_subcommand("encode", "Print the statement for every present cell");
  add_inputs(encode, enc_in);
  encode->add_option("--provider", enc_common.provider, "Embedding provider")
      ->check(CLI::IsMember({"offline", "hash", "remote"}));
  encode->add_option("--tokenization", enc_mode, "Token text")->check(CLI::IsMember({"semantic", "name_only", "keyed"}));
  encode->add_option("--ndjson", enc_ndjson, "Also write text, scale and embedding norm per token to this file");

  Inputs train_in;
  Common train_common;
  auto* train_cmd = app.add_subcommand("train", "Train on one dataset (subject-level 80/10/10 split)");
  add_inputs(train_cmd, train_in);
  add_common(train_cmd, train_common, true);

  Inputs eval_in;
  Common eval_common;
  std::string eval_ckpt, eval_run;
  auto* eval_cmd = app.add_subcommand("eval", "Score a dataset with a trained run");
  add_inputs(eval_cmd, eval_in);
  eval_cmd->add_option("--run-dir", eval_run, "Directory written by train")->required();
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint (default: <run-dir>/best.ckpt)");
  eval_cmd->add_option("--out", eval_common.out, "Write metrics.json here");
  eval_cmd->add_option("--provider", eval_common.provider, "Embedding provider")
      ->check(CLI::IsMember({"offline", "hash", "remote"}));

  struct ProtocolFlags {
    Common common;
    std::string pair_dir;
    std::vector<std::string> arms;
    std::string paraphrase = "light";
    bool verbose = false;
  };
  ProtocolFlags zs, fs_flags, ab;
  std::vector<std::size_t> grid = {30, 100, 300, 1000};
  std::size_t min_steps = 30, ab_rows = 600;
  auto protocol = [&](const char* name, const char* help, ProtocolFlags& f) {
    auto* sc = app.add_subcommand(name, help);
    add_common(sc, f.common, true);
    sc->add_option("--pair-dir", f.pair_dir, "Use this synth-gen pair instead of generating one");
    sc->add_option("--arms", f.arms, "Run only these arms");
    sc->add_option("--paraphrase", f.paraphrase, "Paraphrase level when generating")
        ->check(CLI::IsMember({"identical", "light", "heavy"}));
    sc->add_flag("--verbose", f.verbose, "Log per-arm results");
    return sc;
  };
  auto* zero = protocol("zero-shot", "Train on source, evaluate frozen on target", zs);
  auto* few = protocol("few-shot", "Fine-tuned vs from-scratch on growing target subsets", fs_flags);
  few->add_option("--grid", grid, "Target-train sizes (ascending)");
  few->add_option("--min-steps", min_steps, "Minimum optimizer steps per grid point");
  auto* abl = protocol("ablate", "Depth, projection and modality ablations", ab);
  abl->add_option("--rows", ab_rows, "Source rows used");

  std::string mgda_in;
  int mgda_iters = 100;
  double mgda_tol = 1e-6;
  auto* solve = app.add_subcommand("mgda-solve", "Min-norm weights for a task-gradient CSV (one row per task)");
  solve->add_option("input", mgda_in, "Gradient CSV")->required()->check(CLI::ExistingFile);
  solve->add_option("--max-iters", mgda_iters, "Frank-Wolfe iterations");
  solve->add_option("--tol", mgda_tol, "Duality-gap tolerance");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (const Common* c : {&train_common, &zs.common, &fs_flags.common, &ab.common}) {
      if (c->quiet) log::set_min_level(log::Level::warn);
    }
    if (*synth) {
      gen.paraphrase = bench::parse_paraphrase(paraphrase);
      return cmd_synth_gen(gen, gen_out);
    }
    if (*encode) return cmd_encode(enc_in, enc_common, enc_mode, enc_ndjson);
    if (*train_cmd) return cmd_train(train_in, train_common, train_cmd);
    if (*eval_cmd) return cmd_eval(eval_in, eval_common, eval_ckpt, eval_run, eval_cmd->count("--provider") > 0);
    if (*solve) return cmd_mgda(mgda_in, mgda_iters, mgda_tol);

    auto run_protocol = [&](ProtocolFlags& f, CLI::App* sc, auto&& body) {
      bench::GeneratorConfig g;
      g.seed = f.common.seed;
      g.paraphrase = bench::parse_paraphrase(f.paraphrase);
      body(g);
      const auto pair = pair_for(f.pair_dir, g);
      bench::ProtocolOptions po;
      po.run = resolve(f.common, pair.source.schema.num_labels(), sc);
      po.seed = po.run.seed;
      po.arms = f.arms;
      po.out = f.common.out;
      po.verbose = f.verbose;
      return std::make_pair(pair, po);
    };
    bench::ProtocolResult result;
    if (*zero) {
      auto [pair, po] = run_protocol(zs, zero, [](bench::GeneratorConfig&) {});
      result = bench::run_zero_shot(pair, po);
    } else if (*few) {
      auto [pair, po] = run_protocol(fs_flags, few, [](bench::GeneratorConfig& g) { g.n_target = 1500; });
      bench::FewShotOptions fo;
      fo.base = po;
      fo.grid = grid;
      fo.min_steps = min_steps;
      result = bench::run_few_shot(pair, fo);
    } else if (*abl) {
      auto [pair, po] = run_protocol(ab, abl, [](bench::GeneratorConfig&) {});
      if (po.run.aux_tokens == 0) {
        po.run.aux_tokens = 8;
        if (ab.common.aux_effect < 0) po.run.aux_effect = 1.0;
      }
      bench::AblationOptions ao;
      ao.base = po;
      ao.rows = ab_rows;
      result = bench::run_ablations(pair, ao);
    }
    std::fputs(result.to_markdown().c_str(), stdout);
    std::printf("total %.1f s\n", result.seconds);
    return 0;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
