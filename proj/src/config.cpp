#include "schemadapt/config.hpp"

#include <cstdlib>
#include <set>

#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"

namespace schemadapt {

using nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& j, std::string_view where, std::initializer_list<std::string_view> keys) {
  if (!j.is_object()) throw ValidationError(std::string(where) + ": expected an object");
  const std::set<std::string_view> allowed(keys);
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ValidationError(std::string(where) + "." + k + ": unknown field");
  }
}

template <class T>
void read(const ordered_json& j, std::string_view where, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string(where) + "." + key + ": wrong type");
  }
}

}  // namespace

std::uint64_t RunConfig::init_seed() const { return sub_seed(seed, "init"); }
std::uint64_t RunConfig::shuffle_seed() const { return sub_seed(seed, "shuffle"); }

ordered_json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"max_steps", c.max_steps},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"split", c.split},
          {"focal_gamma", c.focal_gamma},
          {"focal_alpha", c.focal_alpha},
          {"tau_alpha", c.contrast.tau_alpha},
          {"tau_beta", c.contrast.tau_beta},
          {"mgda_max_iters", c.solver.max_iters},
          {"mgda_tol", c.solver.tol},
          {"mgda_exact_polish", c.solver.exact_polish},
          {"mgda_normalization", mgda::to_string(c.normalization)},
          {"balancer", std::string(to_string(c.balancer))},
          {"use_contrastive", c.use_contrastive},
          {"keep_best", c.keep_best},
          {"curve_train_rows", c.curve_train_rows}};
}

void from_json(const ordered_json& j, TrainConfig& c, std::string_view where) {
  reject_unknown(j, where,
                 {"epochs", "max_steps", "learning_rate", "weight_decay", "beta1", "beta2", "adam_eps", "batch_size",
                  "seed", "split", "focal_gamma", "focal_alpha", "tau_alpha", "tau_beta", "mgda_max_iters",
                  "mgda_tol", "mgda_exact_polish", "mgda_normalization", "balancer", "use_contrastive", "keep_best",
                  "curve_train_rows"});
  read(j, where, "epochs", c.epochs);
  read(j, where, "max_steps", c.max_steps);
  read(j, where, "learning_rate", c.learning_rate);
  read(j, where, "weight_decay", c.weight_decay);
  read(j, where, "beta1", c.beta1);
  read(j, where, "beta2", c.beta2);
  read(j, where, "adam_eps", c.adam_eps);
  read(j, where, "batch_size", c.batch_size);
  read(j, where, "seed", c.seed);
  read(j, where, "split", c.split);
  read(j, where, "focal_gamma", c.focal_gamma);
  read(j, where, "focal_alpha", c.focal_alpha);
  read(j, where, "tau_alpha", c.contrast.tau_alpha);
  read(j, where, "tau_beta", c.contrast.tau_beta);
  read(j, where, "mgda_max_iters", c.solver.max_iters);
  read(j, where, "mgda_tol", c.solver.tol);
  read(j, where, "mgda_exact_polish", c.solver.exact_polish);
  std::string norm = mgda::to_string(c.normalization);
  read(j, where, "mgda_normalization", norm);
  c.normalization = mgda::parse_normalization(norm);
  std::string balancer(to_string(c.balancer));
  read(j, where, "balancer", balancer);
  c.balancer = parse_balancer(balancer);
  read(j, where, "use_contrastive", c.use_contrastive);
  read(j, where, "keep_best", c.keep_best);
  read(j, where, "curve_train_rows", c.curve_train_rows);
}

ordered_json to_json(const FusionConfig& c) {
  return {{"d_in", c.d_in},
          {"d_model", c.d_model},
          {"num_layers", c.num_layers},
          {"num_heads", c.num_heads},
          {"num_labels", c.num_labels},
          {"ffn_mult", c.ffn_mult},
          {"contrast_dim", c.contrast_dim},
          {"aux_positions", c.aux_positions},
          {"gate_init", c.gate_init},
          {"projection", std::string(to_string(c.projection))},
          {"cls_only_last_layer", c.cls_only_last_layer}};
}

void from_json(const ordered_json& j, FusionConfig& c, std::string_view where) {
  reject_unknown(j, where,
                 {"d_in", "d_model", "num_layers", "num_heads", "num_labels", "ffn_mult", "contrast_dim",
                  "aux_positions", "gate_init", "projection", "cls_only_last_layer"});
  read(j, where, "d_in", c.d_in);
  read(j, where, "d_model", c.d_model);
  read(j, where, "num_layers", c.num_layers);
  read(j, where, "num_heads", c.num_heads);
  read(j, where, "num_labels", c.num_labels);
  read(j, where, "ffn_mult", c.ffn_mult);
  read(j, where, "contrast_dim", c.contrast_dim);
  read(j, where, "aux_positions", c.aux_positions);
  read(j, where, "gate_init", c.gate_init);
  std::string proj(to_string(c.projection));
  read(j, where, "projection", proj);
  c.projection = parse_projection_kind(proj);
  read(j, where, "cls_only_last_layer", c.cls_only_last_layer);
}

ordered_json to_json(const RunConfig& c) {
  ordered_json provider = {{"kind", c.provider.kind},
                           {"seed", c.provider.seed},
                           {"dimension", c.provider.dimension},
                           {"cache_dir", c.provider.cache_dir}};
  if (c.provider.kind == "remote") {
    provider["model"] = c.provider.remote.model;
    provider["remote_dimension"] = c.provider.remote.dimension;
  }
  return {{"seed", c.seed},
          {"train", to_json(c.train)},
          {"model", to_json(c.model)},
          {"provider", provider},
          {"tokenization", std::string(to_string(c.tokenization))},
          {"aux_tokens", c.aux_tokens},
          {"aux_effect", c.aux_effect},
          {"aux_noise", c.aux_noise},
          {"out_dir", c.out_dir}};
}

RunConfig run_config_from_json(const ordered_json& j, RunConfig c) {
  reject_unknown(j, "config",
                 {"seed", "train", "model", "provider", "tokenization", "aux_tokens", "aux_effect", "aux_noise",
                  "out_dir"});
  read(j, "config", "seed", c.seed);
  if (j.contains("train")) from_json(j["train"], c.train);
  if (j.contains("model")) from_json(j["model"], c.model);
  if (j.contains("provider")) {
    const auto& p = j["provider"];
    reject_unknown(p, "provider", {"kind", "seed", "dimension", "cache_dir", "model", "remote_dimension"});
    read(p, "provider", "kind", c.provider.kind);
    read(p, "provider", "seed", c.provider.seed);
    read(p, "provider", "dimension", c.provider.dimension);
    read(p, "provider", "cache_dir", c.provider.cache_dir);
    read(p, "provider", "model", c.provider.remote.model);
    read(p, "provider", "remote_dimension", c.provider.remote.dimension);
    if (c.provider.kind != "offline" && c.provider.kind != "hash" && c.provider.kind != "remote") {
      throw ValidationError("provider.kind: expected offline|hash|remote, got '" + c.provider.kind + "'");
    }
  }
  std::string mode(to_string(c.tokenization));
  read(j, "config", "tokenization", mode);
  c.tokenization = parse_tokenization_mode(mode);
  read(j, "config", "aux_tokens", c.aux_tokens);
  read(j, "config", "aux_effect", c.aux_effect);
  read(j, "config", "aux_noise", c.aux_noise);
  read(j, "config", "out_dir", c.out_dir);
  return c;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  ordered_json j;
  try {
    j = ordered_json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("config '" + path + "': " + e.what());
  }
  return run_config_from_json(j, std::move(base));
}

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config) {
  if (config.kind == "offline") return std::make_unique<OfflineEmbedder>(config.seed, config.dimension);
  if (config.kind == "hash") return std::make_unique<HashEmbedder>(config.seed, config.dimension);
  if (config.kind == "remote") {
    RemoteEmbedderConfig rc = RemoteEmbedderConfig::from_environment();
    if (!std::getenv("SCHEMADAPT_EMBED_MODEL")) rc.model = config.remote.model;
    rc.dimension = config.remote.dimension;
    return make_remote_provider(rc, config.cache_dir);
  }
  throw ValidationError("provider.kind: expected offline|hash|remote, got '" + config.kind + "'");
}

}  // namespace schemadapt
