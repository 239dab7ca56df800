#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "schemadapt/encoder.hpp"
#include "schemadapt/model.hpp"
#include "schemadapt/trainer.hpp"

namespace schemadapt {

struct ProviderConfig {
  std::string kind = "offline";  // offline | hash | remote
  std::uint64_t seed = 7;
  std::size_t dimension = 64;
  std::string cache_dir = ".embedding-cache";
  RemoteEmbedderConfig remote;
};

struct RunConfig {
  std::uint64_t seed = 0;
  TrainConfig train;
  FusionConfig model;
  ProviderConfig provider;
  TokenizationMode tokenization = TokenizationMode::semantic;
  std::size_t aux_tokens = 0;
  double aux_effect = 0.0;
  double aux_noise = 1.0;
  std::string out_dir;

  // Applies `seed` to every component through named sub-seeds.
  std::uint64_t init_seed() const;
  std::uint64_t shuffle_seed() const;
};

// Unknown keys are rejected with a ValidationError naming the field.
RunConfig run_config_from_json(const nlohmann::ordered_json& j, RunConfig base = {});
RunConfig load_run_config(const std::string& path, RunConfig base = {});
nlohmann::ordered_json to_json(const RunConfig& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const FusionConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c, std::string_view where = "train");
void from_json(const nlohmann::ordered_json& j, FusionConfig& c, std::string_view where = "model");

std::unique_ptr<EmbeddingProvider> make_provider(const ProviderConfig& config);

}  // namespace schemadapt
