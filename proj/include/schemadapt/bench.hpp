#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "schemadapt/config.hpp"
#include "schemadapt/metrics.hpp"
#include "schemadapt/schema.hpp"
#include "schemadapt/trainer.hpp"

namespace schemadapt::bench {

enum class Paraphrase { identical, light, heavy };
Paraphrase parse_paraphrase(std::string_view name);
std::string_view to_string(Paraphrase p);

struct GeneratorConfig {
  std::size_t n_source = 4000;  // rows
  std::size_t n_target = 1000;
  std::size_t n_features = 24;
  std::size_t num_labels = 6;
  std::uint64_t seed = 0;
  Paraphrase paraphrase = Paraphrase::light;
  double visit_noise = 0.25;
  double missing_rate = 0.04;
  std::vector<double> prevalence;  // empty: default skewed profile
};

struct LatentSpec {
  ad::Matrix weights;  // L x F
  std::vector<double> bias;
  std::vector<double> prevalence;
};

struct BenchmarkPair {
  GeneratorConfig config;
  DatasetMatrix source;
  DatasetMatrix target;
  LatentSpec latent;
  ad::Matrix source_z;  // per row latent subject features
  ad::Matrix target_z;
  std::vector<std::pair<std::string, std::string>> column_map;  // source name -> target name
};

BenchmarkPair generate_pair(const GeneratorConfig& config);

// Writes source_schema.json, source.csv, target_schema.json, target.csv and
// latent.json into `dir`.
void write_pair(const BenchmarkPair& pair, const std::filesystem::path& dir);
struct LoadedPair {
  DatasetMatrix source;
  DatasetMatrix target;
};
LoadedPair load_pair(const std::filesystem::path& dir);

// Words the paraphraser may substitute, and the substitution itself.
std::string paraphrase_text(std::string_view text, Paraphrase level);

// Logistic fit on the true latent features: first 80% of rows train, the rest
// score. Certifies the planted signal is learnable.
MetricReport bayes_probe(const ad::Matrix& z, const DatasetMatrix& data);

// ---------------------------------------------------------------------------
// Protocols

struct ArmResult {
  std::string name;
  MetricReport report;
  std::vector<EpochRecord> curves;
  nlohmann::ordered_json config;
  double seconds = 0.0;
  std::size_t steps = 0;
  std::optional<MetricReport> reference;  // e.g. source test split for zero-shot arms
};

struct ProtocolResult {
  std::string protocol;
  std::uint64_t seed = 0;
  std::vector<ArmResult> arms;
  nlohmann::ordered_json config;
  double seconds = 0.0;

  const ArmResult& arm(std::string_view name) const;
  std::string to_markdown() const;
  std::string to_csv() const;
  // <out>/<protocol>/<arm>/{metrics.json,curves.csv,config.json} plus
  // <out>/<protocol>/summary.{md,csv}.
  void write(const std::filesystem::path& out) const;
};

struct ProtocolOptions {
  RunConfig run;                          // model/training/provider settings
  std::uint64_t seed = 0;
  std::vector<std::string> arms;          // subset filter; empty: all
  std::filesystem::path out;              // empty: keep in memory only
  bool verbose = false;
};

// Variants: semantic, random_embed, name_only.
ProtocolResult run_zero_shot(const BenchmarkPair& pair, const ProtocolOptions& options);

struct FewShotOptions {
  ProtocolOptions base;
  std::vector<std::size_t> grid = {30, 100, 300, 1000};
  std::size_t min_steps = 30;   // per grid point, both arms
  std::size_t min_epochs = 2;
  double finetune_lr = 0.001;
};
ProtocolResult run_few_shot(const BenchmarkPair& pair, const FewShotOptions& options);

struct AblationOptions {
  ProtocolOptions base;
  std::size_t rows = 600;  // source rows used
};
// Arms: layers=1, layers=2, layers=3, projection=mlp2, modality=table,
// modality=aux, modality=table+aux (layers=2 and table+aux coincide and run once).
ProtocolResult run_ablations(const BenchmarkPair& pair, const AblationOptions& options);

// Default protocol settings sized for a single CPU core.
RunConfig desk_run_config(std::size_t num_labels);

}  // namespace schemadapt::bench
