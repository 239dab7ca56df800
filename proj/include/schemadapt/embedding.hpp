#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace schemadapt {

// Unit-norm text embedding.
using EmbeddingVector = std::vector<double>;

double l2_norm(std::span<const double> v);
double cosine_similarity(std::span<const double> a, std::span<const double> b);
// Scales to unit length. Throws NumericError for zero or non-finite input.
void normalize_in_place(std::span<double> v);

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual std::size_t dimension() const = 0;

  // Output is aligned with `statements`; every vector has unit norm.
  virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> statements) = 0;
};

// Checks the batch preconditions (non-empty list, non-empty statements) and
// the unit-norm postcondition around provider.embed_batch.
std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> statements);

// Deterministic stand-in for a language-model embedder. Blends a per-string
// Gaussian (0.3) with the mean of per-token Gaussians (0.7) so statements that
// share words land close together.
EmbeddingVector offline_embed(std::string_view statement, std::uint64_t seed, std::size_t dimension);

// Lower-cased word tokens, split on whitespace and punctuation.
std::vector<std::string> word_tokens(std::string_view statement);

class OfflineEmbedder final : public EmbeddingProvider {
 public:
  explicit OfflineEmbedder(std::uint64_t seed = 7, std::size_t dimension = 64);
  std::string name() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> statements) override;

 private:
  std::uint64_t seed_;
  std::size_t dimension_;
};

// Pure hash-seeded Gaussian per key with no shared-token component: two
// different strings are unrelated. Backs the random-embedding baseline.
class HashEmbedder final : public EmbeddingProvider {
 public:
  explicit HashEmbedder(std::uint64_t seed, std::size_t dimension = 64);
  std::string name() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> statements) override;

 private:
  std::uint64_t seed_;
  std::size_t dimension_;
};

// Persistent store of raw (pre-normalization) f32 vectors keyed by provider
// and statement hash. Layout: <dir>/<provider>/<shard>.bin, each file a
// sequence of length-prefixed records. Readers share; writers serialize.
class EmbeddingCache {
 public:
  static constexpr unsigned kShards = 16;

  EmbeddingCache(std::filesystem::path root, std::string provider_name);

  std::optional<std::vector<float>> lookup(std::string_view statement) const;
  void store(std::string_view statement, std::span<const float> raw);

  const std::filesystem::path& directory() const { return dir_; }
  std::size_t size() const;
  std::size_t skipped_records() const { return skipped_; }

  static std::uint64_t key(std::string_view statement);

 private:
  void load_shard(unsigned shard);

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::uint64_t, std::vector<float>> entries_;
  std::size_t skipped_ = 0;
};

// Wraps a provider with an EmbeddingCache. Vectors are round-tripped through
// f32 before being returned, so a cache hit and a fresh computation give the
// same bits.
class CachingProvider final : public EmbeddingProvider {
 public:
  // `raw_source` must return un-normalized vectors via raw_embed.
  class RawSource {
   public:
    virtual ~RawSource() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<std::vector<float>> raw_embed(std::span<const std::string> statements) = 0;
  };

  CachingProvider(std::unique_ptr<RawSource> source, std::filesystem::path cache_root);

  std::string name() const override { return source_->name(); }
  std::size_t dimension() const override { return source_->dimension(); }
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> statements) override;

  const EmbeddingCache& cache() const { return cache_; }
  std::size_t fetched() const { return fetched_; }

 private:
  std::unique_ptr<RawSource> source_;
  EmbeddingCache cache_;
  std::mutex fetch_mutex_;
  std::size_t fetched_ = 0;
};

// Offline embedder exposed as a raw source (used to exercise the cache).
class OfflineRawSource final : public CachingProvider::RawSource {
 public:
  OfflineRawSource(std::uint64_t seed, std::size_t dimension) : seed_(seed), dimension_(dimension) {}
  std::string name() const override;
  std::size_t dimension() const override { return dimension_; }
  std::vector<std::vector<float>> raw_embed(std::span<const std::string> statements) override;

 private:
  std::uint64_t seed_;
  std::size_t dimension_;
};

struct RemoteEmbedderConfig {
  std::string url;    // full endpoint, e.g. https://host/v1/embeddings
  std::string api_key;
  std::string model = "text-embedding-3-large";
  std::size_t dimension = 3072;
  std::size_t batch_size = 64;
  int max_retries = 3;
  int timeout_seconds = 60;
  int backoff_ms = 250;

  // Reads SCHEMADAPT_EMBED_URL, SCHEMADAPT_EMBED_KEY, SCHEMADAPT_EMBED_MODEL.
  static RemoteEmbedderConfig from_environment();
};

// Client for the common embeddings REST shape:
//   POST {"model": m, "input": [...]}  ->  {"data": [{"embedding": [...]}, ...]}
class RemoteRawSource final : public CachingProvider::RawSource {
 public:
  explicit RemoteRawSource(RemoteEmbedderConfig config);
  std::string name() const override;
  std::size_t dimension() const override { return config_.dimension; }
  std::vector<std::vector<float>> raw_embed(std::span<const std::string> statements) override;

 private:
  std::vector<std::vector<float>> request(std::span<const std::string> chunk);
  RemoteEmbedderConfig config_;
};

std::unique_ptr<EmbeddingProvider> make_remote_provider(RemoteEmbedderConfig config,
                                                        const std::filesystem::path& cache_root);

}  // namespace schemadapt
