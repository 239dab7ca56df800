#include "schemadapt/embedding.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"
#include "schemadapt/log.hpp"

namespace schemadapt {

double l2_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: dimension mismatch");
  double dot = 0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (l2_norm(a) * l2_norm(b));
}

void normalize_in_place(std::span<double> v) {
  const double n = l2_norm(v);
  if (!(n > 0) || !std::isfinite(n)) throw NumericError("normalize: vector has zero or non-finite norm");
  for (double& x : v) x /= n;
}

std::vector<EmbeddingVector> embed_batch(EmbeddingProvider& provider, std::span<const std::string> statements) {
  if (statements.empty()) throw ValidationError("embed_batch: statement list is empty");
  for (std::size_t i = 0; i < statements.size(); ++i) {
    if (statements[i].empty()) throw ValidationError("embed_batch: statement " + std::to_string(i) + " is empty");
  }
  auto out = provider.embed_batch(statements);
  if (out.size() != statements.size()) {
    throw IntegrityError("embed_batch: provider '" + provider.name() + "' returned " + std::to_string(out.size()) +
                         " vectors for " + std::to_string(statements.size()) + " statements");
  }
  for (const auto& v : out) {
    if (v.size() != provider.dimension()) throw IntegrityError("embed_batch: vector dimension differs from provider");
    if (std::abs(l2_norm(v) - 1.0) > 1e-9) throw IntegrityError("embed_batch: provider returned a non-unit vector");
  }
  return out;
}

std::vector<std::string> word_tokens(std::string_view statement) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : statement) {
    if (std::isalnum(c) || c >= 0x80) {
      current.push_back(static_cast<char>(std::tolower(c)));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

namespace {

constexpr std::uint64_t kTokenSalt = 0x746f6b656e5f6261ULL;

std::vector<double> gaussian(std::uint64_t seed, std::size_t dimension) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(dimension);
  for (double& x : v) x = normal(rng);
  return v;
}

std::vector<double> unit_gaussian(std::uint64_t seed, std::size_t dimension) {
  auto v = gaussian(seed, dimension);
  normalize_in_place(v);
  return v;
}

// Un-normalized blend 0.3 * identity + 0.7 * bag, each part unit length.
std::vector<double> offline_raw(std::string_view statement, std::uint64_t seed, std::size_t dimension) {
  if (dimension < 8) throw ValidationError("offline_embed: dimension must be >= 8");
  auto identity = unit_gaussian(combine(fnv1a64(statement), seed), dimension);
  const auto tokens = word_tokens(statement);
  std::vector<double> bag(dimension, 0.0);
  for (const auto& token : tokens) {
    auto t = unit_gaussian(combine(fnv1a64(token), seed ^ kTokenSalt), dimension);
    for (std::size_t i = 0; i < dimension; ++i) bag[i] += t[i];
  }
  std::vector<double> out(dimension);
  if (tokens.empty()) {
    for (std::size_t i = 0; i < dimension; ++i) out[i] = identity[i];
    return out;
  }
  normalize_in_place(bag);
  for (std::size_t i = 0; i < dimension; ++i) out[i] = 0.3 * identity[i] + 0.7 * bag[i];
  return out;
}

EmbeddingVector normalized_from_f32(std::span<const float> raw) {
  EmbeddingVector v(raw.begin(), raw.end());
  normalize_in_place(v);
  return v;
}

}  // namespace

EmbeddingVector offline_embed(std::string_view statement, std::uint64_t seed, std::size_t dimension) {
  auto v = offline_raw(statement, seed, dimension);
  normalize_in_place(v);
  return v;
}

OfflineEmbedder::OfflineEmbedder(std::uint64_t seed, std::size_t dimension) : seed_(seed), dimension_(dimension) {
  if (dimension < 8) throw ValidationError("OfflineEmbedder: dimension must be >= 8");
}

std::string OfflineEmbedder::name() const {
  return "offline-s" + std::to_string(seed_) + "-d" + std::to_string(dimension_);
}

std::vector<EmbeddingVector> OfflineEmbedder::embed_batch(std::span<const std::string> statements) {
  std::vector<EmbeddingVector> out;
  out.reserve(statements.size());
  for (const auto& s : statements) out.push_back(offline_embed(s, seed_, dimension_));
  return out;
}

HashEmbedder::HashEmbedder(std::uint64_t seed, std::size_t dimension) : seed_(seed), dimension_(dimension) {
  if (dimension < 8) throw ValidationError("HashEmbedder: dimension must be >= 8");
}

std::string HashEmbedder::name() const {
  return "hash-s" + std::to_string(seed_) + "-d" + std::to_string(dimension_);
}

std::vector<EmbeddingVector> HashEmbedder::embed_batch(std::span<const std::string> statements) {
  std::vector<EmbeddingVector> out;
  out.reserve(statements.size());
  for (const auto& s : statements) out.push_back(unit_gaussian(combine(fnv1a64(s), seed_), dimension_));
  return out;
}

// ---------------------------------------------------------------------------
// Cache

namespace {

constexpr std::uint32_t kRecordHeader = 8 + 4;  // key + dimension

std::string sanitize(std::string_view name) {
  std::string out;
  for (char c : name) out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' ? c : '_');
  return out.empty() ? std::string("provider") : out;
}

std::uint32_t checksum(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(fnv1a64(std::string_view(data, n)) & 0xffffffffu);
}

std::string shard_name(unsigned shard) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02x.bin", shard);
  return buf;
}

}  // namespace

std::uint64_t EmbeddingCache::key(std::string_view statement) { return fnv1a64(statement); }

EmbeddingCache::EmbeddingCache(std::filesystem::path root, std::string provider_name)
    : dir_(std::move(root) / sanitize(provider_name)) {
  std::error_code ec;
  std::filesystem::create_directories(dir_, ec);
  if (ec) throw Error("embedding cache: cannot create '" + dir_.string() + "': " + ec.message());
  for (unsigned s = 0; s < kShards; ++s) load_shard(s);
}

void EmbeddingCache::load_shard(unsigned shard) {
  const auto path = dir_ / shard_name(shard);
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) {
      log::warn("embedding cache: truncated record header in " + path.string());
      ++skipped_;
      break;
    }
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + pos, 4);
    if (len < kRecordHeader + 4 || len > bytes.size() - pos - 4) {
      // Length field is unusable, so later records cannot be located either.
      log::warn("embedding cache: corrupted record length in " + path.string() + ", ignoring rest of shard");
      ++skipped_;
      break;
    }
    const char* payload = bytes.data() + pos + 4;
    pos += 4 + len;
    std::uint64_t key = 0;
    std::uint32_t dim = 0;
    std::uint32_t stored_sum = 0;
    std::memcpy(&key, payload, 8);
    std::memcpy(&dim, payload + 8, 4);
    std::memcpy(&stored_sum, payload + len - 4, 4);
    if (static_cast<std::uint64_t>(dim) * 4 + kRecordHeader + 4 != len || checksum(payload, len - 4) != stored_sum) {
      log::warn("embedding cache: skipping corrupted entry in " + path.string());
      ++skipped_;
      continue;
    }
    std::vector<float> values(dim);
    std::memcpy(values.data(), payload + kRecordHeader, dim * 4);
    entries_[key] = std::move(values);
  }
}

std::optional<std::vector<float>> EmbeddingCache::lookup(std::string_view statement) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(key(statement));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::store(std::string_view statement, std::span<const float> raw) {
  const std::uint64_t k = key(statement);
  const auto dim = static_cast<std::uint32_t>(raw.size());
  const std::uint32_t len = kRecordHeader + dim * 4 + 4;
  std::vector<char> record(4 + len);
  std::memcpy(record.data(), &len, 4);
  std::memcpy(record.data() + 4, &k, 8);
  std::memcpy(record.data() + 12, &dim, 4);
  std::memcpy(record.data() + 16, raw.data(), dim * 4);
  const std::uint32_t sum = checksum(record.data() + 4, len - 4);
  std::memcpy(record.data() + 4 + len - 4, &sum, 4);

  std::unique_lock lock(mutex_);
  const auto path = dir_ / shard_name(static_cast<unsigned>(k % kShards));
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw Error("embedding cache: cannot append to '" + path.string() + "'");
  out.write(record.data(), static_cast<std::streamsize>(record.size()));
  out.flush();
  entries_[k] = std::vector<float>(raw.begin(), raw.end());
}

std::size_t EmbeddingCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

CachingProvider::CachingProvider(std::unique_ptr<RawSource> source, std::filesystem::path cache_root)
    : source_(std::move(source)), cache_(std::move(cache_root), source_->name()) {}

std::vector<EmbeddingVector> CachingProvider::embed_batch(std::span<const std::string> statements) {
  const std::size_t dim = source_->dimension();
  std::vector<EmbeddingVector> out(statements.size());
  std::vector<std::size_t> missing;
  auto fill = [&](std::size_t i, const std::vector<float>& raw) {
    if (raw.size() != dim) {
      throw IntegrityError("embedding cache: entry for statement " + std::to_string(i) + " has dimension " +
                           std::to_string(raw.size()) + ", provider '" + source_->name() + "' has " +
                           std::to_string(dim));
    }
    out[i] = normalized_from_f32(raw);
  };
  for (std::size_t i = 0; i < statements.size(); ++i) {
    if (auto hit = cache_.lookup(statements[i])) {
      fill(i, *hit);
    } else {
      missing.push_back(i);
    }
  }
  if (missing.empty()) return out;

  std::lock_guard lock(fetch_mutex_);
  std::vector<std::string> to_fetch;
  std::vector<std::size_t> fetch_index;
  for (std::size_t i : missing) {
    // Another thread may have filled it while we waited.
    if (auto hit = cache_.lookup(statements[i])) {
      fill(i, *hit);
    } else {
      to_fetch.push_back(statements[i]);
      fetch_index.push_back(i);
    }
  }
  if (to_fetch.empty()) return out;
  auto raw = source_->raw_embed(to_fetch);
  if (raw.size() != to_fetch.size()) throw IntegrityError("embedding source returned a misaligned batch");
  fetched_ += raw.size();
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (raw[j].size() != dim) throw IntegrityError("embedding source returned a vector of the wrong dimension");
    if (!cache_.lookup(to_fetch[j])) cache_.store(to_fetch[j], raw[j]);
    fill(fetch_index[j], raw[j]);
  }
  return out;
}

std::string OfflineRawSource::name() const {
  return "offline-s" + std::to_string(seed_) + "-d" + std::to_string(dimension_);
}

std::vector<std::vector<float>> OfflineRawSource::raw_embed(std::span<const std::string> statements) {
  std::vector<std::vector<float>> out;
  for (const auto& s : statements) {
    auto v = offline_raw(s, seed_, dimension_);
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

}  // namespace schemadapt
