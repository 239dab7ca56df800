#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "schemadapt/embedding.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/log.hpp"

namespace schemadapt {

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("embedding URL must start with http:// or https://: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

const char* env_or_null(const char* name) {
  const char* v = std::getenv(name);
  return (v && *v) ? v : nullptr;
}

}  // namespace

RemoteEmbedderConfig RemoteEmbedderConfig::from_environment() {
  RemoteEmbedderConfig config;
  if (const char* url = env_or_null("SCHEMADAPT_EMBED_URL")) config.url = url;
  if (const char* key = env_or_null("SCHEMADAPT_EMBED_KEY")) config.api_key = key;
  if (const char* model = env_or_null("SCHEMADAPT_EMBED_MODEL")) config.model = model;
  return config;
}

RemoteRawSource::RemoteRawSource(RemoteEmbedderConfig config) : config_(std::move(config)) {
  if (config_.url.empty()) throw ValidationError("remote embedder: SCHEMADAPT_EMBED_URL is not set");
  if (config_.dimension == 0) throw ValidationError("remote embedder: dimension must be positive");
  if (config_.batch_size == 0) throw ValidationError("remote embedder: batch_size must be positive");
  split_url(config_.url);
}

std::string RemoteRawSource::name() const { return "remote-" + config_.model; }

std::vector<std::vector<float>> RemoteRawSource::raw_embed(std::span<const std::string> statements) {
  std::vector<std::vector<float>> out;
  out.reserve(statements.size());
  for (std::size_t begin = 0; begin < statements.size(); begin += config_.batch_size) {
    const std::size_t n = std::min(config_.batch_size, statements.size() - begin);
    auto chunk = request(statements.subspan(begin, n));
    for (auto& v : chunk) out.push_back(std::move(v));
  }
  return out;
}

std::vector<std::vector<float>> RemoteRawSource::request(std::span<const std::string> chunk) {
  const Endpoint endpoint = split_url(config_.url);
  nlohmann::json body;
  body["model"] = config_.model;
  body["input"] = std::vector<std::string>(chunk.begin(), chunk.end());
  const std::string payload = body.dump();

  httplib::Client client(endpoint.origin);
  client.set_connection_timeout(config_.timeout_seconds, 0);
  client.set_read_timeout(config_.timeout_seconds, 0);
  if (!config_.api_key.empty()) client.set_bearer_token_auth(config_.api_key);

  int last_status = 0;
  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    auto res = client.Post(endpoint.path, payload, "application/json");
    if (!res) {
      last_status = 0;
      last_error = httplib::to_string(res.error());
      log::warn("remote embedder: transport error (" + last_error + "), attempt " + std::to_string(attempt + 1));
      continue;
    }
    last_status = res->status;
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      log::warn("remote embedder: " + last_error + ", attempt " + std::to_string(attempt + 1));
      continue;
    }
    if (res->status != 200) {
      throw ProviderError("remote embedder: HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200),
                          res->status);
    }
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("remote embedder: malformed response: ") + e.what(), res->status);
    }
    if (!doc.contains("data") || !doc["data"].is_array() || doc["data"].size() != chunk.size()) {
      throw ProviderError("remote embedder: response 'data' is missing or misaligned", res->status);
    }
    std::vector<std::vector<float>> out(chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const auto& item = doc["data"][i];
      std::size_t slot = i;
      if (item.contains("index")) slot = item["index"].get<std::size_t>();
      if (slot >= chunk.size() || !out[slot].empty()) throw ProviderError("remote embedder: bad 'index' in response", res->status);
      const auto& emb = item.at("embedding");
      if (emb.size() != config_.dimension) {
        throw IntegrityError("remote embedder: got dimension " + std::to_string(emb.size()) + ", expected " +
                             std::to_string(config_.dimension));
      }
      out[slot].reserve(emb.size());
      for (const auto& x : emb) out[slot].push_back(x.get<float>());
    }
    return out;
  }
  throw ProviderError("remote embedder: giving up after " + std::to_string(config_.max_retries + 1) +
                          " attempts: " + last_error,
                      last_status);
}

std::unique_ptr<EmbeddingProvider> make_remote_provider(RemoteEmbedderConfig config,
                                                        const std::filesystem::path& cache_root) {
  return std::make_unique<CachingProvider>(std::make_unique<RemoteRawSource>(std::move(config)), cache_root);
}

}  // namespace schemadapt
