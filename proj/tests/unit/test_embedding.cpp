#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "schemadapt/embedding.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"

using namespace schemadapt;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("schemadapt-test-" + name + "-" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Local stand-in for an embeddings endpoint: deterministic vectors, answers in
// reverse order with explicit indices, and fails the first `fail_first` calls.
struct FakeEndpoint {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> calls{0};
  int fail_first = 0;
  int fail_status = 503;
  std::size_t dimension = 12;

  FakeEndpoint() {
    server.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
      const int call = calls++;
      if (call < fail_first) {
        res.status = fail_status;
        res.set_content("{\"error\":\"busy\"}", "application/json");
        return;
      }
      const auto body = nlohmann::json::parse(req.body);
      nlohmann::json data = nlohmann::json::array();
      const auto& input = body.at("input");
      for (std::size_t i = input.size(); i-- > 0;) {
        std::vector<double> v(dimension);
        const auto h = fnv1a64(input[i].get<std::string>());
        for (std::size_t k = 0; k < dimension; ++k) v[k] = static_cast<double>((splitmix64(h + k) >> 11) % 1000) - 500.0;
        data.push_back({{"index", i}, {"embedding", v}});
      }
      res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeEndpoint() {
    server.stop();
    thread.join();
  }
  RemoteEmbedderConfig config() const {
    RemoteEmbedderConfig c;
    c.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/embeddings";
    c.model = "fake";
    c.dimension = dimension;
    c.batch_size = 3;
    c.backoff_ms = 1;
    c.max_retries = 2;
    c.timeout_seconds = 5;
    return c;
  }
};

}  // namespace

TEST_SUITE("embedding") {
  TEST_CASE("offline embedder is deterministic, unit norm and word-sensitive") {
    OfflineEmbedder e(7, 64);
    const std::vector<std::string> s = {"Gender of the subject: Female", "Gender of the subject: Male",
                                        "Hippocampal volume measured on imaging:"};
    const auto a = embed_batch(e, s);
    const auto b = embed_batch(e, s);
    CHECK(a == b);
    for (const auto& v : a) CHECK(std::abs(l2_norm(v) - 1.0) < 1e-12);
    CHECK(cosine_similarity(a[0], a[1]) > cosine_similarity(a[0], a[2]));
    CHECK(a[0] != a[1]);
    OfflineEmbedder other(8, 64);
    CHECK(embed_batch(other, s)[0] != a[0]);
  }

  TEST_CASE("hash embedder gives unrelated vectors") {
    HashEmbedder h(3, 64);
    const std::vector<std::string> s = {"Gender of the subject: Female", "Gender of the subject: Male"};
    const auto v = embed_batch(h, s);
    CHECK(std::abs(cosine_similarity(v[0], v[1])) < 0.5);
  }

  TEST_CASE("batch preconditions") {
    OfflineEmbedder e;
    CHECK_THROWS_AS(embed_batch(e, std::vector<std::string>{}), ValidationError);
    CHECK_THROWS_AS(embed_batch(e, std::vector<std::string>{"ok", ""}), ValidationError);
    CHECK(word_tokens("Gender of the subject: Female") ==
          std::vector<std::string>{"gender", "of", "the", "subject", "female"});
  }

  TEST_CASE("cache hits reproduce fresh results bit for bit") {
    const fs::path dir = fresh_dir("cache");
    const std::vector<std::string> s = {"alpha beta", "gamma", "alpha beta gamma"};
    std::vector<EmbeddingVector> first;
    {
      CachingProvider p(std::make_unique<OfflineRawSource>(7, 16), dir);
      first = embed_batch(p, s);
      CHECK(p.fetched() == 3);
      CHECK(embed_batch(p, s) == first);
      CHECK(p.fetched() == 3);
    }
    CachingProvider reopened(std::make_unique<OfflineRawSource>(7, 16), dir);
    CHECK(reopened.cache().size() == 3);
    CHECK(embed_batch(reopened, s) == first);
    CHECK(reopened.fetched() == 0);
    fs::remove_all(dir);
  }

  TEST_CASE("truncated cache records are skipped, not fatal") {
    const fs::path dir = fresh_dir("corrupt");
    {
      EmbeddingCache c(dir, "p");
      const float v[] = {1.0f, 2.0f};
      c.store("x", v);
    }
    for (const auto& f : fs::recursive_directory_iterator(dir)) {
      if (f.is_regular_file()) {
        std::ofstream out(f.path(), std::ios::binary | std::ios::app);
        out.write("\x05\x00", 2);
      }
    }
    EmbeddingCache again(dir, "p");
    CHECK(again.lookup("x").has_value());
    CHECK(again.skipped_records() >= 1);
    fs::remove_all(dir);
  }

  TEST_CASE("remote client batches, reorders by index and caches") {
    FakeEndpoint server;
    const fs::path dir = fresh_dir("remote");
    auto p = make_remote_provider(server.config(), dir);
    std::vector<std::string> s;
    for (int i = 0; i < 7; ++i) s.push_back("statement " + std::to_string(i));
    const auto v = embed_batch(*p, s);
    CHECK(server.calls == 3);  // batches of 3
    CHECK(v.size() == 7);
    const auto again = embed_batch(*p, s);
    CHECK(server.calls == 3);
    CHECK(again == v);
    const auto single = embed_batch(*p, std::vector<std::string>{"statement 4"});
    CHECK(single[0] == v[4]);
    fs::remove_all(dir);
  }

  TEST_CASE("remote client retries transient failures") {
    FakeEndpoint server;
    server.fail_first = 2;
    const fs::path dir = fresh_dir("retry");
    auto p = make_remote_provider(server.config(), dir);
    CHECK_NOTHROW(embed_batch(*p, std::vector<std::string>{"a"}));
    CHECK(server.calls == 3);
    fs::remove_all(dir);
  }

  TEST_CASE("remote client surfaces hard failures with the status") {
    FakeEndpoint server;
    server.fail_first = 100;
    server.fail_status = 401;
    const fs::path dir = fresh_dir("fail");
    auto p = make_remote_provider(server.config(), dir);
    try {
      embed_batch(*p, std::vector<std::string>{"a"});
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      CHECK(e.status() == 401);
    }
    CHECK(server.calls == 1);
    server.fail_status = 503;
    try {
      embed_batch(*p, std::vector<std::string>{"b"});
      FAIL("expected ProviderError");
    } catch (const ProviderError& e) {
      CHECK(e.status() == 503);
    }
    fs::remove_all(dir);
  }
}
