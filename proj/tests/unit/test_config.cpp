#include <doctest.h>

#include "schemadapt/config.hpp"
#include "schemadapt/error.hpp"

using namespace schemadapt;
using nlohmann::ordered_json;

TEST_SUITE("config") {
  TEST_CASE("round trip through json") {
    RunConfig c;
    c.seed = 17;
    c.train.balancer = Balancer::uniform;
    c.train.normalization = mgda::Normalization::l2;
    c.train.focal_alpha = {0.5, 2.0};
    c.model.d_model = 48;
    c.model.projection = ProjectionKind::mlp2;
    c.provider.kind = "hash";
    c.tokenization = TokenizationMode::name_only;
    c.aux_tokens = 3;
    const RunConfig back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.train.balancer == Balancer::uniform);
    CHECK(back.model.projection == ProjectionKind::mlp2);
    CHECK(back.provider.kind == "hash");
  }

  TEST_CASE("partial documents override only what they name") {
    RunConfig base;
    base.train.epochs = 9;
    const RunConfig c = run_config_from_json(ordered_json::parse(R"({"train": {"learning_rate": 0.5}})"), base);
    CHECK(c.train.learning_rate == 0.5);
    CHECK(c.train.epochs == 9);
  }

  TEST_CASE("unknown fields and bad values name the path") {
    auto message = [](const char* text) {
      try {
        run_config_from_json(ordered_json::parse(text));
      } catch (const ValidationError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message(R"({"trian": {}})").find("config.trian") != std::string::npos);
    CHECK(message(R"({"train": {"lr": 1}})").find("train.lr") != std::string::npos);
    CHECK(message(R"({"model": {"d_model": "big"}})").find("model.d_model") != std::string::npos);
    CHECK(message(R"({"provider": {"kind": "cloud"}})").find("provider.kind") != std::string::npos);
    CHECK(message(R"({"train": {"balancer": "sum"}})").find("balancer") != std::string::npos);
  }

  TEST_CASE("derived seeds differ per component") {
    RunConfig c;
    c.seed = 1;
    CHECK(c.init_seed() != c.shuffle_seed());
    RunConfig d = c;
    d.seed = 2;
    CHECK(c.init_seed() != d.init_seed());
  }

  TEST_CASE("provider factory") {
    ProviderConfig p;
    p.dimension = 24;
    CHECK(make_provider(p)->dimension() == 24);
    p.kind = "hash";
    CHECK(make_provider(p)->dimension() == 24);
    p.kind = "nope";
    CHECK_THROWS_AS(make_provider(p), ValidationError);
  }
}
