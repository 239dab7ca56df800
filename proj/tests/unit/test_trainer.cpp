#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "schemadapt/bench.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/trainer.hpp"

using namespace schemadapt;
namespace fs = std::filesystem;

namespace {

bench::BenchmarkPair small_pair(std::uint64_t seed) {
  bench::GeneratorConfig g;
  g.n_source = 160;
  g.n_target = 40;
  g.n_features = 6;
  g.num_labels = 2;
  g.seed = seed;
  return bench::generate_pair(g);
}

struct Fixture {
  bench::BenchmarkPair pair = small_pair(4);
  OfflineEmbedder embedder{7, 16};
  PreparedData data = prepare_data(pair.source, embedder, {});
  Split split = split_stratified(pair.source, {0.7, 0.3, 0.0}, 11);

  FusionConfig model_config() const {
    FusionConfig c;
    c.d_in = 16;
    c.d_model = 8;
    c.num_heads = 2;
    c.num_labels = 2;
    c.contrast_dim = 4;
    c.ffn_mult = 2;
    return c;
  }
  TrainConfig train_config() const {
    TrainConfig t;
    t.epochs = 2;
    t.batch_size = 16;
    t.seed = 5;
    return t;
  }
};

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("schemadapt-trainer-" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("split assigns whole subjects and is seeded") {
    const auto pair = small_pair(1);
    const Split s = split_stratified(pair.source, {0.8, 0.1, 0.1}, 3);
    std::set<std::string> subjects[3];
    const std::vector<std::size_t>* parts[] = {&s.train, &s.validation, &s.test};
    std::set<std::size_t> rows;
    for (int k = 0; k < 3; ++k) {
      for (std::size_t r : *parts[k]) {
        subjects[k].insert(pair.source.rows[r].subject_id);
        rows.insert(r);
      }
    }
    CHECK(rows.size() == pair.source.size());
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        for (const auto& id : subjects[a]) CHECK(subjects[b].count(id) == 0);
      }
    }
    CHECK(split_stratified(pair.source, {0.8, 0.1, 0.1}, 3).train == s.train);
    CHECK(split_stratified(pair.source, {0.8, 0.1, 0.1}, 4).train != s.train);
  }

  TEST_CASE("cosine schedule") {
    CHECK(cosine_lr(0.01, 0, 100) == doctest::Approx(0.01));
    CHECK(cosine_lr(0.01, 50, 100) == doctest::Approx(0.005));
    CHECK(cosine_lr(0.01, 100, 100) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cosine_lr(0.01, 25, 100) == doctest::Approx(0.01 * (1 + std::cos(M_PI / 4)) / 2));
  }

  TEST_CASE("AdamW matches a scalar reference") {
    ad::Parameter p{"w", ad::Matrix::Constant(1, 1, 0.5)};
    AdamW opt(0.9, 0.999, 1e-8, 0.01);
    double w = 0.5, m = 0.0, v = 0.0;
    const double grads[] = {0.3, -0.1, 0.7, 0.2};
    for (int t = 1; t <= 4; ++t) {
      const double g = grads[t - 1];
      opt.step(p, ad::Matrix::Constant(1, 1, g), 0.05);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
      w = w * (1 - 0.05 * 0.01) - 0.05 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value(0, 0) == doctest::Approx(w).epsilon(1e-14));
    }
    CHECK(opt.steps_taken(p) == 4);
  }

  TEST_CASE("config validation") {
    TrainConfig t;
    t.batch_size = 1;
    CHECK_THROWS_AS(t.validate(), ValidationError);
    t = {};
    t.split = {0.5, 0.5, 0.5};
    CHECK_THROWS_AS(t.validate(), ValidationError);
    CHECK(parse_balancer("uniform") == Balancer::uniform);
    CHECK_THROWS_AS(parse_balancer("sum"), ValidationError);
  }

  TEST_CASE("leakage guard stops forbidden data before any step") {
    Fixture f;
    FusionModel m(f.model_config(), 1);
    const ad::Matrix before = m.projection().value;
    LeakageGuard guard{{"source"}};
    CHECK_THROWS_AS(train(m, f.data, f.split.train, f.split.validation, f.train_config(), {}, guard), LeakageError);
    CHECK(m.projection().value == before);
  }

  TEST_CASE("identical seeds give byte-identical logs and checkpoints") {
    Fixture f;
    const fs::path a = fresh_dir("a"), b = fresh_dir("b");
    for (const auto& dir : {a, b}) {
      FusionModel m(f.model_config(), 9);
      const auto r = train(m, f.data, f.split.train, f.split.validation, f.train_config(), {dir, true});
      CHECK(r.epochs.size() == 2);
      CHECK(r.task_ids.size() == 4);
    }
    for (const char* name : {"train_log.ndjson", "final.ckpt", "best.ckpt"}) {
      INFO(name);
      CHECK(read_text_file((a / name).string()) == read_text_file((b / name).string()));
    }
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("alphas lie on the simplex for both balancers") {
    Fixture f;
    for (Balancer bal : {Balancer::mgda, Balancer::uniform}) {
      TrainConfig t = f.train_config();
      t.balancer = bal;
      t.epochs = 1;
      FusionModel m(f.model_config(), 2);
      const auto r = train(m, f.data, f.split.train, f.split.validation, t);
      REQUIRE(r.epochs.size() == 1);
      const auto& e = r.epochs[0];
      double s = 0;
      for (std::size_t k = 0; k < e.alpha_mean.size(); ++k) {
        CHECK(e.alpha_min[k] >= 0.0);
        CHECK(e.alpha_max[k] <= 1.0 + 1e-12);
        s += e.alpha_mean[k];
      }
      CHECK(s == doctest::Approx(1.0));
      if (bal == Balancer::uniform) CHECK(e.alpha_mean[0] == doctest::Approx(0.25));
      CHECK(std::isfinite(e.val_loss));
    }
  }

  TEST_CASE("a task with no shared gradient does not freeze MGDA updates") {
    Fixture f;
    DatasetMatrix flat = f.pair.source;
    for (auto& row : flat.rows) row.labels[1] = 0;  // contrastive term for label 1 is identically zero
    const PreparedData data = prepare_data(flat, f.embedder, {});
    TrainConfig t = f.train_config();
    t.epochs = 1;
    FusionModel m(f.model_config(), 2);
    const auto r = train(m, data, f.split.train, f.split.validation, t);
    CHECK(r.skipped_steps == 0);
    REQUIRE(r.epochs.size() == 1);
    CHECK(r.task_ids[3].ends_with("/contrastive"));
    CHECK(r.epochs[0].alpha_max[3] == 0.0);
  }

  TEST_CASE("evaluation probabilities are in range and metrics are reported per label") {
    Fixture f;
    FusionModel m(f.model_config(), 3);
    const auto ev = evaluate(m, f.data, f.split.validation, f.train_config());
    CHECK(ev.probabilities.rows() == static_cast<ad::Index>(f.split.validation.size()));
    CHECK(ev.probabilities.minCoeff() > 0.0);
    CHECK(ev.probabilities.maxCoeff() < 1.0);
    CHECK(ev.report.labels.size() == 2);
  }
}
