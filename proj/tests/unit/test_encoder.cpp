#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "schemadapt/encoder.hpp"
#include "schemadapt/error.hpp"

using namespace schemadapt;

namespace {

SchemaDescriptor sex_age_schema(const std::string& sex = "SEX", const std::string& age = "AGE") {
  SchemaDescriptor s;
  s.columns.push_back({sex, "Gender of the subject:", ColumnKind::categorical, {{"1", "Male"}, {"2", "Female"}}, {}, {}});
  s.columns.push_back({age, "Age of the subject in years:", ColumnKind::numerical, {}, 70.0, 40.0});
  s.subject_id_column = "ID";
  s.label_columns = {"AD"};
  return s;
}

DatasetMatrix two_rows(const SchemaDescriptor& s) {
  DatasetMatrix d{s, {}};
  d.rows.push_back({"P1", {Cell::of_category(1), Cell::of_number(80.0)}, {1}});
  d.rows.push_back({"P2", {Cell::absent(), Cell::of_number(60.0)}, {0}});
  return d;
}

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("categorical statement") {
    const auto s = sex_age_schema();
    CHECK(build_statement(s.columns[0], "Female") == "Gender of the subject: Female");
    CHECK_THROWS_AS(build_statement(s.columns[0], "Other"), ValidationError);
    CHECK_THROWS_AS(build_statement(s.columns[1], "Female"), ValidationError);
  }

  TEST_CASE("value normalization") {
    CHECK(normalize_value(80.0, 70.0, 40.0) == doctest::Approx(1.25));
    CHECK(normalize_value(70.0, 70.0, 40.0) == 1.0);
    CHECK(normalize_value(5.0, 3.0, 0.0) == 1.0);
  }

  TEST_CASE("numerical token is the description embedding scaled by the normalized value") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    const SemanticToken t = encode_numerical(s.columns[1], 60.0, e);
    CHECK(t.text == "Age of the subject in years:");
    CHECK(t.scale == doctest::Approx(0.75));
    const auto base = embed_batch(e, std::vector<std::string>{t.text})[0];
    for (std::size_t i = 0; i < base.size(); ++i) CHECK(t.raw_embedding[i] == 0.75 * base[i]);
  }

  TEST_CASE("row tokenization skips missing cells and keeps schema order") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    const auto d = two_rows(s);
    const auto t0 = tokenize_row(d.rows[0], s, e);
    REQUIRE(t0.size() == 2);
    CHECK(t0[0].text == "Gender of the subject: Female");
    CHECK(t0[1].column == "AGE");
    CHECK(tokenize_row(d.rows[1], s, e).size() == 1);
    const auto names = tokenize_row(d.rows[0], s, e, TokenizationMode::name_only);
    CHECK(names[0].text == "SEX");
    CHECK(names[1].text == "AGE");
    const auto keyed = tokenize_row(d.rows[0], s, e, TokenizationMode::keyed);
    CHECK(keyed[0].text == "SEX\x1f" "Female");
  }

  TEST_CASE("one shared projection for both token kinds") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    LinearProjection proj(32, 16, 3);
    const auto seq = encode_row(two_rows(s).rows[0], s, e, proj);
    REQUIRE(seq.tokens.rows() == 2);
    for (int i = 0; i < 2; ++i) {
      Eigen::RowVectorXd raw(32);
      for (int k = 0; k < 32; ++k) raw(k) = seq.provenance[i].raw_embedding[k];
      CHECK((seq.tokens.row(i) - raw * proj.weight().value).cwiseAbs().maxCoeff() < 1e-14);
    }
    LinearProjection wrong(16, 16, 3);
    CHECK_THROWS_AS(encode_row(two_rows(s).rows[0], s, e, wrong), ShapeError);
  }

  TEST_CASE("projection is linear in the value scale") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    LinearProjection proj(32, 16, 1);
    const auto a = encode_numerical(s.columns[1], 90.0, e), b = encode_numerical(s.columns[1], 70.0, e);
    ad::Matrix ra(1, 32), rb(1, 32);
    for (int k = 0; k < 32; ++k) {
      ra(0, k) = a.raw_embedding[k];
      rb(0, k) = b.raw_embedding[k];
    }
    CHECK((proj.apply(ra) - a.scale / b.scale * proj.apply(rb)).cwiseAbs().maxCoeff() < 1e-14);
  }

  TEST_CASE("renamed columns with identical descriptions encode identically") {
    OfflineEmbedder e(7, 32);
    const auto a = sex_age_schema();
    const auto b = sex_age_schema("PTGENDER", "AGE_AT_VISIT");
    const auto ea = encode_dataset(two_rows(a), e);
    const auto eb = encode_dataset(two_rows(b), e);
    REQUIRE(ea.rows.size() == eb.rows.size());
    for (std::size_t i = 0; i < ea.rows.size(); ++i) {
      CHECK(ea.rows[i].raw == eb.rows[i].raw);
      CHECK(ea.rows[i].columns == eb.rows[i].columns);
    }
  }

  TEST_CASE("dataset encoding matches per-row encoding") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    const auto d = two_rows(s);
    const auto enc = encode_dataset(d, e, TokenizationMode::semantic, 1);
    for (std::size_t r = 0; r < d.size(); ++r) {
      const auto toks = tokenize_row(d.rows[r], s, e);
      REQUIRE(enc.rows[r].raw.rows() == static_cast<ad::Index>(toks.size()));
      for (std::size_t i = 0; i < toks.size(); ++i) {
        for (std::size_t k = 0; k < 32; ++k) CHECK(enc.rows[r].raw(i, k) == toks[i].raw_embedding[k]);
      }
    }
  }

  TEST_CASE("statement dump lists text, scale and norm") {
    const auto s = sex_age_schema();
    OfflineEmbedder e(7, 32);
    const std::string nd = statements_ndjson(two_rows(s), e, TokenizationMode::semantic);
    std::istringstream in(nd);
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j["text"] == "Gender of the subject: Female");
    CHECK(j["norm"].get<double>() == doctest::Approx(1.0));
    std::getline(in, line);
    CHECK(nlohmann::json::parse(line)["scale"].get<double>() == doctest::Approx(1.25));
  }
}
