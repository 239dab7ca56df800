#include <doctest.h>

#include <functional>

#include "schemadapt/csv.hpp"
#include "schemadapt/error.hpp"
#include "schemadapt/schema.hpp"

using namespace schemadapt;

namespace {

const char* kSchema = R"({
  "columns": [
    {"name": "SEX", "kind": "categorical", "refined_description": "Gender of the subject:",
     "vocabulary": {"1": "Male", "2": "Female"}},
    {"name": "AGE", "kind": "numerical", "refined_description": "Age in years:", "mean": 70, "range": 40}
  ],
  "subject_id_column": "ID",
  "label_columns": ["AD", "VD"]
})";

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_SUITE("schema") {
  TEST_CASE("parse and serialize round trip") {
    const SchemaDescriptor s = parse_schema(kSchema);
    REQUIRE(s.columns.size() == 2);
    CHECK(s.columns[0].kind == ColumnKind::categorical);
    CHECK(s.columns[0].vocabulary[1] == VocabEntry{"2", "Female"});
    CHECK(*s.columns[1].mean == 70.0);
    CHECK(s.num_labels() == 2);
    CHECK(parse_schema(serialize_schema(s)) == s);
    CHECK(s.index_of("AGE") == 1u);
    CHECK_FALSE(s.index_of("NOPE").has_value());
  }

  TEST_CASE("schema errors name the offending field") {
    CHECK(message_of([] { parse_schema("{\"columns\": [}"); }).find("line 1") != std::string::npos);
    CHECK(message_of([] {
            parse_schema(R"({"columns":[{"name":"A","kind":"ordinal","refined_description":"x"}],
                            "subject_id_column":"ID","label_columns":["Y"]})");
          }).find(".kind") != std::string::npos);
    CHECK_THROWS_AS(parse_schema(R"({"columns":[{"name":"A","kind":"numerical","refined_description":"x"}],
                                     "subject_id_column":"ID","label_columns":["Y"]})"),
                    ValidationError);
    CHECK_NOTHROW(parse_schema(R"({"columns":[{"name":"A","kind":"numerical","refined_description":"x"}],
                                  "subject_id_column":"ID","label_columns":["Y"]})",
                               {.require_numeric_stats = false}));
    CHECK(message_of([] {
            parse_schema(R"({"columns":[{"name":"A","kind":"categorical","refined_description":"x",
                                         "vocabulary":{"1":""}}],
                            "subject_id_column":"ID","label_columns":["Y"]})");
          }).find("empty display") != std::string::npos);
    CHECK_THROWS_AS(parse_schema(R"({"columns":[{"name":"A","kind":"numerical","refined_description":"x",
                                                 "mean":0,"range":1}],
                                     "subject_id_column":"ID","label_columns":["A"]})"),
                    ValidationError);
  }

  TEST_CASE("dataset parsing maps codes, blanks and labels") {
    const SchemaDescriptor s = parse_schema(kSchema);
    const DatasetMatrix d = parse_dataset("ID,AGE,SEX,AD,VD\nP1,71.5,2,1,0\nP2,,1,,1\nP3,60,,0,0\n", s);
    REQUIRE(d.size() == 3);
    CHECK(d.rows[0].cells[0] == Cell::of_category(1));
    CHECK(d.rows[0].cells[1] == Cell::of_number(71.5));
    CHECK(d.rows[1].cells[1].is_missing());
    CHECK(d.rows[1].labels[0] == kMissingLabel);
    CHECK(d.rows[2].cells[0].is_missing());
    CHECK(parse_dataset(serialize_dataset(d), s).rows == d.rows);
  }

  TEST_CASE("dataset errors carry line and column context") {
    const SchemaDescriptor s = parse_schema(kSchema);
    CHECK(message_of([&] { parse_dataset("ID,AGE,SEX,AD,VD\nP1,abc,1,0,0\n", s); }).find("AGE") !=
          std::string::npos);
    CHECK(message_of([&] { parse_dataset("ID,AGE,SEX,AD,VD\nP1,50,9,0,0\n", s); }).find("unknown categorical code") !=
          std::string::npos);
    CHECK_THROWS_AS(parse_dataset("ID,AGE,AD,VD\nP1,50,0,0\n", s), ParseError);
    CHECK_THROWS_AS(parse_dataset("ID,AGE,SEX,AD,VD\nP1,50,1,0\n", s), ParseError);
    CHECK_THROWS_AS(parse_dataset("ID,AGE,SEX,AD,VD\nP1,50,1,2,0\n", s), ValidationError);
    CHECK_THROWS_AS(parse_dataset("ID,AGE,SEX,AD,VD,EXTRA\nP1,50,1,0,0,x\n", s), ParseError);
  }

  TEST_CASE("numeric statistics from training rows only") {
    SchemaDescriptor s = parse_schema(kSchema);
    s.columns[1].mean.reset();
    s.columns[1].range.reset();
    const DatasetMatrix d = parse_dataset("ID,AGE,SEX,AD,VD\nA,10,1,0,0\nB,30,1,0,0\nC,,1,0,0\nD,1000,1,0,0\n", s);
    const std::vector<std::size_t> train = {0, 1, 2};
    const SchemaDescriptor out = compute_numeric_stats(d, train);
    CHECK(*out.columns[1].mean == doctest::Approx(20.0));
    CHECK(*out.columns[1].range == doctest::Approx(20.0));
    const std::vector<std::size_t> reversed = {2, 1, 0};
    CHECK(compute_numeric_stats(d, reversed) == out);
    const std::vector<std::size_t> blank = {2};
    CHECK_THROWS_AS(compute_numeric_stats(d, blank), ValidationError);
  }

  TEST_CASE("csv reader handles quotes, CRLF and embedded newlines") {
    const auto recs = csv::parse("a,\"b,c\",\"say \"\"hi\"\"\"\r\n\"multi\nline\",x,\n");
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].fields == std::vector<std::string>{"a", "b,c", "say \"hi\""});
    CHECK(recs[1].fields == std::vector<std::string>{"multi\nline", "x", ""});
    CHECK(recs[1].line == 2);
    CHECK_THROWS_AS(csv::parse("a,\"open\n"), ParseError);
    CHECK(csv::escape("x,y") == "\"x,y\"");
    CHECK(csv::escape("plain") == "plain");
  }
}
