#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace schemadapt {

enum class ColumnKind { categorical, numerical };

std::string_view to_string(ColumnKind kind);

struct VocabEntry {
  std::string code;
  std::string display;
  bool operator==(const VocabEntry&) const = default;
};

// Metadata for one feature column. `refined_description` is the human-readable
// prefix that statements are built from ("Gender of the subject:").
struct ColumnSpec {
  std::string name;
  std::string refined_description;
  ColumnKind kind = ColumnKind::numerical;
  std::vector<VocabEntry> vocabulary;  // categorical only
  std::optional<double> mean;          // numerical only
  std::optional<double> range;         // numerical only

  const VocabEntry* find_code(std::string_view code) const;
  std::optional<std::size_t> find_display(std::string_view display) const;
  bool operator==(const ColumnSpec&) const = default;
};

// `columns` lists feature columns only; the subject id and label columns are
// named separately and never become tokens.
struct SchemaDescriptor {
  std::vector<ColumnSpec> columns;
  std::string subject_id_column;
  std::vector<std::string> label_columns;

  std::size_t num_labels() const { return label_columns.size(); }
  std::optional<std::size_t> index_of(std::string_view column) const;

  // Throws ValidationError naming the first violated invariant.
  void validate(bool require_numeric_stats = true) const;
  bool operator==(const SchemaDescriptor&) const = default;
};

// A feature cell: absent, a number, or an index into the column vocabulary.
struct Cell {
  enum class Kind : std::uint8_t { missing, number, category };
  Kind kind = Kind::missing;
  double number = 0.0;
  std::uint32_t category = 0;

  static Cell absent() { return {}; }
  static Cell of_number(double v) { return {Kind::number, v, 0}; }
  static Cell of_category(std::uint32_t index) { return {Kind::category, 0.0, index}; }
  bool is_missing() const { return kind == Kind::missing; }
  bool operator==(const Cell&) const = default;
};

// Label values: 0, 1, or -1 for a missing label cell.
using LabelValue = std::int8_t;
inline constexpr LabelValue kMissingLabel = -1;

struct Row {
  std::string subject_id;
  std::vector<Cell> cells;  // aligned with SchemaDescriptor::columns
  std::vector<LabelValue> labels;
  bool operator==(const Row&) const = default;
};

struct DatasetMatrix {
  SchemaDescriptor schema;
  std::vector<Row> rows;

  std::size_t size() const { return rows.size(); }
  void validate() const;
};

struct SchemaParseOptions {
  // Numerical columns must carry mean and range. Pipelines that derive
  // statistics from a training split turn this off and call
  // compute_numeric_stats afterwards.
  bool require_numeric_stats = true;
};

SchemaDescriptor parse_schema(std::string_view metadata_document, const SchemaParseOptions& options = {});
std::string serialize_schema(const SchemaDescriptor& schema);

DatasetMatrix parse_dataset(std::string_view data_document, const SchemaDescriptor& schema);
std::string serialize_dataset(const DatasetMatrix& data);

// Mean and max-min range per numerical column over the given training rows.
// Summation runs over sorted values so the result does not depend on row order.
SchemaDescriptor compute_numeric_stats(const DatasetMatrix& data, std::span<const std::size_t> train_rows);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view text);

}  // namespace schemadapt
