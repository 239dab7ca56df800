#include "schemadapt/schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "schemadapt/csv.hpp"
#include "schemadapt/error.hpp"

namespace schemadapt {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(ColumnKind kind) {
  return kind == ColumnKind::categorical ? "categorical" : "numerical";
}

const VocabEntry* ColumnSpec::find_code(std::string_view code) const {
  for (const auto& entry : vocabulary) {
    if (entry.code == code) return &entry;
  }
  return nullptr;
}

std::optional<std::size_t> ColumnSpec::find_display(std::string_view display) const {
  for (std::size_t i = 0; i < vocabulary.size(); ++i) {
    if (vocabulary[i].display == display) return i;
  }
  return std::nullopt;
}

std::optional<std::size_t> SchemaDescriptor::index_of(std::string_view column) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == column) return i;
  }
  return std::nullopt;
}

void SchemaDescriptor::validate(bool require_numeric_stats) const {
  if (columns.empty()) throw ValidationError("schema: column list is empty");
  if (label_columns.empty()) throw ValidationError("schema: label_columns is empty");
  if (subject_id_column.empty()) throw ValidationError("schema: subject_id_column is empty");

  std::set<std::string, std::less<>> names;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto& col = columns[i];
    const std::string where = "columns[" + std::to_string(i) + "] '" + col.name + "'";
    if (col.name.empty()) throw ValidationError("columns[" + std::to_string(i) + "]: empty name");
    if (!names.insert(col.name).second) throw ValidationError("schema: duplicate column name '" + col.name + "'");
    if (col.refined_description.empty()) throw ValidationError(where + ": refined_description is empty");
    if (col.kind == ColumnKind::categorical) {
      if (col.vocabulary.empty()) throw ValidationError(where + ": categorical column has an empty vocabulary");
      std::set<std::string_view> codes;
      for (const auto& entry : col.vocabulary) {
        if (entry.display.empty()) throw ValidationError(where + ": vocabulary code '" + entry.code + "' has an empty display");
        if (!codes.insert(entry.code).second) throw ValidationError(where + ": duplicate vocabulary code '" + entry.code + "'");
      }
    } else {
      if (!col.vocabulary.empty()) throw ValidationError(where + ": numerical column must not carry a vocabulary");
      if (col.mean.has_value() != col.range.has_value()) {
        throw ValidationError(where + ": numerical column needs both mean and range");
      }
      if (!col.mean) {
        if (require_numeric_stats) throw ValidationError(where + ": numerical column is missing mean/range statistics");
      } else {
        if (!std::isfinite(*col.mean) || !std::isfinite(*col.range)) {
          throw ValidationError(where + ": mean and range must be finite");
        }
        if (*col.range < 0) throw ValidationError(where + ": range must be >= 0");
      }
    }
  }
  if (names.contains(subject_id_column)) {
    throw ValidationError("schema: subject_id_column '" + subject_id_column + "' is also a feature column");
  }
  std::set<std::string_view> labels;
  for (const auto& label : label_columns) {
    if (label.empty()) throw ValidationError("schema: empty label column name");
    if (names.contains(label)) throw ValidationError("schema: label column '" + label + "' is also a feature column");
    if (label == subject_id_column) throw ValidationError("schema: label column '" + label + "' is the subject id column");
    if (!labels.insert(label).second) throw ValidationError("schema: duplicate label column '" + label + "'");
  }
}

namespace {

std::pair<std::size_t, std::size_t> line_and_column(std::string_view text, std::size_t byte) {
  std::size_t line = 1;
  std::size_t col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

const ordered_json& require(const ordered_json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(where + ": missing field '" + key + "'");
  return *it;
}

std::string require_string(const ordered_json& obj, const char* key, const std::string& where) {
  const auto& v = require(obj, key, where);
  if (!v.is_string()) throw ParseError(where + "." + key + ": expected a string");
  return v.get<std::string>();
}

std::optional<double> optional_number(const ordered_json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_number()) throw ParseError(where + "." + key + ": expected a number");
  return it->get<double>();
}

ColumnSpec parse_column(const ordered_json& obj, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where + ": expected an object");
  ColumnSpec col;
  col.name = require_string(obj, "name", where);
  col.refined_description = require_string(obj, "refined_description", where);
  const std::string kind = require_string(obj, "kind", where);
  if (kind == "categorical") {
    col.kind = ColumnKind::categorical;
  } else if (kind == "numerical") {
    col.kind = ColumnKind::numerical;
  } else {
    throw ParseError(where + ".kind: expected 'categorical' or 'numerical', got '" + kind + "'");
  }
  if (auto it = obj.find("vocabulary"); it != obj.end() && !it->is_null()) {
    if (!it->is_object()) throw ParseError(where + ".vocabulary: expected an object mapping code to display");
    for (const auto& [code, display] : it->items()) {
      if (!display.is_string()) throw ParseError(where + ".vocabulary." + code + ": expected a string display");
      col.vocabulary.push_back({code, display.get<std::string>()});
    }
  }
  col.mean = optional_number(obj, "mean", where);
  col.range = optional_number(obj, "range", where);
  return col;
}

}  // namespace

SchemaDescriptor parse_schema(std::string_view metadata_document, const SchemaParseOptions& options) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(metadata_document);
  } catch (const nlohmann::json::parse_error& e) {
    auto [line, col] = line_and_column(metadata_document, e.byte == 0 ? 0 : e.byte - 1);
    throw ParseError("schema metadata: malformed JSON at line " + std::to_string(line) + ", column " +
                     std::to_string(col) + ": " + e.what());
  }
  if (!doc.is_object()) throw ParseError("schema metadata: top level must be an object");

  SchemaDescriptor schema;
  const auto& columns = require(doc, "columns", "schema");
  if (!columns.is_array()) throw ParseError("schema.columns: expected an array");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    schema.columns.push_back(parse_column(columns[i], "columns[" + std::to_string(i) + "]"));
  }
  schema.subject_id_column = require_string(doc, "subject_id_column", "schema");
  const auto& labels = require(doc, "label_columns", "schema");
  if (!labels.is_array()) throw ParseError("schema.label_columns: expected an array");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!labels[i].is_string()) throw ParseError("label_columns[" + std::to_string(i) + "]: expected a string");
    schema.label_columns.push_back(labels[i].get<std::string>());
  }
  schema.validate(options.require_numeric_stats);
  return schema;
}

std::string serialize_schema(const SchemaDescriptor& schema) {
  ordered_json doc;
  ordered_json columns = ordered_json::array();
  for (const auto& col : schema.columns) {
    ordered_json c;
    c["name"] = col.name;
    c["kind"] = std::string(to_string(col.kind));
    c["refined_description"] = col.refined_description;
    if (col.kind == ColumnKind::categorical) {
      ordered_json vocab = ordered_json::object();
      for (const auto& entry : col.vocabulary) vocab[entry.code] = entry.display;
      c["vocabulary"] = std::move(vocab);
    }
    if (col.mean) c["mean"] = *col.mean;
    if (col.range) c["range"] = *col.range;
    columns.push_back(std::move(c));
  }
  doc["columns"] = std::move(columns);
  doc["subject_id_column"] = schema.subject_id_column;
  doc["label_columns"] = schema.label_columns;
  return doc.dump(2) + "\n";
}

void DatasetMatrix::validate() const {
  const std::size_t ncols = schema.columns.size();
  const std::size_t nlabels = schema.label_columns.size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.cells.size() != ncols) {
      throw ValidationError("row " + std::to_string(r) + ": has " + std::to_string(row.cells.size()) +
                            " cells, schema has " + std::to_string(ncols) + " columns");
    }
    if (row.labels.size() != nlabels) throw ValidationError("row " + std::to_string(r) + ": label count mismatch");
    for (auto y : row.labels) {
      if (y != 0 && y != 1 && y != kMissingLabel) throw ValidationError("row " + std::to_string(r) + ": label outside {0,1}");
    }
    for (std::size_t c = 0; c < ncols; ++c) {
      const auto& cell = row.cells[c];
      const auto& col = schema.columns[c];
      if (cell.kind == Cell::Kind::category &&
          (col.kind != ColumnKind::categorical || cell.category >= col.vocabulary.size())) {
        throw ValidationError("row " + std::to_string(r) + ", column '" + col.name + "': invalid category cell");
      }
      if (cell.kind == Cell::Kind::number && col.kind != ColumnKind::numerical) {
        throw ValidationError("row " + std::to_string(r) + ", column '" + col.name + "': numeric cell in categorical column");
      }
    }
  }
}

namespace {

std::optional<double> parse_double(std::string_view text) {
  // Tolerate surrounding blanks; the rest must be a complete number.
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace

DatasetMatrix parse_dataset(std::string_view data_document, const SchemaDescriptor& schema) {
  auto records = csv::parse(data_document);
  if (records.empty()) throw ParseError("dataset: missing header row");
  const auto& header = records.front().fields;

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!position.emplace(header[i], i).second) throw ParseError("dataset header: duplicate column '" + header[i] + "'");
  }
  auto locate = [&](const std::string& name) {
    auto it = position.find(name);
    if (it == position.end()) throw ParseError("dataset header: schema column '" + name + "' is absent");
    return it->second;
  };
  const std::size_t subject_pos = locate(schema.subject_id_column);
  std::vector<std::size_t> feature_pos;
  for (const auto& col : schema.columns) feature_pos.push_back(locate(col.name));
  std::vector<std::size_t> label_pos;
  for (const auto& label : schema.label_columns) label_pos.push_back(locate(label));
  const std::size_t expected = schema.columns.size() + schema.label_columns.size() + 1;
  if (header.size() != expected) {
    std::set<std::string> known{schema.subject_id_column};
    for (const auto& col : schema.columns) known.insert(col.name);
    for (const auto& label : schema.label_columns) known.insert(label);
    for (const auto& h : header) {
      if (!known.contains(h)) throw ParseError("dataset header: column '" + h + "' is not in the schema");
    }
  }

  DatasetMatrix data;
  data.schema = schema;
  data.rows.reserve(records.size() - 1);
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = "dataset line " + std::to_string(rec.line);
    if (rec.fields.size() != header.size()) {
      throw ParseError(where + ": expected " + std::to_string(header.size()) + " fields, found " +
                       std::to_string(rec.fields.size()));
    }
    Row row;
    row.subject_id = rec.fields[subject_pos];
    if (row.subject_id.empty()) throw ValidationError(where + ": empty subject id");
    row.cells.reserve(schema.columns.size());
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const auto& col = schema.columns[c];
      const std::string& text = rec.fields[feature_pos[c]];
      if (text.empty()) {
        row.cells.push_back(Cell::absent());
        continue;
      }
      if (col.kind == ColumnKind::numerical) {
        auto v = parse_double(text);
        if (!v || !std::isfinite(*v)) {
          throw ValidationError(where + ", column '" + col.name + "': '" + text + "' is not a finite number");
        }
        row.cells.push_back(Cell::of_number(*v));
      } else {
        const VocabEntry* entry = col.find_code(text);
        if (!entry) throw ValidationError(where + ", column '" + col.name + "': unknown categorical code '" + text + "'");
        row.cells.push_back(Cell::of_category(static_cast<std::uint32_t>(entry - col.vocabulary.data())));
      }
    }
    for (std::size_t k = 0; k < schema.label_columns.size(); ++k) {
      const std::string& text = rec.fields[label_pos[k]];
      if (text.empty()) {
        row.labels.push_back(kMissingLabel);
      } else if (text == "0" || text == "1") {
        row.labels.push_back(static_cast<LabelValue>(text[0] - '0'));
      } else {
        throw ValidationError(where + ", label '" + schema.label_columns[k] + "': value '" + text +
                              "' is not 0 or 1");
      }
    }
    data.rows.push_back(std::move(row));
  }
  return data;
}

std::string serialize_dataset(const DatasetMatrix& data) {
  const auto& schema = data.schema;
  std::vector<std::string> header{schema.subject_id_column};
  for (const auto& col : schema.columns) header.push_back(col.name);
  for (const auto& label : schema.label_columns) header.push_back(label);
  std::string out = csv::format_row(header);
  std::vector<std::string> fields;
  for (const auto& row : data.rows) {
    fields.clear();
    fields.push_back(row.subject_id);
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const auto& cell = row.cells[c];
      switch (cell.kind) {
        case Cell::Kind::missing: fields.emplace_back(); break;
        case Cell::Kind::number: fields.push_back(format_double(cell.number)); break;
        case Cell::Kind::category: fields.push_back(schema.columns[c].vocabulary[cell.category].code); break;
      }
    }
    for (auto y : row.labels) fields.push_back(y == kMissingLabel ? std::string() : std::to_string(int(y)));
    out += csv::format_row(fields);
  }
  return out;
}

SchemaDescriptor compute_numeric_stats(const DatasetMatrix& data, std::span<const std::size_t> train_rows) {
  if (train_rows.empty()) throw ValidationError("compute_numeric_stats: training split is empty");
  SchemaDescriptor schema = data.schema;
  std::vector<double> values;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    auto& col = schema.columns[c];
    if (col.kind != ColumnKind::numerical) continue;
    values.clear();
    for (std::size_t r : train_rows) {
      if (r >= data.rows.size()) throw ValidationError("compute_numeric_stats: row index out of range");
      const auto& cell = data.rows[r].cells[c];
      if (cell.kind == Cell::Kind::number) values.push_back(cell.number);
    }
    if (values.empty()) {
      throw ValidationError("compute_numeric_stats: column '" + col.name + "' has no non-missing training values");
    }
    std::sort(values.begin(), values.end());
    const double sum = std::accumulate(values.begin(), values.end(), 0.0);
    col.mean = sum / static_cast<double>(values.size());
    col.range = values.back() - values.front();
  }
  return schema;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path + "'");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("write failed for '" + path + "'");
}

}  // namespace schemadapt
