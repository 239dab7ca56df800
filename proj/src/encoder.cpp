#include "schemadapt/encoder.hpp"

#include <cmath>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"

namespace schemadapt {

TokenizationMode parse_tokenization_mode(std::string_view name) {
  if (name == "semantic") return TokenizationMode::semantic;
  if (name == "name_only") return TokenizationMode::name_only;
  if (name == "keyed") return TokenizationMode::keyed;
  throw ValidationError("tokenization mode: expected semantic|name_only|keyed, got '" + std::string(name) + "'");
}

std::string_view to_string(TokenizationMode mode) {
  switch (mode) {
    case TokenizationMode::semantic: return "semantic";
    case TokenizationMode::name_only: return "name_only";
    case TokenizationMode::keyed: return "keyed";
  }
  return "semantic";
}

std::string build_statement(const ColumnSpec& spec, std::string_view display) {
  if (spec.kind != ColumnKind::categorical) {
    throw ValidationError("build_statement: column '" + spec.name + "' is not categorical");
  }
  if (display.empty()) throw ValidationError("build_statement: empty value for column '" + spec.name + "'");
  if (!spec.find_display(display)) {
    throw ValidationError("build_statement: value '" + std::string(display) + "' not in vocabulary of column '" +
                          spec.name + "'");
  }
  std::string s = spec.refined_description;
  s += ' ';
  s += display;
  return s;
}

double normalize_value(double v, double mean, double range) {
  if (!std::isfinite(v) || !std::isfinite(mean) || !std::isfinite(range)) {
    throw NumericError("normalize_value: non-finite input");
  }
  if (range < 0) throw ValidationError("normalize_value: negative range");
  if (range == 0) return 1.0;
  return 1.0 + (v - mean) / range;
}

namespace {

std::string categorical_text(const ColumnSpec& spec, std::string_view display, TokenizationMode mode) {
  switch (mode) {
    case TokenizationMode::semantic: return build_statement(spec, display);
    case TokenizationMode::name_only: return spec.name;
    case TokenizationMode::keyed: return spec.name + '\x1f' + std::string(display);
  }
  return {};
}

std::string numerical_text(const ColumnSpec& spec, TokenizationMode mode) {
  return mode == TokenizationMode::semantic ? spec.refined_description : spec.name;
}

double numerical_scale(const ColumnSpec& spec, double v) {
  if (spec.kind != ColumnKind::numerical) {
    throw ValidationError("encode_numerical: column '" + spec.name + "' is not numerical");
  }
  if (!spec.mean || !spec.range) {
    throw ValidationError("encode_numerical: column '" + spec.name + "' has no mean/range statistics");
  }
  return normalize_value(v, *spec.mean, *spec.range);
}

EmbeddingVector embed_one(EmbeddingProvider& provider, const std::string& text) {
  std::string batch[1] = {text};
  return embed_batch(provider, batch).front();
}

}  // namespace

SemanticToken encode_categorical(const ColumnSpec& spec, std::string_view display, EmbeddingProvider& provider,
                                 TokenizationMode mode) {
  SemanticToken t;
  t.column = spec.name;
  t.kind = ColumnKind::categorical;
  t.text = categorical_text(spec, display, mode);
  t.raw_embedding = embed_one(provider, t.text);
  return t;
}

SemanticToken encode_numerical(const ColumnSpec& spec, double v, EmbeddingProvider& provider, TokenizationMode mode) {
  SemanticToken t;
  t.column = spec.name;
  t.kind = ColumnKind::numerical;
  t.scale = numerical_scale(spec, v);
  t.text = numerical_text(spec, mode);
  t.raw_embedding = embed_one(provider, t.text);
  for (double& x : t.raw_embedding) x *= t.scale;
  return t;
}

LinearProjection::LinearProjection(std::size_t d_in, std::size_t d_model, std::uint64_t seed) {
  weight_.name = "projection.weight";
  weight_.value.resize(static_cast<ad::Index>(d_in), static_cast<ad::Index>(d_model));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d_in)));
  for (ad::Index i = 0; i < weight_.value.size(); ++i) weight_.value.data()[i] = normal(rng);
}

ad::Matrix LinearProjection::apply(const ad::Matrix& raw) const {
  if (raw.cols() != weight_.value.rows()) {
    throw ShapeError("projection expects dimension " + std::to_string(weight_.value.rows()) + ", got " +
                     std::to_string(raw.cols()));
  }
  ad::Matrix out(raw.rows(), weight_.value.cols());
  out.noalias() = raw * weight_.value;
  return out;
}

std::vector<SemanticToken> tokenize_row(const Row& row, const SchemaDescriptor& schema, EmbeddingProvider& provider,
                                        TokenizationMode mode) {
  if (row.cells.size() != schema.columns.size()) throw ShapeError("tokenize_row: cell count differs from schema");
  std::vector<SemanticToken> out;
  for (std::size_t c = 0; c < schema.columns.size(); ++c) {
    const Cell& cell = row.cells[c];
    const ColumnSpec& spec = schema.columns[c];
    if (cell.is_missing()) continue;
    if (cell.kind == Cell::Kind::number) {
      out.push_back(encode_numerical(spec, cell.number, provider, mode));
    } else {
      out.push_back(encode_categorical(spec, spec.vocabulary.at(cell.category).display, provider, mode));
    }
  }
  return out;
}

TokenSequence encode_row(const Row& row, const SchemaDescriptor& schema, EmbeddingProvider& provider,
                         const LinearProjection& projection, TokenizationMode mode) {
  if (projection.input_dim() != provider.dimension()) {
    throw ShapeError("encode_row: projection input " + std::to_string(projection.input_dim()) +
                     " != provider dimension " + std::to_string(provider.dimension()));
  }
  TokenSequence seq;
  seq.provenance = tokenize_row(row, schema, provider, mode);
  ad::Matrix raw(static_cast<ad::Index>(seq.size()), static_cast<ad::Index>(provider.dimension()));
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const auto& e = seq.provenance[i].raw_embedding;
    for (std::size_t j = 0; j < e.size(); ++j) raw(static_cast<ad::Index>(i), static_cast<ad::Index>(j)) = e[j];
  }
  seq.tokens = projection.apply(raw);
  return seq;
}

EncodedDataset encode_dataset(const DatasetMatrix& data, EmbeddingProvider& provider, TokenizationMode mode,
                              std::size_t batch_size) {
  const auto& schema = data.schema;
  // Distinct texts, in first-seen order so provider calls are deterministic.
  std::unordered_map<std::string, std::size_t> index;
  std::vector<std::string> texts;
  struct Slot {
    std::size_t text;
    double scale;
  };
  std::vector<std::vector<std::pair<std::uint32_t, Slot>>> plan(data.rows.size());
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    const Row& row = data.rows[r];
    if (row.cells.size() != schema.columns.size()) throw ShapeError("encode_dataset: row cell count mismatch");
    for (std::size_t c = 0; c < schema.columns.size(); ++c) {
      const Cell& cell = row.cells[c];
      if (cell.is_missing()) continue;
      const ColumnSpec& spec = schema.columns[c];
      std::string text;
      double scale = 1.0;
      if (cell.kind == Cell::Kind::number) {
        scale = numerical_scale(spec, cell.number);
        text = numerical_text(spec, mode);
      } else {
        text = categorical_text(spec, spec.vocabulary.at(cell.category).display, mode);
      }
      auto [it, fresh] = index.try_emplace(std::move(text), texts.size());
      if (fresh) texts.push_back(it->first);
      plan[r].push_back({static_cast<std::uint32_t>(c), Slot{it->second, scale}});
    }
  }
  std::vector<EmbeddingVector> vectors;
  vectors.reserve(texts.size());
  for (std::size_t b = 0; b < texts.size(); b += batch_size) {
    const std::size_t n = std::min(batch_size, texts.size() - b);
    auto chunk = embed_batch(provider, std::span<const std::string>(texts).subspan(b, n));
    for (auto& v : chunk) vectors.push_back(std::move(v));
  }
  EncodedDataset out;
  out.dimension = provider.dimension();
  out.rows.resize(data.rows.size());
  const auto d = static_cast<ad::Index>(out.dimension);
  for (std::size_t r = 0; r < plan.size(); ++r) {
    EncodedRow& er = out.rows[r];
    er.raw.resize(static_cast<ad::Index>(plan[r].size()), d);
    for (std::size_t i = 0; i < plan[r].size(); ++i) {
      const auto& [col, slot] = plan[r][i];
      const auto& v = vectors[slot.text];
      for (ad::Index j = 0; j < d; ++j) er.raw(static_cast<ad::Index>(i), j) = slot.scale * v[j];
      er.columns.push_back(col);
    }
  }
  return out;
}

std::string statements_ndjson(const DatasetMatrix& data, EmbeddingProvider& provider, TokenizationMode mode) {
  std::string out;
  for (std::size_t r = 0; r < data.rows.size(); ++r) {
    for (const auto& t : tokenize_row(data.rows[r], data.schema, provider, mode)) {
      nlohmann::ordered_json j = {{"row", r},
                                  {"column", t.column},
                                  {"kind", to_string(t.kind)},
                                  {"text", t.text},
                                  {"scale", t.scale},
                                  {"norm", l2_norm(t.raw_embedding)}};
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

}  // namespace schemadapt
