#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "schemadapt/autodiff.hpp"
#include "schemadapt/embedding.hpp"
#include "schemadapt/schema.hpp"

namespace schemadapt {

inline constexpr std::size_t kDefaultModelDim = 256;

// What text a column-value pair is embedded from.
//   semantic   refined description + value display (numerical: description)
//   name_only  raw column name only, for both kinds
//   keyed      "<column>\x1f<display>" (numerical: column name); paired with
//              HashEmbedder this gives unrelated random vectors per column
enum class TokenizationMode { semantic, name_only, keyed };
TokenizationMode parse_tokenization_mode(std::string_view name);
std::string_view to_string(TokenizationMode mode);

// "<refined_description> <display>".
std::string build_statement(const ColumnSpec& spec, std::string_view display);

// 1 + (v - mean) / range, or 1 when range is 0.
double normalize_value(double v, double mean, double range);

struct SemanticToken {
  std::string column;
  std::string text;
  ColumnKind kind = ColumnKind::categorical;
  double scale = 1.0;  // normalized value for numerical tokens
  EmbeddingVector raw_embedding;
};

SemanticToken encode_categorical(const ColumnSpec& spec, std::string_view display, EmbeddingProvider& provider,
                                 TokenizationMode mode = TokenizationMode::semantic);
SemanticToken encode_numerical(const ColumnSpec& spec, double v, EmbeddingProvider& provider,
                               TokenizationMode mode = TokenizationMode::semantic);

// Bias-free map from embedding space to model space.
class LinearProjection {
 public:
  LinearProjection(std::size_t d_in, std::size_t d_model, std::uint64_t seed);
  explicit LinearProjection(ad::Parameter weight) : weight_(std::move(weight)) {}
  std::size_t input_dim() const { return static_cast<std::size_t>(weight_.value.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weight_.value.cols()); }
  ad::Matrix apply(const ad::Matrix& raw) const;
  ad::Parameter& weight() { return weight_; }
  const ad::Parameter& weight() const { return weight_; }

 private:
  ad::Parameter weight_;
};

struct TokenSequence {
  ad::Matrix tokens;  // n x d_model
  std::vector<SemanticToken> provenance;
  std::size_t size() const { return provenance.size(); }
};

// Tokens for every present feature, in schema order.
std::vector<SemanticToken> tokenize_row(const Row& row, const SchemaDescriptor& schema, EmbeddingProvider& provider,
                                        TokenizationMode mode = TokenizationMode::semantic);
TokenSequence encode_row(const Row& row, const SchemaDescriptor& schema, EmbeddingProvider& provider,
                         const LinearProjection& projection, TokenizationMode mode = TokenizationMode::semantic);

// Raw (pre-projection) token matrix for one row. `columns` indexes the schema.
struct EncodedRow {
  ad::Matrix raw;
  std::vector<std::uint32_t> columns;
};

struct EncodedDataset {
  std::size_t dimension = 0;
  std::vector<EncodedRow> rows;
};

// Embeds every distinct text once (batched through the provider) and
// assembles per-row raw token matrices.
EncodedDataset encode_dataset(const DatasetMatrix& data, EmbeddingProvider& provider,
                              TokenizationMode mode = TokenizationMode::semantic, std::size_t batch_size = 256);

// Debug dump: one JSON object per token ({"row","column","text","scale","norm"}).
std::string statements_ndjson(const DatasetMatrix& data, EmbeddingProvider& provider, TokenizationMode mode);

}  // namespace schemadapt
