#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <vector>

#include "schemadapt/autodiff.hpp"
#include "schemadapt/schema.hpp"

namespace schemadapt {

enum class ProjectionKind { linear, mlp2 };
ProjectionKind parse_projection_kind(std::string_view name);
std::string_view to_string(ProjectionKind kind);

struct FusionConfig {
  std::size_t d_in = 64;         // embedding dimension
  std::size_t d_model = 256;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t num_labels = 0;
  std::size_t ffn_mult = 4;
  std::size_t contrast_dim = 64;
  std::size_t aux_positions = 8;  // learned offsets for aux tokens
  double gate_init = 0.0;
  ProjectionKind projection = ProjectionKind::linear;
  // Compute only the [CLS] rows in the final layer; other rows are never read.
  bool cls_only_last_layer = true;

  void validate() const;
};

// One sample's inputs: raw tabular embeddings (n x d_in, n may be 0) and aux
// tokens (m x d_model, m may be 0). Pointers must outlive the forward pass.
struct SampleInput {
  const ad::Matrix* tab = nullptr;
  const ad::Matrix* aux = nullptr;
};

struct FusionOutputs {
  std::vector<ad::Var> logits;  // per label, B x 1
  std::vector<ad::Var> reps;    // per label, B x contrast_dim, unit rows
  ad::Var cls_states;           // (B * L) x d_model, sample-major
  ad::Var tokens;               // full final token matrix (only when cls_only_last_layer is off)
};

struct LayerParams {
  ad::Parameter ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, gate_attn;
  ad::Parameter ln2_g, ln2_b, w1, b1, w2, b2, gate_ffn;
};

class FusionModel {
 public:
  FusionModel(FusionConfig config, std::uint64_t seed);
  FusionModel(const FusionModel&) = delete;
  FusionModel& operator=(const FusionModel&) = delete;
  FusionModel(FusionModel&&) noexcept = default;

  const FusionConfig& config() const { return config_; }

  // [CLS_1..CLS_L, projected tab tokens + tabular type offset, aux tokens +
  // positional offsets],
  // one block per sample, stacked. Segment i spans sample i's rows.
  struct Assembly {
    ad::Var tokens;
    std::vector<ad::Segment> segments;
  };
  Assembly assemble(ad::Tape& tape, std::span<const SampleInput> batch);

  FusionOutputs forward(ad::Tape& tape, std::span<const SampleInput> batch);

  // Runs the transformer stack on assembled tokens.
  ad::Var transform(ad::Var x, const std::vector<ad::Segment>& segments, bool cls_only_last);

  // Evaluation helper: N x L probabilities, computed without gradients in
  // chunks of `chunk` samples.
  ad::Matrix predict_proba(std::span<const SampleInput> samples, std::size_t chunk = 64);

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  std::size_t shared_parameter_count() const;

  ad::Parameter& cls() { return cls_; }
  ad::Parameter& tab_type() { return tab_type_; }
  std::vector<LayerParams>& layers() { return layers_; }
  ad::Parameter& logit_weight(std::size_t k) { return head_w_[k]; }
  ad::Parameter& logit_bias(std::size_t k) { return head_b_[k]; }
  ad::Parameter& contrast_weight(std::size_t k) { return contrast_w_[k]; }
  ad::Parameter& projection(std::size_t i = 0) { return proj_[i]; }

 private:
  ad::Var project(ad::Tape& tape, ad::Var raw);
  ad::Var layer(ad::Tape& tape, LayerParams& p, ad::Var x, const std::vector<ad::Segment>& segments,
                bool cls_only, std::size_t index);

  FusionConfig config_;
  std::deque<ad::Parameter> proj_;
  ad::Parameter cls_;
  ad::Parameter tab_type_;  // keeps the value scale visible after layer norm
  ad::Parameter aux_pos_;
  std::vector<LayerParams> layers_;
  std::deque<ad::Parameter> head_w_, head_b_, contrast_w_;
};

// Synthetic stand-in for an image encoder's token sequence. Tokens are
// deterministic per (subject, seed); when `effect` is non-zero every token is
// shifted by effect * (y_k - 0.5) * u_k for each designated label k, where u_k
// is a fixed unit direction.
struct AuxTokenSource {
  std::size_t count = 8;
  std::size_t dimension = 256;
  std::uint64_t seed = 0;
  double effect = 0.0;
  std::vector<std::size_t> designated_labels;
  double noise = 1.0;

  ad::Matrix tokens(std::string_view subject_id, std::span<const LabelValue> labels = {}) const;
  Eigen::RowVectorXd direction(std::size_t label) const;
};

ad::Matrix synth_aux_tokens(std::string_view subject_id, std::size_t count, std::uint64_t seed,
                            std::size_t dimension = 256);

}  // namespace schemadapt
