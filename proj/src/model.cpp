#include "schemadapt/model.hpp"

#include <cmath>
#include <random>

#include "schemadapt/error.hpp"
#include "schemadapt/hash.hpp"

namespace schemadapt {

using ad::Index;
using ad::Matrix;
using ad::Var;

ProjectionKind parse_projection_kind(std::string_view name) {
  if (name == "linear") return ProjectionKind::linear;
  if (name == "mlp2") return ProjectionKind::mlp2;
  throw ValidationError("projection: expected linear|mlp2, got '" + std::string(name) + "'");
}

std::string_view to_string(ProjectionKind kind) { return kind == ProjectionKind::linear ? "linear" : "mlp2"; }

void FusionConfig::validate() const {
  if (d_in == 0 || d_model == 0) throw ValidationError("model: dimensions must be positive");
  if (num_heads == 0 || d_model % num_heads != 0) throw ValidationError("model.num_heads must divide d_model");
  if (num_layers < 1) throw ValidationError("model.num_layers must be >= 1");
  if (num_labels < 1) throw ValidationError("model.num_labels must be >= 1");
  if (ffn_mult < 1 || contrast_dim < 1) throw ValidationError("model: ffn_mult and contrast_dim must be >= 1");
  if (!std::isfinite(gate_init)) throw ValidationError("model.gate_init must be finite");
}

namespace {

ad::Parameter make_param(std::string name, Index rows, Index cols, double stddev, std::mt19937_64& rng,
                         bool shared = true) {
  ad::Parameter p{std::move(name), Matrix::Zero(rows, cols), shared};
  if (stddev > 0) {
    std::normal_distribution<double> normal(0.0, stddev);
    for (Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = normal(rng);
  }
  return p;
}

ad::Parameter make_const(std::string name, Index rows, Index cols, double value) {
  return ad::Parameter{std::move(name), Matrix::Constant(rows, cols, value), true};
}

}  // namespace

FusionModel::FusionModel(FusionConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<Index>(config_.d_model);
  const auto din = static_cast<Index>(config_.d_in);
  const auto hidden = static_cast<Index>(config_.ffn_mult * config_.d_model);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));

  proj_.push_back(make_param("projection.0", din, d, 1.0 / std::sqrt(static_cast<double>(din)), rng));
  if (config_.projection == ProjectionKind::mlp2) proj_.push_back(make_param("projection.1", d, d, sd, rng));
  cls_ = make_param("cls", static_cast<Index>(config_.num_labels), d, 0.1, rng);
  tab_type_ = make_param("tab_type", 1, d, 0.1, rng);
  aux_pos_ = make_param("aux_pos", static_cast<Index>(std::max<std::size_t>(config_.aux_positions, 1)), d, 0.02, rng);

  layers_.resize(config_.num_layers);
  for (std::size_t i = 0; i < config_.num_layers; ++i) {
    const std::string pre = "layers." + std::to_string(i) + ".";
    LayerParams& p = layers_[i];
    p.ln1_g = make_const(pre + "ln1.gamma", 1, d, 1.0);
    p.ln1_b = make_const(pre + "ln1.beta", 1, d, 0.0);
    p.wq = make_param(pre + "attn.wq", d, d, sd, rng);
    p.bq = make_const(pre + "attn.bq", 1, d, 0.0);
    p.wk = make_param(pre + "attn.wk", d, d, sd, rng);
    p.bk = make_const(pre + "attn.bk", 1, d, 0.0);
    p.wv = make_param(pre + "attn.wv", d, d, sd, rng);
    p.bv = make_const(pre + "attn.bv", 1, d, 0.0);
    p.wo = make_param(pre + "attn.wo", d, d, sd, rng);
    p.bo = make_const(pre + "attn.bo", 1, d, 0.0);
    p.gate_attn = make_const(pre + "gate.attn", 1, 1, config_.gate_init);
    p.ln2_g = make_const(pre + "ln2.gamma", 1, d, 1.0);
    p.ln2_b = make_const(pre + "ln2.beta", 1, d, 0.0);
    p.w1 = make_param(pre + "ffn.w1", d, hidden, sd, rng);
    p.b1 = make_const(pre + "ffn.b1", 1, hidden, 0.0);
    p.w2 = make_param(pre + "ffn.w2", hidden, d, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    p.b2 = make_const(pre + "ffn.b2", 1, d, 0.0);
    p.gate_ffn = make_const(pre + "gate.ffn", 1, 1, config_.gate_init);
  }
  const auto c = static_cast<Index>(config_.contrast_dim);
  for (std::size_t k = 0; k < config_.num_labels; ++k) {
    const std::string pre = "heads." + std::to_string(k) + ".";
    head_w_.push_back(make_param(pre + "logit.weight", d, 1, sd, rng, false));
    head_b_.push_back(ad::Parameter{pre + "logit.bias", Matrix::Zero(1, 1), false});
    contrast_w_.push_back(make_param(pre + "contrast.weight", d, c, sd, rng, false));
  }
}

std::vector<ad::Parameter*> FusionModel::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& p : proj_) out.push_back(&p);
  out.push_back(&cls_);
  out.push_back(&tab_type_);
  out.push_back(&aux_pos_);
  for (auto& l : layers_) {
    for (ad::Parameter* p : {&l.ln1_g, &l.ln1_b, &l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo,
                             &l.gate_attn, &l.ln2_g, &l.ln2_b, &l.w1, &l.b1, &l.w2, &l.b2, &l.gate_ffn}) {
      out.push_back(p);
    }
  }
  for (std::size_t k = 0; k < config_.num_labels; ++k) {
    out.push_back(&head_w_[k]);
    out.push_back(&head_b_[k]);
    out.push_back(&contrast_w_[k]);
  }
  return out;
}

std::vector<const ad::Parameter*> FusionModel::parameters() const {
  auto mut = const_cast<FusionModel*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

std::size_t FusionModel::shared_parameter_count() const {
  std::size_t n = 0;
  for (const ad::Parameter* p : parameters()) {
    if (p->shared) n += static_cast<std::size_t>(p->value.size());
  }
  return n;
}

Var FusionModel::project(ad::Tape& tape, Var raw) {
  Var h = ad::matmul(raw, tape.parameter(proj_[0]));
  if (config_.projection == ProjectionKind::mlp2) h = ad::matmul(ad::gelu(h), tape.parameter(proj_[1]));
  return h;
}

FusionModel::Assembly FusionModel::assemble(ad::Tape& tape, std::span<const SampleInput> batch) {
  const auto d = static_cast<Index>(config_.d_model);
  const auto L = static_cast<Index>(config_.num_labels);
  Index tab_rows = 0, aux_rows = 0;
  for (const SampleInput& s : batch) {
    if (s.tab && s.tab->rows() > 0) {
      if (s.tab->cols() != static_cast<Index>(config_.d_in)) {
        throw ShapeError("assemble: tabular tokens have dimension " + std::to_string(s.tab->cols()) + ", expected " +
                         std::to_string(config_.d_in));
      }
      tab_rows += s.tab->rows();
    }
    if (s.aux && s.aux->rows() > 0) {
      if (s.aux->cols() != d) {
        throw ShapeError("assemble: aux tokens have dimension " + std::to_string(s.aux->cols()) + ", expected " +
                         std::to_string(d));
      }
      if (s.aux->rows() > static_cast<Index>(config_.aux_positions)) {
        throw ShapeError("assemble: " + std::to_string(s.aux->rows()) + " aux tokens exceed " +
                         std::to_string(config_.aux_positions) + " positions");
      }
      aux_rows += s.aux->rows();
    }
  }

  std::vector<Var> sources{tape.parameter(cls_)};
  int tab_src = -1, aux_src = -1;
  if (tab_rows > 0) {
    Matrix raw(tab_rows, static_cast<Index>(config_.d_in));
    Index r = 0;
    for (const SampleInput& s : batch) {
      if (!s.tab || s.tab->rows() == 0) continue;
      raw.middleRows(r, s.tab->rows()) = *s.tab;
      r += s.tab->rows();
    }
    tab_src = static_cast<int>(sources.size());
    sources.push_back(ad::add_bias(project(tape, tape.constant(std::move(raw))), tape.parameter(tab_type_)));
  }
  if (aux_rows > 0) {
    Matrix raw(aux_rows, d);
    std::vector<ad::RowRef> pos_refs;
    Index r = 0;
    for (const SampleInput& s : batch) {
      if (!s.aux || s.aux->rows() == 0) continue;
      raw.middleRows(r, s.aux->rows()) = *s.aux;
      for (Index j = 0; j < s.aux->rows(); ++j) pos_refs.push_back({0, j});
      r += s.aux->rows();
    }
    Var pos_src[1] = {tape.parameter(aux_pos_)};
    aux_src = static_cast<int>(sources.size());
    sources.push_back(ad::add(tape.constant(std::move(raw)), ad::gather_rows(pos_src, pos_refs)));
  }

  Assembly out;
  std::vector<ad::RowRef> refs;
  Index tab_at = 0, aux_at = 0, offset = 0;
  for (const SampleInput& s : batch) {
    const Index n_tab = s.tab ? s.tab->rows() : 0;
    const Index n_aux = s.aux ? s.aux->rows() : 0;
    for (Index k = 0; k < L; ++k) refs.push_back({0, k});
    for (Index j = 0; j < n_tab; ++j) refs.push_back({tab_src, tab_at++});
    for (Index j = 0; j < n_aux; ++j) refs.push_back({aux_src, aux_at++});
    const Index count = L + n_tab + n_aux;
    out.segments.push_back({offset, count});
    offset += count;
  }
  out.tokens = ad::gather_rows(sources, refs);
  return out;
}

Var FusionModel::layer(ad::Tape& tape, LayerParams& p, Var x, const std::vector<ad::Segment>& segments,
                       bool cls_only, std::size_t index) {
  const auto L = static_cast<Index>(config_.num_labels);
  Var h = ad::layer_norm(x, tape.parameter(p.ln1_g), tape.parameter(p.ln1_b));
  ad::AttentionLayout layout;
  layout.keys = segments;
  layout.heads = static_cast<int>(config_.num_heads);
  Var q_in = h;
  Var residual = x;
  if (cls_only) {
    std::vector<ad::RowRef> refs;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      for (Index k = 0; k < L; ++k) refs.push_back({0, segments[s].offset + k});
      layout.queries.push_back({static_cast<Index>(s) * L, L});
    }
    Var hs[1] = {h};
    Var xs[1] = {x};
    q_in = ad::gather_rows(hs, refs);
    residual = ad::gather_rows(xs, refs);
  } else {
    layout.queries = segments;
  }
  Var q = ad::add_bias(ad::matmul(q_in, tape.parameter(p.wq)), tape.parameter(p.bq));
  Var k = ad::add_bias(ad::matmul(h, tape.parameter(p.wk)), tape.parameter(p.bk));
  Var v = ad::add_bias(ad::matmul(h, tape.parameter(p.wv)), tape.parameter(p.bv));
  Var a = ad::attention(q, k, v, layout);
  Var o = ad::add_bias(ad::matmul(a, tape.parameter(p.wo)), tape.parameter(p.bo));
  Var x1 = ad::add(residual, ad::scale(ad::tanh(tape.parameter(p.gate_attn)), o));

  Var h2 = ad::layer_norm(x1, tape.parameter(p.ln2_g), tape.parameter(p.ln2_b));
  Var f = ad::gelu(ad::add_bias(ad::matmul(h2, tape.parameter(p.w1)), tape.parameter(p.b1)));
  f = ad::add_bias(ad::matmul(f, tape.parameter(p.w2)), tape.parameter(p.b2));
  Var x2 = ad::add(x1, ad::scale(ad::tanh(tape.parameter(p.gate_ffn)), f));
  if (!x2.value().allFinite()) throw NumericError("non-finite activation in layer " + std::to_string(index));
  return x2;
}

Var FusionModel::transform(Var x, const std::vector<ad::Segment>& segments, bool cls_only_last) {
  ad::Tape& tape = *x.tape();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const bool cls_only = cls_only_last && i + 1 == layers_.size();
    x = layer(tape, layers_[i], x, segments, cls_only, i);
  }
  return x;
}

FusionOutputs FusionModel::forward(ad::Tape& tape, std::span<const SampleInput> batch) {
  if (batch.empty()) throw ShapeError("forward: empty batch");
  const auto L = static_cast<Index>(config_.num_labels);
  Assembly in = assemble(tape, batch);
  if (!in.tokens.value().allFinite()) throw NumericError("non-finite activation in model input");
  FusionOutputs out;
  Var x = transform(in.tokens, in.segments, config_.cls_only_last_layer);
  if (config_.cls_only_last_layer) {
    out.cls_states = x;
  } else {
    out.tokens = x;
    std::vector<ad::RowRef> refs;
    for (const auto& s : in.segments) {
      for (Index k = 0; k < L; ++k) refs.push_back({0, s.offset + k});
    }
    Var xs[1] = {x};
    out.cls_states = ad::gather_rows(xs, refs);
  }
  const auto B = static_cast<Index>(batch.size());
  Var states[1] = {out.cls_states};
  for (Index k = 0; k < L; ++k) {
    std::vector<ad::RowRef> refs;
    for (Index b = 0; b < B; ++b) refs.push_back({0, b * L + k});
    Var z = ad::gather_rows(states, refs);
    out.logits.push_back(
        ad::add_bias(ad::matmul(z, tape.parameter(head_w_[k])), tape.parameter(head_b_[k])));
    out.reps.push_back(ad::l2_normalize_rows(ad::matmul(z, tape.parameter(contrast_w_[k]))));
  }
  return out;
}

Matrix FusionModel::predict_proba(std::span<const SampleInput> samples, std::size_t chunk) {
  const auto L = static_cast<Index>(config_.num_labels);
  Matrix probs(static_cast<Index>(samples.size()), L);
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - b);
    ad::Tape tape(false);
    FusionOutputs out = forward(tape, samples.subspan(b, n));
    for (Index k = 0; k < L; ++k) {
      const Matrix& z = out.logits[k].value();
      for (Index i = 0; i < static_cast<Index>(n); ++i) {
        probs(static_cast<Index>(b) + i, k) = 1.0 / (1.0 + std::exp(-z(i, 0)));
      }
    }
  }
  return probs;
}

Eigen::RowVectorXd AuxTokenSource::direction(std::size_t label) const {
  std::mt19937_64 rng(combine(sub_seed(seed, "aux-direction"), label));
  std::normal_distribution<double> normal;
  Eigen::RowVectorXd u(static_cast<Index>(dimension));
  for (Index i = 0; i < u.size(); ++i) u(i) = normal(rng);
  return u / u.norm();
}

Matrix AuxTokenSource::tokens(std::string_view subject_id, std::span<const LabelValue> labels) const {
  Matrix t(static_cast<Index>(count), static_cast<Index>(dimension));
  std::mt19937_64 rng(combine(fnv1a64(subject_id), seed));
  std::normal_distribution<double> normal(0.0, noise);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
  if (effect != 0.0 && count > 0) {
    for (std::size_t k : designated_labels) {
      if (k >= labels.size() || labels[k] == kMissingLabel) continue;
      const Eigen::RowVectorXd shift = effect * (static_cast<double>(labels[k]) - 0.5) * direction(k);
      t.rowwise() += shift;
    }
  }
  return t;
}

Matrix synth_aux_tokens(std::string_view subject_id, std::size_t count, std::uint64_t seed, std::size_t dimension) {
  AuxTokenSource src;
  src.count = count;
  src.seed = seed;
  src.dimension = dimension;
  return src.tokens(subject_id);
}

}  // namespace schemadapt
