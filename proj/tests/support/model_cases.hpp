#pragma once

#include <random>
#include <vector>

#include "schemadapt/model.hpp"
#include "schemadapt/objectives.hpp"
#include "support/gradcheck.hpp"

namespace schemadapt::testing {

using ad::Matrix;

inline FusionConfig small_config() {
  FusionConfig c;
  c.d_in = 6;
  c.d_model = 8;
  c.num_heads = 2;
  c.num_labels = 2;
  c.ffn_mult = 2;
  c.contrast_dim = 4;
  c.aux_positions = 3;
  return c;
}

struct Batch {
  std::vector<Matrix> tab, aux;
  std::vector<SampleInput> inputs;
};

inline Batch random_batch(std::mt19937_64& rng, const FusionConfig& c, int n) {
  std::normal_distribution<double> g;
  Batch b;
  for (int i = 0; i < n; ++i) {
    b.tab.push_back(Matrix::NullaryExpr(1 + i % 3, static_cast<ad::Index>(c.d_in), [&] { return g(rng); }));
    b.aux.push_back(Matrix::NullaryExpr(i % 2 ? 2 : 0, static_cast<ad::Index>(c.d_model), [&] { return g(rng); }));
  }
  for (int i = 0; i < n; ++i) b.inputs.push_back({&b.tab[i], &b.aux[i]});
  return b;
}

// Focal plus contrastive loss over two labels through the whole model, with
// the configuration varied by seed (projection kind, CLS-only last layer).
// tau_alpha == tau_beta makes the detached hardness weight exactly 1, so the
// objective is differentiable end to end. Key biases have an exactly zero
// gradient (softmax ignores a shared shift), so their difference quotients are
// pure roundoff (up to ~1e-10); the 1e-5 floor keeps that from reading as
// error while still demanding 1e-9 absolute agreement.
inline GradCheckResult full_model_grad_check(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FusionConfig c = small_config();
  c.gate_init = 0.4;
  c.projection = seed % 2 ? ProjectionKind::mlp2 : ProjectionKind::linear;
  c.cls_only_last_layer = seed % 3 != 0;
  FusionModel m(c, seed);
  Batch b = random_batch(rng, c, 5);
  const std::vector<LabelValue> y0 = {1, 0, 1, 1, 0}, y1 = {0, 0, 1, kMissingLabel, 1};
  const ContrastParams cp{0.5, 0.5};
  auto loss = [&](ad::Tape& t) {
    auto o = m.forward(t, b.inputs);
    ad::Var s = ad::add(focal_loss(o.logits[0], y0, 0.7, 2.0), focal_loss(o.logits[1], y1, 1.3, 2.0));
    s = ad::add(s, contrastive_loss(o.reps[0], y0, cp));
    return ad::add(s, contrastive_loss(o.reps[1], y1, cp));
  };
  return grad_check(loss, m.parameters(), rng, 4, 1e-5, 1e-5);
}

}  // namespace schemadapt::testing
