#include "schemadapt/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "schemadapt/error.hpp"

namespace schemadapt::ad {

std::string Shape::str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }

double Var::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw ShapeError("item(): tensor " + shape().str() + " is not a scalar");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size() - 1);
  param_nodes_.emplace(&p, id);
  params_.push_back({&p, id});
  return Var(this, id);
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(fn));
}

Var Tape::record(Matrix value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    if (in.tape_ != this) throw ShapeError("op inputs come from a different tape");
    n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(Var loss) {
  if (loss.tape_ != this) throw ShapeError("backward: loss belongs to a different tape");
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be scalar, got " + loss.shape().str());
  for (auto& n : nodes_) n.grad_live = false;
  visits_ = 0;
  Node& root = nodes_[loss.id_];
  if (!root.requires_grad) return;
  root.grad = Matrix::Ones(1, 1);
  root.grad_live = true;
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.grad_live || !n.backward) continue;
    n.backward(*this, id);
    ++visits_;
  }
}

bool Tape::has_grad(Var v) const { return nodes_[v.id_].grad_live; }

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_[v.id_];
  if (!n.grad_live) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Matrix Tape::grad(const Parameter& p) const {
  auto it = param_nodes_.find(&p);
  if (it == param_nodes_.end()) return Matrix::Zero(p.value.rows(), p.value.cols());
  return grad(Var(const_cast<Tape*>(this), it->second));
}

Matrix& Tape::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (!n.grad_live) {
    n.grad.setZero(n.value.rows(), n.value.cols());
    n.grad_live = true;
  }
  return n.grad;
}

namespace {

void require_same_shape(const char* op, Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
}

Tape& tape_of(const char* op, Var a) {
  if (!a.valid()) throw ShapeError(std::string(op) + ": invalid variable");
  return *a.tape();
}

Var unary_elementwise(Var x, Matrix out, Matrix local_grad) {
  auto d = std::make_shared<Matrix>(std::move(local_grad));
  return x.tape()->record(std::move(out), {x}, [xi = x.id(), d](Tape& t, int self) {
    t.accumulate(xi, (t.upstream(self).array() * d->array()).matrix());
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = tape_of("matmul", a);
  if (a.shape().cols != b.shape().rows) {
    throw ShapeError("matmul: inner dimensions differ " + a.shape().str() + " * " + b.shape().str());
  }
  Matrix out(a.shape().rows, b.shape().cols);
  out.noalias() = a.value() * b.value();
  return t.record(std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ai)) t.accumulate(ai, g * t.value(bi).transpose());
    if (t.needs_grad(bi)) t.accumulate(bi, t.value(ai).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  return tape_of("add", a).record(a.value() + b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, int self) {
    t.accumulate(ai, t.upstream(self));
    t.accumulate(bi, t.upstream(self));
  });
}

Var sub(Var a, Var b) {
  require_same_shape("sub", a, b);
  return tape_of("sub", a).record(a.value() - b.value(), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, int self) {
    t.accumulate(ai, t.upstream(self));
    t.accumulate(bi, -t.upstream(self));
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Matrix out = (a.value().array() * b.value().array()).matrix();
  return tape_of("mul", a).record(std::move(out), {a, b}, [ai = a.id(), bi = b.id()](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(ai)) t.accumulate(ai, (g.array() * t.value(bi).array()).matrix());
    if (t.needs_grad(bi)) t.accumulate(bi, (g.array() * t.value(ai).array()).matrix());
  });
}

Var add_bias(Var x, Var bias) {
  if (bias.shape().rows != 1 || bias.shape().cols != x.shape().cols) {
    throw ShapeError("add_bias: bias " + bias.shape().str() + " does not fit " + x.shape().str());
  }
  Matrix out = x.value().rowwise() + bias.value().row(0);
  return tape_of("add_bias", x).record(std::move(out), {x, bias}, [xi = x.id(), bi = bias.id()](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    t.accumulate(xi, g);
    if (t.needs_grad(bi)) t.accumulate(bi, g.colwise().sum());
  });
}

Var scale(Var s, Var x) {
  if (s.shape() != Shape{1, 1}) throw ShapeError("scale: factor must be 1x1, got " + s.shape().str());
  Matrix out = s.value()(0, 0) * x.value();
  return tape_of("scale", x).record(std::move(out), {s, x}, [si = s.id(), xi = x.id()](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    if (t.needs_grad(xi)) t.accumulate(xi, t.value(si)(0, 0) * g);
    if (t.needs_grad(si)) {
      Matrix d(1, 1);
      d(0, 0) = (g.array() * t.value(xi).array()).sum();
      t.accumulate(si, d);
    }
  });
}

Var scalar_mul(Var x, double c) {
  return tape_of("scalar_mul", x).record(c * x.value(), {x}, [xi = x.id(), c](Tape& t, int self) {
    t.accumulate(xi, c * t.upstream(self));
  });
}

Var neg(Var x) { return scalar_mul(x, -1.0); }

Var softmax_rows(Var x) {
  const Matrix& v = x.value();
  Matrix y(v.rows(), v.cols());
  for (Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    y.row(r) = (v.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return tape_of("softmax_rows", x).record(y, {x}, [xi = x.id()](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    const Matrix& y = t.value(self);
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.accumulate(xi, (y.array() * (g.colwise() - dot).array()).matrix());
  });
}

namespace {

struct NormCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

std::shared_ptr<NormCache> normalize_rows(const Matrix& x, double eps) {
  auto c = std::make_shared<NormCache>();
  const Index n = x.cols();
  c->xhat.resize(x.rows(), n);
  c->inv_std.resize(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().sum() / static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    c->inv_std(r) = inv;
    c->xhat.row(r) = (x.row(r).array() - mu) * inv;
  }
  return c;
}

// d x given d xhat for x -> (x - mean) / sqrt(var + eps).
Matrix normalize_rows_backward(const Matrix& dxhat, const NormCache& c) {
  const double n = static_cast<double>(dxhat.cols());
  const Eigen::VectorXd mean_d = dxhat.rowwise().sum() / n;
  const Eigen::VectorXd mean_dx = (dxhat.array() * c.xhat.array()).rowwise().sum() / n;
  Matrix dx = dxhat;
  dx.colwise() -= mean_d;
  dx -= (c.xhat.array().colwise() * mean_dx.array()).matrix();
  dx = (dx.array().colwise() * c.inv_std.array()).matrix();
  return dx;
}

}  // namespace

Var layer_norm(Var x, double eps) {
  auto cache = normalize_rows(x.value(), eps);
  Matrix out = cache->xhat;
  return tape_of("layer_norm", x).record(std::move(out), {x}, [xi = x.id(), cache](Tape& t, int self) {
    t.accumulate(xi, normalize_rows_backward(t.upstream(self), *cache));
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const Index c = x.shape().cols;
  if (gamma.shape() != Shape{1, c} || beta.shape() != Shape{1, c}) {
    throw ShapeError("layer_norm: affine parameters must be 1x" + std::to_string(c));
  }
  auto cache = normalize_rows(x.value(), eps);
  Matrix out = (cache->xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return tape_of("layer_norm", x).record(
      std::move(out), {x, gamma, beta}, [xi = x.id(), gi = gamma.id(), bi = beta.id(), cache](Tape& t, int self) {
        const Matrix& g = t.upstream(self);
        if (t.needs_grad(gi)) t.accumulate(gi, (g.array() * cache->xhat.array()).colwise().sum().matrix());
        if (t.needs_grad(bi)) t.accumulate(bi, g.colwise().sum());
        if (t.needs_grad(xi)) {
          Matrix dxhat = (g.array().rowwise() * t.value(gi).row(0).array()).matrix();
          t.accumulate(xi, normalize_rows_backward(dxhat, *cache));
        }
      });
}

Var gelu(Var x) {
  const Matrix& v = x.value();
  Matrix out(v.rows(), v.cols());
  Matrix d(v.rows(), v.cols());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  const double* in = v.data();
  double* o = out.data();
  double* dd = d.data();
  for (Index i = 0; i < v.size(); ++i) {
    const double z = in[i];
    const double cdf = 0.5 * (1.0 + std::erf(z * kInvSqrt2));
    o[i] = z * cdf;
    dd[i] = cdf + z * kInvSqrt2Pi * std::exp(-0.5 * z * z);
  }
  return unary_elementwise(x, std::move(out), std::move(d));
}

Var tanh(Var x) {
  Matrix y = x.value().array().tanh().matrix();
  Matrix d = (1.0 - y.array().square()).matrix();
  return unary_elementwise(x, std::move(y), std::move(d));
}

Var sigmoid(Var x) {
  Matrix y = (1.0 / (1.0 + (-x.value().array()).exp())).matrix();
  Matrix d = (y.array() * (1.0 - y.array())).matrix();
  return unary_elementwise(x, std::move(y), std::move(d));
}

Var log(Var x) {
  if (!(x.value().array() > 0.0).all()) throw NumericError("log: non-positive input");
  Matrix y = x.value().array().log().matrix();
  Matrix d = x.value().array().inverse().matrix();
  return unary_elementwise(x, std::move(y), std::move(d));
}

Var exp(Var x) {
  Matrix y = x.value().array().exp().matrix();
  return tape_of("exp", x).record(y, {x}, [xi = x.id()](Tape& t, int self) {
    t.accumulate(xi, (t.upstream(self).array() * t.value(self).array()).matrix());
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const Index cols = parts[0].shape().cols;
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.shape().cols != cols) throw ShapeError("concat_rows: column mismatch " + p.shape().str());
    rows += p.shape().rows;
  }
  Matrix out(rows, cols);
  std::vector<std::pair<int, Index>> spans;
  Index r = 0;
  for (const Var& p : parts) {
    out.middleRows(r, p.shape().rows) = p.value();
    spans.emplace_back(p.id(), r);
    r += p.shape().rows;
  }
  return tape_of("concat_rows", parts[0]).record(std::move(out), parts, [spans](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    for (auto [id, offset] : spans) {
      if (t.needs_grad(id)) t.accumulate(id, g.middleRows(offset, t.value(id).rows()));
    }
  });
}

Var slice_rows(Var x, Index begin, Index count) {
  if (begin < 0 || count < 0 || begin + count > x.shape().rows) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + x.shape().str());
  }
  Matrix out = x.value().middleRows(begin, count);
  return tape_of("slice_rows", x).record(std::move(out), {x}, [xi = x.id(), begin, count](Tape& t, int self) {
    if (!t.needs_grad(xi)) return;
    t.grad_buffer(xi).middleRows(begin, count) += t.upstream(self);
  });
}

Var gather_rows(std::span<const Var> sources, std::span<const RowRef> refs) {
  if (sources.empty()) throw ShapeError("gather_rows: no sources");
  const Index cols = sources[0].shape().cols;
  for (const Var& s : sources) {
    if (s.shape().cols != cols) throw ShapeError("gather_rows: column mismatch " + s.shape().str());
  }
  Matrix out(static_cast<Index>(refs.size()), cols);
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& ref = refs[i];
    if (ref.source < 0 || ref.source >= static_cast<int>(sources.size()) || ref.row < 0 ||
        ref.row >= sources[ref.source].shape().rows) {
      throw ShapeError("gather_rows: reference " + std::to_string(i) + " out of range");
    }
    out.row(static_cast<Index>(i)) = sources[ref.source].value().row(ref.row);
  }
  std::vector<int> ids;
  for (const Var& s : sources) ids.push_back(s.id());
  auto refs_copy = std::make_shared<std::vector<RowRef>>(refs.begin(), refs.end());
  return tape_of("gather_rows", sources[0]).record(std::move(out), sources, [ids, refs_copy](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    for (std::size_t i = 0; i < refs_copy->size(); ++i) {
      const auto& ref = (*refs_copy)[i];
      const int id = ids[ref.source];
      if (!t.needs_grad(id)) continue;
      t.grad_buffer(id).row(ref.row) += g.row(static_cast<Index>(i));
    }
  });
}

Var mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeError("mean: empty tensor");
  Matrix out(1, 1);
  out(0, 0) = x.value().sum() / n;
  return tape_of("mean", x).record(std::move(out), {x}, [xi = x.id(), n](Tape& t, int self) {
    const Matrix& v = t.value(xi);
    t.accumulate(xi, Matrix::Constant(v.rows(), v.cols(), t.upstream(self)(0, 0) / n));
  });
}

Var sum(Var x) {
  Matrix out(1, 1);
  out(0, 0) = x.value().sum();
  return tape_of("sum", x).record(std::move(out), {x}, [xi = x.id()](Tape& t, int self) {
    const Matrix& v = t.value(xi);
    t.accumulate(xi, Matrix::Constant(v.rows(), v.cols(), t.upstream(self)(0, 0)));
  });
}

Var row_sum(Var x) {
  Matrix out = x.value().rowwise().sum();
  return tape_of("row_sum", x).record(std::move(out), {x}, [xi = x.id()](Tape& t, int self) {
    const Index cols = t.value(xi).cols();
    t.accumulate(xi, t.upstream(self) * Eigen::RowVectorXd::Ones(cols));
  });
}

Var transpose(Var x) {
  Matrix out = x.value().transpose();
  return tape_of("transpose", x).record(std::move(out), {x}, [xi = x.id()](Tape& t, int self) {
    t.accumulate(xi, t.upstream(self).transpose());
  });
}

Var l2_normalize_rows(Var x) {
  const Matrix& v = x.value();
  auto norms = std::make_shared<Eigen::VectorXd>(v.rowwise().norm());
  if (!(norms->array() > 0.0).all()) throw NumericError("l2_normalize_rows: zero-norm row");
  Matrix y = (v.array().colwise() / norms->array()).matrix();
  return tape_of("l2_normalize_rows", x).record(std::move(y), {x}, [xi = x.id(), norms](Tape& t, int self) {
    const Matrix& g = t.upstream(self);
    const Matrix& y = t.value(self);
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    Matrix dx = g - (y.array().colwise() * dot.array()).matrix();
    dx = (dx.array().colwise() / norms->array()).matrix();
    t.accumulate(xi, dx);
  });
}

Var attention(Var q, Var k, Var v, const AttentionLayout& layout) {
  Tape& tape = tape_of("attention", q);
  const Index d = q.shape().cols;
  if (k.shape().cols != d || v.shape() != k.shape()) {
    throw ShapeError("attention: q " + q.shape().str() + ", k " + k.shape().str() + ", v " + v.shape().str());
  }
  if (layout.heads <= 0 || d % layout.heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (layout.queries.size() != layout.keys.size()) throw ShapeError("attention: segment count mismatch");
  const Index dh = d / layout.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();

  Matrix out = Matrix::Zero(Q.rows(), d);
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(layout.queries.size() * layout.heads);
  for (std::size_t s = 0; s < layout.queries.size(); ++s) {
    const auto qs = layout.queries[s];
    const auto ks = layout.keys[s];
    if (qs.offset < 0 || qs.offset + qs.count > Q.rows() || ks.offset < 0 || ks.offset + ks.count > K.rows()) {
      throw ShapeError("attention: segment " + std::to_string(s) + " out of range");
    }
    if (qs.count > 0 && ks.count == 0) throw ShapeError("attention: segment " + std::to_string(s) + " has no keys");
    for (int h = 0; h < layout.heads; ++h) {
      Matrix scores(qs.count, ks.count);
      scores.noalias() = Q.block(qs.offset, h * dh, qs.count, dh) * K.block(ks.offset, h * dh, ks.count, dh).transpose();
      scores *= inv_sqrt;
      for (Index r = 0; r < scores.rows(); ++r) {
        const double m = scores.row(r).maxCoeff();
        scores.row(r) = (scores.row(r).array() - m).exp().matrix();
        scores.row(r) /= scores.row(r).sum();
      }
      out.block(qs.offset, h * dh, qs.count, dh).noalias() = scores * V.block(ks.offset, h * dh, ks.count, dh);
      probs->push_back(std::move(scores));
    }
  }
  auto lay = std::make_shared<AttentionLayout>(layout);
  return tape.record(std::move(out), {q, k, v},
                     [qi = q.id(), ki = k.id(), vi = v.id(), probs, lay, dh, inv_sqrt](Tape& t, int self) {
                       const Matrix& G = t.upstream(self);
                       const Matrix& Q = t.value(qi);
                       const Matrix& K = t.value(ki);
                       const Matrix& V = t.value(vi);
                       const bool need_q = t.needs_grad(qi);
                       const bool need_k = t.needs_grad(ki);
                       const bool need_v = t.needs_grad(vi);
                       Matrix* dQ = need_q ? &t.grad_buffer(qi) : nullptr;
                       Matrix* dK = need_k ? &t.grad_buffer(ki) : nullptr;
                       Matrix* dV = need_v ? &t.grad_buffer(vi) : nullptr;
                       std::size_t p = 0;
                       for (std::size_t s = 0; s < lay->queries.size(); ++s) {
                         const auto qs = lay->queries[s];
                         const auto ks = lay->keys[s];
                         for (int h = 0; h < lay->heads; ++h, ++p) {
                           const Matrix& P = (*probs)[p];
                           if (qs.count == 0) continue;
                           auto g = G.block(qs.offset, h * dh, qs.count, dh);
                           if (dV) dV->block(ks.offset, h * dh, ks.count, dh).noalias() += P.transpose() * g;
                           if (!dQ && !dK) continue;
                           Matrix dP(qs.count, ks.count);
                           dP.noalias() = g * V.block(ks.offset, h * dh, ks.count, dh).transpose();
                           const Eigen::VectorXd dot = (dP.array() * P.array()).rowwise().sum();
                           Matrix dS = (P.array() * (dP.colwise() - dot).array()).matrix() * inv_sqrt;
                           if (dQ) dQ->block(qs.offset, h * dh, qs.count, dh).noalias() += dS * K.block(ks.offset, h * dh, ks.count, dh);
                           if (dK) dK->block(ks.offset, h * dh, ks.count, dh).noalias() += dS.transpose() * Q.block(qs.offset, h * dh, qs.count, dh);
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------

PerTaskGradients grad_per_task(Tape& tape, std::span<const Var> losses, std::vector<std::string> task_ids) {
  if (losses.empty()) throw ShapeError("grad_per_task: no losses");
  for (const Var& l : losses) {
    if (l.tape() != &tape) throw ShapeError("grad_per_task: losses come from different tapes");
    if (l.value().size() != 1) throw ShapeError("grad_per_task: loss is not scalar " + l.shape().str());
  }
  if (task_ids.empty()) {
    for (std::size_t i = 0; i < losses.size(); ++i) task_ids.push_back("task" + std::to_string(i));
  }
  if (task_ids.size() != losses.size()) throw ShapeError("grad_per_task: task id count mismatch");

  PerTaskGradients out;
  Index shared_size = 0;
  for (const auto& reg : tape.parameters()) {
    if (reg.param->shared) {
      out.shared_params.push_back(reg.param);
      shared_size += reg.param->value.size();
    } else {
      out.unshared_params.push_back(reg.param);
      out.unshared_grads.push_back(Matrix::Zero(reg.param->value.rows(), reg.param->value.cols()));
    }
  }
  out.shared.matrix.resize(static_cast<Index>(losses.size()), shared_size);
  out.shared.task_ids = std::move(task_ids);

  std::vector<int> shared_nodes;
  std::vector<int> unshared_nodes;
  for (const auto& reg : tape.parameters()) (reg.param->shared ? shared_nodes : unshared_nodes).push_back(reg.node);

  for (std::size_t t = 0; t < losses.size(); ++t) {
    out.loss_values.push_back(losses[t].item());
    tape.backward(losses[t]);
    Index offset = 0;
    auto row = out.shared.matrix.row(static_cast<Index>(t));
    for (std::size_t i = 0; i < shared_nodes.size(); ++i) {
      const Index n = out.shared_params[i]->value.size();
      const Matrix g = tape.grad(*out.shared_params[i]);
      row.segment(offset, n) = Eigen::Map<const Eigen::RowVectorXd>(g.data(), n);
      offset += n;
    }
    for (std::size_t i = 0; i < unshared_nodes.size(); ++i) {
      out.unshared_grads[i] += tape.grad(*out.unshared_params[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'S', 'A', 'D', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::string_view& in, const char* what) {
  if (in.size() < sizeof(T)) throw IntegrityError(std::string("checkpoint: truncated while reading ") + what);
  T v;
  std::memcpy(&v, in.data(), sizeof(T));
  in.remove_prefix(sizeof(T));
  return v;
}

}  // namespace

std::string serialize_checkpoint(std::span<const Parameter* const> params) {
  std::string out(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(params.size()));
  for (const Parameter* p : params) {
    put(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    put(out, static_cast<std::uint32_t>(2));
    put(out, static_cast<std::uint64_t>(p->value.rows()));
    put(out, static_cast<std::uint64_t>(p->value.cols()));
    out.append(reinterpret_cast<const char*>(p->value.data()), sizeof(double) * p->value.size());
  }
  return out;
}

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params) {
  const std::string bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("checkpoint: cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::vector<Parameter> deserialize_checkpoint(std::string_view in) {
  if (in.size() < sizeof kMagic || std::memcmp(in.data(), kMagic, sizeof kMagic) != 0) {
    throw IntegrityError("checkpoint: bad magic");
  }
  in.remove_prefix(sizeof kMagic);
  const auto version = take<std::uint32_t>(in, "version");
  if (version != kVersion) throw IntegrityError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = take<std::uint64_t>(in, "count");
  std::vector<Parameter> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    Parameter p;
    const auto len = take<std::uint32_t>(in, "name length");
    if (in.size() < len) throw IntegrityError("checkpoint: truncated name");
    p.name.assign(in.data(), len);
    in.remove_prefix(len);
    const auto rank = take<std::uint32_t>(in, "rank");
    if (rank != 2) throw IntegrityError("checkpoint: parameter '" + p.name + "' has unsupported rank");
    const auto rows = take<std::uint64_t>(in, "rows");
    const auto cols = take<std::uint64_t>(in, "cols");
    const std::uint64_t bytes = rows * cols * sizeof(double);
    if (in.size() < bytes) throw IntegrityError("checkpoint: truncated buffer for '" + p.name + "'");
    p.value.resize(static_cast<Index>(rows), static_cast<Index>(cols));
    std::memcpy(p.value.data(), in.data(), bytes);
    in.remove_prefix(bytes);
    out.push_back(std::move(p));
  }
  if (!in.empty()) throw IntegrityError("checkpoint: trailing bytes");
  return out;
}

std::vector<Parameter> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("checkpoint: cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

void restore_parameters(std::span<Parameter* const> params, std::span<const Parameter> saved) {
  std::unordered_map<std::string, const Parameter*> by_name;
  for (const auto& p : saved) by_name[p.name] = &p;
  for (Parameter* p : params) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw IntegrityError("checkpoint: missing parameter '" + p->name + "'");
    if (it->second->value.rows() != p->value.rows() || it->second->value.cols() != p->value.cols()) {
      throw IntegrityError("checkpoint: shape mismatch for '" + p->name + "'");
    }
    p->value = it->second->value;
  }
}

}  // namespace schemadapt::ad
