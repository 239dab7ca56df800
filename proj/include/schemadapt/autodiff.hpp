#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

namespace schemadapt::ad {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Shape {
  Index rows = 0;
  Index cols = 0;
  Index size() const { return rows * cols; }
  std::string str() const;
  bool operator==(const Shape&) const = default;
};

inline Shape shape_of(const Matrix& m) { return {m.rows(), m.cols()}; }

// Trainable tensor owned by a model. `shared` marks membership in the shared
// parameter set that multi-task balancing operates on.
struct Parameter {
  std::string name;
  Matrix value;
  bool shared = true;
  Shape shape() const { return shape_of(value); }
};

class Tape;

// Handle to a node on a tape; valid while the tape is alive.
class Var {
 public:
  Var() = default;
  const Matrix& value() const;
  Shape shape() const { return shape_of(value()); }
  double item() const;
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records operations in creation order (which is a topological order) and
// replays their backward rules. One tape per forward pass; not thread-safe.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  struct Registered {
    Parameter* param;
    int node;
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Leaf holding a copy of p.value. Registering the same parameter twice
  // returns the original node.
  Var parameter(Parameter& p);
  Var record(Matrix value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var record(Matrix value, std::span<const Var> inputs, BackwardFn fn);

  // Resets every gradient, seeds d loss = 1 and runs each reachable node's rule
  // once. Unreached parameters end with zero gradient.
  void backward(Var loss);

  bool has_grad(Var v) const;
  Matrix grad(Var v) const;
  Matrix grad(const Parameter& p) const;
  const std::vector<Registered>& parameters() const { return params_; }
  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  // Number of nodes whose backward rule ran in the last backward().
  std::size_t last_backward_visits() const { return visits_; }

  // Used by backward rules.
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& upstream(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].requires_grad; }

  template <class Expr>
  void accumulate(int id, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.grad_live) {
      n.grad.resize(g.rows(), g.cols());
      n.grad.noalias() = g;
      n.grad_live = true;
    } else {
      n.grad.noalias() += g;
    }
  }

  // Zero-initialized (on first touch) gradient buffer for block updates.
  Matrix& grad_buffer(int id);

 private:
  friend class Var;
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool grad_live = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::vector<Registered> params_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool grad_enabled_;
  std::size_t visits_ = 0;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Shapes must match exactly; the only broadcast is the
// bias-add pattern (1 x c row added to every row). Violations throw ShapeError.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);                 // element-wise
Var add_bias(Var x, Var bias);         // bias is 1 x cols
Var scale(Var s, Var x);               // s is 1 x 1
Var scalar_mul(Var x, double c);
Var neg(Var x);
Var softmax_rows(Var x);
Var layer_norm(Var x, double eps = 1e-5);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var gelu(Var x);                       // exact erf form
Var tanh(Var x);
Var sigmoid(Var x);
Var log(Var x);
Var exp(Var x);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var x, Index begin, Index count);
Var mean(Var x);                       // -> 1 x 1
Var sum(Var x);                        // -> 1 x 1
Var row_sum(Var x);                    // -> rows x 1
Var transpose(Var x);
Var l2_normalize_rows(Var x);

struct RowRef {
  int source;
  Index row;
};
// Row i of the result is sources[refs[i].source].row(refs[i].row).
Var gather_rows(std::span<const Var> sources, std::span<const RowRef> refs);

struct Segment {
  Index offset = 0;
  Index count = 0;
};

// Block-diagonal multi-head attention over packed sequences: query segment s
// attends to key segment s only. q is Rq x d, k and v are Rk x d.
struct AttentionLayout {
  std::vector<Segment> queries;
  std::vector<Segment> keys;
  int heads = 1;
};
Var attention(Var q, Var k, Var v, const AttentionLayout& layout);

// ---------------------------------------------------------------------------
// Per-task gradients over the shared parameters registered on one tape.

struct TaskGradients {
  Matrix matrix;                    // tasks x flattened shared parameters
  std::vector<std::string> task_ids;
  Index rows() const { return matrix.rows(); }
};

struct PerTaskGradients {
  TaskGradients shared;
  std::vector<Parameter*> shared_params;    // flattening order
  std::vector<Parameter*> unshared_params;
  std::vector<Matrix> unshared_grads;       // summed over tasks
  std::vector<double> loss_values;
};

// One independent backward pass per loss. Non-shared parameters receive the
// sum of per-task gradients, which equals each one's own task gradient when
// every such parameter feeds a single task.
PerTaskGradients grad_per_task(Tape& tape, std::span<const Var> losses, std::vector<std::string> task_ids = {});

// ---------------------------------------------------------------------------
// Checkpoints: magic, version, count, then (name, shape, f64 buffer) per
// parameter, all little-endian.

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params);
std::string serialize_checkpoint(std::span<const Parameter* const> params);
std::vector<Parameter> load_checkpoint(const std::string& path);
std::vector<Parameter> deserialize_checkpoint(std::string_view bytes);
// Copies values into `params`, matching by name; every name must be present
// with an identical shape.
void restore_parameters(std::span<Parameter* const> params, std::span<const Parameter> saved);

}  // namespace schemadapt::ad
