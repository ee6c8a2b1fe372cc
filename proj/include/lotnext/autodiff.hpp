#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. Every value on the tape is a matrix; scalars are 1x1.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace lotnext {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace ad {

/// A named learnable tensor together with its accumulated gradient.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Insertion-ordered owning collection of parameters. References returned by
/// add() and get() stay valid for the lifetime of the store.
class ParameterStore {
 public:
  Parameter& add(std::string name, Matrix value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();
  std::size_t element_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.cbegin(); }
  auto end() const { return params_.cend(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  int id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that never receives gradient.
  Var constant(Matrix value);
  /// Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Parameter& param);
  /// Leaf that tracks gradient without a backing parameter (used by checks).
  Var variable(Matrix value);

  /// Records an interior node. The backward function is dropped when none of
  /// the parents requires gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward);
  Var record(Matrix value, std::span<const Var> parents, BackwardFn backward);

  /// Runs reverse accumulation from a 1x1 root.
  void backward(Var root);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient of a node after backward(); zero matrix when none reached it.
  Matrix grad(Var v) const;

  /// Adds `g` into the gradient of node `v` if it requires gradient.
  void accumulate(Var v, const Matrix& g);
  /// Adds `g` into a block of the gradient of node `v`.
  void accumulate_block(Var v, Eigen::Index row, Eigen::Index col, const Matrix& g);
  /// Adds `g` into row `row` of the gradient of node `v`.
  void accumulate_row(Var v, Eigen::Index row, const RowVector& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Matrix& grad_buffer(int id);

  std::vector<Node> nodes_;
};

/// Contiguous block of rows belonging to one sequence.
struct Segment {
  int start = 0;
  int length = 0;
};

// Elementwise and linear-algebra primitives.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_row(Var a, Var row);
Var mul_const(Var a, const Matrix& c);
Var hconcat(Var a, Var b);
Var vconcat(Var a, Var b);
Var gather_rows(Var a, std::span<const int> index);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var element(Var a, Eigen::Index row, Eigen::Index col);

Var leaky_relu(Var a, double slope = 0.01);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);

Var sum(Var a);
Var mean(Var a);

/// Inverted dropout; identity when rate == 0.
Var dropout(Var a, double rate, std::mt19937_64& rng);

/// Row-wise layer normalization with per-column scale and offset (1 x c).
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

/// Multi-head scaled dot-product attention, causal within each segment.
/// q, k, v are (T x d); heads split columns evenly. Optionally stores each
/// segment/head probability matrix (segment-major) into `probs`.
Var causal_attention(Var q, Var k, Var v, std::span<const Segment> segments, int n_heads,
                     std::vector<Matrix>* probs = nullptr);

/// Per-segment left multiplication by constant square mixing matrices.
Var mix_segments(Var a, std::span<const Segment> segments, std::span<const Matrix> mixing);

/// Undirected weighted graph with explicit diagonal weights, used by the
/// symmetric-normalized propagation below.
struct PropagationGraph {
  int n_nodes = 0;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<double> diagonal;
};

/// D^{-1/2} A D^{-1/2} H where A holds `edge_weights` (E x 1) on both
/// (src,dst) and (dst,src) plus the constant diagonal. Differentiable in both
/// the features and the edge weights (including through the degrees).
Var normalized_propagate(Var features, const PropagationGraph& graph, Var edge_weights);

/// -(1/N) sum_k w_k log softmax(l_k + offsets)[y_k], stabilized by
/// max-subtraction. `offsets` is 1 x C (may be empty), `weights` N x 1.
Var weighted_softmax_cross_entropy(Var logits, std::span<const int> labels,
                                   const RowVector& offsets, Var weights);

/// mean((pred - target)^2) over all elements.
Var mean_squared_error(Var pred, const Matrix& target);

}  // namespace ad
}  // namespace lotnext
