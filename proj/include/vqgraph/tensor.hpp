#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "vqgraph/graph.hpp"

// The numeric core is compiled once per precision. Each build lives in its own
// inline namespace so a float and a double build can be linked side by side.
#if defined(VQG_DOUBLE)
#define VQG_PRECISION_NS f64
#else
#define VQG_PRECISION_NS f32
#endif

namespace vqg {
inline namespace VQG_PRECISION_NS {

#if defined(VQG_DOUBLE)
using Scalar = double;
#else
using Scalar = float;
#endif

/// Name of the storage type, as written into checkpoint manifests.
constexpr const char* scalar_name() { return sizeof(Scalar) == 8 ? "f64" : "f32"; }

/// Epsilon for clamped logarithms and zero-norm guards.
constexpr double kLogEpsilon = 1e-12;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Dense row-major matrix. Scalars are 1x1 and vectors are single rows or
/// columns; the engine has no higher-rank tensors.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, Scalar fill = Scalar{0})
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, std::vector<Scalar> values);

  static Tensor scalar(Scalar v) { return Tensor(1, 1, v); }
  /// Converts a float buffer (e.g. graph features) to the engine precision.
  static Tensor from_floats(std::size_t rows, std::size_t cols, std::span<const float> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  Scalar& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  Scalar operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  Scalar item() const;

  std::span<Scalar> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
  std::span<const Scalar> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<Scalar> values() { return values_; }
  std::span<const Scalar> values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  MatrixMap map() { return {values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)}; }
  ConstMatrixMap map() const {
    return {values_.data(), static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_)};
  }

  bool all_finite() const;
  /// Rows `idx` stacked into a new tensor.
  Tensor gather_rows(std::span<const std::size_t> idx) const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  // Aligned storage keeps Eigen's vectorized reductions independent of the
  // heap address, so results are reproducible run to run.
  std::vector<Scalar, Eigen::aligned_allocator<Scalar>> values_;
};

/// A named trainable tensor. Parameters are owned by model structs; the tape
/// and the optimizer refer to them by address, so they must not move while a
/// tape or optimizer state refers to them.
struct Parameter {
  std::string name;
  Tensor value;
};

/// Gradients of a scalar loss keyed by parameter.
class GradientMap {
 public:
  void accumulate(const Parameter* p, const Tensor& g);
  /// Gradient for `p`, or nullptr when `p` was not reachable from the loss.
  const Tensor* find(const Parameter* p) const;
  /// Gradient for `p`, zeros of the right shape when unreachable.
  Tensor get(const Parameter& p) const;
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<const Parameter*, Tensor> grads_;
};

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}
  const Tensor& value() const;
  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool requires_grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

/// Receives the gradient of the node output and accumulates into the input
/// gradients. Entries of `input_grads` are null for inputs without grad.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

/// Ordered record of executed operators for reverse-mode differentiation.
///
/// Nodes are appended in execution order, which is a topological order, so
/// backward walks them once in reverse. A tape built with gradients disabled
/// records values only (inference).
class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to a parameter; gradients are reported for it.
  Var parameter(Parameter& p);

  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  bool records_gradients() const { return record_; }
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Reverse pass from a 1x1 loss. Can run once per tape.
  GradientMap backward(Var loss);

 private:
  struct Node {
    Tensor value;
    std::vector<std::uint32_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* param = nullptr;
  };
  // deque keeps references to earlier values valid while appending
  std::deque<Node> nodes_;
  bool record_ = true;
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

namespace ops {

/// a (n x k) * b (k x m).
Var matmul(Var a, Var b);
/// a (n x k) * b^T where b is (m x k).
Var matmul_nt(Var a, Var b);
/// Elementwise sum; `b` may be a 1 x cols row broadcast over rows of `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var relu(Var a);
Var sigmoid(Var a);
/// log(max(a, eps)).
Var log(Var a, double eps = kLogEpsilon);
/// Inverted dropout: kept entries are divided by the keep probability.
/// Identity when `train` is false or p == 0.
Var dropout(Var a, double p, bool train, std::mt19937_64& rng);
Var softmax_rows(Var a);
Var log_softmax_rows(Var a);
/// Sum of all entries, 1x1.
Var sum(Var a);
/// Mean of all entries, 1x1.
Var mean(Var a);
/// (n x d), (m x d) -> (n x m) Euclidean distances. The gradient of an entry
/// whose distance is below 1e-12 is taken as zero.
Var l2_row_distances(Var h, Var e);
/// (n x m) cosine similarities between rows of h and rows of e.
Var cosine_similarity_rows(Var h, Var e, double eps = kLogEpsilon);
/// Per-row (1 - cos(v_i, vhat_i))^gamma, n x 1.
Var cosine_row_error(Var v, Var vhat, double gamma, double eps = kLogEpsilon);
/// Per-row softmax cross-entropy against integer labels, n x 1.
Var cross_entropy_rows(Var logits, std::span<const int> labels);
/// Per-row KL(p || q) for row-stochastic p and q, n x 1, logs clamped at eps.
Var kl_rows(Var p, Var q, double eps = kLogEpsilon);
/// Rows `idx` of `a`.
Var select_rows(Var a, std::span<const std::size_t> idx);
/// Same value, no gradient flows back (sg[.]).
Var stop_gradient(Var a);
/// Forward: row i = e[z[i]]. Backward: the output gradient is copied to h
/// unchanged; e receives nothing through this operator.
Var straight_through_quantize(Var h, Var e, std::span<const int> z);
/// Sparse (rows x cols) matrix times dense a (cols x d).
Var spmm(const CsrMatrix& m, Var a);
/// mean_{ij} (A_ij - sigmoid(x_i . x_j))^2 over all N^2 pairs, evaluated in
/// row chunks so the N x N matrix is never stored. `adjacency` is the
/// N x N 0/1 target.
Var edge_reconstruction_error(Var x, const CsrMatrix& adjacency, std::size_t chunk_rows = 512);

/// Batch-normalization state for one layer.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};
/// Per-column normalization. Batch statistics in train mode (updating the
/// running estimates), running statistics otherwise.
Var batch_norm(Var a, Var gamma, Var beta, BatchNormState& state, bool train);

}  // namespace ops

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.01;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with decoupled weight decay. State is keyed by parameter address.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}

  /// Applies one update to every parameter in `params` that has a gradient.
  /// Returns false (and leaves everything untouched) when any gradient is
  /// non-finite.
  bool step(std::span<Parameter* const> params, const GradientMap& grads);
  const AdamConfig& config() const { return config_; }
  std::size_t steps_skipped() const { return skipped_; }

 private:
  struct State {
    Tensor m;
    Tensor v;
    std::size_t t = 0;
  };
  AdamConfig config_;
  std::unordered_map<const Parameter*, State> state_;
  std::size_t skipped_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Writes `manifest.json` (names, shapes, dtype, plus `extra`) and one raw
/// little-endian payload file per tensor into `dir`.
void save_tensors(const std::filesystem::path& dir, const std::map<std::string, const Tensor*>& tensors,
                  const std::string& extra_json = "{}");
/// Reads every tensor listed in the manifest, converting f32/f64 payloads to
/// the engine precision.
std::map<std::string, Tensor> load_tensors(const std::filesystem::path& dir);
/// Raw JSON text of the `extra` manifest field.
std::string load_manifest_extra(const std::filesystem::path& dir);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
