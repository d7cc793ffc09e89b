#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vqgraph/graph.hpp"
#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

/// Raised when training produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// x * W + b with W: in x out and b: 1 x out.
struct DenseLayer {
  Parameter weight;
  Parameter bias;

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }
};

struct NormLayer {
  Parameter gamma;
  Parameter beta;
  ops::BatchNormState state;
};

/// Shape of an encoder stack: `num_layers` hidden layers of width
/// `hidden_dim` followed by a linear classifier.
struct StackDims {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 128;
  std::size_t num_layers = 2;
  std::size_t num_classes = 0;
  double dropout = 0.0;
  bool batch_norm = false;
};

/// Layers shared by the teacher GNN and the student MLP. The embedding H is
/// the output of the last hidden layer; the classifier maps H to logits.
struct LayerStack {
  std::vector<DenseLayer> layers;
  std::vector<NormLayer> norms;
  DenseLayer classifier;
  double dropout = 0.0;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t input_dim() const { return layers.front().in_dim(); }
  std::size_t embedding_dim() const { return layers.back().out_dim(); }
  std::size_t num_classes() const { return classifier.out_dim(); }
  bool batch_norm() const { return !norms.empty(); }
  std::vector<Parameter*> parameters();
  std::size_t parameter_count() const;
  StackDims dims() const;

  /// Named views for checkpointing, keys prefixed with `prefix`.
  void export_tensors(const std::string& prefix, std::map<std::string, const Tensor*>& out) const;
  void import_tensors(const std::string& prefix, std::map<std::string, Tensor>& in);
};

struct GnnParams : LayerStack {
  Aggregation aggregation = Aggregation::gcn_sym;
};

struct MlpParams : LayerStack {};

/// Glorot-uniform weights, zero biases; deterministic under `seed`.
DenseLayer init_dense(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng, const std::string& name);
GnnParams init_gnn(const StackDims& dims, Aggregation aggregation, std::uint64_t seed);
MlpParams init_mlp(const StackDims& dims, std::uint64_t seed);

struct ForwardResult {
  Var embeddings;  // N x D
  Var logits;      // N x K
};

Var apply_dense(Var x, DenseLayer& layer);

/// Message passing with one propagation matrix per layer (rows = output
/// nodes, cols = input nodes). For a full graph pass the same normalized
/// adjacency for every layer; for sampled blocks pass the block matrices.
/// Hidden stack only (no classifier head).
Var gnn_embed(Tape& tape, std::span<const CsrMatrix* const> propagation, Var features, GnnParams& params, bool train,
              std::mt19937_64& rng);
Var gnn_embed(Tape& tape, const CsrMatrix& adjacency, Var features, GnnParams& params, bool train,
              std::mt19937_64& rng);
ForwardResult gnn_forward(Tape& tape, std::span<const CsrMatrix* const> propagation, Var features,
                          GnnParams& params, bool train, std::mt19937_64& rng);
ForwardResult gnn_forward(Tape& tape, const CsrMatrix& adjacency, Var features, GnnParams& params, bool train,
                          std::mt19937_64& rng);
ForwardResult mlp_forward(Tape& tape, Var features, MlpParams& params, bool train, std::mt19937_64& rng);

/// Eval-mode forward without gradient recording.
struct Inference {
  Tensor embeddings;
  Tensor logits;
};
Inference gnn_infer(const CsrMatrix& adjacency, const Tensor& features, GnnParams& params);
Inference mlp_infer(const Tensor& features, MlpParams& params);

void save_mlp(const std::filesystem::path& dir, const MlpParams& params);
MlpParams load_mlp(const std::filesystem::path& dir);

/// Row-wise argmax with ties to the lowest index.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
