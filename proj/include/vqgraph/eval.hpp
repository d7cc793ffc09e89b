#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "vqgraph/graph.hpp"
#include "vqgraph/models.hpp"
#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

/// Fraction of rows in `mask` whose argmax (lowest index on ties) equals the
/// label. Throws on an empty mask.
double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::size_t> mask);
double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const std::size_t> mask);

/// tr(Y^T A Y) / tr(Y^T Deg Y) for one-hot predictions Y over the raw
/// adjacency (no self-loops).
double cut_value(const CsrMatrix& adjacency, std::span<const int> predictions, std::size_t num_classes);

struct LatencyStats {
  double median_ms = 0;
  double p95_ms = 0;
  double mean_ms = 0;
  std::size_t repetitions = 0;
};

struct Metrics {
  double tran = 0;
  double ind = 0;
  double prod = 0;
  double ind_rate = 0;
  bool inductive = false;
  double cut_value = -1;
  LatencyStats latency;

  std::string to_json() const;
};

/// (1 - rate) * tran + rate * ind.
double production_accuracy(double tran, double ind, double ind_rate = 0.2);

/// Accuracy on the tran (observed test) and ind nodes from full-graph logits.
/// The interpolation weight is the inductive share of the unlabeled nodes.
Metrics evaluate_production(const Tensor& logits, const Graph& graph, const SplitSpec& split);
/// Transductive accuracy on the split's test nodes.
Metrics evaluate_transductive(const Tensor& logits, const Graph& graph, const SplitSpec& split);

/// Keeps freed tensor buffers inside the process instead of handing them back
/// to the OS after every call. Without this, glibc unmaps and re-faults the
/// multi-megabyte activations of each forward pass, and page faults dominate
/// small-batch latency. Process-wide; the CLI calls it once at startup.
void retain_freed_memory();

/// Wall time of `fn` after `warmup` untimed calls.
LatencyStats time_calls(const std::function<void()>& fn, std::size_t repetitions, std::size_t warmup);

/// Per-layer propagation blocks for exact inference on `batch`: layer l maps
/// the (L-l)-hop neighborhood onto the (L-l-1)-hop one using entries of the
/// full normalized adjacency.
struct FetchedBlock {
  std::vector<NodeId> input_nodes;
  std::vector<CsrMatrix> propagation;
};
FetchedBlock fetch_khop_block(const CsrMatrix& normalized, std::span<const NodeId> batch, std::size_t num_layers);

/// Teacher timing covers neighborhood fetching, feature gathering and the
/// forward pass; student timing covers feature gathering and the forward
/// pass.
LatencyStats benchmark_teacher(GnnParams& teacher, const Graph& graph, const CsrMatrix& normalized,
                               std::span<const NodeId> batch, std::size_t repetitions, std::size_t warmup = 3);
LatencyStats benchmark_student(MlpParams& student, const Graph& graph, std::span<const NodeId> batch,
                               std::size_t repetitions, std::size_t warmup = 3);

struct BenchmarkRow {
  std::string model;
  std::size_t layers = 0;
  std::size_t batch_size = 0;
  LatencyStats stats;
};
void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows);

struct Neighbor {
  NodeId node = 0;
  double score = 0;
};

/// Top-k rows by cosine similarity to row `query`, query excluded, ties by
/// ascending node id.
std::vector<Neighbor> retrieve_similar_nodes(const Tensor& embeddings, NodeId query, std::size_t k);

/// TSV: node_id, label, code_id (-1 without codes), then one column per
/// embedding dimension, values with 9 significant digits.
void export_embeddings(const std::filesystem::path& path, const Tensor& embeddings, std::span<const int> codes,
                       std::span<const int> labels);

struct EmbeddingTable {
  std::vector<int> labels;
  std::vector<int> codes;
  Tensor embeddings;
};
EmbeddingTable read_embeddings(const std::filesystem::path& path);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
