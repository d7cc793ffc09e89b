#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace vqg {

using NodeId = std::uint32_t;
using Edge = std::pair<NodeId, NodeId>;

/// Raised for malformed or inconsistent graph data. Messages carry the file
/// and line number when the problem comes from a bundle on disk.
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compressed sparse row matrix. Used both for the raw 0/1 adjacency and for
/// normalized propagation matrices (which may be rectangular for sampled
/// blocks).
struct CsrMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::size_t> row_ptr{0};
  std::vector<NodeId> col_idx;
  std::vector<double> values;

  std::size_t nnz() const { return col_idx.size(); }
  std::span<const NodeId> row_indices(std::size_t r) const {
    return {col_idx.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  std::span<const double> row_values(std::size_t r) const {
    return {values.data() + row_ptr[r], row_ptr[r + 1] - row_ptr[r]};
  }
  double at(std::size_t r, std::size_t c) const;
  CsrMatrix transposed() const;
  bool is_symmetric(double tol = 0.0) const;

  static CsrMatrix identity(std::size_t n);
  /// Builds from (row, col, value) triplets; duplicates are summed.
  static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                 std::vector<std::tuple<NodeId, NodeId, double>> triplets);
};

/// Undirected attributed graph with class labels.
///
/// Adjacency is stored once as a symmetric CSR pattern with sorted neighbor
/// lists, no duplicates and no self-loops. Features are a dense row-major
/// `num_nodes x feature_dim` float matrix.
class Graph {
 public:
  Graph() = default;

  /// Validates and normalizes the raw inputs: edges are symmetrized and
  /// deduplicated, self-loops dropped. Throws GraphError on bad labels,
  /// out-of-range endpoints or a feature buffer of the wrong size.
  static Graph build(std::size_t num_nodes, std::span<const Edge> edges, std::vector<float> features,
                     std::size_t feature_dim, std::vector<int> labels, std::size_t num_classes,
                     std::string name = {});

  std::size_t num_nodes() const { return num_nodes_; }
  /// Number of undirected edges.
  std::size_t num_edges() const { return adjacency_.nnz() / 2; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::string& name() const { return name_; }

  std::span<const NodeId> neighbors(NodeId v) const { return adjacency_.row_indices(v); }
  std::size_t degree(NodeId v) const { return neighbors(v).size(); }
  const CsrMatrix& adjacency() const { return adjacency_; }
  bool has_edge(NodeId u, NodeId v) const;
  /// Undirected edges with u < v, sorted.
  std::vector<Edge> edge_list() const;

  std::span<const float> features() const { return features_; }
  std::span<const float> feature_row(NodeId v) const {
    return {features_.data() + static_cast<std::size_t>(v) * feature_dim_, feature_dim_};
  }
  std::span<const int> labels() const { return labels_; }

  /// Same nodes, features and labels with a different edge set.
  Graph with_edges(std::span<const Edge> edges) const;
  /// Same topology and labels with replaced features (same shape).
  Graph with_features(std::vector<float> features) const;

 private:
  std::size_t num_nodes_ = 0;
  std::size_t feature_dim_ = 0;
  std::size_t num_classes_ = 0;
  std::string name_;
  CsrMatrix adjacency_;
  std::vector<float> features_;
  std::vector<int> labels_;
};

/// Induced subgraph over `nodes` (reindexed 0..k-1 in the given order).
Graph induced_subgraph(const Graph& graph, std::span<const NodeId> nodes);

// ---------------------------------------------------------------------------
// Bundle IO
// ---------------------------------------------------------------------------

/// Reads `edges.tsv`, `features.bin`, `labels.tsv` and `meta.json` from a
/// bundle directory.
Graph load_graph(const std::filesystem::path& bundle_dir);
void save_graph(const Graph& graph, const std::filesystem::path& bundle_dir);

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

enum class Aggregation { gcn_sym, mean };

Aggregation parse_aggregation(const std::string& text);
std::string to_string(Aggregation mode);

/// gcn_sym: Deg^-1/2 (A+I) Deg^-1/2. mean: row-normalized A+I.
CsrMatrix normalize_adjacency(const Graph& graph, Aggregation mode);

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Node partition for one experiment run. `labeled`, `observed_unlabeled`
/// and `inductive` partition the node set; `validation` is a subset of
/// `observed_unlabeled` used for model selection. `train_edges` contains no
/// edge touching an inductive node.
struct SplitSpec {
  std::vector<NodeId> labeled;
  std::vector<NodeId> observed_unlabeled;
  std::vector<NodeId> inductive;
  std::vector<NodeId> validation;
  std::vector<Edge> train_edges;
  std::uint64_t seed = 0;

  bool is_inductive() const { return !inductive.empty(); }
  /// Observed unlabeled nodes outside the validation set ("tran" nodes).
  std::vector<NodeId> test_nodes() const;
  /// labeled + observed_unlabeled in ascending id order.
  std::vector<NodeId> observed_nodes() const;
};

/// How many labeled / validation nodes to draw. Per-class counts follow the
/// citation-benchmark convention (e.g. 20 labeled and 30 validation nodes per
/// class); totals are used when the per-class value is zero.
struct LabelBudget {
  std::size_t labeled_per_class = 0;
  std::size_t labeled_total = 0;
  std::size_t validation_per_class = 0;
  std::size_t validation_total = 0;
};

SplitSpec make_transductive_split(const Graph& graph, std::uint64_t seed, const LabelBudget& budget);
SplitSpec make_inductive_split(const Graph& graph, std::uint64_t seed, const LabelBudget& budget,
                               double ind_fraction = 0.2);

/// Throws GraphError when the partition or edge-removal invariants fail.
void validate_split(const Graph& graph, const SplitSpec& split);

void save_split(const SplitSpec& split, const std::filesystem::path& path);
SplitSpec load_split(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sampling and noise
// ---------------------------------------------------------------------------

/// Multi-layer fan-out sample around a batch of target nodes.
///
/// `layer_nodes[0]` holds the input frontier and `layer_nodes.back()` the
/// targets. For layer `l` (0-based, input-most first), every node in
/// `layer_nodes[l + 1]` drew `neighbors[l][i]` from the full graph; those ids
/// are present in `layer_nodes[l]`, and the destination nodes form a prefix
/// of `layer_nodes[l]`.
struct SampledBlock {
  std::vector<NodeId> target_nodes;
  std::vector<std::vector<NodeId>> layer_nodes;
  std::vector<std::vector<std::vector<NodeId>>> neighbors;
  /// Raw adjacency among the target nodes (batch-local indices).
  CsrMatrix induced_adjacency;

  std::size_t num_layers() const { return neighbors.size(); }
  /// Per-layer `|layer_nodes[l+1]| x |layer_nodes[l]|` mean-aggregation
  /// matrices over sampled neighbors plus self.
  std::vector<CsrMatrix> propagation() const;
};

SampledBlock sample_neighbors(const Graph& graph, std::span<const NodeId> targets,
                              std::span<const std::size_t> fanouts, std::uint64_t seed);

/// (1 - alpha) X + alpha n with n i.i.d. standard normal.
std::vector<float> add_feature_noise(std::span<const float> features, double alpha, std::uint64_t seed);

}  // namespace vqg
