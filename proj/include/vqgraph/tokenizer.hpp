#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "vqgraph/graph.hpp"
#include "vqgraph/models.hpp"
#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

struct Codebook {
  Parameter embeddings;  // M x D

  std::size_t size() const { return embeddings.value.rows(); }
  std::size_t dim() const { return embeddings.value.cols(); }
};

/// Uniform on [-1/M, 1/M].
Codebook init_codebook(std::size_t size, std::size_t dim, std::uint64_t seed);

enum class OverlapMode { jaccard, smaller };

struct TokenizerConfig {
  StackDims encoder;  // input_dim / num_classes are filled from the graph
  Aggregation aggregation = Aggregation::gcn_sym;
  std::size_t codebook_size = 2048;
  double gamma = 2.0;
  double eta = 0.25;
  /// Classifier reads the quantized embedding e_z (true) or h (false).
  bool quantized_classifier = true;
  /// false trains a plain supervised GNN (no codebook, no reconstruction).
  bool use_vq = true;
  bool reset_dead_codes = false;

  double lr = 0.01;
  double weight_decay = 5e-4;
  std::size_t epochs = 200;
  /// Stop after this many epochs without a validation improvement; 0 disables.
  std::size_t patience = 50;

  /// Sampled-block training. Chosen automatically when the training graph has
  /// more than `full_graph_limit` nodes.
  bool mini_batch = false;
  std::size_t full_graph_limit = 20000;
  std::size_t batch_size = 1024;
  std::vector<std::size_t> fanouts{5, 5};

  std::size_t edge_chunk_rows = 512;
  std::uint64_t seed = 0;
};

/// Teacher GNN + codebook + decoders. The encoder's classifier head is the
/// tokenizer classifier.
struct TokenizerModel {
  GnnParams encoder;
  Codebook codebook;
  DenseLayer attribute_decoder;  // D -> D_feat
  DenseLayer topology_decoder;   // D -> D
  double gamma = 2.0;
  double eta = 0.25;
  bool quantized_classifier = true;
  bool use_vq = true;

  std::size_t feature_dim() const { return attribute_decoder.out_dim(); }
  std::size_t embedding_dim() const { return encoder.embedding_dim(); }
  std::size_t num_classes() const { return encoder.num_classes(); }
  std::vector<Parameter*> parameters();
};

TokenizerModel init_tokenizer(const TokenizerConfig& config, std::size_t feature_dim, std::size_t num_classes);

/// Nearest code per row of H by Euclidean distance, ties to the lowest index.
std::vector<int> assign_codes(const Tensor& h, const Tensor& codebook);

struct TokenizerLoss {
  Var total;
  double node_rec = 0;
  double edge_rec = 0;
  double ce = 0;
  double vq = 0;
  double commitment = 0;
};

/// Composite tokenizer objective over one graph or batch.
///
/// `features` are the rows being reconstructed, `adjacency` the 0/1 target
/// among the same rows, `h` the encoder output for those rows and `z` its
/// code assignment. CE is averaged over `labeled_rows` (local row indices);
/// `labels` is indexed by local row.
TokenizerLoss tokenizer_loss(Var features, const CsrMatrix& adjacency, Var h, std::span<const int> z,
                             TokenizerModel& model, std::span<const int> labels,
                             std::span<const std::size_t> labeled_rows, std::size_t edge_chunk_rows = 512);

/// Re-seeds every code with zero usage to a random row of `h_sample`.
/// Returns the number of codes replaced.
std::size_t reset_dead_codes(Codebook& codebook, std::span<const std::size_t> usage, const Tensor& h_sample,
                             std::mt19937_64& rng);

struct TeacherOutputs {
  Tensor embeddings;  // H, N x D
  Tensor logits;      // N x K
  std::vector<int> codes;
};

/// Eval-mode teacher pass over a full graph.
TeacherOutputs teacher_infer(TokenizerModel& model, const Graph& graph);
TeacherOutputs teacher_infer(TokenizerModel& model, const CsrMatrix& propagation, const Tensor& features);

struct TokenizerEpoch {
  std::size_t epoch = 0;
  double total = 0;
  double node_rec = 0;
  double edge_rec = 0;
  double ce = 0;
  double vq = 0;
  double commitment = 0;
  double train_acc = 0;
  double val_acc = 0;
  std::size_t codes_used = 0;
  std::size_t codes_reset = 0;
};

struct TokenizerResult {
  TokenizerModel model;
  std::vector<TokenizerEpoch> log;
  std::size_t best_epoch = 0;
  double best_val_acc = 0;
  bool mini_batch = false;
};

/// Joint training of encoder, codebook and decoders. Inductive splits train
/// on the subgraph induced by the observed nodes. Returns the epoch with the
/// best validation accuracy. Throws TrainingError on a non-finite loss.
TokenizerResult train_tokenizer(const Graph& graph, const SplitSpec& split, const TokenizerConfig& config);

void write_tokenizer_log(const std::filesystem::path& path, const std::vector<TokenizerEpoch>& log);

struct CodebookUsage {
  std::vector<std::size_t> entries;  // distinct codes per class
  std::vector<double> overlap;       // K x K row-major, percent
  std::size_t num_classes = 0;
  std::size_t distinct_codes = 0;

  double overlap_at(std::size_t a, std::size_t b) const { return overlap[a * num_classes + b]; }
};

/// Jaccard: |A∩B| / |A∪B|. smaller: |A∩B| / min(|A|, |B|).
CodebookUsage codebook_usage(std::span<const int> z, std::span<const int> labels, std::size_t num_classes,
                             OverlapMode mode = OverlapMode::jaccard);

/// TSV with header `node_id\tcode_id`.
void write_code_assignments(const std::filesystem::path& path, std::span<const int> z);

void save_tokenizer(const std::filesystem::path& dir, const TokenizerModel& model);
TokenizerModel load_tokenizer(const std::filesystem::path& dir);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
