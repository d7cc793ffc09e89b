#pragma once

#include <filesystem>
#include <vector>

#include "vqgraph/graph.hpp"
#include "vqgraph/models.hpp"
#include "vqgraph/tokenizer.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

enum class Relation { neg_l2, cosine };

Relation parse_relation(const std::string& text);
std::string to_string(Relation r);

struct DistillConfig {
  StackDims student;  // input_dim / num_classes are filled from the graph
  double alpha = 1.0;
  double beta = 1e-8;
  double tau = 4.0;
  double tau_class = 1.0;
  Relation relation = Relation::neg_l2;
  double lr = 0.005;
  double weight_decay = 0.001;
  std::size_t epochs = 500;
  std::size_t patience = 50;
  /// Rows per optimizer step; 0 trains on all target rows at once.
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
};

/// Row-stochastic N x M matrix of code probabilities.
struct SoftAssignment {
  Tensor probs;
};

/// softmax(r / tau) with r = -||h - e|| (neg_l2) or cos(h, e) (cosine).
Var soft_code_assignment(Var h, Var codebook, double tau, Relation relation);
SoftAssignment soft_code_assignment(const Tensor& h, const Tensor& codebook, double tau, Relation relation);

/// tau^2 * mean_i KL(p_gnn_i || p_mlp_i).
Var code_distill_loss(Var p_gnn, Var p_mlp, double tau);
double code_distill_loss(const SoftAssignment& p_gnn, const SoftAssignment& p_mlp, double tau);

/// tau^2 * mean_i KL(softmax(t_i / tau) || softmax(s_i / tau)).
Var class_distill_loss(Var teacher_logits, Var student_logits, double tau_class);
double class_distill_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau_class);

struct StudentEpoch {
  std::size_t epoch = 0;
  double total = 0;
  double cls = 0;
  double class_distill = 0;
  double code_distill = 0;
  double train_acc = 0;
  double val_acc = 0;
};

struct StudentResult {
  MlpParams model;
  std::vector<StudentEpoch> log;
  std::size_t best_epoch = 0;
  double best_val_acc = 0;
};

/// Precomputed teacher targets over the distillation node set.
struct DistillTargets {
  std::vector<NodeId> nodes;  // global ids, ascending
  Tensor logits;
  Tensor soft_codes;  // empty when the code term is off
};

/// Teacher outputs over all nodes (transductive) or over the observed
/// subgraph (inductive).
DistillTargets make_distill_targets(TokenizerModel& teacher, const Graph& graph, const SplitSpec& split,
                                    const DistillConfig& config);

/// L = CE(labeled) + alpha * class term + beta * code term, with frozen
/// teacher and codebook. Returns the best-validation student.
StudentResult train_student(const Graph& graph, const SplitSpec& split, TokenizerModel& teacher,
                            const DistillConfig& config);
StudentResult train_student(const Graph& graph, const SplitSpec& split, const DistillTargets& targets,
                            const Tensor& codebook, const DistillConfig& config);

void write_student_log(const std::filesystem::path& path, const std::vector<StudentEpoch>& log);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
