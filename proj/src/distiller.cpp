#include "vqgraph/distiller.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "vqgraph/eval.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

Relation parse_relation(const std::string& text) {
  if (text == "neg_l2" || text == "l2") return Relation::neg_l2;
  if (text == "cosine") return Relation::cosine;
  throw std::invalid_argument("unknown relation '" + text + "' (expected neg_l2 or cosine)");
}

std::string to_string(Relation r) { return r == Relation::neg_l2 ? "neg_l2" : "cosine"; }

Var soft_code_assignment(Var h, Var codebook, double tau, Relation relation) {
  if (!(tau > 0)) throw std::invalid_argument("soft_code_assignment: tau must be positive");
  Var r = relation == Relation::neg_l2 ? ops::scale(ops::l2_row_distances(h, codebook), -1.0 / tau)
                                       : ops::scale(ops::cosine_similarity_rows(h, codebook), 1.0 / tau);
  return ops::softmax_rows(r);
}

SoftAssignment soft_code_assignment(const Tensor& h, const Tensor& codebook, double tau, Relation relation) {
  // row chunks keep the temporary N x M buffers bounded
  constexpr std::size_t kChunk = 1024;
  SoftAssignment out{Tensor(h.rows(), codebook.rows())};
  for (std::size_t r0 = 0; r0 < h.rows(); r0 += kChunk) {
    const std::size_t r1 = std::min(h.rows(), r0 + kChunk);
    std::vector<std::size_t> rows(r1 - r0);
    std::iota(rows.begin(), rows.end(), r0);
    Tape tape(false);
    Var p = soft_code_assignment(tape.constant(h.gather_rows(rows)), tape.constant(codebook), tau, relation);
    std::copy(p.value().values().begin(), p.value().values().end(), out.probs.row(r0).begin());
  }
  return out;
}

Var code_distill_loss(Var p_gnn, Var p_mlp, double tau) {
  return ops::scale(ops::mean(ops::kl_rows(p_gnn, p_mlp)), tau * tau);
}

double code_distill_loss(const SoftAssignment& p_gnn, const SoftAssignment& p_mlp, double tau) {
  Tape tape(false);
  return code_distill_loss(tape.constant(p_gnn.probs), tape.constant(p_mlp.probs), tau).value().item();
}

Var class_distill_loss(Var teacher_logits, Var student_logits, double tau_class) {
  if (!(tau_class > 0)) throw std::invalid_argument("class_distill_loss: tau_class must be positive");
  Var pt = ops::softmax_rows(ops::scale(teacher_logits, 1.0 / tau_class));
  Var ps = ops::softmax_rows(ops::scale(student_logits, 1.0 / tau_class));
  return ops::scale(ops::mean(ops::kl_rows(pt, ps)), tau_class * tau_class);
}

double class_distill_loss(const Tensor& teacher_logits, const Tensor& student_logits, double tau_class) {
  Tape tape(false);
  return class_distill_loss(tape.constant(teacher_logits), tape.constant(student_logits), tau_class).value().item();
}

DistillTargets make_distill_targets(TokenizerModel& teacher, const Graph& graph, const SplitSpec& split,
                                    const DistillConfig& config) {
  if (teacher.feature_dim() != graph.feature_dim() || teacher.num_classes() != graph.num_classes()) {
    throw std::invalid_argument("teacher was trained on " + std::to_string(teacher.feature_dim()) + " features / " +
                                std::to_string(teacher.num_classes()) + " classes but the graph has " +
                                std::to_string(graph.feature_dim()) + " / " + std::to_string(graph.num_classes()));
  }
  DistillTargets t;
  TeacherOutputs out;
  if (split.is_inductive()) {
    t.nodes = split.observed_nodes();
    out = teacher_infer(teacher, induced_subgraph(graph, t.nodes));
  } else {
    t.nodes.resize(graph.num_nodes());
    std::iota(t.nodes.begin(), t.nodes.end(), 0);
    out = teacher_infer(teacher, graph);
  }
  t.logits = std::move(out.logits);
  if (teacher.use_vq && config.beta > 0) {
    t.soft_codes = soft_code_assignment(out.embeddings, teacher.codebook.embeddings.value, config.tau, config.relation).probs;
  }
  return t;
}

StudentResult train_student(const Graph& graph, const SplitSpec& split, TokenizerModel& teacher,
                            const DistillConfig& config) {
  validate_split(graph, split);
  const DistillTargets targets = make_distill_targets(teacher, graph, split, config);
  return train_student(graph, split, targets, teacher.use_vq ? teacher.codebook.embeddings.value : Tensor(), config);
}

StudentResult train_student(const Graph& graph, const SplitSpec& split, const DistillTargets& targets,
                            const Tensor& codebook, const DistillConfig& config) {
  if (config.alpha < 0 || config.beta < 0) throw std::invalid_argument("distill: alpha and beta must be >= 0");
  if (!(config.tau > 0) || !(config.tau_class > 0)) throw std::invalid_argument("distill: temperatures must be > 0");
  if (split.labeled.empty()) throw std::invalid_argument("distill: split has no labeled nodes");
  const std::size_t n = graph.num_nodes();
  const std::size_t rows_total = targets.nodes.size();
  if (targets.logits.rows() != rows_total || targets.logits.cols() != graph.num_classes()) {
    throw std::invalid_argument("distill: teacher targets do not match the graph");
  }
  const bool use_codes = config.beta > 0 && !targets.soft_codes.empty();
  if (use_codes) {
    if (targets.soft_codes.rows() != rows_total || targets.soft_codes.cols() != codebook.rows()) {
      throw std::invalid_argument("distill: soft code targets do not match the codebook");
    }
    if (codebook.cols() != config.student.hidden_dim) {
      throw std::invalid_argument("distill: student hidden dim " + std::to_string(config.student.hidden_dim) +
                                  " != code dim " + std::to_string(codebook.cols()));
    }
  }

  std::vector<std::int64_t> row_of(n, -1);
  for (std::size_t i = 0; i < rows_total; ++i) row_of[targets.nodes[i]] = static_cast<std::int64_t>(i);
  std::vector<char> is_labeled(rows_total, 0);
  for (NodeId v : split.labeled) {
    if (row_of[v] < 0) throw std::invalid_argument("distill: labeled node outside the target set");
    is_labeled[static_cast<std::size_t>(row_of[v])] = 1;
  }
  const std::span<const int> labels = graph.labels();
  std::vector<std::size_t> labeled(split.labeled.begin(), split.labeled.end());
  std::vector<std::size_t> validation(split.validation.begin(), split.validation.end());
  const std::vector<std::size_t>& select = validation.empty() ? labeled : validation;

  StackDims dims = config.student;
  dims.input_dim = graph.feature_dim();
  dims.num_classes = graph.num_classes();
  MlpParams model = init_mlp(dims, config.seed);
  Adam adam(AdamConfig{config.lr, config.weight_decay});
  const std::vector<Parameter*> params = model.parameters();
  const Tensor x_all = Tensor::from_floats(n, graph.feature_dim(), graph.features());
  std::vector<std::size_t> target_ids(targets.nodes.begin(), targets.nodes.end());
  const Tensor x_targets = x_all.gather_rows(target_ids);

  std::mt19937_64 rng(config.seed ^ 0xd1b54a32d192ed03ULL);
  const std::size_t batch = config.batch_size == 0 ? rows_total : config.batch_size;
  StudentResult result;
  MlpParams best = model;
  double best_val = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> order(rows_total);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    StudentEpoch row;
    row.epoch = epoch;
    if (batch < rows_total) std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t lo = 0; lo < rows_total; lo += batch) {
      std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                    order.begin() + static_cast<std::ptrdiff_t>(std::min(rows_total, lo + batch)));
      std::vector<std::size_t> lrows;
      std::vector<int> y;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!is_labeled[rows[i]]) continue;
        lrows.push_back(i);
        y.push_back(labels[targets.nodes[rows[i]]]);
      }
      if (lrows.empty() && config.alpha == 0 && !use_codes) continue;
      const double w = static_cast<double>(rows.size()) / static_cast<double>(rows_total);

      Tape tape;
      auto out = mlp_forward(tape, tape.constant(x_targets.gather_rows(rows)), model, true, rng);
      Var total;
      bool has_total = false;
      auto add_term = [&](Var term) {
        total = has_total ? ops::add(total, term) : term;
        has_total = true;
      };
      if (!lrows.empty()) {
        Var cls = ops::mean(ops::cross_entropy_rows(ops::select_rows(out.logits, lrows), y));
        row.cls += w * cls.value().item();
        add_term(cls);
      }
      if (config.alpha > 0) {
        Var cd = class_distill_loss(tape.constant(targets.logits.gather_rows(rows)), out.logits, config.tau_class);
        row.class_distill += w * cd.value().item();
        add_term(ops::scale(cd, config.alpha));
      }
      if (use_codes) {
        Var p_mlp = soft_code_assignment(out.embeddings, tape.constant(codebook), config.tau, config.relation);
        Var kd = code_distill_loss(tape.constant(targets.soft_codes.gather_rows(rows)), p_mlp, config.tau);
        row.code_distill += w * kd.value().item();
        add_term(ops::scale(kd, config.beta));
      }
      const double value = total.value().item();
      if (!std::isfinite(value)) {
        throw TrainingError("student loss diverged at epoch " + std::to_string(epoch) + " (cls=" +
                            std::to_string(row.cls) + " class=" + std::to_string(row.class_distill) +
                            " code=" + std::to_string(row.code_distill) + ")");
      }
      row.total += w * value;
      const GradientMap grads = tape.backward(total);
      if (!adam.step(params, grads)) {
        throw TrainingError("student gradient became non-finite at epoch " + std::to_string(epoch));
      }
    }

    const Inference eval = mlp_infer(x_all, model);
    row.train_acc = accuracy(eval.logits, labels, labeled);
    row.val_acc = accuracy(eval.logits, labels, select);
    result.log.push_back(row);
    if (row.val_acc > best_val) {
      best_val = row.val_acc;
      best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (config.patience > 0 && ++since_best >= config.patience) {
      break;
    }
  }
  result.model = std::move(best);
  result.best_val_acc = best_val;
  return result;
}

void write_student_log(const std::filesystem::path& path, const std::vector<StudentEpoch>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,total,cls,class_distill,code_distill,train_acc,val_acc\n";
  out.precision(9);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.total << ',' << r.cls << ',' << r.class_distill << ',' << r.code_distill << ','
        << r.train_acc << ',' << r.val_acc << '\n';
  }
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
