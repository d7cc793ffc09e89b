#include "vqgraph/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "vqgraph/eval.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

Codebook init_codebook(std::size_t size, std::size_t dim, std::uint64_t seed) {
  if (size == 0 || dim == 0) throw std::invalid_argument("codebook needs at least one code of non-zero dimension");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / static_cast<double>(size);
  std::uniform_real_distribution<double> unif(-bound, bound);
  Codebook cb{Parameter{"codebook", Tensor(size, dim)}};
  for (Scalar& v : cb.embeddings.value.values()) v = static_cast<Scalar>(unif(rng));
  return cb;
}

std::vector<Parameter*> TokenizerModel::parameters() {
  std::vector<Parameter*> out = encoder.parameters();
  if (use_vq) {
    out.push_back(&codebook.embeddings);
    out.push_back(&attribute_decoder.weight);
    out.push_back(&attribute_decoder.bias);
    out.push_back(&topology_decoder.weight);
    out.push_back(&topology_decoder.bias);
  }
  return out;
}

TokenizerModel init_tokenizer(const TokenizerConfig& config, std::size_t feature_dim, std::size_t num_classes) {
  StackDims dims = config.encoder;
  dims.input_dim = feature_dim;
  dims.num_classes = num_classes;
  TokenizerModel model;
  model.encoder = init_gnn(dims, config.aggregation, config.seed);
  model.gamma = config.gamma;
  model.eta = config.eta;
  model.quantized_classifier = config.quantized_classifier;
  model.use_vq = config.use_vq;
  std::mt19937_64 rng(config.seed + 1);
  if (config.use_vq) {
    model.codebook = init_codebook(config.codebook_size, dims.hidden_dim, config.seed + 2);
  }
  // decoders are always shaped so checkpoints of both modes share one layout
  model.attribute_decoder = init_dense(dims.hidden_dim, feature_dim, rng, "attribute_decoder");
  model.topology_decoder = init_dense(dims.hidden_dim, dims.hidden_dim, rng, "topology_decoder");
  return model;
}

std::vector<int> assign_codes(const Tensor& h, const Tensor& codebook) {
  if (codebook.rows() == 0) throw std::invalid_argument("assign_codes: empty codebook");
  if (h.cols() != codebook.cols()) {
    throw ShapeError("assign_codes: embedding dim " + std::to_string(h.cols()) + " != code dim " +
                     std::to_string(codebook.cols()));
  }
  const std::size_t n = h.rows();
  const std::size_t m = codebook.rows();
  const std::size_t d = h.cols();
  const auto e = codebook.map();
  const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> e_norm = e.rowwise().squaredNorm().transpose();
  const double max_e = std::sqrt(static_cast<double>(e_norm.maxCoeff()));
  const double eps = std::numeric_limits<Scalar>::epsilon();

  auto exact = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = static_cast<double>(h(i, c)) - static_cast<double>(codebook(j, c));
      s += diff * diff;
    }
    return s;
  };

  std::vector<int> z(n);
  constexpr std::size_t kChunk = 512;
  Matrix block;
  for (std::size_t r0 = 0; r0 < n; r0 += kChunk) {
    const std::size_t r1 = std::min(n, r0 + kChunk);
    const auto rows = h.map().middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - r0));
    // ||e||^2 - 2 h.e ranks codes like the full distance
    block.noalias() = Scalar{-2} * rows * e.transpose();
    block.rowwise() += e_norm;
    for (std::size_t i = r0; i < r1; ++i) {
      const auto row = block.row(static_cast<Eigen::Index>(i - r0));
      Eigen::Index best_idx = 0;
      const Scalar best = row.minCoeff(&best_idx);
      const double h_norm = static_cast<double>(h.map().row(static_cast<Eigen::Index>(i)).norm());
      // rounding bound of the GEMM form; anything this close is re-checked exactly
      const double tol = 8.0 * eps * static_cast<double>(d) * (h_norm * max_e + max_e * max_e) + 1e-300;
      std::size_t arg = 0;
      double arg_dist = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m; ++j) {
        if (static_cast<double>(row[static_cast<Eigen::Index>(j)]) > static_cast<double>(best) + tol) continue;
        const double dist = exact(i, j);
        if (dist < arg_dist) {
          arg_dist = dist;
          arg = j;
        }
      }
      z[i] = static_cast<int>(arg);
    }
  }
  return z;
}

TokenizerLoss tokenizer_loss(Var features, const CsrMatrix& adjacency, Var h, std::span<const int> z,
                             TokenizerModel& model, std::span<const int> labels,
                             std::span<const std::size_t> labeled_rows, std::size_t edge_chunk_rows) {
  Tape& tape = h.tape();
  const std::size_t n = h.rows();
  if (features.rows() != n) throw ShapeError("tokenizer_loss: feature rows != embedding rows");
  if (labels.size() != n) throw ShapeError("tokenizer_loss: label count != embedding rows");
  TokenizerLoss out;
  Var cls_input = h;
  Var total;
  bool has_total = false;
  if (model.use_vq) {
    if (z.size() != n) throw ShapeError("tokenizer_loss: code count != embedding rows");
    Var e = tape.parameter(model.codebook.embeddings);
    Var q = ops::straight_through_quantize(h, e, z);
    Var node = ops::mean(ops::cosine_row_error(features, apply_dense(q, model.attribute_decoder), model.gamma));
    Var edge = ops::edge_reconstruction_error(apply_dense(q, model.topology_decoder), adjacency, edge_chunk_rows);
    std::vector<std::size_t> zi(z.begin(), z.end());
    Var ez = ops::select_rows(e, zi);
    Var to_code = ops::sub(ops::stop_gradient(h), ez);
    Var vq = ops::scale(ops::sum(ops::mul(to_code, to_code)), 1.0 / static_cast<double>(n));
    Var to_h = ops::sub(h, ops::stop_gradient(ez));
    Var commit = ops::scale(ops::sum(ops::mul(to_h, to_h)), model.eta / static_cast<double>(n));
    out.node_rec = node.value().item();
    out.edge_rec = edge.value().item();
    out.vq = vq.value().item();
    out.commitment = commit.value().item();
    total = ops::add(ops::add(node, edge), ops::add(vq, commit));
    has_total = true;
    if (model.quantized_classifier) cls_input = q;
  }
  if (!labeled_rows.empty()) {
    std::vector<int> y;
    y.reserve(labeled_rows.size());
    for (std::size_t r : labeled_rows) y.push_back(labels[r]);
    Var logits = apply_dense(ops::select_rows(cls_input, labeled_rows), model.encoder.classifier);
    Var ce = ops::mean(ops::cross_entropy_rows(logits, y));
    out.ce = ce.value().item();
    total = has_total ? ops::add(total, ce) : ce;
    has_total = true;
  }
  if (!has_total) throw std::invalid_argument("tokenizer_loss: no labeled rows and no reconstruction terms");
  out.total = total;
  return out;
}

std::size_t reset_dead_codes(Codebook& codebook, std::span<const std::size_t> usage, const Tensor& h_sample,
                             std::mt19937_64& rng) {
  if (usage.size() != codebook.size()) throw ShapeError("reset_dead_codes: usage size != codebook size");
  if (h_sample.rows() == 0) return 0;
  if (h_sample.cols() != codebook.dim()) throw ShapeError("reset_dead_codes: sample dim != code dim");
  std::uniform_int_distribution<std::size_t> pick(0, h_sample.rows() - 1);
  std::size_t replaced = 0;
  for (std::size_t j = 0; j < usage.size(); ++j) {
    if (usage[j] != 0) continue;
    auto src = h_sample.row(pick(rng));
    std::copy(src.begin(), src.end(), codebook.embeddings.value.row(j).begin());
    ++replaced;
  }
  return replaced;
}

TeacherOutputs teacher_infer(TokenizerModel& model, const CsrMatrix& propagation, const Tensor& features) {
  Tape tape(false);
  std::mt19937_64 rng(0);
  Var h = gnn_embed(tape, propagation, tape.constant(features), model.encoder, false, rng);
  TeacherOutputs out;
  out.embeddings = h.value();
  Tensor cls_input = out.embeddings;
  if (model.use_vq) {
    out.codes = assign_codes(out.embeddings, model.codebook.embeddings.value);
    if (model.quantized_classifier) {
      std::vector<std::size_t> idx(out.codes.begin(), out.codes.end());
      cls_input = model.codebook.embeddings.value.gather_rows(idx);
    }
  }
  out.logits = apply_dense(tape.constant(std::move(cls_input)), model.encoder.classifier).value();
  return out;
}

TeacherOutputs teacher_infer(TokenizerModel& model, const Graph& graph) {
  const CsrMatrix prop = normalize_adjacency(graph, model.encoder.aggregation);
  return teacher_infer(model, prop, Tensor::from_floats(graph.num_nodes(), graph.feature_dim(), graph.features()));
}

namespace {

// Training view of a split: the observed subgraph for inductive splits and
// the whole graph otherwise, with labeled/validation ids mapped to rows.
struct TrainView {
  Graph storage;
  const Graph* graph = nullptr;
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> validation;
};

TrainView make_view(const Graph& graph, const SplitSpec& split) {
  TrainView view;
  std::vector<std::int64_t> local(graph.num_nodes(), -1);
  if (split.is_inductive()) {
    const std::vector<NodeId> observed = split.observed_nodes();
    view.storage = induced_subgraph(graph, observed);
    view.graph = &view.storage;
    for (std::size_t i = 0; i < observed.size(); ++i) local[observed[i]] = static_cast<std::int64_t>(i);
  } else {
    view.graph = &graph;
    std::iota(local.begin(), local.end(), 0);
  }
  for (NodeId v : split.labeled) view.labeled.push_back(static_cast<std::size_t>(local[v]));
  for (NodeId v : split.validation) view.validation.push_back(static_cast<std::size_t>(local[v]));
  std::sort(view.labeled.begin(), view.labeled.end());
  std::sort(view.validation.begin(), view.validation.end());
  return view;
}

void check_finite(const TokenizerLoss& loss, std::size_t epoch) {
  if (std::isfinite(static_cast<double>(loss.total.value().item()))) return;
  throw TrainingError("tokenizer loss diverged at epoch " + std::to_string(epoch) +
                      " (node=" + std::to_string(loss.node_rec) + " edge=" + std::to_string(loss.edge_rec) +
                      " ce=" + std::to_string(loss.ce) + " vq=" + std::to_string(loss.vq) +
                      " commitment=" + std::to_string(loss.commitment) + ")");
}

void add_terms(TokenizerEpoch& row, const TokenizerLoss& loss, double w) {
  row.total += w * loss.total.value().item();
  row.node_rec += w * loss.node_rec;
  row.edge_rec += w * loss.edge_rec;
  row.ce += w * loss.ce;
  row.vq += w * loss.vq;
  row.commitment += w * loss.commitment;
}

}  // namespace

TokenizerResult train_tokenizer(const Graph& graph, const SplitSpec& split, const TokenizerConfig& config) {
  validate_split(graph, split);
  if (split.labeled.empty()) throw std::invalid_argument("train_tokenizer: split has no labeled nodes");
  const TrainView view = make_view(graph, split);
  const Graph& g = *view.graph;
  const std::size_t n = g.num_nodes();

  TokenizerConfig cfg = config;
  const bool mini = cfg.mini_batch || n > cfg.full_graph_limit;
  if (mini) {
    cfg.aggregation = Aggregation::mean;
    if (cfg.fanouts.size() != cfg.encoder.num_layers) {
      throw std::invalid_argument("train_tokenizer: " + std::to_string(cfg.fanouts.size()) + " fanouts for " +
                                  std::to_string(cfg.encoder.num_layers) + " layers");
    }
    if (cfg.batch_size == 0) throw std::invalid_argument("train_tokenizer: batch_size must be positive");
  }

  TokenizerResult result;
  result.mini_batch = mini;
  TokenizerModel model = init_tokenizer(cfg, g.feature_dim(), g.num_classes());
  Adam adam(AdamConfig{cfg.lr, cfg.weight_decay});
  const std::vector<Parameter*> params = model.parameters();
  const Tensor x_all = Tensor::from_floats(n, g.feature_dim(), g.features());
  const CsrMatrix prop = normalize_adjacency(g, cfg.aggregation);
  const std::span<const int> labels = g.labels();
  std::vector<char> is_labeled(n, 0);
  for (std::size_t r : view.labeled) is_labeled[r] = 1;
  const std::vector<std::size_t>& select = view.validation.empty() ? view.labeled : view.validation;

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  TokenizerModel best = model;
  double best_val = -1.0;
  std::size_t since_best = 0;
  std::vector<std::size_t> usage(model.use_vq ? model.codebook.size() : 0);

  auto step = [&](Var x, const CsrMatrix& target, Var h, std::span<const int> lbl,
                  std::span<const std::size_t> rows, std::size_t epoch) {
    std::vector<int> z;
    if (model.use_vq) {
      z = assign_codes(h.value(), model.codebook.embeddings.value);
      for (int c : z) ++usage[static_cast<std::size_t>(c)];
    }
    TokenizerLoss loss = tokenizer_loss(x, target, h, z, model, lbl, rows, cfg.edge_chunk_rows);
    check_finite(loss, epoch);
    const GradientMap grads = h.tape().backward(loss.total);
    if (!adam.step(params, grads)) {
      throw TrainingError("tokenizer gradient became non-finite at epoch " + std::to_string(epoch));
    }
    return loss;
  };

  Tensor h_sample;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    TokenizerEpoch row;
    row.epoch = epoch;
    std::fill(usage.begin(), usage.end(), 0);
    if (!mini) {
      Tape tape;
      Var x = tape.constant(x_all);
      Var h = gnn_embed(tape, prop, x, model.encoder, true, rng);
      add_terms(row, step(x, g.adjacency(), h, labels, view.labeled, epoch), 1.0);
      h_sample = h.value();
    } else {
      std::vector<NodeId> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const std::size_t batches = (n + cfg.batch_size - 1) / cfg.batch_size;
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * cfg.batch_size;
        const std::size_t hi = std::min(n, lo + cfg.batch_size);
        std::vector<NodeId> targets(order.begin() + static_cast<std::ptrdiff_t>(lo),
                                    order.begin() + static_cast<std::ptrdiff_t>(hi));
        std::sort(targets.begin(), targets.end());
        const SampledBlock block = sample_neighbors(g, targets, cfg.fanouts, rng());
        const std::vector<CsrMatrix> props = block.propagation();
        std::vector<const CsrMatrix*> ptrs;
        for (const auto& p : props) ptrs.push_back(&p);
        std::vector<std::size_t> in_rows(block.layer_nodes.front().begin(), block.layer_nodes.front().end());
        std::vector<std::size_t> t_rows(targets.begin(), targets.end());
        std::vector<int> lbl;
        std::vector<std::size_t> lrows;
        for (std::size_t i = 0; i < targets.size(); ++i) {
          lbl.push_back(labels[targets[i]]);
          if (is_labeled[targets[i]]) lrows.push_back(i);
        }
        Tape tape;
        Var h = gnn_embed(tape, ptrs, tape.constant(x_all.gather_rows(in_rows)), model.encoder, true, rng);
        Var xt = tape.constant(x_all.gather_rows(t_rows));
        const double w = static_cast<double>(targets.size()) / static_cast<double>(n);
        add_terms(row, step(xt, block.induced_adjacency, h, lbl, lrows, epoch), w);
        if (b + 1 == batches) h_sample = h.value();
      }
    }
    if (model.use_vq) {
      if (cfg.reset_dead_codes) row.codes_reset = reset_dead_codes(model.codebook, usage, h_sample, rng);
      row.codes_used = static_cast<std::size_t>(std::count_if(usage.begin(), usage.end(), [](std::size_t c) { return c > 0; }));
    }

    const TeacherOutputs eval = teacher_infer(model, prop, x_all);
    row.train_acc = accuracy(eval.logits, labels, view.labeled);
    row.val_acc = accuracy(eval.logits, labels, select);
    result.log.push_back(row);
    if (row.val_acc > best_val) {
      best_val = row.val_acc;
      best = model;
      result.best_epoch = epoch;
      since_best = 0;
    } else if (cfg.patience > 0 && ++since_best >= cfg.patience) {
      break;
    }
  }
  result.model = std::move(best);
  result.best_val_acc = best_val;
  return result;
}

void write_tokenizer_log(const std::filesystem::path& path, const std::vector<TokenizerEpoch>& log) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,total,node_rec,edge_rec,ce,vq,commitment,train_acc,val_acc,codes_used,codes_reset\n";
  out.precision(9);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.total << ',' << r.node_rec << ',' << r.edge_rec << ',' << r.ce << ',' << r.vq << ','
        << r.commitment << ',' << r.train_acc << ',' << r.val_acc << ',' << r.codes_used << ',' << r.codes_reset
        << '\n';
  }
}

CodebookUsage codebook_usage(std::span<const int> z, std::span<const int> labels, std::size_t num_classes,
                             OverlapMode mode) {
  if (z.size() != labels.size()) throw std::invalid_argument("codebook_usage: codes and labels differ in length");
  std::vector<std::vector<int>> codes(num_classes);
  std::vector<int> all(z.begin(), z.end());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw std::invalid_argument("codebook_usage: label out of range");
    }
    codes[static_cast<std::size_t>(labels[i])].push_back(z[i]);
  }
  for (auto& c : codes) {
    std::sort(c.begin(), c.end());
    c.erase(std::unique(c.begin(), c.end()), c.end());
  }
  std::sort(all.begin(), all.end());
  CodebookUsage usage;
  usage.num_classes = num_classes;
  usage.distinct_codes = static_cast<std::size_t>(std::unique(all.begin(), all.end()) - all.begin());
  usage.overlap.assign(num_classes * num_classes, 0.0);
  for (const auto& c : codes) usage.entries.push_back(c.size());
  std::vector<int> common;
  for (std::size_t a = 0; a < num_classes; ++a) {
    for (std::size_t b = 0; b < num_classes; ++b) {
      common.clear();
      std::set_intersection(codes[a].begin(), codes[a].end(), codes[b].begin(), codes[b].end(),
                            std::back_inserter(common));
      const double inter = static_cast<double>(common.size());
      const double denom = mode == OverlapMode::jaccard
                               ? static_cast<double>(codes[a].size() + codes[b].size()) - inter
                               : static_cast<double>(std::min(codes[a].size(), codes[b].size()));
      usage.overlap[a * num_classes + b] = denom > 0 ? 100.0 * inter / denom : 0.0;
    }
  }
  return usage;
}

void write_code_assignments(const std::filesystem::path& path, std::span<const int> z) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "node_id\tcode_id\n";
  for (std::size_t i = 0; i < z.size(); ++i) out << i << '\t' << z[i] << '\n';
}

void save_tokenizer(const std::filesystem::path& dir, const TokenizerModel& model) {
  std::map<std::string, const Tensor*> tensors;
  model.encoder.export_tensors("encoder.", tensors);
  if (model.use_vq) tensors["codebook"] = &model.codebook.embeddings.value;
  tensors["attribute_decoder.weight"] = &model.attribute_decoder.weight.value;
  tensors["attribute_decoder.bias"] = &model.attribute_decoder.bias.value;
  tensors["topology_decoder.weight"] = &model.topology_decoder.weight.value;
  tensors["topology_decoder.bias"] = &model.topology_decoder.bias.value;
  const StackDims dims = model.encoder.dims();
  nlohmann::json extra = {
      {"kind", "tokenizer"},
      {"feature_dim", dims.input_dim},
      {"hidden_dim", dims.hidden_dim},
      {"num_layers", dims.num_layers},
      {"num_classes", dims.num_classes},
      {"dropout", dims.dropout},
      {"batch_norm", dims.batch_norm},
      {"aggregation", to_string(model.encoder.aggregation)},
      {"codebook_size", model.use_vq ? model.codebook.size() : 0},
      {"gamma", model.gamma},
      {"eta", model.eta},
      {"quantized_classifier", model.quantized_classifier},
      {"use_vq", model.use_vq},
  };
  save_tensors(dir, tensors, extra.dump());
}

TokenizerModel load_tokenizer(const std::filesystem::path& dir) {
  const auto extra = nlohmann::json::parse(load_manifest_extra(dir));
  if (extra.value("kind", "") != "tokenizer") {
    throw std::runtime_error(dir.string() + " does not hold a tokenizer checkpoint");
  }
  TokenizerConfig cfg;
  cfg.encoder.hidden_dim = extra.at("hidden_dim").get<std::size_t>();
  cfg.encoder.num_layers = extra.at("num_layers").get<std::size_t>();
  cfg.encoder.dropout = extra.at("dropout").get<double>();
  cfg.encoder.batch_norm = extra.at("batch_norm").get<bool>();
  cfg.aggregation = parse_aggregation(extra.at("aggregation").get<std::string>());
  cfg.codebook_size = std::max<std::size_t>(extra.at("codebook_size").get<std::size_t>(), 1);
  cfg.gamma = extra.at("gamma").get<double>();
  cfg.eta = extra.at("eta").get<double>();
  cfg.quantized_classifier = extra.at("quantized_classifier").get<bool>();
  cfg.use_vq = extra.at("use_vq").get<bool>();
  TokenizerModel model =
      init_tokenizer(cfg, extra.at("feature_dim").get<std::size_t>(), extra.at("num_classes").get<std::size_t>());
  auto tensors = load_tensors(dir);
  model.encoder.import_tensors("encoder.", tensors);
  auto take = [&](const std::string& key, Tensor& dst) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw std::runtime_error("checkpoint is missing tensor " + key);
    if (!dst.same_shape(it->second)) throw std::runtime_error("checkpoint tensor " + key + " has the wrong shape");
    dst = std::move(it->second);
  };
  if (model.use_vq) take("codebook", model.codebook.embeddings.value);
  take("attribute_decoder.weight", model.attribute_decoder.weight.value);
  take("attribute_decoder.bias", model.attribute_decoder.bias.value);
  take("topology_decoder.weight", model.topology_decoder.weight.value);
  take("topology_decoder.bias", model.topology_decoder.bias.value);
  return model;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
