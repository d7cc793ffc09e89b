#pragma once

// Finite-difference gradient cases shared by the double-precision unit tests
// and the acceptance property suite. Include only from VQG_DOUBLE sources.

#include <deque>
#include <memory>

#include "support.hpp"
#include "vqgraph/distiller.hpp"
#include "vqgraph/models.hpp"
#include "vqgraph/tokenizer.hpp"

namespace testing {

struct GradCase {
  std::string name;
  std::deque<vqg::Parameter> params;
  std::function<vqg::Var(vqg::Tape&)> build;
  /// Function differenced numerically; empty means `build` itself.
  std::function<vqg::Var(vqg::Tape&)> numeric;
  /// Parameters owned elsewhere (model structs kept alive by `build`).
  std::vector<vqg::Parameter*> external;

  const std::function<vqg::Var(vqg::Tape&)>& reference() const { return numeric ? numeric : build; }

  std::vector<vqg::Parameter*> pointers() {
    if (!external.empty()) return external;
    std::vector<vqg::Parameter*> out;
    for (auto& p : params) out.push_back(&p);
    return out;
  }
};

using CasePtr = std::unique_ptr<GradCase>;

// sum(W .* v) with fixed random W so every output entry gets a distinct weight.
inline vqg::Var weighted_sum(vqg::Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return vqg::ops::sum(vqg::ops::mul(v, v.tape().constant(random_tensor(v.rows(), v.cols(), rng))));
}

inline vqg::Tensor away_from_zero(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  vqg::Tensor t = random_tensor(rows, cols, rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& v : t.values()) v = sign(rng) ? v : -v;
  return t;
}

inline CasePtr make_case(std::string name) {
  auto c = std::make_unique<GradCase>();
  c->name = std::move(name);
  return c;
}

inline vqg::Parameter* add_param(GradCase& c, vqg::Tensor value) {
  c.params.push_back(vqg::Parameter{"p" + std::to_string(c.params.size()), std::move(value)});
  return &c.params.back();
}

inline std::vector<CasePtr> operator_cases(std::uint64_t seed = 11) {
  using namespace vqg;
  std::mt19937_64 rng(seed);
  std::vector<CasePtr> cases;
  auto unary = [&](const std::string& name, Tensor init, std::function<Var(Var)> f) {
    auto c = make_case(name);
    Parameter* a = add_param(*c, std::move(init));
    c->build = [a, f](Tape& t) { return weighted_sum(f(t.parameter(*a)), 3); };
    cases.push_back(std::move(c));
  };
  auto binary = [&](const std::string& name, Tensor x, Tensor y, std::function<Var(Var, Var)> f) {
    auto c = make_case(name);
    Parameter* a = add_param(*c, std::move(x));
    Parameter* b = add_param(*c, std::move(y));
    c->build = [a, b, f](Tape& t) { return weighted_sum(f(t.parameter(*a), t.parameter(*b)), 5); };
    cases.push_back(std::move(c));
  };

  binary("matmul", random_tensor(3, 4, rng), random_tensor(4, 2, rng), ops::matmul);
  binary("matmul_nt", random_tensor(3, 4, rng), random_tensor(5, 4, rng), ops::matmul_nt);
  binary("add", random_tensor(3, 4, rng), random_tensor(3, 4, rng), ops::add);
  binary("add_row_broadcast", random_tensor(3, 4, rng), random_tensor(1, 4, rng), ops::add);
  binary("sub", random_tensor(3, 4, rng), random_tensor(3, 4, rng), ops::sub);
  binary("mul", random_tensor(3, 4, rng), random_tensor(3, 4, rng), ops::mul);
  unary("scale", random_tensor(3, 4, rng), [](Var a) { return ops::scale(a, -2.5); });
  unary("relu", away_from_zero(3, 4, rng), ops::relu);
  unary("sigmoid", random_tensor(3, 4, rng, -3, 3), ops::sigmoid);
  unary("log", random_tensor(3, 4, rng, 0.5, 2.0), [](Var a) { return ops::log(a); });
  unary("dropout", random_tensor(4, 5, rng), [](Var a) {
    std::mt19937_64 r(99);
    return ops::dropout(a, 0.4, true, r);
  });
  unary("softmax_rows", random_tensor(3, 5, rng, -2, 2), ops::softmax_rows);
  unary("log_softmax_rows", random_tensor(3, 5, rng, -2, 2), ops::log_softmax_rows);
  unary("sum", random_tensor(3, 4, rng), ops::sum);
  unary("mean", random_tensor(3, 4, rng), ops::mean);
  binary("l2_row_distances", random_tensor(4, 3, rng), random_tensor(5, 3, rng), ops::l2_row_distances);
  binary("cosine_similarity_rows", random_tensor(4, 3, rng), random_tensor(5, 3, rng),
         [](Var a, Var b) { return ops::cosine_similarity_rows(a, b); });
  binary("cosine_row_error_gamma2", random_tensor(4, 6, rng), random_tensor(4, 6, rng),
         [](Var a, Var b) { return ops::cosine_row_error(a, b, 2.0); });
  binary("cosine_row_error_gamma1", random_tensor(4, 6, rng), random_tensor(4, 6, rng),
         [](Var a, Var b) { return ops::cosine_row_error(a, b, 1.0); });
  {
    std::vector<int> labels{0, 2, 1, 2};
    unary("cross_entropy_rows", random_tensor(4, 3, rng, -2, 2),
          [labels](Var a) { return ops::cross_entropy_rows(a, labels); });
  }
  binary("kl_rows", random_stochastic(3, 4, rng), random_stochastic(3, 4, rng),
         [](Var p, Var q) { return ops::kl_rows(p, q); });
  {
    std::vector<std::size_t> idx{2, 0, 2, 1};
    unary("select_rows", random_tensor(3, 4, rng), [idx](Var a) { return ops::select_rows(a, idx); });
  }
  {
    std::vector<std::tuple<NodeId, NodeId, double>> trip{{0, 1, 0.5}, {0, 3, 1.5}, {1, 1, -1.0}, {2, 0, 2.0},
                                                         {2, 2, 0.25}, {2, 3, 1.0}};
    auto m = std::make_shared<CsrMatrix>(CsrMatrix::from_triplets(3, 4, trip));
    unary("spmm", random_tensor(4, 3, rng), [m](Var a) { return ops::spmm(*m, a); });
  }
  {
    auto c = make_case("edge_reconstruction_error");
    Parameter* x = add_param(*c, random_tensor(5, 3, rng));
    auto adj = std::make_shared<CsrMatrix>(
        CsrMatrix::from_triplets(5, 5, {{0, 1, 1}, {1, 0, 1}, {1, 2, 1}, {2, 1, 1}, {3, 4, 1}, {4, 3, 1}}));
    c->build = [x, adj](Tape& t) { return ops::scale(ops::edge_reconstruction_error(t.parameter(*x), *adj, 2), 10.0); };
    cases.push_back(std::move(c));
  }
  {
    auto c = make_case("batch_norm");
    Parameter* a = add_param(*c, random_tensor(6, 3, rng));
    Parameter* g = add_param(*c, random_tensor(1, 3, rng, 0.5, 1.5));
    Parameter* b = add_param(*c, random_tensor(1, 3, rng));
    auto state = std::make_shared<ops::BatchNormState>();
    c->build = [a, g, b, state](Tape& t) {
      return weighted_sum(ops::batch_norm(t.parameter(*a), t.parameter(*g), t.parameter(*b), *state, true), 9);
    };
    cases.push_back(std::move(c));
  }
  return cases;
}

/// Small graph for the composite-loss cases: two 4-cliques joined by a bridge.
inline vqg::Graph composite_graph() {
  std::vector<vqg::Edge> edges;
  for (vqg::NodeId base : {0u, 4u}) {
    for (vqg::NodeId i = 0; i < 4; ++i) {
      for (vqg::NodeId j = i + 1; j < 4; ++j) edges.emplace_back(base + i, base + j);
    }
  }
  edges.emplace_back(3, 4);
  return make_graph(8, edges, 5, 2, 21);
}

/// Full tokenizer objective with the codes held at their assignment for the
/// initial parameters. The straight-through path makes the tape gradient a
/// surrogate, so the numeric side differences an objective in which every
/// stop-gradient operand is frozen at its initial value:
///   q = h + (e0[z] - h0),  vq = |h0 - e[z]|^2 / n,  commit = eta |h - e0[z]|^2 / n.
inline CasePtr tokenizer_loss_case() {
  using namespace vqg;
  auto c = make_case("tokenizer_loss");
  auto graph = std::make_shared<Graph>(composite_graph());
  TokenizerConfig cfg;
  cfg.encoder.hidden_dim = 4;
  cfg.encoder.num_layers = 2;
  cfg.codebook_size = 6;
  cfg.seed = 3;
  auto model = std::make_shared<TokenizerModel>(init_tokenizer(cfg, graph->feature_dim(), graph->num_classes()));
  // spread the codebook so the VQ terms are not dominated by the tiny init
  std::mt19937_64 rng(5);
  model->codebook.embeddings.value = random_tensor(6, 4, rng, -0.5, 0.5);
  auto prop = std::make_shared<CsrMatrix>(normalize_adjacency(*graph, Aggregation::gcn_sym));
  auto x = std::make_shared<Tensor>(Tensor::from_floats(8, graph->feature_dim(), graph->features()));
  std::vector<int> z;
  {
    Tape t(false);
    std::mt19937_64 r(0);
    z = assign_codes(gnn_embed(t, *prop, t.constant(*x), model->encoder, false, r).value(),
                     model->codebook.embeddings.value);
  }
  const std::vector<std::size_t> labeled{0, 2, 5, 7};
  c->external = model->parameters();
  c->build = [model, graph, prop, x, z, labeled](Tape& t) {
    std::mt19937_64 r(0);
    Var xv = t.constant(*x);
    Var h = gnn_embed(t, *prop, xv, model->encoder, false, r);
    return tokenizer_loss(xv, graph->adjacency(), h, z, *model, graph->labels(), labeled, 3).total;
  };

  auto h0 = std::make_shared<Tensor>();
  {
    Tape t(false);
    std::mt19937_64 r(0);
    *h0 = gnn_embed(t, *prop, t.constant(*x), model->encoder, false, r).value();
  }
  auto ez0 = std::make_shared<Tensor>(h0->rows(), h0->cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto src = model->codebook.embeddings.value.row(static_cast<std::size_t>(z[i]));
    std::copy(src.begin(), src.end(), ez0->row(i).begin());
  }
  c->numeric = [model, graph, prop, x, z, labeled, h0, ez0](Tape& t) {
    std::mt19937_64 r(0);
    const double n = static_cast<double>(z.size());
    Var xv = t.constant(*x);
    Var h = gnn_embed(t, *prop, xv, model->encoder, false, r);
    Var q = ops::add(h, ops::sub(t.constant(*ez0), t.constant(*h0)));
    Var node = ops::mean(ops::cosine_row_error(xv, apply_dense(q, model->attribute_decoder), model->gamma));
    Var edge = ops::edge_reconstruction_error(apply_dense(q, model->topology_decoder), graph->adjacency(), 3);
    std::vector<std::size_t> zi(z.begin(), z.end());
    Var d_vq = ops::sub(t.constant(*h0), ops::select_rows(t.parameter(model->codebook.embeddings), zi));
    Var d_commit = ops::sub(h, t.constant(*ez0));
    Var vq = ops::scale(ops::sum(ops::mul(d_vq, d_vq)), 1.0 / n);
    Var commit = ops::scale(ops::sum(ops::mul(d_commit, d_commit)), model->eta / n);
    std::vector<int> y;
    for (std::size_t row : labeled) y.push_back(graph->labels()[row]);
    Var cls_in = model->quantized_classifier ? q : h;
    Var ce = ops::mean(ops::cross_entropy_rows(apply_dense(ops::select_rows(cls_in, labeled), model->encoder.classifier), y));
    return ops::add(ops::add(ops::add(node, edge), ops::add(vq, commit)), ce);
  };
  return c;
}

/// Full student objective: CE + alpha * class term + beta * code term.
inline CasePtr distill_loss_case() {
  using namespace vqg;
  auto c = make_case("distill_loss");
  std::mt19937_64 rng(17);
  StackDims dims;
  dims.input_dim = 5;
  dims.hidden_dim = 4;
  dims.num_layers = 2;
  dims.num_classes = 3;
  auto mlp = std::make_shared<MlpParams>(init_mlp(dims, 8));
  auto x = std::make_shared<Tensor>(random_tensor(6, 5, rng));
  auto teacher_logits = std::make_shared<Tensor>(random_tensor(6, 3, rng, -2, 2));
  auto codebook = std::make_shared<Tensor>(random_tensor(7, 4, rng));
  auto p_gnn = std::make_shared<Tensor>(soft_code_assignment(random_tensor(6, 4, rng), *codebook, 4.0, Relation::neg_l2).probs);
  const std::vector<std::size_t> labeled{0, 3, 4};
  const std::vector<int> y{2, 0, 1};
  c->external = mlp->parameters();
  c->build = [mlp, x, teacher_logits, codebook, p_gnn, labeled, y](Tape& t) {
    std::mt19937_64 r(0);
    auto out = mlp_forward(t, t.constant(*x), *mlp, false, r);
    Var cls = ops::mean(ops::cross_entropy_rows(ops::select_rows(out.logits, labeled), y));
    Var cd = class_distill_loss(t.constant(*teacher_logits), out.logits, 1.0);
    Var kd = code_distill_loss(t.constant(*p_gnn), soft_code_assignment(out.embeddings, t.constant(*codebook), 4.0,
                                                                         Relation::neg_l2), 4.0);
    return ops::add(ops::add(cls, ops::scale(cd, 1.0)), ops::scale(kd, 0.5));
  };
  return c;
}

}  // namespace testing
