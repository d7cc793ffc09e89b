#include <doctest.h>

#include <numeric>

#include "support.hpp"
#include "vqgraph/models.hpp"
#include "vqgraph/synthetic.hpp"

using namespace vqg;
using testing::make_graph;

namespace {

Tensor features_of(const Graph& g) { return Tensor::from_floats(g.num_nodes(), g.feature_dim(), g.features()); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(a.values()[i]) - double(b.values()[i])));
  return m;
}

StackDims small_dims(std::size_t in, std::size_t classes, bool bn = false) {
  StackDims d;
  d.input_dim = in;
  d.hidden_dim = 8;
  d.num_layers = 2;
  d.num_classes = classes;
  d.batch_norm = bn;
  return d;
}

}  // namespace

TEST_CASE("glorot initialization") {
  std::mt19937_64 rng(4);
  const DenseLayer layer = init_dense(128, 128, rng, "w");
  const double bound = std::sqrt(6.0 / 256.0);
  CHECK(bound == doctest::Approx(0.153).epsilon(0.01));
  double max_seen = 0;
  for (auto v : layer.weight.value.values()) max_seen = std::max(max_seen, std::abs(double(v)));
  CHECK(max_seen <= bound);
  CHECK(max_seen > 0.9 * bound);
  for (auto v : layer.bias.value.values()) CHECK(v == 0);
  CHECK(layer.bias.value.rows() == 1);
  CHECK(layer.bias.value.cols() == 128);

  std::mt19937_64 r1(9);
  std::mt19937_64 r2(9);
  CHECK(max_abs_diff(init_dense(5, 3, r1, "a").weight.value, init_dense(5, 3, r2, "b").weight.value) == 0);
  CHECK_THROWS(init_dense(0, 3, r1, "z"));
}

TEST_CASE("model construction errors") {
  StackDims d = small_dims(4, 3);
  d.num_layers = 0;
  CHECK_THROWS(init_gnn(d, Aggregation::gcn_sym, 1));
  d = small_dims(4, 0);
  CHECK_THROWS(init_mlp(d, 1));
}

TEST_CASE("cora-like shapes") {
  StackDims d;
  d.input_dim = 1433;
  d.num_classes = 7;
  GnnParams gnn = init_gnn(d, Aggregation::gcn_sym, 0);
  CHECK(gnn.num_layers() == 2);
  CHECK(gnn.embedding_dim() == 128);
  CHECK(gnn.num_classes() == 7);
  const Graph g = make_graph(50, {{0, 1}, {1, 2}}, 1433, 7);
  const Inference out = gnn_infer(normalize_adjacency(g, Aggregation::gcn_sym), features_of(g), gnn);
  CHECK(out.embeddings.rows() == 50);
  CHECK(out.embeddings.cols() == 128);
  CHECK(out.logits.cols() == 7);

  MlpParams mlp = init_mlp(d, 0);
  const Inference m = mlp_infer(features_of(g), mlp);
  CHECK(m.embeddings.cols() == 128);
  CHECK(m.logits.cols() == 7);
  const Tensor wrong(3, 10);
  CHECK_THROWS_AS(mlp_infer(wrong, mlp), ShapeError);
}

TEST_CASE("gnn is permutation equivariant") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const Graph g = testing::random_graph(20, 0.2, rng, 6, 3);
    std::vector<NodeId> perm(g.num_nodes());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Graph p = induced_subgraph(g, perm);  // p node i is g node perm[i]
    for (auto agg : {Aggregation::gcn_sym, Aggregation::mean}) {
      GnnParams params = init_gnn(small_dims(6, 3, trial % 2 == 1), agg, 5);
      const Inference a = gnn_infer(normalize_adjacency(g, agg), features_of(g), params);
      const Inference b = gnn_infer(normalize_adjacency(p, agg), features_of(p), params);
      std::vector<std::size_t> idx(perm.begin(), perm.end());
      CHECK(max_abs_diff(a.logits.gather_rows(idx), b.logits) < 1e-5);
    }
  }
}

TEST_CASE("gnn without edges matches an mlp with the same weights") {
  const Graph g = make_graph(12, {}, 5, 3);
  GnnParams gnn = init_gnn(small_dims(5, 3), Aggregation::gcn_sym, 3);
  MlpParams mlp;
  static_cast<LayerStack&>(mlp) = static_cast<const LayerStack&>(gnn);
  const Inference a = gnn_infer(normalize_adjacency(g, Aggregation::gcn_sym), features_of(g), gnn);
  const Inference b = mlp_infer(features_of(g), mlp);
  CHECK(max_abs_diff(a.logits, b.logits) < 1e-6);
  CHECK(max_abs_diff(a.embeddings, b.embeddings) < 1e-6);
}

TEST_CASE("zero weights give a uniform softmax") {
  MlpParams mlp = init_mlp(small_dims(4, 5), 1);
  for (Parameter* p : mlp.parameters()) {
    for (auto& v : p->value.values()) v = 0;
  }
  std::mt19937_64 rng(1);
  const Inference out = mlp_infer(testing::random_tensor(3, 4, rng), mlp);
  Tape tape(false);
  const Tensor probs = ops::softmax_rows(tape.constant(out.logits)).value();
  for (auto v : probs.values()) CHECK(v == doctest::Approx(0.2));
}

TEST_CASE("mlp ignores edges and handles one node") {
  const Graph a = make_synthetic_graph(synthetic_preset("cora"), 1);
  const Graph b = a.with_edges({});
  MlpParams mlp = init_mlp(small_dims(a.feature_dim(), a.num_classes()), 2);
  CHECK(max_abs_diff(mlp_infer(features_of(a), mlp).logits, mlp_infer(features_of(b), mlp).logits) == 0);
  std::vector<std::size_t> one{17};
  const Tensor row = features_of(a).gather_rows(one);
  const Tensor single = mlp_infer(row, mlp).logits;
  CHECK(single.rows() == 1);
  CHECK(max_abs_diff(single, mlp_infer(features_of(a), mlp).logits.gather_rows(one)) < 1e-5);
}

TEST_CASE("gnn forward validates shapes") {
  const Graph g = make_graph(6, {{0, 1}}, 4, 2);
  GnnParams gnn = init_gnn(small_dims(4, 2), Aggregation::mean, 1);
  const CsrMatrix adj = normalize_adjacency(g, Aggregation::mean);
  Tape tape(false);
  std::mt19937_64 rng(0);
  std::vector<const CsrMatrix*> one{&adj};
  CHECK_THROWS_AS(gnn_forward(tape, one, tape.constant(features_of(g)), gnn, false, rng), ShapeError);
  CHECK_THROWS_AS(gnn_forward(tape, adj, tape.constant(Tensor(6, 3)), gnn, false, rng), ShapeError);
}

TEST_CASE("dropout only acts in training") {
  StackDims d = small_dims(4, 2);
  d.dropout = 0.5;
  MlpParams mlp = init_mlp(d, 3);
  std::mt19937_64 rng(5);
  const Tensor x = testing::random_tensor(10, 4, rng);
  CHECK(max_abs_diff(mlp_infer(x, mlp).logits, mlp_infer(x, mlp).logits) == 0);
  Tape tape;
  std::mt19937_64 drop(1);
  const ForwardResult train = mlp_forward(tape, tape.constant(x), mlp, true, drop);
  CHECK(max_abs_diff(train.logits.value(), mlp_infer(x, mlp).logits) > 0);
}

TEST_CASE("mlp checkpoint round trip") {
  testing::TempDir dir;
  StackDims d = small_dims(6, 3, true);
  MlpParams mlp = init_mlp(d, 8);
  // move the running statistics away from their defaults
  std::mt19937_64 rng(2);
  const Tensor x = testing::random_tensor(16, 6, rng);
  Tape tape;
  mlp_forward(tape, tape.constant(x), mlp, true, rng);
  save_mlp(dir.path(), mlp);
  MlpParams back = load_mlp(dir.path());
  CHECK(back.parameter_count() == mlp.parameter_count());
  CHECK(back.batch_norm());
  CHECK(max_abs_diff(mlp_infer(x, back).logits, mlp_infer(x, mlp).logits) == 0);
  CHECK_THROWS(load_mlp(dir / "missing"));
}

TEST_CASE("argmax breaks ties low") {
  Tensor t(3, 3, std::vector<Scalar>{1, 1, 0, 0, 2, 2, 3, 1, 3});
  CHECK(argmax_rows(t) == std::vector<int>{0, 1, 0});
}
