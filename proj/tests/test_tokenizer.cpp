#include <doctest.h>

#include <array>
#include <fstream>
#include <map>

#include "support.hpp"
#include "vqgraph/synthetic.hpp"
#include "vqgraph/tokenizer.hpp"

using namespace vqg;
using testing::make_graph;

namespace {

// O(N M) scan in double precision, ties to the lowest index.
std::vector<int> brute_force_codes(const Tensor& h, const Tensor& e) {
  std::vector<int> z(h.rows());
  for (std::size_t i = 0; i < h.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < e.rows(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < h.cols(); ++k) {
        const double diff = double(h(i, k)) - double(e(j, k));
        d += diff * diff;
      }
      if (d < best) {
        best = d;
        z[i] = static_cast<int>(j);
      }
    }
  }
  return z;
}

TokenizerConfig tiny_config(std::size_t codes, std::size_t hidden = 6) {
  TokenizerConfig cfg;
  cfg.encoder.hidden_dim = hidden;
  cfg.encoder.num_layers = 2;
  cfg.codebook_size = codes;
  cfg.seed = 3;
  return cfg;
}

Tensor features_of(const Graph& g) { return Tensor::from_floats(g.num_nodes(), g.feature_dim(), g.features()); }

}  // namespace

TEST_CASE("assign_codes examples") {
  SUBCASE("row equal to a code") {
    std::mt19937_64 rng(1);
    const Tensor e = testing::random_tensor(8, 3, rng);
    std::vector<std::size_t> pick{5};
    CHECK(assign_codes(e.gather_rows(pick), e) == std::vector<int>{5});
  }
  SUBCASE("nearest wins") {
    Tensor h(1, 2);
    Tensor e(2, 2, std::vector<Scalar>{1, 0, 0.5, 0});
    CHECK(assign_codes(h, e) == std::vector<int>{1});
  }
  SUBCASE("tie goes to the lowest index") {
    Tensor h(1, 2);
    Tensor e(2, 2, std::vector<Scalar>{1, 0, -1, 0});
    CHECK(assign_codes(h, e) == std::vector<int>{0});
  }
  SUBCASE("empty codebook") {
    CHECK_THROWS(assign_codes(Tensor(2, 3), Tensor(0, 3)));
  }
}

TEST_CASE("assign_codes agrees with a brute-force scan") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 1 + rng() % 700;
    const std::size_t m = 1 + rng() % 40;
    const std::size_t d = 1 + rng() % 12;
    Tensor e = testing::random_tensor(m, d, rng);
    // plant duplicate codes and exact hits to exercise tie handling
    if (m > 2) {
      auto src = e.row(m - 1);
      std::copy(src.begin(), src.end(), e.row(0).begin());
    }
    Tensor h = testing::random_tensor(n, d, rng, -1.5, 1.5);
    for (std::size_t i = 0; i < n; i += 7) {
      auto src = e.row(i % m);
      std::copy(src.begin(), src.end(), h.row(i).begin());
    }
    REQUIRE(assign_codes(h, e) == brute_force_codes(h, e));
  }
}

TEST_CASE("tokenizer loss examples") {
  const Graph g = make_graph(4, {{0, 1}, {2, 3}}, 5, 2);
  TokenizerModel model = init_tokenizer(tiny_config(4, 3), 5, 2);
  std::mt19937_64 rng(4);

  SUBCASE("codes equal to embeddings zero the VQ and commitment terms") {
    Tape tape;
    Tensor hv = model.codebook.embeddings.value.gather_rows(std::vector<std::size_t>{0, 1, 2, 3});
    std::vector<int> z{0, 1, 2, 3};
    const std::vector<std::size_t> rows{0, 1};
    const TokenizerLoss loss =
        tokenizer_loss(tape.constant(features_of(g)), g.adjacency(), tape.constant(hv), z, model, g.labels(), rows);
    CHECK(loss.vq == 0);
    CHECK(loss.commitment == 0);
    CHECK(loss.node_rec >= 0);
    CHECK(loss.edge_rec >= 0);
    CHECK(loss.ce > 0);
    CHECK(loss.total.value().item() ==
          doctest::Approx(loss.node_rec + loss.edge_rec + loss.ce + loss.vq + loss.commitment).epsilon(1e-5));
  }
  SUBCASE("perfect attribute reconstruction") {
    Tape tape;
    Var v = tape.constant(testing::random_tensor(4, 5, rng));
    CHECK(ops::mean(ops::cosine_row_error(v, v, 2.0)).value().item() == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("vq and commitment by hand") {
    Tape tape;
    const Tensor hv = testing::random_tensor(4, 3, rng);
    const std::vector<int> z = assign_codes(hv, model.codebook.embeddings.value);
    const TokenizerLoss loss = tokenizer_loss(tape.constant(features_of(g)), g.adjacency(), tape.constant(hv), z,
                                              model, g.labels(), std::vector<std::size_t>{0});
    double sq = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double diff = double(hv(i, k)) - double(model.codebook.embeddings.value(static_cast<std::size_t>(z[i]), k));
        sq += diff * diff;
      }
    }
    CHECK(loss.vq == doctest::Approx(sq / 4).epsilon(1e-5));
    CHECK(loss.commitment == doctest::Approx(0.25 * sq / 4).epsilon(1e-5));
  }
}

TEST_CASE("edge term on a 2-node edge with a zero decoder output") {
  const Graph g = make_graph(2, {{0, 1}});
  Tape tape;
  const Var e = ops::edge_reconstruction_error(tape.constant(Tensor(2, 4)), g.adjacency());
  // (A - 0.5)^2 summed over the four pairs is 1.0; the term is its mean
  CHECK(e.value().item() == doctest::Approx(0.25));
  CHECK(4 * e.value().item() == doctest::Approx(1.0));
}

TEST_CASE("gradient routing through the tokenizer loss") {
  const Graph g = make_graph(6, {{0, 1}, {1, 2}, {3, 4}, {4, 5}}, 5, 2);
  std::mt19937_64 rng(8);
  for (double eta : {0.0, 0.25, 1.0}) {
    TokenizerModel model = init_tokenizer(tiny_config(3, 4), 5, 2);
    for (auto& v : model.codebook.embeddings.value.values()) v = static_cast<Scalar>(std::uniform_real_distribution<>(-0.5, 0.5)(rng));
    model.eta = eta;
    Parameter hp{"h", testing::random_tensor(6, 4, rng)};
    const std::vector<int> z = assign_codes(hp.value, model.codebook.embeddings.value);
    const std::vector<std::size_t> labeled{0, 3, 5};

    Tape tape;
    const TokenizerLoss loss = tokenizer_loss(tape.constant(features_of(g)), g.adjacency(), tape.parameter(hp), z,
                                              model, g.labels(), labeled);
    const GradientMap grads = tape.backward(loss.total);

    // oracle: decoders and classifier evaluated on q = e_z as a free leaf
    std::vector<std::size_t> zi(z.begin(), z.end());
    Parameter qp{"q", model.codebook.embeddings.value.gather_rows(zi)};
    Tape ref;
    Var q = ref.parameter(qp);
    Var x = ref.constant(features_of(g));
    Var node = ops::mean(ops::cosine_row_error(x, apply_dense(q, model.attribute_decoder), model.gamma));
    Var edge = ops::edge_reconstruction_error(apply_dense(q, model.topology_decoder), g.adjacency());
    std::vector<int> y{g.labels()[0], g.labels()[3], g.labels()[5]};
    Var ce = ops::mean(ops::cross_entropy_rows(apply_dense(ops::select_rows(q, labeled), model.encoder.classifier), y));
    const GradientMap ref_grads = ref.backward(ops::add(ops::add(node, edge), ce));
    const Tensor gq = ref_grads.get(qp);

    const Tensor gh = grads.get(hp);
    const Tensor ge = grads.get(model.codebook.embeddings);
    Tensor expect_e(3, 4);
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t k = 0; k < 4; ++k) {
        const double diff = double(hp.value(i, k)) - double(qp.value(i, k));
        // h sees the straight-through path plus the commitment term only
        CHECK(double(gh(i, k)) == doctest::Approx(double(gq(i, k)) + 2.0 * eta * diff / 6.0).epsilon(1e-4));
        expect_e(zi[i], k) += static_cast<Scalar>(-2.0 * diff / 6.0);
      }
    }
    // the codebook sees the VQ term only
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t k = 0; k < 4; ++k) CHECK(double(ge(j, k)) == doctest::Approx(double(expect_e(j, k))).epsilon(1e-4));
    }
  }
}

TEST_CASE("plain teacher mode has no codebook terms") {
  TokenizerConfig cfg = tiny_config(4);
  cfg.use_vq = false;
  TokenizerModel model = init_tokenizer(cfg, 5, 2);
  for (Parameter* p : model.parameters()) CHECK(p != &model.codebook.embeddings);
  const Graph g = make_graph(4, {{0, 1}}, 5, 2);
  Tape tape;
  std::mt19937_64 rng(2);
  const TokenizerLoss loss = tokenizer_loss(tape.constant(features_of(g)), g.adjacency(),
                                            tape.constant(testing::random_tensor(4, 6, rng)), {}, model, g.labels(),
                                            std::vector<std::size_t>{0, 1});
  CHECK(loss.vq == 0);
  CHECK(loss.edge_rec == 0);
  CHECK(loss.total.value().item() == doctest::Approx(loss.ce));
}

TEST_CASE("dead-code reset") {
  std::mt19937_64 rng(6);
  Codebook cb = init_codebook(4, 3, 1);
  const Tensor before = cb.embeddings.value;
  const Tensor sample = testing::random_tensor(10, 3, rng, 2.0, 3.0);

  std::vector<std::size_t> all_used{1, 2, 3, 4};
  CHECK(reset_dead_codes(cb, all_used, sample, rng) == 0);
  CHECK(std::equal(before.values().begin(), before.values().end(), cb.embeddings.value.values().begin()));

  std::vector<std::size_t> usage{3, 0, 5, 1};
  CHECK(reset_dead_codes(cb, usage, sample, rng) == 1);
  bool from_sample = false;
  for (std::size_t r = 0; r < 10; ++r) {
    from_sample = from_sample || std::equal(sample.row(r).begin(), sample.row(r).end(), cb.embeddings.value.row(1).begin());
  }
  CHECK(from_sample);
  for (std::size_t j : {0, 2, 3}) {
    CHECK(std::equal(before.row(j).begin(), before.row(j).end(), cb.embeddings.value.row(j).begin()));
  }
  // the reseeded code is reachable again: the sample rows sit far from the others
  const std::vector<int> z = assign_codes(sample, cb.embeddings.value);
  CHECK(std::find(z.begin(), z.end(), 1) != z.end());
}

TEST_CASE("codebook usage") {
  SUBCASE("one code per class") {
    std::vector<int> z{3, 3, 3, 7, 7};
    std::vector<int> y{0, 0, 0, 1, 1};
    const CodebookUsage u = codebook_usage(z, y, 2);
    CHECK(u.entries == std::vector<std::size_t>{1, 1});
    CHECK(u.overlap_at(0, 1) == 0);
    CHECK(u.overlap_at(0, 0) == 100);
    CHECK(u.distinct_codes == 2);
  }
  SUBCASE("jaccard and smaller-set overlap") {
    std::vector<int> z{1, 2, 3, 3, 4};
    std::vector<int> y{0, 0, 0, 1, 1};
    const CodebookUsage j = codebook_usage(z, y, 2);
    CHECK(j.entries == std::vector<std::size_t>{3, 2});
    CHECK(j.overlap_at(0, 1) == doctest::Approx(25.0));
    CHECK(j.overlap_at(1, 0) == doctest::Approx(25.0));
    const CodebookUsage s = codebook_usage(z, y, 2, OverlapMode::smaller);
    CHECK(s.overlap_at(0, 1) == doctest::Approx(50.0));
  }
  CHECK_THROWS(codebook_usage(std::vector<int>{1}, std::vector<int>{0, 1}, 2));
}

TEST_CASE("tokenizer learns block-pure codes on a two-block graph") {
  SyntheticGraphSpec spec;
  spec.num_nodes = 100;
  spec.num_classes = 2;
  spec.feature_dim = 16;
  spec.average_degree = 6;
  spec.homophily = 0.95;
  spec.degree_exponent = 0;
  spec.features = FeatureKind::dense;
  spec.centroid_scale = 2.0;
  const Graph g = make_synthetic_graph(spec, 11);
  const SplitSpec split = make_transductive_split(g, 1, LabelBudget{5, 0, 10, 0});
  TokenizerConfig cfg = tiny_config(16, 16);
  cfg.epochs = 150;
  cfg.patience = 0;
  const TokenizerResult result = train_tokenizer(g, split, cfg);
  for (const auto& row : result.log) {
    CHECK(std::isfinite(row.total));
    CHECK(row.vq >= 0);
    CHECK(row.commitment >= 0);
  }
  TokenizerModel model = result.model;
  const TeacherOutputs out = teacher_infer(model, g);
  std::map<int, std::array<int, 2>> per_code;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) ++per_code[out.codes[i]][static_cast<std::size_t>(g.labels()[i])];
  int pure = 0;
  for (std::size_t i = 0; i < g.num_nodes(); ++i) {
    const auto& c = per_code[out.codes[i]];
    const int majority = c[0] >= c[1] ? 0 : 1;
    pure += majority == g.labels()[i] ? 1 : 0;
  }
  MESSAGE("purity " << pure << "/100 over " << per_code.size() << " codes");
  CHECK(pure >= 90);
}

TEST_CASE("mini-batch training runs and stays finite") {
  const Graph g = make_synthetic_graph(synthetic_preset("cora"), 2);
  const SplitSpec split = make_inductive_split(g, 4, LabelBudget{20, 0, 30, 0}, 0.2);
  TokenizerConfig cfg = tiny_config(64, 16);
  cfg.mini_batch = true;
  cfg.batch_size = 256;
  cfg.epochs = 3;
  const TokenizerResult result = train_tokenizer(g, split, cfg);
  CHECK(result.mini_batch);
  CHECK(result.model.encoder.aggregation == Aggregation::mean);
  CHECK(result.log.size() == 3);
  for (const auto& row : result.log) CHECK(std::isfinite(row.total));
  cfg.fanouts = {5};
  CHECK_THROWS(train_tokenizer(g, split, cfg));
}

TEST_CASE("tokenizer checkpoint round trip") {
  testing::TempDir dir;
  const Graph g = make_graph(30, {{0, 1}, {1, 2}, {5, 6}, {7, 8}}, 5, 3);
  TokenizerConfig cfg = tiny_config(8);
  cfg.quantized_classifier = false;
  TokenizerModel model = init_tokenizer(cfg, 5, 3);
  save_tokenizer(dir.path(), model);
  TokenizerModel back = load_tokenizer(dir.path());
  CHECK(back.codebook.size() == 8);
  CHECK_FALSE(back.quantized_classifier);
  CHECK(back.gamma == model.gamma);
  CHECK(back.eta == model.eta);
  const TeacherOutputs a = teacher_infer(model, g);
  const TeacherOutputs b = teacher_infer(back, g);
  CHECK(a.codes == b.codes);
  CHECK(std::equal(a.logits.values().begin(), a.logits.values().end(), b.logits.values().begin()));

  write_code_assignments(dir / "codes.tsv", a.codes);
  std::ifstream in(dir / "codes.tsv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "node_id\tcode_id");
}

TEST_CASE("cora-sized defaults") {
  TokenizerConfig cfg;
  CHECK(cfg.codebook_size == 2048);
  CHECK(cfg.encoder.hidden_dim == 128);
  CHECK(cfg.eta == 0.25);
  CHECK(cfg.gamma == 2.0);
  TokenizerModel m = init_tokenizer(cfg, 1433, 7);
  CHECK(m.codebook.size() == 2048);
  CHECK(m.codebook.dim() == 128);
  CHECK(m.feature_dim() == 1433);
  double lim = 0;
  for (auto v : m.codebook.embeddings.value.values()) lim = std::max(lim, std::abs(double(v)));
  CHECK(lim <= 1.0 / 2048);
}
