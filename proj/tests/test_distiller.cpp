#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "vqgraph/distiller.hpp"
#include "vqgraph/eval.hpp"
#include "vqgraph/synthetic.hpp"

using namespace vqg;

namespace {

Tensor features_of(const Graph& g) { return Tensor::from_floats(g.num_nodes(), g.feature_dim(), g.features()); }

// r = -distance, softmax(r / tau) by hand
std::vector<double> softmax_of_neg(const std::vector<double>& dist, double tau) {
  std::vector<double> p;
  double z = 0;
  for (double d : dist) z += std::exp(-d / tau);
  for (double d : dist) p.push_back(std::exp(-d / tau) / z);
  return p;
}

Graph two_block_graph(std::uint64_t seed) {
  SyntheticGraphSpec spec;
  spec.num_nodes = 100;
  spec.num_classes = 2;
  spec.feature_dim = 16;
  spec.average_degree = 6;
  spec.homophily = 0.9;
  spec.degree_exponent = 0;
  spec.features = FeatureKind::dense;
  spec.centroid_scale = 0.6;
  return make_synthetic_graph(spec, seed);
}

}  // namespace

TEST_CASE("soft assignment examples") {
  // h = 0, codes at distance 0 and 1
  Tensor h(1, 2);
  Tensor e(2, 2, std::vector<Scalar>{0, 0, 1, 0});
  SUBCASE("tau 1") {
    const SoftAssignment p = soft_code_assignment(h, e, 1.0, Relation::neg_l2);
    CHECK(p.probs(0, 0) == doctest::Approx(0.731).epsilon(1e-3));
    CHECK(p.probs(0, 1) == doctest::Approx(0.269).epsilon(1e-3));
    const auto oracle = softmax_of_neg({0, 1}, 1.0);
    CHECK(p.probs(0, 0) == doctest::Approx(oracle[0]).epsilon(1e-6));
  }
  SUBCASE("tau 4 is softer") {
    const SoftAssignment p = soft_code_assignment(h, e, 4.0, Relation::neg_l2);
    CHECK(p.probs(0, 0) == doctest::Approx(0.562).epsilon(1e-3));
    CHECK(p.probs(0, 1) == doctest::Approx(0.438).epsilon(1e-3));
  }
  SUBCASE("equidistant codes give a uniform row") {
    Tensor square(4, 2, std::vector<Scalar>{1, 0, -1, 0, 0, 1, 0, -1});
    for (Relation r : {Relation::neg_l2, Relation::cosine}) {
      Tensor origin_ish(1, 2);
      if (r == Relation::cosine) origin_ish = Tensor(1, 2, std::vector<Scalar>{1, 1});
      const SoftAssignment p = soft_code_assignment(r == Relation::neg_l2 ? h : origin_ish, square, 2.0, r);
      if (r == Relation::neg_l2) {
        for (auto v : p.probs.values()) CHECK(v == doctest::Approx(0.25));
      } else {
        // cos to (1,0) and (0,1) tie, as do (-1,0) and (0,-1)
        CHECK(p.probs(0, 0) == doctest::Approx(p.probs(0, 2)));
        CHECK(p.probs(0, 1) == doctest::Approx(p.probs(0, 3)));
      }
    }
  }
  CHECK_THROWS(soft_code_assignment(h, e, 0.0, Relation::neg_l2));
  CHECK(parse_relation("cosine") == Relation::cosine);
  CHECK(to_string(Relation::neg_l2) == "neg_l2");
  CHECK_THROWS(parse_relation("dot"));
}

TEST_CASE("soft assignment rows are stochastic") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const Tensor h = testing::random_tensor(1 + rng() % 30, 6, rng, -3, 3);
    const Tensor e = testing::random_tensor(1 + rng() % 50, 6, rng, -3, 3);
    const double tau = std::pow(10.0, std::uniform_real_distribution<>(-2, 3)(rng));
    for (Relation r : {Relation::neg_l2, Relation::cosine}) {
      const SoftAssignment p = soft_code_assignment(h, e, tau, r);
      for (std::size_t i = 0; i < p.probs.rows(); ++i) {
        double s = 0;
        for (auto v : p.probs.row(i)) {
          CHECK(v >= 0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("huge temperature flattens assignments") {
  std::mt19937_64 rng(9);
  const Tensor h = testing::random_tensor(10, 4, rng);
  const Tensor e = testing::random_tensor(7, 4, rng);
  for (Relation r : {Relation::neg_l2, Relation::cosine}) {
    const SoftAssignment p = soft_code_assignment(h, e, 1e6, r);
    double worst = 0;
    for (auto v : p.probs.values()) worst = std::max(worst, std::abs(double(v) - 1.0 / 7.0));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("tensor and tape soft assignments agree") {
  std::mt19937_64 rng(2);
  const Tensor h = testing::random_tensor(1500, 5, rng);
  const Tensor e = testing::random_tensor(9, 5, rng);
  const SoftAssignment chunked = soft_code_assignment(h, e, 4.0, Relation::neg_l2);
  Tape tape(false);
  const Tensor direct = soft_code_assignment(tape.constant(h), tape.constant(e), 4.0, Relation::neg_l2).value();
  double worst = 0;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    worst = std::max(worst, std::abs(double(direct.values()[i]) - double(chunked.probs.values()[i])));
  }
  CHECK(worst < 1e-6);
}

TEST_CASE("code distillation loss") {
  SoftAssignment one{Tensor(1, 2, std::vector<Scalar>{1, 0})};
  SoftAssignment half{Tensor(1, 2, std::vector<Scalar>{0.5, 0.5})};
  CHECK(code_distill_loss(one, half, 4.0) == doctest::Approx(16 * std::log(2.0)).epsilon(1e-6));
  CHECK(code_distill_loss(one, half, 4.0) == doctest::Approx(11.09).epsilon(1e-3));
  CHECK(code_distill_loss(half, half, 4.0) == 0);
  for (std::size_t m : {1, 3, 100}) {
    SoftAssignment u{Tensor(2, m, static_cast<Scalar>(1.0 / double(m)))};
    CHECK(code_distill_loss(u, u, 2.0) == doctest::Approx(0.0));
  }
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    const std::size_t m = 2 + rng() % 10;
    SoftAssignment a{testing::random_stochastic(n, m, rng)};
    SoftAssignment b{testing::random_stochastic(n, m, rng)};
    CHECK(code_distill_loss(a, b, 1.0) > 0);
    CHECK(std::abs(code_distill_loss(a, a, 1.0)) < 1e-9);
  }
}

TEST_CASE("class distillation loss") {
  Tensor teacher(1, 2, std::vector<Scalar>{static_cast<Scalar>(std::log(2.0)), 0});
  Tensor student(1, 2);
  const double expect = 2.0 / 3.0 * std::log(4.0 / 3.0) + 1.0 / 3.0 * std::log(2.0 / 3.0);
  CHECK(class_distill_loss(teacher, student, 1.0) == doctest::Approx(expect).epsilon(1e-5));
  CHECK(class_distill_loss(teacher, student, 1.0) == doctest::Approx(0.0566).epsilon(1e-2));
  CHECK(class_distill_loss(teacher, teacher, 1.0) == doctest::Approx(0.0));
  std::mt19937_64 rng(1);
  const Tensor t = testing::random_tensor(6, 4, rng, -3, 3);
  const Tensor s = testing::random_tensor(6, 4, rng, -3, 3);
  Tensor ts = t;
  Tensor ss = s;
  for (std::size_t i = 0; i < 6; ++i) {
    for (auto& v : ts.row(i)) v += static_cast<Scalar>(i);
    for (auto& v : ss.row(i)) v -= static_cast<Scalar>(2 * i);
  }
  CHECK(class_distill_loss(ts, ss, 2.0) == doctest::Approx(class_distill_loss(t, s, 2.0)).epsilon(1e-5));
}

TEST_CASE("default distillation weights") {
  const DistillConfig cfg;
  CHECK(cfg.alpha == 1.0);
  CHECK(cfg.beta == 1e-8);
  CHECK(cfg.tau == 4.0);
}

TEST_CASE("zero distillation weights reduce to supervised training") {
  const Graph g = two_block_graph(1);
  const SplitSpec split = make_transductive_split(g, 2, LabelBudget{5, 0, 10, 0});
  TokenizerConfig tc;
  tc.encoder.hidden_dim = 8;
  tc.codebook_size = 8;
  tc.epochs = 5;
  TokenizerModel teacher = train_tokenizer(g, split, tc).model;
  DistillConfig dc;
  dc.student.hidden_dim = 8;
  dc.alpha = 0;
  dc.beta = 0;
  dc.epochs = 5;
  const StudentResult r = train_student(g, split, teacher, dc);
  for (const auto& row : r.log) {
    CHECK(row.class_distill == 0);
    CHECK(row.code_distill == 0);
    CHECK(row.total == doctest::Approx(row.cls).epsilon(1e-6));
  }
  dc.alpha = -1;
  CHECK_THROWS(train_student(g, split, teacher, dc));
}

TEST_CASE("distillation validates teacher and dims") {
  const Graph g = two_block_graph(3);
  const SplitSpec split = make_transductive_split(g, 2, LabelBudget{5, 0, 10, 0});
  TokenizerConfig tc;
  tc.encoder.hidden_dim = 8;
  tc.codebook_size = 8;
  TokenizerModel wrong = init_tokenizer(tc, 7, 2);
  DistillConfig dc;
  dc.student.hidden_dim = 8;
  dc.epochs = 1;
  CHECK_THROWS(train_student(g, split, wrong, dc));
  TokenizerModel teacher = init_tokenizer(tc, g.feature_dim(), 2);
  dc.student.hidden_dim = 5;
  dc.beta = 1.0;
  CHECK_THROWS(train_student(g, split, teacher, dc));
}

TEST_CASE("student needs neither adjacency nor codebook at inference") {
  const Graph g = two_block_graph(4);
  const SplitSpec split = make_transductive_split(g, 2, LabelBudget{5, 0, 10, 0});
  TokenizerConfig tc;
  tc.encoder.hidden_dim = 8;
  tc.codebook_size = 8;
  tc.epochs = 20;
  TokenizerModel teacher = train_tokenizer(g, split, tc).model;
  DistillConfig dc;
  dc.student.hidden_dim = 8;
  dc.beta = 0.1;
  dc.epochs = 20;
  StudentResult r = train_student(g, split, teacher, dc);
  const Tensor before = mlp_infer(features_of(g), r.model).logits;
  // drop the teacher (and with it the codebook) and every edge
  teacher = TokenizerModel{};
  const Graph bare = g.with_edges({});
  const Tensor after = mlp_infer(features_of(bare), r.model).logits;
  CHECK(std::equal(before.values().begin(), before.values().end(), after.values().begin()));
}

TEST_CASE("code distillation does not hurt on the two-block graph") {
  double with_codes = 0;
  double class_only = 0;
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Graph g = two_block_graph(100 + seed);
    const SplitSpec split = make_transductive_split(g, seed, LabelBudget{3, 0, 10, 0});
    TokenizerConfig tc;
    tc.encoder.hidden_dim = 16;
    // a collapsed codebook (two or three live codes) carries no more than the
    // class signal, so keep codes alive
    tc.codebook_size = 128;
    tc.reset_dead_codes = true;
    tc.epochs = 100;
    tc.patience = 0;
    tc.seed = seed;
    TokenizerModel teacher = train_tokenizer(g, split, tc).model;

    DistillConfig dc;
    dc.student.hidden_dim = 16;
    dc.epochs = 150;
    dc.patience = 0;
    dc.seed = seed;
    dc.beta = 0;
    StudentResult a = train_student(g, split, teacher, dc);
    dc.beta = 1.0;
    StudentResult b = train_student(g, split, teacher, dc);
    const std::vector<NodeId> ids = split.test_nodes();
    const std::vector<std::size_t> test(ids.begin(), ids.end());
    const double acc_a = accuracy(mlp_infer(features_of(g), a.model).logits, g.labels(), test);
    const double acc_b = accuracy(mlp_infer(features_of(g), b.model).logits, g.labels(), test);
    class_only += acc_a / 10;
    with_codes += acc_b / 10;
    wins += acc_b >= acc_a ? 1 : 0;
  }
  MESSAGE("class-only " << class_only << " with codes " << with_codes << " (code run >= in " << wins << "/10)");
  CHECK(with_codes >= class_only);
}

TEST_CASE("student training is reproducible across heap layouts") {
  const Graph g = two_block_graph(7);
  const SplitSpec split = make_transductive_split(g, 1, LabelBudget{5, 0, 10, 0});
  TokenizerConfig tc;
  tc.encoder.hidden_dim = 8;
  tc.codebook_size = 16;
  tc.epochs = 10;
  TokenizerModel teacher = train_tokenizer(g, split, tc).model;
  DistillConfig dc;
  dc.student.hidden_dim = 8;
  dc.beta = 0.5;
  dc.epochs = 10;
  const StudentResult a = train_student(g, split, teacher, dc);
  std::vector<std::vector<char>> shift;
  for (int i = 1; i < 20; ++i) shift.emplace_back(static_cast<std::size_t>(i * 8 + 4));
  const StudentResult b = train_student(g, split, teacher, dc);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) CHECK(a.log[i].total == b.log[i].total);
}

TEST_CASE("student log csv") {
  testing::TempDir dir;
  std::vector<StudentEpoch> log(2);
  log[1].epoch = 2;
  write_student_log(dir / "s.csv", log);
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,total,cls,class_distill,code_distill,train_acc,val_acc");
}
