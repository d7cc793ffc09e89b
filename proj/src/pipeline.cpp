#include "vqgraph/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "vqgraph/synthetic.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

namespace fs = std::filesystem;
using nlohmann::json;

Graph load_dataset(const std::string& data) {
  if (data.empty()) throw ConfigError("no dataset given (set \"data\" or --override data=<bundle dir>)");
  const std::string prefix = "synthetic:";
  if (data.rfind(prefix, 0) == 0) {
    try {
      return make_synthetic_graph(synthetic_preset(data.substr(prefix.size())), 0);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  fs::path path(data);
  if (!fs::exists(path)) {
    if (const char* root = std::getenv("VQG_DATA_DIR"); root != nullptr && fs::exists(fs::path(root) / data)) {
      path = fs::path(root) / data;
    }
  }
  if (!fs::exists(path)) throw std::runtime_error("dataset bundle '" + data + "' not found (also checked $VQG_DATA_DIR)");
  return load_graph(path);
}

namespace {

struct Run {
  const RunConfig& cfg;
  std::ostream& log;
  std::vector<std::string> artifacts;

  void note(const fs::path& p) { artifacts.push_back(fs::relative(p, cfg.out).generic_string()); }
};

fs::path seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  fs::path dir = cfg.out / ("seed_" + std::to_string(seed));
  fs::create_directories(dir);
  return dir;
}

std::string expand(const std::string& pattern, std::uint64_t seed) {
  std::string s = pattern;
  const std::string key = "{seed}";
  for (auto pos = s.find(key); pos != std::string::npos; pos = s.find(key, pos)) s.replace(pos, key.size(), std::to_string(seed));
  return s;
}

fs::path tokenizer_path(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.tokenizer_checkpoint.empty() ? seed_dir(cfg, seed) / "tokenizer" : fs::path(expand(cfg.tokenizer_checkpoint, seed));
}

fs::path student_path(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.student_checkpoint.empty() ? seed_dir(cfg, seed) / "student" : fs::path(expand(cfg.student_checkpoint, seed));
}

bool has_checkpoint(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

SplitSpec make_split(const RunConfig& cfg, const Graph& graph, std::uint64_t seed) {
  LabelBudget budget = cfg.split.budget;
  const auto n = static_cast<double>(graph.num_nodes());
  if (cfg.split.labeled_fraction > 0) {
    budget.labeled_per_class = 0;
    budget.labeled_total = static_cast<std::size_t>(std::llround(cfg.split.labeled_fraction * n));
  }
  if (cfg.split.validation_fraction > 0) {
    budget.validation_per_class = 0;
    budget.validation_total = static_cast<std::size_t>(std::llround(cfg.split.validation_fraction * n));
  }
  if (cfg.split.setting == "inductive") return make_inductive_split(graph, seed, budget, cfg.split.ind_fraction);
  return make_transductive_split(graph, seed, budget);
}

SplitSpec split_for(Run& run, const Graph& graph, std::uint64_t seed) {
  const fs::path path = seed_dir(run.cfg, seed) / "split.json";
  SplitSpec split = make_split(run.cfg, graph, seed);
  save_split(split, path);
  run.note(path);
  return split;
}

json metrics_json(const Metrics& m) { return json::parse(m.to_json()); }

Metrics score(const Tensor& logits, const Graph& graph, const SplitSpec& split) {
  Metrics m = split.is_inductive() ? evaluate_production(logits, graph, split) : evaluate_transductive(logits, graph, split);
  if (graph.num_edges() > 0) m.cut_value = cut_value(graph.adjacency(), argmax_rows(logits), graph.num_classes());
  return m;
}

Metrics score_teacher(TokenizerModel& teacher, const Graph& graph, const SplitSpec& split) {
  return score(teacher_infer(teacher, graph).logits, graph, split);
}

Metrics score_student(MlpParams& student, const Graph& graph, const SplitSpec& split) {
  return score(mlp_infer(Tensor::from_floats(graph.num_nodes(), graph.feature_dim(), graph.features()), student).logits,
               graph, split);
}

TokenizerConfig tokenizer_config(const RunConfig& cfg, std::uint64_t seed) {
  TokenizerConfig t = cfg.tokenizer;
  t.seed = seed;
  return t;
}

DistillConfig distill_config(const RunConfig& cfg, std::uint64_t seed) {
  DistillConfig d = cfg.distill;
  d.seed = seed;
  return d;
}

TokenizerModel train_and_save_tokenizer(Run& run, const Graph& graph, const SplitSpec& split, const TokenizerConfig& tc,
                                        const fs::path& dir, const std::string& what) {
  const auto t0 = std::chrono::steady_clock::now();
  TokenizerResult r = train_tokenizer(graph, split, tc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.log << "  " << what << ": best epoch " << r.best_epoch << ", val acc " << std::fixed << std::setprecision(4)
          << r.best_val_acc << " (" << std::setprecision(1) << secs << " s" << (r.mini_batch ? ", sampled blocks" : "")
          << ")\n";
  save_tokenizer(dir, r.model);
  run.note(dir / "manifest.json");
  const fs::path log_path = dir.parent_path() / (dir.filename().string() + "_log.csv");
  write_tokenizer_log(log_path, r.log);
  run.note(log_path);
  return std::move(r.model);
}

TokenizerModel obtain_tokenizer(Run& run, const Graph& graph, const SplitSpec& split, std::uint64_t seed, bool allow_train) {
  const fs::path dir = tokenizer_path(run.cfg, seed);
  if (has_checkpoint(dir) && (run.cfg.eval.reuse_checkpoints || !allow_train)) {
    run.log << "  tokenizer: loaded " << dir.string() << "\n";
    return load_tokenizer(dir);
  }
  if (!allow_train) {
    throw std::runtime_error(run.cfg.task + " requires a tokenizer checkpoint; none found at " + dir.string() +
                             " (run --task train-tokenizer first)");
  }
  return train_and_save_tokenizer(run, graph, split, tokenizer_config(run.cfg, seed), dir, "tokenizer");
}

MlpParams train_and_save_student(Run& run, const Graph& graph, const SplitSpec& split, TokenizerModel& teacher,
                                 const DistillConfig& dc, const fs::path& dir, const std::string& what) {
  const auto t0 = std::chrono::steady_clock::now();
  StudentResult r = train_student(graph, split, teacher, dc);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  run.log << "  " << what << ": best epoch " << r.best_epoch << ", val acc " << std::fixed << std::setprecision(4)
          << r.best_val_acc << " (" << std::setprecision(1) << secs << " s)\n";
  save_mlp(dir, r.model);
  run.note(dir / "manifest.json");
  const fs::path log_path = dir.parent_path() / (dir.filename().string() + "_log.csv");
  write_student_log(log_path, r.log);
  run.note(log_path);
  return std::move(r.model);
}

void write_json(Run& run, const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
  run.note(path);
}

// Mean and population standard deviation per metric across seeds.
class Summary {
 public:
  void add(const std::string& key, double value) {
    if (!values_.contains(key)) order_.push_back(key);
    values_[key].push_back(value);
  }
  void add_metrics(const std::string& prefix, const Metrics& m) {
    add(prefix + ".tran", m.tran);
    if (m.inductive) {
      add(prefix + ".ind", m.ind);
      add(prefix + ".prod", m.prod);
    }
    if (m.cut_value >= 0) add(prefix + ".cut_value", m.cut_value);
  }
  json to_json() const {
    json j = json::object();
    for (const auto& key : order_) {
      auto [mean, sd] = stats(values_.at(key));
      j[key] = {{"mean", mean}, {"std", sd}, {"values", values_.at(key)}};
    }
    return j;
  }
  void print(std::ostream& os) const {
    for (const auto& key : order_) {
      auto [mean, sd] = stats(values_.at(key));
      const bool pct = key.find("cut_value") == std::string::npos && key.find("_ms") == std::string::npos;
      const double s = pct ? 100.0 : 1.0;
      os << "  " << std::left << std::setw(28) << key << std::right << std::fixed << std::setprecision(pct ? 2 : 4)
         << mean * s << " ± " << sd * s << "  (n=" << values_.at(key).size() << ")\n";
    }
  }

 private:
  static std::pair<double, double> stats(const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size()))};
  }
  std::vector<std::string> order_;
  std::map<std::string, std::vector<double>> values_;
};

void finish_summary(Run& run, const Summary& summary, const std::string& title) {
  run.log << title << " over " << run.cfg.seeds.size() << " seed(s):\n";
  summary.print(run.log);
  write_json(run, run.cfg.out / "summary.json", summary.to_json());
}

void task_train_tokenizer(Run& run, const Graph& graph) {
  Summary summary;
  for (std::uint64_t seed : run.cfg.seeds) {
    run.log << "seed " << seed << "\n";
    const SplitSpec split = split_for(run, graph, seed);
    TokenizerModel teacher = train_and_save_tokenizer(run, graph, split, tokenizer_config(run.cfg, seed),
                                                      tokenizer_path(run.cfg, seed), "tokenizer");
    const Metrics m = score_teacher(teacher, graph, split);
    summary.add_metrics("teacher", m);
    json j = {{"teacher", metrics_json(m)}};
    if (teacher.use_vq) {
      const TeacherOutputs out = teacher_infer(teacher, graph);
      const CodebookUsage u = codebook_usage(out.codes, graph.labels(), graph.num_classes(), run.cfg.eval.overlap);
      j["codebook"] = {{"distinct_codes", u.distinct_codes}, {"entries_per_class", u.entries}};
      summary.add("teacher.distinct_codes", static_cast<double>(u.distinct_codes));
    }
    write_json(run, seed_dir(run.cfg, seed) / "metrics.json", j);
  }
  finish_summary(run, summary, "train-tokenizer");
}

void task_distill(Run& run, const Graph& graph, bool allow_teacher_training) {
  Summary summary;
  for (std::uint64_t seed : run.cfg.seeds) {
    run.log << "seed " << seed << "\n";
    const SplitSpec split = split_for(run, graph, seed);
    TokenizerModel teacher = obtain_tokenizer(run, graph, split, seed, allow_teacher_training);
    const fs::path sdir = student_path(run.cfg, seed);
    MlpParams student;
    if (allow_teacher_training && run.cfg.eval.reuse_checkpoints && has_checkpoint(sdir)) {
      run.log << "  student: loaded " << sdir.string() << "\n";
      student = load_mlp(sdir);
    } else {
      student = train_and_save_student(run, graph, split, teacher, distill_config(run.cfg, seed), sdir, "student");
    }
    const Metrics mt = score_teacher(teacher, graph, split);
    const Metrics ms = score_student(student, graph, split);
    summary.add_metrics("teacher", mt);
    summary.add_metrics("student", ms);
    write_json(run, seed_dir(run.cfg, seed) / "metrics.json",
               {{"teacher", metrics_json(mt)}, {"student", metrics_json(ms)}});
  }
  finish_summary(run, summary, run.cfg.task);
}

void task_tokenize(Run& run, const Graph& graph) {
  for (std::uint64_t seed : run.cfg.seeds) {
    const fs::path dir = tokenizer_path(run.cfg, seed);
    if (!has_checkpoint(dir)) {
      throw std::runtime_error("tokenize requires a tokenizer checkpoint; none found at " + dir.string() +
                               " (run --task train-tokenizer first)");
    }
    TokenizerModel teacher = load_tokenizer(dir);
    if (!teacher.use_vq) throw std::runtime_error("tokenize: checkpoint at " + dir.string() + " has no codebook");
    const TeacherOutputs out = teacher_infer(teacher, graph);
    const fs::path sd = seed_dir(run.cfg, seed);
    write_code_assignments(sd / "codes.tsv", out.codes);
    run.note(sd / "codes.tsv");
    export_embeddings(sd / "teacher_embeddings.tsv", out.embeddings, out.codes, graph.labels());
    run.note(sd / "teacher_embeddings.tsv");
    const CodebookUsage u = codebook_usage(out.codes, graph.labels(), graph.num_classes(), run.cfg.eval.overlap);
    json overlap = json::array();
    for (std::size_t a = 0; a < u.num_classes; ++a) {
      json row = json::array();
      for (std::size_t b = 0; b < u.num_classes; ++b) row.push_back(u.overlap_at(a, b));
      overlap.push_back(row);
    }
    write_json(run, sd / "codebook_usage.json",
               {{"distinct_codes", u.distinct_codes},
                {"codebook_size", teacher.codebook.size()},
                {"entries_per_class", u.entries},
                {"overlap_mode", run.cfg.eval.overlap == OverlapMode::jaccard ? "jaccard" : "smaller"},
                {"overlap_percent", overlap}});
    run.log << "seed " << seed << ": " << u.distinct_codes << " of " << teacher.codebook.size() << " codes in use\n";
    for (std::size_t c = 0; c < u.num_classes; ++c) run.log << "  class " << c << ": " << u.entries[c] << " codes\n";
  }
}

void task_retrieve(Run& run, const Graph& graph) {
  const std::uint64_t seed = run.cfg.seeds.front();
  const fs::path dir = student_path(run.cfg, seed);
  if (!has_checkpoint(dir)) {
    throw std::runtime_error("retrieve requires a student checkpoint; none found at " + dir.string() +
                             " (run --task distill first)");
  }
  MlpParams student = load_mlp(dir);
  const Inference inf = mlp_infer(Tensor::from_floats(graph.num_nodes(), graph.feature_dim(), graph.features()), student);
  const auto hits = retrieve_similar_nodes(inf.embeddings, run.cfg.eval.query, run.cfg.eval.k);
  const fs::path path = seed_dir(run.cfg, seed) / ("retrieval_" + std::to_string(run.cfg.eval.query) + ".tsv");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank\tnode_id\tlabel\tcosine\n";
  out.precision(9);
  run.log << "query " << run.cfg.eval.query << " (label " << graph.labels()[run.cfg.eval.query] << ")\n";
  for (std::size_t i = 0; i < hits.size(); ++i) {
    out << i + 1 << '\t' << hits[i].node << '\t' << graph.labels()[hits[i].node] << '\t' << hits[i].score << '\n';
    run.log << "  " << i + 1 << ". node " << hits[i].node << " label " << graph.labels()[hits[i].node] << " cos "
            << std::fixed << std::setprecision(4) << hits[i].score << "\n";
  }
  run.note(path);
}

void task_benchmark(Run& run, const Graph& graph) {
  const std::uint64_t seed = run.cfg.seeds.front();
  std::vector<NodeId> nodes(graph.num_nodes());
  std::iota(nodes.begin(), nodes.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(nodes.begin(), nodes.end(), rng);
  nodes.resize(std::min(nodes.size(), run.cfg.eval.bench_batch));
  std::sort(nodes.begin(), nodes.end());

  std::vector<BenchmarkRow> rows;
  const CsrMatrix norm = normalize_adjacency(graph, run.cfg.tokenizer.aggregation);
  for (std::size_t layers : run.cfg.eval.bench_layers) {
    StackDims dims = run.cfg.tokenizer.encoder;
    dims.input_dim = graph.feature_dim();
    dims.num_classes = graph.num_classes();
    dims.num_layers = layers;
    GnnParams teacher = init_gnn(dims, run.cfg.tokenizer.aggregation, seed);
    rows.push_back({"teacher-L" + std::to_string(layers), layers, nodes.size(),
                    benchmark_teacher(teacher, graph, norm, nodes, run.cfg.eval.bench_repetitions, run.cfg.eval.bench_warmup)});
  }
  MlpParams student;
  const fs::path sdir = student_path(run.cfg, seed);
  if (has_checkpoint(sdir)) {
    student = load_mlp(sdir);
  } else {
    StackDims dims = run.cfg.distill.student;
    dims.input_dim = graph.feature_dim();
    dims.num_classes = graph.num_classes();
    student = init_mlp(dims, seed);
  }
  rows.push_back({"student", student.num_layers(), nodes.size(),
                  benchmark_student(student, graph, nodes, run.cfg.eval.bench_repetitions, run.cfg.eval.bench_warmup)});
  const fs::path path = run.cfg.out / "benchmark.csv";
  write_benchmark_csv(path, rows);
  run.note(path);
  const double student_ms = rows.back().stats.median_ms;
  for (const auto& r : rows) {
    run.log << "  " << std::left << std::setw(12) << r.model << std::right << " median " << std::fixed
            << std::setprecision(3) << r.stats.median_ms << " ms  p95 " << r.stats.p95_ms << " ms";
    if (r.model != "student" && student_ms > 0) run.log << "  (" << std::setprecision(1) << r.stats.median_ms / student_ms << "x student)";
    run.log << "\n";
  }
}

void task_noise_sweep(Run& run, const Graph& graph) {
  Summary summary;
  const fs::path csv = run.cfg.out / "noise_sweep.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "seed,alpha,teacher,student\n";
  for (std::uint64_t seed : run.cfg.seeds) {
    const SplitSpec split = split_for(run, graph, seed);
    for (double alpha : run.cfg.eval.noise_levels) {
      run.log << "seed " << seed << " alpha " << alpha << "\n";
      const Graph noisy = graph.with_features(add_feature_noise(graph.features(), alpha, seed));
      const fs::path dir = seed_dir(run.cfg, seed) / ("noise_" + std::to_string(alpha));
      fs::create_directories(dir);
      TokenizerModel teacher =
          train_and_save_tokenizer(run, noisy, split, tokenizer_config(run.cfg, seed), dir / "tokenizer", "tokenizer");
      MlpParams student =
          train_and_save_student(run, noisy, split, teacher, distill_config(run.cfg, seed), dir / "student", "student");
      const Metrics mt = score_teacher(teacher, noisy, split);
      const Metrics ms = score_student(student, noisy, split);
      const double ta = mt.inductive ? mt.prod : mt.tran;
      const double sa = ms.inductive ? ms.prod : ms.tran;
      out << seed << ',' << alpha << ',' << ta << ',' << sa << '\n';
      std::ostringstream key;
      key << std::fixed << std::setprecision(1) << alpha;
      summary.add("teacher@" + key.str(), ta);
      summary.add("student@" + key.str(), sa);
    }
  }
  run.note(csv);
  finish_summary(run, summary, "noise-sweep");
}

void task_ablate(Run& run, const Graph& graph) {
  Summary summary;
  const fs::path csv = run.cfg.out / "ablation.csv";
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv.string());
  out << "seed,mode,tran,ind,prod\n";
  const auto& modes = run.cfg.eval.ablate_modes;
  const bool need_plain = std::find(modes.begin(), modes.end(), "class-only") != modes.end();
  const bool need_vq = modes.size() > (need_plain ? 1u : 0u);
  for (std::uint64_t seed : run.cfg.seeds) {
    run.log << "seed " << seed << "\n";
    const SplitSpec split = split_for(run, graph, seed);
    const fs::path sd = seed_dir(run.cfg, seed);
    TokenizerModel vq_teacher;
    TokenizerModel plain_teacher;
    if (need_vq) vq_teacher = obtain_tokenizer(run, graph, split, seed, true);
    if (need_plain) {
      TokenizerConfig tc = tokenizer_config(run.cfg, seed);
      tc.use_vq = false;
      const fs::path dir = sd / "teacher_plain";
      if (run.cfg.eval.reuse_checkpoints && has_checkpoint(dir)) {
        plain_teacher = load_tokenizer(dir);
      } else {
        plain_teacher = train_and_save_tokenizer(run, graph, split, tc, dir, "plain teacher");
      }
    }
    for (const auto& mode : modes) {
      DistillConfig dc = distill_config(run.cfg, seed);
      if (mode != "vqgraph") dc.beta = 0.0;
      TokenizerModel& teacher = mode == "class-only" ? plain_teacher : vq_teacher;
      MlpParams student = train_and_save_student(run, graph, split, teacher, dc, sd / ("student_" + mode), mode);
      const Metrics m = score_student(student, graph, split);
      out << seed << ',' << mode << ',' << m.tran << ',' << m.ind << ',' << m.prod << '\n';
      summary.add_metrics(mode, m);
    }
  }
  run.note(csv);
  finish_summary(run, summary, "ablate");
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& log) {
  fs::create_directories(cfg.out);
  const auto t0 = std::chrono::steady_clock::now();
  Run r{cfg, log, {}};
  const Graph graph = load_dataset(cfg.data);
  log << "dataset " << (graph.name().empty() ? cfg.data : graph.name()) << ": " << graph.num_nodes() << " nodes, "
      << graph.num_edges() << " edges, " << graph.feature_dim() << " features, " << graph.num_classes()
      << " classes\n";
  if (cfg.task == "retrieve" && cfg.eval.query >= graph.num_nodes()) {
    throw ConfigError("eval.query " + std::to_string(cfg.eval.query) + " is not a node id");
  }

  if (cfg.task == "train-tokenizer") {
    task_train_tokenizer(r, graph);
  } else if (cfg.task == "distill") {
    task_distill(r, graph, false);
  } else if (cfg.task == "evaluate") {
    task_distill(r, graph, true);
  } else if (cfg.task == "tokenize") {
    task_tokenize(r, graph);
  } else if (cfg.task == "retrieve") {
    task_retrieve(r, graph);
  } else if (cfg.task == "benchmark") {
    task_benchmark(r, graph);
  } else if (cfg.task == "noise-sweep") {
    task_noise_sweep(r, graph);
  } else if (cfg.task == "ablate") {
    task_ablate(r, graph);
  } else {
    throw ConfigError("unknown task '" + cfg.task + "'");
  }

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  json manifest = {{"format", "vqgraph-run/1"},
                   {"task", cfg.task},
                   {"seeds", cfg.seeds},
                   {"precision", scalar_name()},
                   {"elapsed_seconds", secs},
                   {"config", to_json(cfg)},
                   {"artifacts", r.artifacts}};
  std::ofstream out(cfg.out / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest under " + cfg.out.string());
  out << manifest.dump(2) << '\n';
  return 0;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
