#include "vqgraph/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace vqg {
inline namespace VQG_PRECISION_NS {

double accuracy(std::span<const int> predictions, std::span<const int> labels, std::span<const std::size_t> mask) {
  if (mask.empty()) throw std::invalid_argument("accuracy: empty mask");
  std::size_t correct = 0;
  for (std::size_t i : mask) {
    if (i >= predictions.size() || i >= labels.size()) throw std::out_of_range("accuracy: mask index out of range");
    correct += predictions[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(mask.size());
}

double accuracy(const Tensor& logits, std::span<const int> labels, std::span<const std::size_t> mask) {
  return accuracy(argmax_rows(logits), labels, mask);
}

double cut_value(const CsrMatrix& adjacency, std::span<const int> predictions, std::size_t num_classes) {
  if (predictions.size() != adjacency.rows) throw std::invalid_argument("cut_value: prediction count != node count");
  for (int p : predictions) {
    if (p < 0 || static_cast<std::size_t>(p) >= num_classes) throw std::invalid_argument("cut_value: class out of range");
  }
  double within = 0.0;
  double degree = 0.0;
  for (std::size_t i = 0; i < adjacency.rows; ++i) {
    auto idx = adjacency.row_indices(i);
    auto val = adjacency.row_values(i);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      degree += val[k];
      if (predictions[idx[k]] == predictions[i]) within += val[k];
    }
  }
  if (degree <= 0.0) throw std::invalid_argument("cut_value: graph has zero total degree");
  return within / degree;
}

std::string Metrics::to_json() const {
  nlohmann::json j = {{"tran", tran}, {"inductive", inductive}};
  if (inductive) {
    j["ind"] = ind;
    j["prod"] = prod;
    j["ind_rate"] = ind_rate;
  }
  if (cut_value >= 0) j["cut_value"] = cut_value;
  if (latency.repetitions > 0) {
    j["latency"] = {{"median_ms", latency.median_ms},
                    {"p95_ms", latency.p95_ms},
                    {"mean_ms", latency.mean_ms},
                    {"repetitions", latency.repetitions}};
  }
  return j.dump(2);
}

double production_accuracy(double tran, double ind, double ind_rate) {
  return (1.0 - ind_rate) * tran + ind_rate * ind;
}

namespace {

std::vector<std::size_t> as_rows(std::span<const NodeId> nodes) { return {nodes.begin(), nodes.end()}; }

}  // namespace

Metrics evaluate_transductive(const Tensor& logits, const Graph& graph, const SplitSpec& split) {
  if (logits.rows() != graph.num_nodes()) throw ShapeError("evaluate: logits rows != node count");
  Metrics m;
  m.tran = accuracy(logits, graph.labels(), as_rows(split.test_nodes()));
  return m;
}

Metrics evaluate_production(const Tensor& logits, const Graph& graph, const SplitSpec& split) {
  if (!split.is_inductive()) throw std::invalid_argument("evaluate_production needs an inductive split");
  Metrics m = evaluate_transductive(logits, graph, split);
  m.inductive = true;
  m.ind = accuracy(logits, graph.labels(), as_rows(split.inductive));
  m.ind_rate = static_cast<double>(split.inductive.size()) /
               static_cast<double>(split.inductive.size() + split.observed_unlabeled.size());
  m.prod = production_accuracy(m.tran, m.ind, m.ind_rate);
  return m;
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  // 32 MiB is the largest mmap threshold glibc accepts on 64-bit targets
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
#endif
}

LatencyStats time_calls(const std::function<void()>& fn, std::size_t repetitions, std::size_t warmup) {
  if (repetitions == 0) throw std::invalid_argument("time_calls: zero repetitions");
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> ms;
  ms.reserve(repetitions);
  for (std::size_t i = 0; i < repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(ms.begin(), ms.end());
  LatencyStats s;
  s.repetitions = repetitions;
  const std::size_t mid = ms.size() / 2;
  s.median_ms = ms.size() % 2 ? ms[mid] : 0.5 * (ms[mid - 1] + ms[mid]);
  s.p95_ms = ms[std::min(ms.size() - 1, static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size()))) - 1)];
  double total = 0.0;
  for (double v : ms) total += v;
  s.mean_ms = total / static_cast<double>(ms.size());
  return s;
}

FetchedBlock fetch_khop_block(const CsrMatrix& normalized, std::span<const NodeId> batch, std::size_t num_layers) {
  if (batch.empty()) throw std::invalid_argument("fetch_khop_block: empty batch");
  // frontiers[0] = batch, frontiers[k] = k-hop closure; every frontier starts
  // with the previous one so output rows stay a prefix
  std::vector<std::vector<NodeId>> frontiers{std::vector<NodeId>(batch.begin(), batch.end())};
  std::vector<std::int32_t> local(normalized.rows, -1);
  for (std::size_t i = 0; i < batch.size(); ++i) local[batch[i]] = static_cast<std::int32_t>(i);
  for (std::size_t hop = 0; hop < num_layers; ++hop) {
    std::vector<NodeId> next = frontiers.back();
    for (NodeId v : frontiers.back()) {
      for (NodeId u : normalized.row_indices(v)) {
        if (local[u] >= 0) continue;
        local[u] = static_cast<std::int32_t>(next.size());
        next.push_back(u);
      }
    }
    frontiers.push_back(std::move(next));
  }
  FetchedBlock block;
  block.input_nodes = frontiers.back();
  // layer l (input-most first) maps frontiers[L-l] -> frontiers[L-l-1]
  for (std::size_t l = 0; l < num_layers; ++l) {
    const auto& dst = frontiers[num_layers - l - 1];
    const auto& src = frontiers[num_layers - l];
    CsrMatrix m;
    m.rows = dst.size();
    m.cols = src.size();
    m.row_ptr.reserve(dst.size() + 1);
    for (NodeId v : dst) {
      auto idx = normalized.row_indices(v);
      auto val = normalized.row_values(v);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        m.col_idx.push_back(static_cast<NodeId>(local[idx[k]]));
        m.values.push_back(val[k]);
      }
      m.row_ptr.push_back(m.col_idx.size());
    }
    block.propagation.push_back(std::move(m));
  }
  return block;
}

namespace {

Tensor gather_features(const Graph& graph, std::span<const NodeId> nodes) {
  Tensor x(nodes.size(), graph.feature_dim());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    auto src = graph.feature_row(nodes[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
  }
  return x;
}

}  // namespace

LatencyStats benchmark_teacher(GnnParams& teacher, const Graph& graph, const CsrMatrix& normalized,
                               std::span<const NodeId> batch, std::size_t repetitions, std::size_t warmup) {
  if (batch.empty()) throw std::invalid_argument("benchmark: empty batch");
  volatile Scalar sink = 0;
  auto run = [&] {
    const FetchedBlock block = fetch_khop_block(normalized, batch, teacher.num_layers());
    std::vector<const CsrMatrix*> ptrs;
    for (const auto& p : block.propagation) ptrs.push_back(&p);
    Tape tape(false);
    std::mt19937_64 rng(0);
    auto out = gnn_forward(tape, ptrs, tape.constant(gather_features(graph, block.input_nodes)), teacher, false, rng);
    sink = sink + out.logits.value()(0, 0);
  };
  return time_calls(run, repetitions, warmup);
}

LatencyStats benchmark_student(MlpParams& student, const Graph& graph, std::span<const NodeId> batch,
                               std::size_t repetitions, std::size_t warmup) {
  if (batch.empty()) throw std::invalid_argument("benchmark: empty batch");
  volatile Scalar sink = 0;
  auto run = [&] {
    Tape tape(false);
    std::mt19937_64 rng(0);
    auto out = mlp_forward(tape, tape.constant(gather_features(graph, batch)), student, false, rng);
    sink = sink + out.logits.value()(0, 0);
  };
  return time_calls(run, repetitions, warmup);
}

void write_benchmark_csv(const std::filesystem::path& path, const std::vector<BenchmarkRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model,layers,batch_size,median_ms,p95_ms,mean_ms,repetitions\n";
  for (const auto& r : rows) {
    out << r.model << ',' << r.layers << ',' << r.batch_size << ',' << r.stats.median_ms << ',' << r.stats.p95_ms
        << ',' << r.stats.mean_ms << ',' << r.stats.repetitions << '\n';
  }
}

std::vector<Neighbor> retrieve_similar_nodes(const Tensor& embeddings, NodeId query, std::size_t k) {
  const std::size_t n = embeddings.rows();
  if (query >= n) throw std::out_of_range("retrieve: query node " + std::to_string(query) + " out of range");
  if (k >= n) throw std::invalid_argument("retrieve: k must be smaller than the node count");
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (Scalar v : embeddings.row(i)) s += static_cast<double>(v) * static_cast<double>(v);
    norms[i] = std::sqrt(s);
  }
  auto q = embeddings.row(query);
  std::vector<Neighbor> all;
  all.reserve(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == query) continue;
    double dot = 0.0;
    auto r = embeddings.row(i);
    for (std::size_t c = 0; c < r.size(); ++c) dot += static_cast<double>(q[c]) * static_cast<double>(r[c]);
    const double denom = norms[query] * norms[i];
    all.push_back({static_cast<NodeId>(i), denom > kLogEpsilon ? dot / denom : 0.0});
  }
  auto before = [](const Neighbor& a, const Neighbor& b) {
    return a.score != b.score ? a.score > b.score : a.node < b.node;
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), before);
  all.resize(k);
  return all;
}

void export_embeddings(const std::filesystem::path& path, const Tensor& embeddings, std::span<const int> codes,
                       std::span<const int> labels) {
  const std::size_t n = embeddings.rows();
  if (labels.size() != n) throw std::invalid_argument("export_embeddings: label count != rows");
  if (!codes.empty() && codes.size() != n) throw std::invalid_argument("export_embeddings: code count != rows");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "node_id\tlabel\tcode_id";
  for (std::size_t c = 0; c < embeddings.cols(); ++c) out << "\tdim_" << c;
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < n; ++i) {
    out << i << '\t' << labels[i] << '\t' << (codes.empty() ? -1 : codes[i]);
    for (Scalar v : embeddings.row(i)) out << '\t' << static_cast<double>(v);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

EmbeddingTable read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": missing header");
  std::size_t dims = static_cast<std::size_t>(std::count(line.begin(), line.end(), '\t'));
  if (dims < 2) throw std::runtime_error(path.string() + ": malformed header");
  dims -= 2;
  EmbeddingTable table;
  std::vector<Scalar> values;
  std::size_t rows = 0;
  for (std::size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t id = 0;
    int label = 0;
    int code = 0;
    if (!(ss >> id >> label >> code)) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed row");
    table.labels.push_back(label);
    table.codes.push_back(code);
    for (std::size_t c = 0; c < dims; ++c) {
      double v = 0;
      if (!(ss >> v)) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": missing value");
      values.push_back(static_cast<Scalar>(v));
    }
    ++rows;
  }
  table.embeddings = Tensor(rows, dims, std::move(values));
  return table;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
