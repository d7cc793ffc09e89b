#include "vqgraph/graph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace vqg {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// CsrMatrix
// ---------------------------------------------------------------------------

double CsrMatrix::at(std::size_t r, std::size_t c) const {
  auto idx = row_indices(r);
  auto it = std::lower_bound(idx.begin(), idx.end(), static_cast<NodeId>(c));
  if (it == idx.end() || *it != c) return 0.0;
  return values[row_ptr[r] + static_cast<std::size_t>(it - idx.begin())];
}

CsrMatrix CsrMatrix::transposed() const {
  CsrMatrix t;
  t.rows = cols;
  t.cols = rows;
  t.row_ptr.assign(cols + 1, 0);
  for (NodeId c : col_idx) ++t.row_ptr[c + 1];
  std::partial_sum(t.row_ptr.begin(), t.row_ptr.end(), t.row_ptr.begin());
  t.col_idx.resize(nnz());
  t.values.resize(nnz());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = row_ptr[r]; k < row_ptr[r + 1]; ++k) {
      std::size_t dst = cursor[col_idx[k]]++;
      t.col_idx[dst] = static_cast<NodeId>(r);
      t.values[dst] = values[k];
    }
  }
  return t;
}

bool CsrMatrix::is_symmetric(double tol) const {
  if (rows != cols) return false;
  for (std::size_t r = 0; r < rows; ++r) {
    auto idx = row_indices(r);
    auto val = row_values(r);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (std::abs(at(idx[k], r) - val[k]) > tol) return false;
    }
  }
  return true;
}

CsrMatrix CsrMatrix::identity(std::size_t n) {
  CsrMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.resize(n + 1);
  std::iota(m.row_ptr.begin(), m.row_ptr.end(), std::size_t{0});
  m.col_idx.resize(n);
  std::iota(m.col_idx.begin(), m.col_idx.end(), NodeId{0});
  m.values.assign(n, 1.0);
  return m;
}

CsrMatrix CsrMatrix::from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::tuple<NodeId, NodeId, double>> triplets) {
  std::sort(triplets.begin(), triplets.end(), [](const auto& a, const auto& b) {
    return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
  });
  CsrMatrix m;
  m.rows = rows;
  m.cols = cols;
  m.row_ptr.assign(rows + 1, 0);
  for (std::size_t k = 0; k < triplets.size(); ++k) {
    const auto& [r, c, v] = triplets[k];
    if (r >= rows || c >= cols) throw GraphError("triplet index out of range");
    if (k > 0 && std::get<0>(triplets[k - 1]) == r && std::get<1>(triplets[k - 1]) == c) {
      m.values.back() += v;
      continue;
    }
    m.col_idx.push_back(c);
    m.values.push_back(v);
    ++m.row_ptr[r + 1];
  }
  std::partial_sum(m.row_ptr.begin(), m.row_ptr.end(), m.row_ptr.begin());
  return m;
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

namespace {

CsrMatrix symmetric_pattern(std::size_t n, std::span<const Edge> edges) {
  std::vector<std::vector<NodeId>> adj(n);
  for (auto [u, v] : edges) {
    if (u >= n || v >= n) {
      throw GraphError("edge (" + std::to_string(u) + ", " + std::to_string(v) +
                       ") references a node outside [0, " + std::to_string(n) + ")");
    }
    if (u == v) continue;
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  CsrMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.assign(n + 1, 0);
  for (std::size_t v = 0; v < n; ++v) {
    auto& list = adj[v];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    m.col_idx.insert(m.col_idx.end(), list.begin(), list.end());
    m.row_ptr[v + 1] = m.col_idx.size();
  }
  m.values.assign(m.col_idx.size(), 1.0);
  return m;
}

}  // namespace

Graph Graph::build(std::size_t num_nodes, std::span<const Edge> edges, std::vector<float> features,
                   std::size_t feature_dim, std::vector<int> labels, std::size_t num_classes,
                   std::string name) {
  if (features.size() != num_nodes * feature_dim) {
    throw GraphError("feature matrix has " + std::to_string(features.size()) + " values, expected " +
                     std::to_string(num_nodes) + " x " + std::to_string(feature_dim));
  }
  if (labels.size() != num_nodes) {
    throw GraphError("label count " + std::to_string(labels.size()) + " != node count " +
                     std::to_string(num_nodes));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
      throw GraphError("label of node " + std::to_string(i) + " (" + std::to_string(labels[i]) +
                       ") outside [0, " + std::to_string(num_classes) + ")");
    }
  }
  Graph g;
  g.num_nodes_ = num_nodes;
  g.feature_dim_ = feature_dim;
  g.num_classes_ = num_classes;
  g.name_ = std::move(name);
  g.adjacency_ = symmetric_pattern(num_nodes, edges);
  g.features_ = std::move(features);
  g.labels_ = std::move(labels);
  return g;
}

bool Graph::has_edge(NodeId u, NodeId v) const {
  auto nb = neighbors(u);
  return std::binary_search(nb.begin(), nb.end(), v);
}

std::vector<Edge> Graph::edge_list() const {
  std::vector<Edge> out;
  out.reserve(num_edges());
  for (NodeId u = 0; u < num_nodes_; ++u) {
    for (NodeId v : neighbors(u)) {
      if (u < v) out.emplace_back(u, v);
    }
  }
  return out;
}

Graph Graph::with_edges(std::span<const Edge> edges) const {
  Graph g = *this;
  g.adjacency_ = symmetric_pattern(num_nodes_, edges);
  return g;
}

Graph Graph::with_features(std::vector<float> features) const {
  if (features.size() != features_.size()) throw GraphError("replacement features have the wrong shape");
  Graph g = *this;
  g.features_ = std::move(features);
  return g;
}

Graph induced_subgraph(const Graph& graph, std::span<const NodeId> nodes) {
  std::unordered_map<NodeId, NodeId> local;
  local.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i] >= graph.num_nodes()) throw GraphError("subgraph node id out of range");
    if (!local.emplace(nodes[i], static_cast<NodeId>(i)).second) {
      throw GraphError("duplicate node in subgraph selection");
    }
  }
  std::vector<Edge> edges;
  std::vector<float> features;
  features.reserve(nodes.size() * graph.feature_dim());
  std::vector<int> labels;
  labels.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (NodeId u : graph.neighbors(nodes[i])) {
      auto it = local.find(u);
      if (it != local.end() && it->second > i) edges.emplace_back(static_cast<NodeId>(i), it->second);
    }
    auto row = graph.feature_row(nodes[i]);
    features.insert(features.end(), row.begin(), row.end());
    labels.push_back(graph.labels()[nodes[i]]);
  }
  return Graph::build(nodes.size(), edges, std::move(features), graph.feature_dim(), std::move(labels),
                      graph.num_classes(), graph.name());
}

// ---------------------------------------------------------------------------
// Bundle IO
// ---------------------------------------------------------------------------

namespace {

std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::ifstream open_input(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw GraphError("missing file: " + path.string());
  return in;
}

bool blank(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

std::vector<float> read_features(const fs::path& path, std::size_t& n, std::size_t& d) {
  auto in = open_input(path, std::ios::binary);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8) throw GraphError(path.string() + ": truncated header");
  n = read_u32_le(bytes.data());
  d = read_u32_le(bytes.data() + 4);
  const std::size_t expected = 8 + n * d * 4;
  if (bytes.size() != expected) {
    throw GraphError(path.string() + ": payload holds " + std::to_string((bytes.size() - 8) / 4) +
                     " floats, header says " + std::to_string(n) + " x " + std::to_string(d));
  }
  std::vector<float> out(n * d);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = read_u32_le(bytes.data() + 8 + 4 * i);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

}  // namespace

Graph load_graph(const fs::path& bundle_dir) {
  const fs::path meta_path = bundle_dir / "meta.json";
  json meta;
  {
    auto in = open_input(meta_path);
    try {
      meta = json::parse(in);
    } catch (const json::parse_error& e) {
      throw GraphError(meta_path.string() + ": " + e.what());
    }
  }
  if (!meta.contains("num_classes") || !meta["num_classes"].is_number_integer()) {
    throw GraphError(meta_path.string() + ": missing integer field num_classes");
  }
  const auto num_classes = meta["num_classes"].get<std::size_t>();
  std::string name = meta.value("name", bundle_dir.filename().string());

  std::size_t n = 0, d = 0;
  auto features = read_features(bundle_dir / "features.bin", n, d);

  std::vector<int> labels;
  {
    const fs::path path = bundle_dir / "labels.tsv";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (blank(line)) continue;
      std::istringstream ss(line);
      long long value = 0;
      std::string rest;
      if (!(ss >> value) || (ss >> rest)) {
        throw GraphError(path.string() + ":" + std::to_string(line_no) + ": malformed label line");
      }
      if (value < 0 || static_cast<std::size_t>(value) >= num_classes) {
        throw GraphError(path.string() + ":" + std::to_string(line_no) + ": label " + std::to_string(value) +
                         " outside [0, " + std::to_string(num_classes) + ")");
      }
      labels.push_back(static_cast<int>(value));
    }
  }
  if (labels.size() != n) {
    throw GraphError("features.bin has " + std::to_string(n) + " rows but labels.tsv has " +
                     std::to_string(labels.size()) + " labels");
  }

  std::vector<Edge> edges;
  {
    const fs::path path = bundle_dir / "edges.tsv";
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (blank(line)) continue;
      std::istringstream ss(line);
      long long u = -1, v = -1;
      std::string rest;
      if (!(ss >> u >> v) || (ss >> rest) || u < 0 || v < 0) {
        throw GraphError(path.string() + ":" + std::to_string(line_no) + ": malformed edge line");
      }
      if (static_cast<std::size_t>(u) >= n || static_cast<std::size_t>(v) >= n) {
        throw GraphError(path.string() + ":" + std::to_string(line_no) + ": node id out of range [0, " +
                         std::to_string(n) + ")");
      }
      edges.emplace_back(static_cast<NodeId>(u), static_cast<NodeId>(v));
    }
  }
  return Graph::build(n, edges, std::move(features), d, std::move(labels), num_classes, std::move(name));
}

void save_graph(const Graph& graph, const fs::path& bundle_dir) {
  fs::create_directories(bundle_dir);
  {
    std::ofstream out(bundle_dir / "edges.tsv");
    for (auto [u, v] : graph.edge_list()) out << u << '\t' << v << '\n';
  }
  {
    std::ofstream out(bundle_dir / "features.bin", std::ios::binary);
    write_u32_le(out, static_cast<std::uint32_t>(graph.num_nodes()));
    write_u32_le(out, static_cast<std::uint32_t>(graph.feature_dim()));
    for (float f : graph.features()) write_u32_le(out, std::bit_cast<std::uint32_t>(f));
  }
  {
    std::ofstream out(bundle_dir / "labels.tsv");
    for (int y : graph.labels()) out << y << '\n';
  }
  {
    std::ofstream out(bundle_dir / "meta.json");
    out << json{{"num_classes", graph.num_classes()}, {"name", graph.name()}}.dump(2) << '\n';
  }
  if (!fs::exists(bundle_dir / "meta.json")) throw GraphError("could not write bundle to " + bundle_dir.string());
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

Aggregation parse_aggregation(const std::string& text) {
  if (text == "gcn_sym" || text == "gcn") return Aggregation::gcn_sym;
  if (text == "mean") return Aggregation::mean;
  throw std::invalid_argument("unknown aggregation '" + text + "'");
}

std::string to_string(Aggregation mode) { return mode == Aggregation::gcn_sym ? "gcn_sym" : "mean"; }

CsrMatrix normalize_adjacency(const Graph& graph, Aggregation mode) {
  const std::size_t n = graph.num_nodes();
  CsrMatrix m;
  m.rows = m.cols = n;
  m.row_ptr.assign(n + 1, 0);
  m.col_idx.reserve(graph.adjacency().nnz() + n);
  m.values.reserve(graph.adjacency().nnz() + n);
  std::vector<double> inv_sqrt(n);
  for (NodeId v = 0; v < n; ++v) inv_sqrt[v] = 1.0 / std::sqrt(static_cast<double>(graph.degree(v) + 1));
  for (NodeId v = 0; v < n; ++v) {
    const double self_deg = static_cast<double>(graph.degree(v) + 1);
    bool self_done = false;
    auto emit = [&](NodeId u) {
      m.col_idx.push_back(u);
      m.values.push_back(mode == Aggregation::mean ? 1.0 / self_deg : inv_sqrt[v] * inv_sqrt[u]);
    };
    for (NodeId u : graph.neighbors(v)) {
      if (!self_done && u > v) {
        emit(v);
        self_done = true;
      }
      emit(u);
    }
    if (!self_done) emit(v);
    m.row_ptr[v + 1] = m.col_idx.size();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

std::vector<NodeId> SplitSpec::test_nodes() const {
  std::unordered_set<NodeId> val(validation.begin(), validation.end());
  std::vector<NodeId> out;
  for (NodeId v : observed_unlabeled) {
    if (!val.count(v)) out.push_back(v);
  }
  return out;
}

std::vector<NodeId> SplitSpec::observed_nodes() const {
  std::vector<NodeId> out(labeled);
  out.insert(out.end(), observed_unlabeled.begin(), observed_unlabeled.end());
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

// Draws `per_class` nodes of each class (or `total` nodes overall when
// per_class is zero) from `pool`, removing them from the pool.
std::vector<NodeId> draw_nodes(const Graph& graph, std::vector<NodeId>& pool, std::size_t per_class,
                               std::size_t total, std::mt19937_64& rng, const char* what) {
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<NodeId> picked;
  std::vector<char> taken(pool.size(), 0);
  if (per_class > 0) {
    std::vector<std::size_t> count(graph.num_classes(), 0);
    for (std::size_t i = 0; i < pool.size(); ++i) {
      auto c = static_cast<std::size_t>(graph.labels()[pool[i]]);
      if (count[c] < per_class) {
        ++count[c];
        taken[i] = 1;
        picked.push_back(pool[i]);
      }
    }
    for (std::size_t c = 0; c < count.size(); ++c) {
      if (count[c] < per_class) {
        throw GraphError(std::string("class ") + std::to_string(c) + " has only " + std::to_string(count[c]) +
                         " nodes available for the " + what + " set, " + std::to_string(per_class) + " requested");
      }
    }
  } else {
    if (total > pool.size()) {
      throw GraphError(std::string(what) + " count " + std::to_string(total) + " exceeds the " +
                       std::to_string(pool.size()) + " available nodes");
    }
    for (std::size_t i = 0; i < total; ++i) {
      taken[i] = 1;
      picked.push_back(pool[i]);
    }
  }
  std::vector<NodeId> rest;
  rest.reserve(pool.size() - picked.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!taken[i]) rest.push_back(pool[i]);
  }
  pool = std::move(rest);
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace

SplitSpec make_transductive_split(const Graph& graph, std::uint64_t seed, const LabelBudget& budget) {
  std::mt19937_64 rng(seed);
  std::vector<NodeId> pool(graph.num_nodes());
  std::iota(pool.begin(), pool.end(), NodeId{0});
  SplitSpec split;
  split.seed = seed;
  split.labeled = draw_nodes(graph, pool, budget.labeled_per_class, budget.labeled_total, rng, "labeled");
  std::vector<NodeId> unlabeled = pool;
  split.validation =
      draw_nodes(graph, pool, budget.validation_per_class, budget.validation_total, rng, "validation");
  std::sort(unlabeled.begin(), unlabeled.end());
  split.observed_unlabeled = std::move(unlabeled);
  split.train_edges = graph.edge_list();
  return split;
}

SplitSpec make_inductive_split(const Graph& graph, std::uint64_t seed, const LabelBudget& budget,
                               double ind_fraction) {
  if (!(ind_fraction > 0.0 && ind_fraction < 1.0)) {
    throw GraphError("inductive fraction must lie in (0, 1), got " + std::to_string(ind_fraction));
  }
  std::mt19937_64 rng(seed);
  std::vector<NodeId> pool(graph.num_nodes());
  std::iota(pool.begin(), pool.end(), NodeId{0});
  SplitSpec split;
  split.seed = seed;
  split.labeled = draw_nodes(graph, pool, budget.labeled_per_class, budget.labeled_total, rng, "labeled");
  const auto ind_count = static_cast<std::size_t>(std::llround(ind_fraction * static_cast<double>(pool.size())));
  split.inductive = draw_nodes(graph, pool, 0, ind_count, rng, "inductive");
  std::vector<NodeId> observed = pool;
  split.validation =
      draw_nodes(graph, pool, budget.validation_per_class, budget.validation_total, rng, "validation");
  std::sort(observed.begin(), observed.end());
  split.observed_unlabeled = std::move(observed);

  std::vector<char> is_ind(graph.num_nodes(), 0);
  for (NodeId v : split.inductive) is_ind[v] = 1;
  for (auto e : graph.edge_list()) {
    if (!is_ind[e.first] && !is_ind[e.second]) split.train_edges.push_back(e);
  }
  return split;
}

void validate_split(const Graph& graph, const SplitSpec& split) {
  std::vector<int> owner(graph.num_nodes(), -1);
  auto mark = [&](const std::vector<NodeId>& set, int tag, const char* name) {
    for (NodeId v : set) {
      if (v >= graph.num_nodes()) throw GraphError(std::string(name) + " contains out-of-range node");
      if (owner[v] != -1) {
        throw GraphError("node " + std::to_string(v) + " appears in more than one split set");
      }
      owner[v] = tag;
    }
  };
  mark(split.labeled, 0, "labeled");
  mark(split.observed_unlabeled, 1, "observed_unlabeled");
  mark(split.inductive, 2, "inductive");
  for (std::size_t v = 0; v < owner.size(); ++v) {
    if (owner[v] == -1) throw GraphError("node " + std::to_string(v) + " belongs to no split set");
  }
  for (NodeId v : split.validation) {
    if (v >= graph.num_nodes() || owner[v] != 1) {
      throw GraphError("validation node " + std::to_string(v) + " is not observed-unlabeled");
    }
  }
  for (auto [u, v] : split.train_edges) {
    if (u >= graph.num_nodes() || v >= graph.num_nodes()) throw GraphError("train edge out of range");
    if (owner[u] == 2 || owner[v] == 2) {
      throw GraphError("train edge (" + std::to_string(u) + ", " + std::to_string(v) +
                       ") touches an inductive node");
    }
  }
}

void save_split(const SplitSpec& split, const fs::path& path) {
  json edges = json::array();
  for (auto [u, v] : split.train_edges) edges.push_back({u, v});
  json j{{"seed", split.seed},
         {"labeled", split.labeled},
         {"observed_unlabeled", split.observed_unlabeled},
         {"inductive", split.inductive},
         {"validation", split.validation},
         {"train_edges", std::move(edges)}};
  std::ofstream out(path);
  if (!out) throw GraphError("cannot write split file " + path.string());
  out << j.dump() << '\n';
}

SplitSpec load_split(const fs::path& path) {
  auto in = open_input(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw GraphError(path.string() + ": " + e.what());
  }
  SplitSpec s;
  s.seed = j.value("seed", std::uint64_t{0});
  s.labeled = j.at("labeled").get<std::vector<NodeId>>();
  s.observed_unlabeled = j.at("observed_unlabeled").get<std::vector<NodeId>>();
  s.inductive = j.value("inductive", std::vector<NodeId>{});
  s.validation = j.value("validation", std::vector<NodeId>{});
  for (const auto& e : j.at("train_edges")) s.train_edges.emplace_back(e.at(0).get<NodeId>(), e.at(1).get<NodeId>());
  return s;
}

// ---------------------------------------------------------------------------
// Sampling and noise
// ---------------------------------------------------------------------------

SampledBlock sample_neighbors(const Graph& graph, std::span<const NodeId> targets,
                              std::span<const std::size_t> fanouts, std::uint64_t seed) {
  if (targets.empty()) throw GraphError("sample_neighbors: empty target list");
  if (fanouts.empty()) throw GraphError("sample_neighbors: no fan-out given");
  std::mt19937_64 rng(seed);
  const std::size_t layers = fanouts.size();

  SampledBlock block;
  block.target_nodes.assign(targets.begin(), targets.end());
  block.layer_nodes.assign(layers + 1, {});
  block.neighbors.assign(layers, {});
  block.layer_nodes[layers] = block.target_nodes;
  {
    std::unordered_set<NodeId> seen;
    for (NodeId v : targets) {
      if (v >= graph.num_nodes()) throw GraphError("sample_neighbors: target id out of range");
      if (!seen.insert(v).second) throw GraphError("sample_neighbors: duplicate target id");
    }
  }

  std::vector<NodeId> scratch;
  for (std::size_t l = layers; l-- > 0;) {
    const auto& dst = block.layer_nodes[l + 1];
    std::vector<NodeId> src(dst);
    std::unordered_map<NodeId, std::size_t> local;
    for (std::size_t i = 0; i < dst.size(); ++i) local.emplace(dst[i], i);
    auto& lists = block.neighbors[l];
    lists.resize(dst.size());
    const std::size_t fanout = fanouts[l];
    for (std::size_t i = 0; i < dst.size(); ++i) {
      auto nb = graph.neighbors(dst[i]);
      auto& picked = lists[i];
      if (nb.empty() || fanout == 0) continue;
      if (nb.size() >= fanout) {
        scratch.assign(nb.begin(), nb.end());
        for (std::size_t k = 0; k < fanout; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, scratch.size() - 1);
          std::swap(scratch[k], scratch[pick(rng)]);
          picked.push_back(scratch[k]);
        }
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, nb.size() - 1);
        for (std::size_t k = 0; k < fanout; ++k) picked.push_back(nb[pick(rng)]);
      }
      for (NodeId u : picked) {
        if (local.emplace(u, src.size()).second) src.push_back(u);
      }
    }
    block.layer_nodes[l] = std::move(src);
  }

  std::unordered_map<NodeId, NodeId> target_local;
  for (std::size_t i = 0; i < targets.size(); ++i) target_local.emplace(targets[i], static_cast<NodeId>(i));
  std::vector<std::tuple<NodeId, NodeId, double>> trip;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (NodeId u : graph.neighbors(targets[i])) {
      auto it = target_local.find(u);
      if (it != target_local.end()) trip.emplace_back(static_cast<NodeId>(i), it->second, 1.0);
    }
  }
  block.induced_adjacency = CsrMatrix::from_triplets(targets.size(), targets.size(), std::move(trip));
  return block;
}

std::vector<CsrMatrix> SampledBlock::propagation() const {
  std::vector<CsrMatrix> out;
  out.reserve(num_layers());
  for (std::size_t l = 0; l < num_layers(); ++l) {
    const auto& src = layer_nodes[l];
    std::unordered_map<NodeId, NodeId> local;
    for (std::size_t i = 0; i < src.size(); ++i) local.emplace(src[i], static_cast<NodeId>(i));
    std::vector<std::tuple<NodeId, NodeId, double>> trip;
    const auto& lists = neighbors[l];
    for (std::size_t i = 0; i < lists.size(); ++i) {
      const double w = 1.0 / static_cast<double>(lists[i].size() + 1);
      trip.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(i), w);
      for (NodeId u : lists[i]) trip.emplace_back(static_cast<NodeId>(i), local.at(u), w);
    }
    out.push_back(CsrMatrix::from_triplets(lists.size(), src.size(), std::move(trip)));
  }
  return out;
}

std::vector<float> add_feature_noise(std::span<const float> features, double alpha, std::uint64_t seed) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("noise level must lie in [0, 1], got " + std::to_string(alpha));
  }
  std::vector<float> out(features.begin(), features.end());
  if (alpha == 0.0) return out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (float& x : out) {
    x = static_cast<float>((1.0 - alpha) * static_cast<double>(x) + alpha * normal(rng));
  }
  return out;
}

}  // namespace vqg
