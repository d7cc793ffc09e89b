#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "vqgraph/graph.hpp"
#include "vqgraph/tensor.hpp"

namespace testing {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "vqgraph-test-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline vqg::Tensor random_tensor(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                                 double hi = 1.0) {
  std::uniform_real_distribution<double> unif(lo, hi);
  vqg::Tensor t(rows, cols);
  for (auto& v : t.values()) v = static_cast<vqg::Scalar>(unif(rng));
  return t;
}

inline vqg::Tensor random_stochastic(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  vqg::Tensor t = random_tensor(rows, cols, rng, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0;
    for (auto v : t.row(r)) s += v;
    for (auto& v : t.row(r)) v = static_cast<vqg::Scalar>(v / s);
  }
  return t;
}

/// Graph with labels c % classes and random features.
inline vqg::Graph make_graph(std::size_t n, const std::vector<vqg::Edge>& edges, std::size_t dim = 3,
                             std::size_t classes = 2, std::uint64_t seed = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.f, 1.f);
  std::vector<float> x(n * dim);
  for (auto& v : x) v = normal(rng);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % classes);
  return vqg::Graph::build(n, edges, std::move(x), dim, std::move(labels), classes);
}

/// Erdos-Renyi style random graph.
inline vqg::Graph random_graph(std::size_t n, double p, std::mt19937_64& rng, std::size_t dim = 4,
                               std::size_t classes = 3) {
  std::bernoulli_distribution edge(p);
  std::vector<vqg::Edge> edges;
  for (vqg::NodeId i = 0; i < n; ++i) {
    for (vqg::NodeId j = i + 1; j < n; ++j) {
      if (edge(rng)) edges.emplace_back(i, j);
    }
  }
  return make_graph(n, edges, dim, classes, rng());
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central finite differences over up to `max_entries` randomly chosen
/// parameter entries. `build` must construct the scalar loss on the given
/// tape from the current parameter values.
/// Compares the tape gradient of `build` with central differences of `numeric`.
/// The default step suits the double-precision build only.
/// The two differ only when `build` uses a surrogate gradient (straight-through).
inline GradCheckResult grad_check(const std::vector<vqg::Parameter*>& params,
                                  const std::function<vqg::Var(vqg::Tape&)>& build,
                                  const std::function<vqg::Var(vqg::Tape&)>& numeric, std::uint64_t seed = 7,
                                  double h = 1e-5, std::size_t max_entries = 100, double floor = 1e-3) {
  vqg::Tape tape;
  const vqg::GradientMap grads = tape.backward(build(tape));
  std::vector<std::pair<std::size_t, std::size_t>> entries;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p]->value.size(); ++i) entries.emplace_back(p, i);
  }
  std::mt19937_64 rng(seed);
  std::shuffle(entries.begin(), entries.end(), rng);
  if (entries.size() > max_entries) entries.resize(max_entries);
  GradCheckResult out;
  auto eval = [&] {
    vqg::Tape t(false);
    return static_cast<double>(numeric(t).value().item());
  };
  for (auto [p, i] : entries) {
    vqg::Scalar& w = params[p]->value.values()[i];
    const vqg::Scalar saved = w;
    w = saved + static_cast<vqg::Scalar>(h);
    const double up = eval();
    w = saved - static_cast<vqg::Scalar>(h);
    const double down = eval();
    w = saved;
    const double numeric = (up - down) / (2 * h);
    const vqg::Tensor* g = grads.find(params[p]);
    const double analytic = g ? static_cast<double>(g->values()[i]) : 0.0;
    const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
    out.max_rel_error = std::max(out.max_rel_error, std::abs(numeric - analytic) / denom);
    ++out.checked;
  }
  return out;
}

inline GradCheckResult grad_check(const std::vector<vqg::Parameter*>& params,
                                  const std::function<vqg::Var(vqg::Tape&)>& build, std::uint64_t seed = 7,
                                  double h = 1e-5, std::size_t max_entries = 100, double floor = 1e-3) {
  return grad_check(params, build, build, seed, h, max_entries, floor);
}

}  // namespace testing
