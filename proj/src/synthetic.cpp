#include "vqgraph/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace vqg {

Graph make_synthetic_graph(const SyntheticGraphSpec& spec, std::uint64_t seed) {
  if (spec.num_nodes == 0 || spec.num_classes == 0 || spec.feature_dim == 0) {
    throw std::invalid_argument("synthetic graph needs nodes, classes and features");
  }
  std::mt19937_64 rng(seed);
  const std::size_t n = spec.num_nodes;
  const std::size_t k = spec.num_classes;

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % k);
  std::shuffle(labels.begin(), labels.end(), rng);

  // Expected-degree weights.
  std::vector<double> theta(n, 1.0);
  if (spec.degree_exponent > 1.0) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double cap = std::sqrt(static_cast<double>(n));
    for (double& t : theta) t = std::min(cap, std::pow(1.0 - unif(rng), -1.0 / (spec.degree_exponent - 1.0)));
  }
  std::vector<std::vector<NodeId>> members(k);
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(static_cast<NodeId>(i));
  std::discrete_distribution<std::size_t> any_node(theta.begin(), theta.end());
  std::vector<std::discrete_distribution<std::size_t>> in_class;
  for (const auto& m : members) {
    std::vector<double> w;
    for (NodeId v : m) w.push_back(theta[v]);
    if (w.empty()) w.push_back(1.0);
    in_class.emplace_back(w.begin(), w.end());
  }

  const auto target = static_cast<std::size_t>(std::llround(spec.average_degree * static_cast<double>(n) / 2.0));
  std::unordered_set<std::uint64_t> seen;
  std::vector<Edge> edges;
  edges.reserve(target);
  std::bernoulli_distribution same_class(spec.homophily);
  std::size_t attempts = 0;
  while (edges.size() < target && attempts < 50 * target + 1000) {
    ++attempts;
    auto u = static_cast<NodeId>(any_node(rng));
    NodeId v = 0;
    if (same_class(rng) || k == 1) {
      const auto& m = members[labels[u]];
      v = m[in_class[labels[u]](rng)];
    } else {
      do {
        v = static_cast<NodeId>(any_node(rng));
      } while (labels[v] == labels[u]);
    }
    if (u == v) continue;
    const std::uint64_t key = (static_cast<std::uint64_t>(std::min(u, v)) << 32) | std::max(u, v);
    if (seen.insert(key).second) edges.emplace_back(std::min(u, v), std::max(u, v));
  }

  std::vector<float> features(n * spec.feature_dim, 0.0f);
  if (spec.features == FeatureKind::bag_of_words) {
    std::vector<std::vector<std::size_t>> topics(k);
    std::vector<std::size_t> words(spec.feature_dim);
    std::iota(words.begin(), words.end(), std::size_t{0});
    for (auto& t : topics) {
      std::shuffle(words.begin(), words.end(), rng);
      t.assign(words.begin(), words.begin() + std::min(spec.words_per_class, spec.feature_dim));
    }
    std::bernoulli_distribution background(spec.background_rate);
    std::bernoulli_distribution topical(spec.topic_rate);
    for (std::size_t i = 0; i < n; ++i) {
      float* row = features.data() + i * spec.feature_dim;
      for (std::size_t j = 0; j < spec.feature_dim; ++j) row[j] = background(rng) ? 1.0f : 0.0f;
      for (std::size_t j : topics[labels[i]]) {
        if (topical(rng)) row[j] = 1.0f;
      }
    }
  } else {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> centroids(k * spec.feature_dim);
    for (double& c : centroids) c = spec.centroid_scale * normal(rng) / std::sqrt(static_cast<double>(spec.feature_dim));
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        features[i * spec.feature_dim + j] = static_cast<float>(
            centroids[labels[i] * spec.feature_dim + j] + normal(rng) / std::sqrt(static_cast<double>(spec.feature_dim)));
      }
    }
  }
  return Graph::build(n, edges, std::move(features), spec.feature_dim, std::move(labels), k, spec.name);
}

SyntheticGraphSpec synthetic_preset(const std::string& name) {
  SyntheticGraphSpec s;
  s.name = name;
  if (name == "cora") {
    s.num_nodes = 2485;
    s.num_classes = 7;
    s.feature_dim = 1433;
    s.average_degree = 2.0 * 5069 / 2485;
    s.words_per_class = 60;
    s.topic_rate = 0.08;
    s.background_rate = 0.008;
  } else if (name == "citeseer") {
    s.num_nodes = 2110;
    s.num_classes = 6;
    s.feature_dim = 3703;
    s.average_degree = 2.0 * 3668 / 2110;
    s.words_per_class = 80;
    s.topic_rate = 0.06;
    s.background_rate = 0.006;
  } else if (name == "pubmed") {
    s.num_nodes = 19717;
    s.num_classes = 3;
    s.feature_dim = 500;
    s.average_degree = 2.0 * 44324 / 19717;
    s.words_per_class = 40;
    s.topic_rate = 0.15;
    s.background_rate = 0.05;
  } else if (name == "arxiv-20k") {
    s.num_nodes = 20000;
    s.num_classes = 40;
    s.feature_dim = 128;
    s.average_degree = 2.0 * 1166243 / 169343;
    s.features = FeatureKind::dense;
    s.centroid_scale = 1.5;
    s.homophily = 0.65;
  } else {
    throw std::invalid_argument("unknown synthetic preset '" + name + "'");
  }
  return s;
}

}  // namespace vqg
