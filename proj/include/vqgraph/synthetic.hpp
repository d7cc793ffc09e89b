#pragma once

#include <cstdint>
#include <string>

#include "vqgraph/graph.hpp"

namespace vqg {

enum class FeatureKind {
  bag_of_words,  // sparse 0/1 vectors, class-specific topic words
  dense,         // Gaussian class centroid plus isotropic noise
};

/// Degree-corrected stochastic block model with class-dependent features.
/// Used for tests, benchmarks at a given scale, and as stand-in data when
/// the public benchmark bundles are unavailable.
struct SyntheticGraphSpec {
  std::size_t num_nodes = 1000;
  std::size_t num_classes = 4;
  std::size_t feature_dim = 64;
  double average_degree = 4.0;
  /// Fraction of edges whose endpoints share a class.
  double homophily = 0.8;
  /// Pareto tail exponent of the expected degree; <= 1 gives equal weights.
  double degree_exponent = 2.5;
  FeatureKind features = FeatureKind::bag_of_words;
  std::size_t words_per_class = 16;
  double topic_rate = 0.25;
  double background_rate = 0.02;
  /// Distance scale between class centroids for dense features.
  double centroid_scale = 1.0;
  std::string name = "synthetic";
};

Graph make_synthetic_graph(const SyntheticGraphSpec& spec, std::uint64_t seed);

/// Sizes matching the public benchmark statistics (nodes, undirected edges,
/// feature dim, classes) for "cora", "citeseer", "pubmed", "arxiv-20k".
SyntheticGraphSpec synthetic_preset(const std::string& name);

}  // namespace vqg
