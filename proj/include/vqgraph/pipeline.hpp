#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqgraph/distiller.hpp"
#include "vqgraph/eval.hpp"
#include "vqgraph/graph.hpp"
#include "vqgraph/tokenizer.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

/// Invalid or inconsistent run configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SplitConfig {
  std::string setting = "transductive";  // or "inductive"
  LabelBudget budget{20, 0, 30, 0};
  /// When positive, replaces the labeled / validation counts by a fraction of N.
  double labeled_fraction = 0.0;
  double validation_fraction = 0.0;
  double ind_fraction = 0.2;
};

struct EvalConfig {
  NodeId query = 0;
  std::size_t k = 4;
  OverlapMode overlap = OverlapMode::jaccard;
  std::size_t bench_batch = 1024;
  std::size_t bench_repetitions = 30;
  std::size_t bench_warmup = 3;
  std::vector<std::size_t> bench_layers{2, 3};
  std::vector<double> noise_levels{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  std::vector<std::string> ablate_modes{"class-only", "only-vq", "vqgraph"};
  /// Reuse checkpoints found under the output directory instead of retraining.
  bool reuse_checkpoints = true;
};

struct RunConfig {
  std::string dataset;
  /// Bundle directory, or "synthetic:<preset>" for a generated graph.
  std::string data;
  std::string task = "evaluate";
  std::vector<std::uint64_t> seeds{0};
  std::filesystem::path out = "runs";
  SplitConfig split;
  TokenizerConfig tokenizer;
  DistillConfig distill;
  EvalConfig eval;
  /// Optional explicit checkpoint locations; "{seed}" expands to the seed.
  std::string tokenizer_checkpoint;
  std::string student_checkpoint;
};

const std::vector<std::string>& task_names();
const std::vector<std::string>& preset_names();

/// Defaults for a named dataset block; an empty name gives generic defaults.
RunConfig preset_config(const std::string& name);

nlohmann::json to_json(const RunConfig& config);
/// Strict conversion: unknown keys, wrong types and out-of-range values
/// raise ConfigError.
RunConfig from_json(const nlohmann::json& j);

/// Resolves a user config: dataset preset defaults, then the user document
/// (a plain config or a run manifest), then `key.path=value` overrides.
RunConfig resolve_config(const nlohmann::json& user, const std::vector<std::string>& overrides);

/// Parses "3", "0,1,2" or "[0,1,2]".
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

/// Executes `config.task`; progress lines go to `log`. Returns 0 on success
/// and throws on failure.
int run(const RunConfig& config, std::ostream& log);

/// Loads a graph bundle or generates "synthetic:<preset>" data.
Graph load_dataset(const std::string& data);

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
