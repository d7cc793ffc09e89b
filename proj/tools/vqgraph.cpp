#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqgraph/pipeline.hpp"

namespace {

constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph tokenizer training and code-based GNN-to-MLP distillation"};
  std::string config_path;
  std::string task;
  std::string seeds;
  std::string out;
  std::vector<std::string> overrides;
  bool print_config = false;
  bool list_presets = false;
  app.add_option("--config", config_path, "JSON run config (or a run manifest)");
  app.add_option("--task", task, "train-tokenizer | distill | evaluate | tokenize | retrieve | benchmark | noise-sweep | ablate");
  app.add_option("--seed", seeds, "seed or comma-separated seed list");
  app.add_option("--out", out, "output directory");
  app.add_option("--override", overrides, "key.path=value (repeatable)")->take_all();
  app.add_flag("--print-config", print_config, "print the resolved config and exit");
  app.add_flag("--list-presets", list_presets, "list dataset presets and exit");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigError;
  }
  vqg::retain_freed_memory();

  if (list_presets) {
    for (const auto& name : vqg::preset_names()) std::cout << name << '\n';
    return 0;
  }

  vqg::RunConfig config;
  try {
    nlohmann::json user = nlohmann::json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw vqg::ConfigError("cannot open config file " + config_path);
      try {
        user = nlohmann::json::parse(in);
      } catch (const nlohmann::json::parse_error& e) {
        throw vqg::ConfigError(config_path + ": " + e.what());
      }
    }
    std::vector<std::string> all = overrides;
    if (!task.empty()) all.push_back("task=\"" + task + "\"");
    if (!out.empty()) all.push_back("out=" + nlohmann::json(out).dump());
    if (!seeds.empty()) all.push_back("seeds=" + nlohmann::json(vqg::parse_seed_list(seeds)).dump());
    config = vqg::resolve_config(user, all);
  } catch (const vqg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }

  if (print_config) {
    std::cout << vqg::to_json(config).dump(2) << '\n';
    return 0;
  }

  try {
    return vqg::run(config, std::cout);
  } catch (const vqg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
