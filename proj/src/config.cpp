#include <algorithm>
#include <sstream>

#include "vqgraph/pipeline.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

using nlohmann::json;

const std::vector<std::string>& task_names() {
  static const std::vector<std::string> names{"train-tokenizer", "distill",   "evaluate",    "tokenize",
                                              "retrieve",        "benchmark", "noise-sweep", "ablate"};
  return names;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"cora", "citeseer", "pubmed", "a-computer", "a-photo", "arxiv", "products"};
  return names;
}

namespace {

struct StudentRow {
  std::size_t codebook;
  std::size_t layers;
  std::size_t hidden;
  double lr;
  double wd;
  double dropout;
};

void small_teacher(RunConfig& c) {
  c.tokenizer.encoder.num_layers = 2;
  c.tokenizer.encoder.hidden_dim = 128;
  c.tokenizer.encoder.dropout = 0.0;
  c.tokenizer.encoder.batch_norm = false;
  c.tokenizer.lr = 0.01;
  c.tokenizer.weight_decay = 5e-4;
  c.tokenizer.fanouts = {5, 5};
}

void ogb_teacher(RunConfig& c, double lr, double dropout) {
  c.tokenizer.encoder.num_layers = 3;
  c.tokenizer.encoder.hidden_dim = 256;
  c.tokenizer.encoder.dropout = dropout;
  c.tokenizer.encoder.batch_norm = true;
  c.tokenizer.lr = lr;
  c.tokenizer.weight_decay = 0.0;
  c.tokenizer.fanouts = {5, 10, 15};
  c.tokenizer.mini_batch = true;
  c.tokenizer.aggregation = Aggregation::mean;
  // a 32768-entry codebook initialised near zero collapses onto a few codes
  // against batch-normalised embeddings unless unused codes are re-seeded
  c.tokenizer.reset_dead_codes = true;
}

void student(RunConfig& c, const StudentRow& r) {
  c.tokenizer.codebook_size = r.codebook;
  c.distill.student.num_layers = r.layers;
  c.distill.student.hidden_dim = r.hidden;
  c.distill.lr = r.lr;
  c.distill.weight_decay = r.wd;
  c.distill.student.dropout = r.dropout;
  c.distill.tau = 4.0;
  c.distill.alpha = 1.0;
  c.distill.beta = 1e-8;
}

}  // namespace

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.dataset = name;
  c.tokenizer.epochs = 500;
  c.tokenizer.patience = 50;
  c.distill.epochs = 500;
  c.distill.patience = 50;
  if (name.empty() || name == "cora") {
    small_teacher(c);
    student(c, {2048, 2, 128, 0.005, 0.001, 0.4});
  } else if (name == "citeseer") {
    small_teacher(c);
    student(c, {4096, 2, 128, 0.01, 0.005, 0.6});
  } else if (name == "pubmed") {
    small_teacher(c);
    student(c, {8192, 2, 128, 0.01, 0.001, 0.1});
  } else if (name == "a-computer") {
    small_teacher(c);
    student(c, {16384, 2, 128, 0.003, 0.005, 0.1});
  } else if (name == "a-photo") {
    small_teacher(c);
    student(c, {8192, 2, 128, 0.001, 0.001, 0.1});
  } else if (name == "arxiv") {
    ogb_teacher(c, 0.01, 0.2);
    student(c, {32768, 3, 256, 0.01, 0.0, 0.2});
    c.split.budget = {};
    c.split.labeled_fraction = 0.537;
    c.split.validation_fraction = 0.176;
    c.distill.batch_size = 4096;
  } else if (name == "products") {
    ogb_teacher(c, 0.003, 0.5);
    student(c, {32768, 3, 256, 0.003, 0.0, 0.5});
    c.split.budget = {};
    c.split.labeled_fraction = 0.08;
    c.split.validation_fraction = 0.016;
    c.distill.batch_size = 4096;
  } else {
    std::string known;
    for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown dataset preset '" + name + "' (known: " + known + ")");
  }
  if (!name.empty()) c.data = name;
  return c;
}

namespace {

std::string overlap_name(OverlapMode m) { return m == OverlapMode::jaccard ? "jaccard" : "smaller"; }

OverlapMode parse_overlap(const std::string& s) {
  if (s == "jaccard") return OverlapMode::jaccard;
  if (s == "smaller") return OverlapMode::smaller;
  throw ConfigError("eval.overlap must be 'jaccard' or 'smaller', got '" + s + "'");
}

json stack_json(const StackDims& d) {
  return {{"hidden_dim", d.hidden_dim}, {"num_layers", d.num_layers}, {"dropout", d.dropout}, {"batch_norm", d.batch_norm}};
}

}  // namespace

json to_json(const RunConfig& c) {
  const auto& t = c.tokenizer;
  const auto& d = c.distill;
  json teacher = stack_json(t.encoder);
  teacher.update(json{{"aggregation", to_string(t.aggregation)},
                      {"lr", t.lr},
                      {"weight_decay", t.weight_decay},
                      {"epochs", t.epochs},
                      {"patience", t.patience},
                      {"mini_batch", t.mini_batch},
                      {"full_graph_limit", t.full_graph_limit},
                      {"batch_size", t.batch_size},
                      {"fanouts", t.fanouts}});
  json student = stack_json(d.student);
  student.update(json{{"lr", d.lr},
                      {"weight_decay", d.weight_decay},
                      {"epochs", d.epochs},
                      {"patience", d.patience},
                      {"batch_size", d.batch_size},
                      {"alpha", d.alpha},
                      {"beta", d.beta},
                      {"tau", d.tau},
                      {"tau_class", d.tau_class},
                      {"relation", to_string(d.relation)}});
  return json{
      {"dataset", c.dataset},
      {"data", c.data},
      {"task", c.task},
      {"seeds", c.seeds},
      {"out", c.out.string()},
      {"split",
       {{"setting", c.split.setting},
        {"labeled_per_class", c.split.budget.labeled_per_class},
        {"labeled_total", c.split.budget.labeled_total},
        {"validation_per_class", c.split.budget.validation_per_class},
        {"validation_total", c.split.budget.validation_total},
        {"labeled_fraction", c.split.labeled_fraction},
        {"validation_fraction", c.split.validation_fraction},
        {"ind_fraction", c.split.ind_fraction}}},
      {"teacher", teacher},
      {"tokenizer",
       {{"codebook_size", t.codebook_size},
        {"gamma", t.gamma},
        {"eta", t.eta},
        {"quantized_classifier", t.quantized_classifier},
        {"use_vq", t.use_vq},
        {"reset_dead_codes", t.reset_dead_codes},
        {"edge_chunk_rows", t.edge_chunk_rows}}},
      {"student", student},
      {"eval",
       {{"query", c.eval.query},
        {"k", c.eval.k},
        {"overlap", overlap_name(c.eval.overlap)},
        {"bench_batch", c.eval.bench_batch},
        {"bench_repetitions", c.eval.bench_repetitions},
        {"bench_warmup", c.eval.bench_warmup},
        {"bench_layers", c.eval.bench_layers},
        {"noise_levels", c.eval.noise_levels},
        {"ablate_modes", c.eval.ablate_modes},
        {"reuse_checkpoints", c.eval.reuse_checkpoints}}},
      {"checkpoints", {{"tokenizer", c.tokenizer_checkpoint}, {"student", c.student_checkpoint}}},
  };
}

namespace {

// Reads j[key] as T, naming the full key path on a type mismatch.
template <typename T>
T field(const json& j, const std::string& section, const std::string& key) {
  const std::string path = section.empty() ? key : section + "." + key;
  if (!j.contains(key)) throw ConfigError("missing config key '" + path + "'");
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError("config key '" + path + "' must be a boolean");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer() || (std::is_unsigned_v<T> && v.get<std::int64_t>() < 0)) {
      throw ConfigError("config key '" + path + "' must be a non-negative integer");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError("config key '" + path + "' must be a number");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError("config key '" + path + "' must be a string");
  }
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + "' has the wrong type");
  }
}

void read_stack(const json& j, const std::string& section, StackDims& d) {
  d.hidden_dim = field<std::size_t>(j, section, "hidden_dim");
  d.num_layers = field<std::size_t>(j, section, "num_layers");
  d.dropout = field<double>(j, section, "dropout");
  d.batch_norm = field<bool>(j, section, "batch_norm");
  if (d.hidden_dim == 0) throw ConfigError(section + ".hidden_dim must be positive");
  if (d.num_layers == 0) throw ConfigError(section + ".num_layers must be positive");
  if (d.dropout < 0 || d.dropout >= 1) throw ConfigError(section + ".dropout must be in [0, 1)");
}

void check_keys(const json& user, const json& schema, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config section '" + (prefix.empty() ? "<root>" : prefix) + "' must be an object");
  for (const auto& [key, value] : user.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (schema.at(key).is_object()) check_keys(value, schema.at(key), path);
  }
}

}  // namespace

RunConfig from_json(const json& j) {
  check_keys(j, to_json(RunConfig{}), "");
  RunConfig c;
  c.dataset = field<std::string>(j, "", "dataset");
  c.data = field<std::string>(j, "", "data");
  c.task = field<std::string>(j, "", "task");
  if (std::find(task_names().begin(), task_names().end(), c.task) == task_names().end()) {
    throw ConfigError("unknown task '" + c.task + "'");
  }
  c.seeds = field<std::vector<std::uint64_t>>(j, "", "seeds");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  c.out = field<std::string>(j, "", "out");

  const json& s = j.at("split");
  c.split.setting = field<std::string>(s, "split", "setting");
  if (c.split.setting != "transductive" && c.split.setting != "inductive") {
    throw ConfigError("split.setting must be 'transductive' or 'inductive'");
  }
  c.split.budget.labeled_per_class = field<std::size_t>(s, "split", "labeled_per_class");
  c.split.budget.labeled_total = field<std::size_t>(s, "split", "labeled_total");
  c.split.budget.validation_per_class = field<std::size_t>(s, "split", "validation_per_class");
  c.split.budget.validation_total = field<std::size_t>(s, "split", "validation_total");
  c.split.labeled_fraction = field<double>(s, "split", "labeled_fraction");
  c.split.validation_fraction = field<double>(s, "split", "validation_fraction");
  c.split.ind_fraction = field<double>(s, "split", "ind_fraction");
  if (c.split.ind_fraction <= 0 || c.split.ind_fraction >= 1) throw ConfigError("split.ind_fraction must be in (0, 1)");
  if (c.split.labeled_fraction < 0 || c.split.labeled_fraction >= 1 || c.split.validation_fraction < 0 ||
      c.split.validation_fraction >= 1) {
    throw ConfigError("split fractions must be in [0, 1)");
  }

  const json& t = j.at("teacher");
  auto& tk = c.tokenizer;
  read_stack(t, "teacher", tk.encoder);
  try {
    tk.aggregation = parse_aggregation(field<std::string>(t, "teacher", "aggregation"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("teacher.aggregation: ") + e.what());
  }
  tk.lr = field<double>(t, "teacher", "lr");
  tk.weight_decay = field<double>(t, "teacher", "weight_decay");
  tk.epochs = field<std::size_t>(t, "teacher", "epochs");
  tk.patience = field<std::size_t>(t, "teacher", "patience");
  tk.mini_batch = field<bool>(t, "teacher", "mini_batch");
  tk.full_graph_limit = field<std::size_t>(t, "teacher", "full_graph_limit");
  tk.batch_size = field<std::size_t>(t, "teacher", "batch_size");
  tk.fanouts = field<std::vector<std::size_t>>(t, "teacher", "fanouts");
  if (!(tk.lr > 0)) throw ConfigError("teacher.lr must be positive");
  if (tk.weight_decay < 0) throw ConfigError("teacher.weight_decay must be >= 0");
  if (tk.epochs == 0) throw ConfigError("teacher.epochs must be positive");
  if (tk.batch_size == 0) throw ConfigError("teacher.batch_size must be positive");

  const json& v = j.at("tokenizer");
  tk.codebook_size = field<std::size_t>(v, "tokenizer", "codebook_size");
  tk.gamma = field<double>(v, "tokenizer", "gamma");
  tk.eta = field<double>(v, "tokenizer", "eta");
  tk.quantized_classifier = field<bool>(v, "tokenizer", "quantized_classifier");
  tk.use_vq = field<bool>(v, "tokenizer", "use_vq");
  tk.reset_dead_codes = field<bool>(v, "tokenizer", "reset_dead_codes");
  tk.edge_chunk_rows = field<std::size_t>(v, "tokenizer", "edge_chunk_rows");
  if (tk.codebook_size == 0) throw ConfigError("tokenizer.codebook_size must be positive");
  if (tk.gamma < 1) throw ConfigError("tokenizer.gamma must be >= 1");
  if (tk.eta < 0) throw ConfigError("tokenizer.eta must be >= 0");

  const json& st = j.at("student");
  auto& d = c.distill;
  read_stack(st, "student", d.student);
  d.lr = field<double>(st, "student", "lr");
  d.weight_decay = field<double>(st, "student", "weight_decay");
  d.epochs = field<std::size_t>(st, "student", "epochs");
  d.patience = field<std::size_t>(st, "student", "patience");
  d.batch_size = field<std::size_t>(st, "student", "batch_size");
  d.alpha = field<double>(st, "student", "alpha");
  d.beta = field<double>(st, "student", "beta");
  d.tau = field<double>(st, "student", "tau");
  d.tau_class = field<double>(st, "student", "tau_class");
  try {
    d.relation = parse_relation(field<std::string>(st, "student", "relation"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("student.relation: ") + e.what());
  }
  if (!(d.lr > 0)) throw ConfigError("student.lr must be positive");
  if (d.weight_decay < 0) throw ConfigError("student.weight_decay must be >= 0");
  if (d.epochs == 0) throw ConfigError("student.epochs must be positive");
  if (d.alpha < 0 || d.beta < 0) throw ConfigError("student.alpha and student.beta must be >= 0");
  if (!(d.tau > 0) || !(d.tau_class > 0)) throw ConfigError("student.tau and student.tau_class must be > 0");
  if (tk.use_vq && d.beta > 0 && d.student.hidden_dim != tk.encoder.hidden_dim) {
    throw ConfigError("student.hidden_dim must equal teacher.hidden_dim (the code dimension) when beta > 0");
  }

  const json& e = j.at("eval");
  c.eval.query = field<NodeId>(e, "eval", "query");
  c.eval.k = field<std::size_t>(e, "eval", "k");
  c.eval.overlap = parse_overlap(field<std::string>(e, "eval", "overlap"));
  c.eval.bench_batch = field<std::size_t>(e, "eval", "bench_batch");
  c.eval.bench_repetitions = field<std::size_t>(e, "eval", "bench_repetitions");
  c.eval.bench_warmup = field<std::size_t>(e, "eval", "bench_warmup");
  c.eval.bench_layers = field<std::vector<std::size_t>>(e, "eval", "bench_layers");
  c.eval.noise_levels = field<std::vector<double>>(e, "eval", "noise_levels");
  c.eval.ablate_modes = field<std::vector<std::string>>(e, "eval", "ablate_modes");
  c.eval.reuse_checkpoints = field<bool>(e, "eval", "reuse_checkpoints");
  if (c.eval.k == 0) throw ConfigError("eval.k must be positive");
  if (c.eval.bench_batch == 0 || c.eval.bench_repetitions == 0) {
    throw ConfigError("eval.bench_batch and eval.bench_repetitions must be positive");
  }
  for (double a : c.eval.noise_levels) {
    if (a < 0 || a > 1) throw ConfigError("eval.noise_levels entries must be in [0, 1]");
  }
  for (const auto& m : c.eval.ablate_modes) {
    if (m != "class-only" && m != "only-vq" && m != "vqgraph") {
      throw ConfigError("unknown ablation mode '" + m + "' (expected class-only, only-vq or vqgraph)");
    }
  }
  for (std::size_t l : c.eval.bench_layers) {
    if (l == 0) throw ConfigError("eval.bench_layers entries must be positive");
  }

  const json& ck = j.at("checkpoints");
  c.tokenizer_checkpoint = field<std::string>(ck, "checkpoints", "tokenizer");
  c.student_checkpoint = field<std::string>(ck, "checkpoints", "student");
  return c;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::string s = text;
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw ConfigError("malformed seed list '" + text + "'");
    s = s.substr(1, s.size() - 2);
  }
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("malformed seed '" + item + "' in '" + text + "'");
    }
    seeds.push_back(std::stoull(item));
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

namespace {

json parse_override_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    return json(text);
  }
}

}  // namespace

RunConfig resolve_config(const json& user_in, const std::vector<std::string>& overrides) {
  json user = user_in.is_null() ? json::object() : user_in;
  // a run manifest carries the resolved config under "config"
  if (user.contains("config") && user.contains("artifacts")) user = user.at("config");
  if (!user.is_object()) throw ConfigError("config must be a JSON object");

  json patch = json::object();
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + o + "' is not key=value");
    const std::string key = o.substr(0, eq);
    json* node = &patch;
    std::stringstream ks(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ks, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (parts[i].empty()) throw ConfigError("override key '" + key + "' is malformed");
      node = &(*node)[parts[i]];
      if (!node->is_object()) *node = json::object();
    }
    (*node)[parts.back()] = parse_override_value(o.substr(eq + 1));
  }

  // "seeds=3" and "seeds=0,1,2" read like the --seed flag
  if (patch.contains("seeds")) {
    json& s = patch["seeds"];
    if (s.is_number_unsigned()) s = json::array({s});
    else if (s.is_string()) s = parse_seed_list(s.get<std::string>());
  }
  std::string dataset = user.value("dataset", std::string());
  if (patch.contains("dataset")) {
    if (!patch.at("dataset").is_string()) throw ConfigError("dataset must be a string");
    dataset = patch.at("dataset").get<std::string>();
  }
  json merged = to_json(preset_config(dataset));
  check_keys(user, merged, "");
  merged.merge_patch(user);
  check_keys(patch, merged, "");
  merged.merge_patch(patch);
  return from_json(merged);
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
