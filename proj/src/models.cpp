#include "vqgraph/models.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace vqg {
inline namespace VQG_PRECISION_NS {

std::vector<Parameter*> LayerStack::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& n : norms) {
    out.push_back(&n.gamma);
    out.push_back(&n.beta);
  }
  out.push_back(&classifier.weight);
  out.push_back(&classifier.bias);
  return out;
}

std::size_t LayerStack::parameter_count() const {
  std::size_t total = classifier.weight.value.size() + classifier.bias.value.size();
  for (const auto& l : layers) total += l.weight.value.size() + l.bias.value.size();
  for (const auto& n : norms) total += n.gamma.value.size() + n.beta.value.size();
  return total;
}

StackDims LayerStack::dims() const {
  return StackDims{input_dim(), embedding_dim(), num_layers(), num_classes(), dropout, batch_norm()};
}

void LayerStack::export_tensors(const std::string& prefix, std::map<std::string, const Tensor*>& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    out[prefix + "layer" + std::to_string(i) + ".weight"] = &layers[i].weight.value;
    out[prefix + "layer" + std::to_string(i) + ".bias"] = &layers[i].bias.value;
  }
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const std::string base = prefix + "norm" + std::to_string(i);
    out[base + ".gamma"] = &norms[i].gamma.value;
    out[base + ".beta"] = &norms[i].beta.value;
    out[base + ".running_mean"] = &norms[i].state.running_mean;
    out[base + ".running_var"] = &norms[i].state.running_var;
  }
  out[prefix + "classifier.weight"] = &classifier.weight.value;
  out[prefix + "classifier.bias"] = &classifier.bias.value;
}

namespace {

void take(std::map<std::string, Tensor>& in, const std::string& key, Tensor& dst) {
  auto it = in.find(key);
  if (it == in.end()) throw std::runtime_error("checkpoint is missing tensor " + key);
  if (!dst.empty() && !dst.same_shape(it->second)) throw std::runtime_error("checkpoint tensor " + key + " has the wrong shape");
  dst = std::move(it->second);
}

}  // namespace

void LayerStack::import_tensors(const std::string& prefix, std::map<std::string, Tensor>& in) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    take(in, prefix + "layer" + std::to_string(i) + ".weight", layers[i].weight.value);
    take(in, prefix + "layer" + std::to_string(i) + ".bias", layers[i].bias.value);
  }
  for (std::size_t i = 0; i < norms.size(); ++i) {
    const std::string base = prefix + "norm" + std::to_string(i);
    take(in, base + ".gamma", norms[i].gamma.value);
    take(in, base + ".beta", norms[i].beta.value);
    take(in, base + ".running_mean", norms[i].state.running_mean);
    take(in, base + ".running_var", norms[i].state.running_var);
  }
  take(in, prefix + "classifier.weight", classifier.weight.value);
  take(in, prefix + "classifier.bias", classifier.bias.value);
}

DenseLayer init_dense(std::size_t in_dim, std::size_t out_dim, std::mt19937_64& rng, const std::string& name) {
  if (in_dim == 0 || out_dim == 0) throw std::invalid_argument("layer " + name + " has a zero dimension");
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  std::uniform_real_distribution<double> unif(-bound, bound);
  DenseLayer layer;
  layer.weight = Parameter{name + ".weight", Tensor(in_dim, out_dim)};
  for (Scalar& w : layer.weight.value.values()) w = static_cast<Scalar>(unif(rng));
  layer.bias = Parameter{name + ".bias", Tensor(1, out_dim)};
  return layer;
}

namespace {

void init_stack(LayerStack& stack, const StackDims& dims, std::uint64_t seed, const std::string& prefix) {
  if (dims.num_layers == 0) throw std::invalid_argument("a model needs at least one hidden layer");
  if (dims.num_classes == 0) throw std::invalid_argument("a model needs at least one class");
  std::mt19937_64 rng(seed);
  std::size_t in = dims.input_dim;
  for (std::size_t l = 0; l < dims.num_layers; ++l) {
    stack.layers.push_back(init_dense(in, dims.hidden_dim, rng, prefix + "layer" + std::to_string(l)));
    if (dims.batch_norm) {
      const std::string base = prefix + "norm" + std::to_string(l);
      stack.norms.push_back(NormLayer{Parameter{base + ".gamma", Tensor(1, dims.hidden_dim, Scalar{1})},
                                      Parameter{base + ".beta", Tensor(1, dims.hidden_dim)},
                                      {}});
    }
    in = dims.hidden_dim;
  }
  stack.classifier = init_dense(dims.hidden_dim, dims.num_classes, rng, prefix + "classifier");
  stack.dropout = dims.dropout;
}

Var bind(Tape& tape, Parameter& p) { return tape.parameter(p); }

// One hidden layer: optional propagation, bias, normalization, ReLU, dropout.
Var hidden_layer(Tape& tape, Var x, LayerStack& stack, std::size_t l, const CsrMatrix* propagation, bool train,
                 std::mt19937_64& rng) {
  DenseLayer& layer = stack.layers[l];
  Var w = bind(tape, layer.weight);
  Var z;
  if (propagation == nullptr) {
    z = ops::matmul(x, w);
  } else if (layer.in_dim() > layer.out_dim()) {
    z = ops::spmm(*propagation, ops::matmul(x, w));
  } else {
    z = ops::matmul(ops::spmm(*propagation, x), w);
  }
  z = ops::add(z, bind(tape, layer.bias));
  if (!stack.norms.empty()) {
    NormLayer& n = stack.norms[l];
    z = ops::batch_norm(z, bind(tape, n.gamma), bind(tape, n.beta), n.state, train);
  }
  z = ops::relu(z);
  return ops::dropout(z, stack.dropout, train, rng);
}

}  // namespace

GnnParams init_gnn(const StackDims& dims, Aggregation aggregation, std::uint64_t seed) {
  GnnParams p;
  init_stack(p, dims, seed, "");
  p.aggregation = aggregation;
  return p;
}

MlpParams init_mlp(const StackDims& dims, std::uint64_t seed) {
  MlpParams p;
  init_stack(p, dims, seed, "");
  return p;
}

Var apply_dense(Var x, DenseLayer& layer) {
  Tape& tape = x.tape();
  return ops::add(ops::matmul(x, bind(tape, layer.weight)), bind(tape, layer.bias));
}

Var gnn_embed(Tape& tape, std::span<const CsrMatrix* const> propagation, Var features, GnnParams& params, bool train,
              std::mt19937_64& rng) {
  if (propagation.size() != params.num_layers()) {
    throw ShapeError("gnn_forward: " + std::to_string(propagation.size()) + " propagation matrices for " +
                     std::to_string(params.num_layers()) + " layers");
  }
  if (features.cols() != params.input_dim()) {
    throw ShapeError("gnn_forward: feature dim " + std::to_string(features.cols()) + " != model input dim " +
                     std::to_string(params.input_dim()));
  }
  Var h = features;
  for (std::size_t l = 0; l < params.num_layers(); ++l) h = hidden_layer(tape, h, params, l, propagation[l], train, rng);
  return h;
}

Var gnn_embed(Tape& tape, const CsrMatrix& adjacency, Var features, GnnParams& params, bool train,
              std::mt19937_64& rng) {
  std::vector<const CsrMatrix*> prop(params.num_layers(), &adjacency);
  return gnn_embed(tape, prop, features, params, train, rng);
}

ForwardResult gnn_forward(Tape& tape, std::span<const CsrMatrix* const> propagation, Var features,
                          GnnParams& params, bool train, std::mt19937_64& rng) {
  Var h = gnn_embed(tape, propagation, features, params, train, rng);
  return {h, apply_dense(h, params.classifier)};
}

ForwardResult gnn_forward(Tape& tape, const CsrMatrix& adjacency, Var features, GnnParams& params, bool train,
                          std::mt19937_64& rng) {
  Var h = gnn_embed(tape, adjacency, features, params, train, rng);
  return {h, apply_dense(h, params.classifier)};
}

ForwardResult mlp_forward(Tape& tape, Var features, MlpParams& params, bool train, std::mt19937_64& rng) {
  if (features.cols() != params.input_dim()) {
    throw ShapeError("mlp_forward: feature dim " + std::to_string(features.cols()) + " != model input dim " +
                     std::to_string(params.input_dim()));
  }
  Var h = features;
  for (std::size_t l = 0; l < params.num_layers(); ++l) h = hidden_layer(tape, h, params, l, nullptr, train, rng);
  return {h, apply_dense(h, params.classifier)};
}

Inference gnn_infer(const CsrMatrix& adjacency, const Tensor& features, GnnParams& params) {
  Tape tape(false);
  std::mt19937_64 rng(0);
  auto out = gnn_forward(tape, adjacency, tape.constant(features), params, false, rng);
  return {out.embeddings.value(), out.logits.value()};
}

Inference mlp_infer(const Tensor& features, MlpParams& params) {
  Tape tape(false);
  std::mt19937_64 rng(0);
  auto out = mlp_forward(tape, tape.constant(features), params, false, rng);
  return {out.embeddings.value(), out.logits.value()};
}

void save_mlp(const std::filesystem::path& dir, const MlpParams& params) {
  std::map<std::string, const Tensor*> tensors;
  params.export_tensors("", tensors);
  const StackDims d = params.dims();
  nlohmann::json extra = {{"kind", "mlp"},         {"input_dim", d.input_dim},   {"hidden_dim", d.hidden_dim},
                          {"num_layers", d.num_layers}, {"num_classes", d.num_classes}, {"dropout", d.dropout},
                          {"batch_norm", d.batch_norm}};
  save_tensors(dir, tensors, extra.dump());
}

MlpParams load_mlp(const std::filesystem::path& dir) {
  const auto extra = nlohmann::json::parse(load_manifest_extra(dir));
  if (extra.value("kind", "") != "mlp") throw std::runtime_error(dir.string() + " does not hold an MLP checkpoint");
  StackDims d;
  d.input_dim = extra.at("input_dim").get<std::size_t>();
  d.hidden_dim = extra.at("hidden_dim").get<std::size_t>();
  d.num_layers = extra.at("num_layers").get<std::size_t>();
  d.num_classes = extra.at("num_classes").get<std::size_t>();
  d.dropout = extra.at("dropout").get<double>();
  d.batch_norm = extra.at("batch_norm").get<bool>();
  MlpParams params = init_mlp(d, 0);
  auto tensors = load_tensors(dir);
  params.import_tensors("", tensors);
  return params;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
