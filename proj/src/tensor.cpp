#include "vqgraph/tensor.hpp"

#include <cmath>

namespace vqg {
inline namespace VQG_PRECISION_NS {

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<Scalar> values)
    : rows_(rows), cols_(cols), values_(values.begin(), values.end()) {
  if (values_.size() != rows * cols) {
    throw ShapeError("tensor value count " + std::to_string(values_.size()) + " != " + std::to_string(rows) +
                     " x " + std::to_string(cols));
  }
}

Tensor Tensor::from_floats(std::size_t rows, std::size_t cols, std::span<const float> values) {
  if (values.size() != rows * cols) throw ShapeError("float buffer does not match the requested shape");
  Tensor t(rows, cols);
  std::copy(values.begin(), values.end(), t.values_.begin());
  return t;
}

Scalar Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on a tensor with " + std::to_string(size()) + " values");
  return values_[0];
}

bool Tensor::all_finite() const {
  for (Scalar v : values_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor Tensor::gather_rows(std::span<const std::size_t> idx) const {
  Tensor out(idx.size(), cols_);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows_) throw ShapeError("gather_rows: row index out of range");
    auto src = row(idx[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void GradientMap::accumulate(const Parameter* p, const Tensor& g) {
  auto [it, inserted] = grads_.try_emplace(p, g);
  if (!inserted) it->second.map() += g.map();
}

const Tensor* GradientMap::find(const Parameter* p) const {
  auto it = grads_.find(p);
  return it == grads_.end() ? nullptr : &it->second;
}

Tensor GradientMap::get(const Parameter& p) const {
  if (const Tensor* g = find(&p)) return *g;
  return Tensor(p.value.rows(), p.value.cols());
}

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::parameter(Parameter& p) {
  nodes_.push_back(Node{p.value, {}, {}, record_, record_ ? &p : nullptr});
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  Node node;
  node.value = std::move(value);
  if (record_) {
    for (const Var& in : inputs) {
      if (&in.tape() != this) throw std::logic_error("operator inputs come from different tapes");
      node.requires_grad = node.requires_grad || nodes_[in.id()].requires_grad;
    }
    if (node.requires_grad) {
      node.inputs.reserve(inputs.size());
      for (const Var& in : inputs) node.inputs.push_back(in.id());
      node.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

GradientMap Tape::backward(Var loss) {
  if (consumed_) throw std::logic_error("backward() called twice on the same tape");
  if (&loss.tape() != this) throw std::logic_error("loss belongs to another tape");
  if (loss.value().size() != 1) throw ShapeError("backward() needs a scalar loss");
  consumed_ = true;
  GradientMap out;
  if (!nodes_[loss.id()].requires_grad) return out;

  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::scalar(Scalar{1});
  std::vector<Tensor*> input_grads;
  for (std::uint32_t id = loss.id() + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (grads[id].empty() || !node.requires_grad) continue;
    if (node.param != nullptr) out.accumulate(node.param, grads[id]);
    if (node.backward) {
      input_grads.clear();
      for (std::uint32_t in : node.inputs) {
        if (!nodes_[in].requires_grad) {
          input_grads.push_back(nullptr);
          continue;
        }
        if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.rows(), nodes_[in].value.cols());
        input_grads.push_back(&grads[in]);
      }
      node.backward(grads[id], input_grads);
    }
    grads[id] = Tensor();
    node.backward = nullptr;
  }
  return out;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
