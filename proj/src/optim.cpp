#include <cmath>
#include <iostream>

#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {

bool Adam::step(std::span<Parameter* const> params, const GradientMap& grads) {
  for (const Parameter* p : params) {
    const Tensor* g = grads.find(p);
    if (g == nullptr) continue;
    if (!g->same_shape(p->value)) throw ShapeError("gradient shape does not match parameter " + p->name);
    if (!g->all_finite()) {
      ++skipped_;
      std::cerr << "adam: non-finite gradient for " << p->name << ", step skipped\n";
      return false;
    }
  }
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  for (Parameter* p : params) {
    const Tensor* g = grads.find(p);
    if (g == nullptr) continue;
    State& s = state_[p];
    if (s.m.empty()) {
      s.m = Tensor(p->value.rows(), p->value.cols());
      s.v = Tensor(p->value.rows(), p->value.cols());
    }
    ++s.t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
    auto w = p->value.values();
    auto gv = g->values();
    auto m = s.m.values();
    auto v = s.v.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = gv[i];
      m[i] = static_cast<Scalar>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<Scalar>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      double wi = w[i];
      wi -= config_.lr * config_.weight_decay * wi;
      wi -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
      w[i] = static_cast<Scalar>(wi);
    }
  }
  return true;
}

}  // namespace VQG_PRECISION_NS
}  // namespace vqg
