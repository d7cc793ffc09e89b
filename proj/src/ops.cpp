#include <algorithm>
#include <cmath>
#include <limits>

#include "vqgraph/tensor.hpp"

namespace vqg {
inline namespace VQG_PRECISION_NS {
namespace ops {

namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw ShapeError(what);
}

std::string dims(const Tensor& t) { return std::to_string(t.rows()) + "x" + std::to_string(t.cols()); }

Scalar stable_sigmoid(Scalar x) {
  if (x >= 0) return Scalar{1} / (Scalar{1} + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar{1} + e);
}

// Row-wise softmax of `in` written to `out`.
void softmax_into(const Tensor& in, Tensor& out) {
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto x = in.row(r);
    auto y = out.row(r);
    const Scalar mx = *std::max_element(x.begin(), x.end());
    double total = 0.0;
    for (std::size_t c = 0; c < x.size(); ++c) {
      y[c] = std::exp(x[c] - mx);
      total += y[c];
    }
    const auto inv = static_cast<Scalar>(1.0 / total);
    for (Scalar& v : y) v *= inv;
  }
}

double log_sum_exp(std::span<const Scalar> x) {
  const double mx = *std::max_element(x.begin(), x.end());
  double total = 0.0;
  for (Scalar v : x) total += std::exp(static_cast<double>(v) - mx);
  return mx + std::log(total);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.rows(), "matmul: inner dimensions differ (" + dims(av) + " * " + dims(bv) + ")");
  Tensor out(av.rows(), bv.cols());
  out.map().noalias() = av.map() * bv.map();
  return a.tape().record(std::move(out), {a, b}, [pa = &av, pb = &bv](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map().noalias() += g.map() * pb->map().transpose();
    if (grads[1]) grads[1]->map().noalias() += pa->map().transpose() * g.map();
  });
}

Var matmul_nt(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(), "matmul_nt: inner dimensions differ (" + dims(av) + " * " + dims(bv) + "^T)");
  Tensor out(av.rows(), bv.rows());
  out.map().noalias() = av.map() * bv.map().transpose();
  return a.tape().record(std::move(out), {a, b}, [pa = &av, pb = &bv](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map().noalias() += g.map() * pb->map();
    if (grads[1]) grads[1]->map().noalias() += g.map().transpose() * pa->map();
  });
}

Var add(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.same_shape(bv)) {
    Tensor out(av.rows(), av.cols());
    out.map() = av.map() + bv.map();
    return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, auto grads) {
      if (grads[0]) grads[0]->map() += g.map();
      if (grads[1]) grads[1]->map() += g.map();
    });
  }
  require(bv.rows() == 1 && bv.cols() == av.cols(),
          "add: cannot broadcast " + dims(bv) + " onto " + dims(av));
  Tensor out(av.rows(), av.cols());
  out.map() = av.map().rowwise() + bv.map().row(0);
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map();
    if (grads[1]) grads[1]->map() += g.map().colwise().sum();
  });
}

Var sub(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "sub: shapes differ (" + dims(av) + " vs " + dims(bv) + ")");
  Tensor out(av.rows(), av.cols());
  out.map() = av.map() - bv.map();
  return a.tape().record(std::move(out), {a, b}, [](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map();
    if (grads[1]) grads[1]->map() -= g.map();
  });
}

Var mul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.same_shape(bv), "mul: shapes differ (" + dims(av) + " vs " + dims(bv) + ")");
  Tensor out(av.rows(), av.cols());
  out.map() = av.map().cwiseProduct(bv.map());
  return a.tape().record(std::move(out), {a, b}, [pa = &av, pb = &bv](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map().cwiseProduct(pb->map());
    if (grads[1]) grads[1]->map() += g.map().cwiseProduct(pa->map());
  });
}

Var scale(Var a, double s) {
  const Tensor& av = a.value();
  const auto k = static_cast<Scalar>(s);
  Tensor out(av.rows(), av.cols());
  out.map() = av.map() * k;
  return a.tape().record(std::move(out), {a}, [k](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map() * k;
  });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  out.map() = av.map().cwiseMax(Scalar{0});
  return a.tape().record(std::move(out), {a}, [pa = &av](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    auto gi = grads[0]->values();
    auto x = pa->values();
    auto go = g.values();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (x[i] > 0) gi[i] += go[i];
    }
  });
}

Var sigmoid(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.rows(), av.cols());
  auto x = av.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
  Tensor saved = a.requires_grad() ? out : Tensor();
  return a.tape().record(std::move(out), {a}, [s = std::move(saved)](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    auto gi = grads[0]->values();
    auto sv = s.values();
    auto go = g.values();
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * sv[i] * (Scalar{1} - sv[i]);
  });
}

Var log(Var a, double eps) {
  const Tensor& av = a.value();
  const auto e = static_cast<Scalar>(eps);
  Tensor out(av.rows(), av.cols());
  auto x = av.values();
  auto y = out.values();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::log(std::max(x[i], e));
  return a.tape().record(std::move(out), {a}, [pa = &av, e](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    auto gi = grads[0]->values();
    auto x = pa->values();
    auto go = g.values();
    for (std::size_t i = 0; i < gi.size(); ++i) {
      if (x[i] > e) gi[i] += go[i] / x[i];
    }
  });
}

Var dropout(Var a, double p, bool train, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout probability must lie in [0, 1)");
  const Tensor& av = a.value();
  if (!train || p == 0.0) {
    return a.tape().record(Tensor(av), {a}, [](const Tensor& g, auto grads) {
      if (grads[0]) grads[0]->map() += g.map();
    });
  }
  const auto keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  Tensor mask(av.rows(), av.cols());
  for (Scalar& m : mask.values()) m = keep(rng) ? keep_scale : Scalar{0};
  Tensor out(av.rows(), av.cols());
  out.map() = av.map().cwiseProduct(mask.map());
  return a.tape().record(std::move(out), {a}, [mask = std::move(mask)](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map().cwiseProduct(mask.map());
  });
}

Var softmax_rows(Var a) {
  const Tensor& av = a.value();
  require(av.cols() > 0, "softmax_rows: zero columns");
  Tensor out(av.rows(), av.cols());
  softmax_into(av, out);
  Tensor saved = a.requires_grad() ? out : Tensor();
  return a.tape().record(std::move(out), {a}, [s = std::move(saved)](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t r = 0; r < s.rows(); ++r) {
      auto sr = s.row(r);
      auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < sr.size(); ++c) dot += static_cast<double>(gr[c]) * sr[c];
      auto gi = grads[0]->row(r);
      for (std::size_t c = 0; c < sr.size(); ++c) gi[c] += sr[c] * static_cast<Scalar>(gr[c] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& av = a.value();
  require(av.cols() > 0, "log_softmax_rows: zero columns");
  Tensor out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    const auto lse = static_cast<Scalar>(log_sum_exp(av.row(r)));
    auto x = av.row(r);
    auto y = out.row(r);
    for (std::size_t c = 0; c < x.size(); ++c) y[c] = x[c] - lse;
  }
  Tensor saved = a.requires_grad() ? out : Tensor();
  return a.tape().record(std::move(out), {a}, [ls = std::move(saved)](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t r = 0; r < ls.rows(); ++r) {
      auto gr = g.row(r);
      double total = 0.0;
      for (Scalar v : gr) total += v;
      auto lr = ls.row(r);
      auto gi = grads[0]->row(r);
      for (std::size_t c = 0; c < gr.size(); ++c) gi[c] += gr[c] - std::exp(lr[c]) * static_cast<Scalar>(total);
    }
  });
}

Var sum(Var a) {
  const Tensor& av = a.value();
  double total = 0.0;
  for (Scalar v : av.values()) total += v;
  return a.tape().record(Tensor::scalar(static_cast<Scalar>(total)), {a}, [](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map().array() += g.item();
  });
}

Var mean(Var a) {
  require(a.value().size() > 0, "mean of an empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var l2_row_distances(Var h, Var e) {
  const Tensor& hv = h.value();
  const Tensor& ev = e.value();
  require(hv.cols() == ev.cols(), "l2_row_distances: embedding dims differ (" + dims(hv) + " vs " + dims(ev) + ")");
  Tensor out(hv.rows(), ev.rows());
  auto hn = hv.map().rowwise().squaredNorm().eval();
  auto en = ev.map().rowwise().squaredNorm().eval();
  out.map().noalias() = Scalar{-2} * hv.map() * ev.map().transpose();
  out.map().colwise() += hn;
  out.map().rowwise() += en.transpose();
  for (Scalar& v : out.values()) v = std::sqrt(std::max(v, Scalar{0}));
  Tensor saved = (h.requires_grad() || e.requires_grad()) ? out : Tensor();
  return h.tape().record(std::move(out), {h, e},
                         [ph = &hv, pe = &ev, d = std::move(saved)](const Tensor& g, auto grads) {
                           // w_ij = g_ij / d_ij (zero where d vanishes)
                           Tensor w(d.rows(), d.cols());
                           auto wv = w.values();
                           auto dv = d.values();
                           auto gv = g.values();
                           for (std::size_t i = 0; i < wv.size(); ++i) {
                             wv[i] = dv[i] > static_cast<Scalar>(kLogEpsilon) ? gv[i] / dv[i] : Scalar{0};
                           }
                           if (grads[0]) {
                             auto gh = grads[0]->map();
                             gh += w.map().rowwise().sum().asDiagonal() * ph->map();
                             gh.noalias() -= w.map() * pe->map();
                           }
                           if (grads[1]) {
                             auto ge = grads[1]->map();
                             ge += w.map().colwise().sum().transpose().asDiagonal() * pe->map();
                             ge.noalias() -= w.map().transpose() * ph->map();
                           }
                         });
}

namespace {

// Rows scaled to unit length; norms clamped below at eps.
Tensor unit_rows(const Tensor& x, std::vector<Scalar>& norms, double eps) {
  Tensor out(x.rows(), x.cols());
  norms.resize(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double sq = 0.0;
    for (Scalar v : x.row(r)) sq += static_cast<double>(v) * v;
    norms[r] = static_cast<Scalar>(std::max(std::sqrt(sq), eps));
    auto src = x.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = src[c] / norms[r];
  }
  return out;
}

// Gradient through x -> x / max(|x|, eps) given the gradient w.r.t. the unit rows.
void unit_rows_backward(const Tensor& unit, const std::vector<Scalar>& norms, const Tensor& x, const Tensor& gunit,
                        Tensor& gx, double eps) {
  for (std::size_t r = 0; r < unit.rows(); ++r) {
    auto u = unit.row(r);
    auto gu = gunit.row(r);
    auto out = gx.row(r);
    double sq = 0.0;
    for (Scalar v : x.row(r)) sq += static_cast<double>(v) * v;
    if (std::sqrt(sq) <= eps) {
      for (std::size_t c = 0; c < u.size(); ++c) out[c] += gu[c] / norms[r];
      continue;
    }
    double dot = 0.0;
    for (std::size_t c = 0; c < u.size(); ++c) dot += static_cast<double>(gu[c]) * u[c];
    for (std::size_t c = 0; c < u.size(); ++c) out[c] += (gu[c] - static_cast<Scalar>(dot) * u[c]) / norms[r];
  }
}

}  // namespace

Var cosine_similarity_rows(Var h, Var e, double eps) {
  const Tensor& hv = h.value();
  const Tensor& ev = e.value();
  require(hv.cols() == ev.cols(), "cosine_similarity_rows: embedding dims differ");
  std::vector<Scalar> hn, en;
  Tensor hu = unit_rows(hv, hn, eps);
  Tensor eu = unit_rows(ev, en, eps);
  Tensor out(hv.rows(), ev.rows());
  out.map().noalias() = hu.map() * eu.map().transpose();
  return h.tape().record(
      std::move(out), {h, e},
      [ph = &hv, pe = &ev, hu = std::move(hu), eu = std::move(eu), hn = std::move(hn), en = std::move(en),
       eps](const Tensor& g, auto grads) {
        if (grads[0]) {
          Tensor ghu(hu.rows(), hu.cols());
          ghu.map().noalias() = g.map() * eu.map();
          unit_rows_backward(hu, hn, *ph, ghu, *grads[0], eps);
        }
        if (grads[1]) {
          Tensor geu(eu.rows(), eu.cols());
          geu.map().noalias() = g.map().transpose() * hu.map();
          unit_rows_backward(eu, en, *pe, geu, *grads[1], eps);
        }
      });
}

Var cosine_row_error(Var v, Var vhat, double gamma, double eps) {
  const Tensor& vv = v.value();
  const Tensor& hv = vhat.value();
  require(vv.same_shape(hv), "cosine_row_error: shapes differ (" + dims(vv) + " vs " + dims(hv) + ")");
  require(gamma >= 1.0, "cosine_row_error: gamma must be >= 1");
  const std::size_t n = vv.rows();
  std::vector<Scalar> vn, hn;
  Tensor vu = unit_rows(vv, vn, eps);
  Tensor hu = unit_rows(hv, hn, eps);
  std::vector<Scalar> cosine(n);
  Tensor out(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    double dot = 0.0;
    auto a = vu.row(r);
    auto b = hu.row(r);
    for (std::size_t c = 0; c < a.size(); ++c) dot += static_cast<double>(a[c]) * b[c];
    cosine[r] = static_cast<Scalar>(dot);
    out(r, 0) = static_cast<Scalar>(std::pow(std::max(1.0 - dot, 0.0), gamma));
  }
  return v.tape().record(
      std::move(out), {v, vhat},
      [pv = &vv, ph = &hv, vu = std::move(vu), hu = std::move(hu), vn = std::move(vn), hn = std::move(hn),
       cosine = std::move(cosine), gamma, eps](const Tensor& g, auto grads) {
        // d err / d cos
        std::vector<Scalar> dcos(cosine.size());
        for (std::size_t r = 0; r < cosine.size(); ++r) {
          const double base = std::max(1.0 - static_cast<double>(cosine[r]), 0.0);
          const double d = gamma == 1.0 ? -1.0 : -gamma * std::pow(base, gamma - 1.0);
          dcos[r] = static_cast<Scalar>(d) * g(r, 0);
        }
        if (grads[0]) {
          Tensor gu(vu.rows(), vu.cols());
          for (std::size_t r = 0; r < gu.rows(); ++r) {
            auto src = hu.row(r);
            auto dst = gu.row(r);
            for (std::size_t c = 0; c < src.size(); ++c) dst[c] = dcos[r] * src[c];
          }
          unit_rows_backward(vu, vn, *pv, gu, *grads[0], eps);
        }
        if (grads[1]) {
          Tensor gu(hu.rows(), hu.cols());
          for (std::size_t r = 0; r < gu.rows(); ++r) {
            auto src = vu.row(r);
            auto dst = gu.row(r);
            for (std::size_t c = 0; c < src.size(); ++c) dst[c] = dcos[r] * src[c];
          }
          unit_rows_backward(hu, hn, *ph, gu, *grads[1], eps);
        }
      });
}

Var cross_entropy_rows(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  require(labels.size() == lv.rows(), "cross_entropy_rows: label count != rows");
  Tensor out(lv.rows(), 1);
  for (std::size_t r = 0; r < lv.rows(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= lv.cols()) {
      throw ShapeError("cross_entropy_rows: label out of range");
    }
    out(r, 0) = static_cast<Scalar>(log_sum_exp(lv.row(r)) - lv(r, static_cast<std::size_t>(labels[r])));
  }
  std::vector<int> y(labels.begin(), labels.end());
  return logits.tape().record(std::move(out), {logits}, [pl = &lv, y = std::move(y)](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    Tensor s(pl->rows(), pl->cols());
    softmax_into(*pl, s);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      s(r, static_cast<std::size_t>(y[r])) -= Scalar{1};
      auto gi = grads[0]->row(r);
      auto sr = s.row(r);
      for (std::size_t c = 0; c < sr.size(); ++c) gi[c] += g(r, 0) * sr[c];
    }
  });
}

Var kl_rows(Var p, Var q, double eps) {
  const Tensor& pv = p.value();
  const Tensor& qv = q.value();
  require(pv.same_shape(qv), "kl_rows: shapes differ (" + dims(pv) + " vs " + dims(qv) + ")");
  const auto e = static_cast<Scalar>(eps);
  Tensor out(pv.rows(), 1);
  for (std::size_t r = 0; r < pv.rows(); ++r) {
    double total = 0.0;
    auto pr = pv.row(r);
    auto qr = qv.row(r);
    for (std::size_t c = 0; c < pr.size(); ++c) {
      if (pr[c] <= 0) continue;
      total += static_cast<double>(pr[c]) *
               (std::log(static_cast<double>(std::max(pr[c], e))) - std::log(static_cast<double>(std::max(qr[c], e))));
    }
    out(r, 0) = static_cast<Scalar>(total);
  }
  return p.tape().record(std::move(out), {p, q}, [pp = &pv, pq = &qv, e](const Tensor& g, auto grads) {
    for (std::size_t r = 0; r < pp->rows(); ++r) {
      auto pr = pp->row(r);
      auto qr = pq->row(r);
      const Scalar gr = g(r, 0);
      if (grads[0]) {
        auto gp = grads[0]->row(r);
        for (std::size_t c = 0; c < pr.size(); ++c) {
          const Scalar lq = std::log(std::max(qr[c], e));
          gp[c] += gr * (pr[c] > e ? std::log(pr[c]) - lq + Scalar{1} : std::log(e) - lq);
        }
      }
      if (grads[1]) {
        auto gq = grads[1]->row(r);
        for (std::size_t c = 0; c < pr.size(); ++c) {
          if (qr[c] > e && pr[c] > 0) gq[c] -= gr * pr[c] / qr[c];
        }
      }
    }
  });
}

Var select_rows(Var a, std::span<const std::size_t> idx) {
  const Tensor& av = a.value();
  Tensor out = av.gather_rows(idx);
  std::vector<std::size_t> rows(idx.begin(), idx.end());
  return a.tape().record(std::move(out), {a}, [rows = std::move(rows)](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto src = g.row(i);
      auto dst = grads[0]->row(rows[i]);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
  });
}

Var stop_gradient(Var a) { return a.tape().constant(a.value()); }

Var straight_through_quantize(Var h, Var e, std::span<const int> z) {
  const Tensor& hv = h.value();
  const Tensor& ev = e.value();
  require(hv.cols() == ev.cols(), "straight_through_quantize: embedding dims differ");
  require(z.size() == hv.rows(), "straight_through_quantize: one code per row required");
  Tensor out(hv.rows(), hv.cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (z[i] < 0 || static_cast<std::size_t>(z[i]) >= ev.rows()) {
      throw std::out_of_range("straight_through_quantize: code id " + std::to_string(z[i]) + " outside [0, " +
                              std::to_string(ev.rows()) + ")");
    }
    auto src = ev.row(static_cast<std::size_t>(z[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  // Only h is an input: the codebook is reached through the explicit VQ term.
  return h.tape().record(std::move(out), {h}, [](const Tensor& g, auto grads) {
    if (grads[0]) grads[0]->map() += g.map();
  });
}

Var spmm(const CsrMatrix& m, Var a) {
  const Tensor& av = a.value();
  require(m.cols == av.rows(), "spmm: sparse matrix has " + std::to_string(m.cols) + " columns, dense input has " +
                                   std::to_string(av.rows()) + " rows");
  const std::size_t d = av.cols();
  Tensor out(m.rows, d);
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto dst = out.row(r);
    auto idx = m.row_indices(r);
    auto val = m.row_values(r);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto w = static_cast<Scalar>(val[k]);
      auto src = av.row(idx[k]);
      for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
    }
  }
  return a.tape().record(std::move(out), {a}, [pm = &m, d](const Tensor& g, auto grads) {
    if (!grads[0]) return;
    for (std::size_t r = 0; r < pm->rows; ++r) {
      auto src = g.row(r);
      auto idx = pm->row_indices(r);
      auto val = pm->row_values(r);
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto w = static_cast<Scalar>(val[k]);
        auto dst = grads[0]->row(idx[k]);
        for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
      }
    }
  });
}

namespace {

// Fills `block` with A - sigmoid(x_b x^T) for rows [r0, r1) and returns the
// sum of squares.
double edge_block(const Tensor& x, const CsrMatrix& adj, std::size_t r0, std::size_t r1, Tensor& block) {
  const std::size_t n = x.rows();
  block = Tensor(r1 - r0, n);
  block.map().noalias() =
      x.map().middleRows(static_cast<Eigen::Index>(r0), static_cast<Eigen::Index>(r1 - r0)) * x.map().transpose();
  double total = 0.0;
  for (std::size_t i = 0; i < r1 - r0; ++i) {
    auto row = block.row(i);
    for (Scalar& v : row) v = -stable_sigmoid(v);
    auto idx = adj.row_indices(r0 + i);
    auto val = adj.row_values(r0 + i);
    for (std::size_t k = 0; k < idx.size(); ++k) row[idx[k]] += static_cast<Scalar>(val[k]);
    for (Scalar v : row) total += static_cast<double>(v) * v;
  }
  return total;
}

}  // namespace

Var edge_reconstruction_error(Var x, const CsrMatrix& adjacency, std::size_t chunk_rows) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.rows();
  require(adjacency.rows == n && adjacency.cols == n, "edge_reconstruction_error: adjacency must be N x N");
  require(n > 0, "edge_reconstruction_error: empty input");
  chunk_rows = std::max<std::size_t>(chunk_rows, 1);
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(n));
  double total = 0.0;
  Tensor block;
  for (std::size_t r0 = 0; r0 < n; r0 += chunk_rows) {
    total += edge_block(xv, adjacency, r0, std::min(n, r0 + chunk_rows), block);
  }
  return x.tape().record(
      Tensor::scalar(static_cast<Scalar>(total * norm)), {x},
      [px = &xv, pa = &adjacency, chunk_rows, norm](const Tensor& g, auto grads) {
        if (!grads[0]) return;
        const Tensor& xv = *px;
        const std::size_t n = xv.rows();
        const auto coef = static_cast<Scalar>(-2.0 * norm * g.item());
        Tensor block;
        auto gx = grads[0]->map();
        for (std::size_t r0 = 0; r0 < n; r0 += chunk_rows) {
          const std::size_t r1 = std::min(n, r0 + chunk_rows);
          edge_block(xv, *pa, r0, r1, block);
          // G_ij = -2/N^2 * (A_ij - s_ij) * s_ij * (1 - s_ij); recover s from the block.
          for (std::size_t i = 0; i < r1 - r0; ++i) {
            auto row = block.row(i);
            auto idx = pa->row_indices(r0 + i);
            auto val = pa->row_values(r0 + i);
            // s = A - diff; only stored entries of A are non-zero
            std::size_t k = 0;
            for (std::size_t j = 0; j < n; ++j) {
              Scalar a = 0;
              if (k < idx.size() && idx[k] == j) a = static_cast<Scalar>(val[k++]);
              const Scalar diff = row[j];
              const Scalar s = a - diff;
              row[j] = coef * diff * s * (Scalar{1} - s);
            }
          }
          const auto rows = static_cast<Eigen::Index>(r1 - r0);
          const auto start = static_cast<Eigen::Index>(r0);
          gx.middleRows(start, rows).noalias() += block.map() * xv.map();
          gx.noalias() += block.map().transpose() * xv.map().middleRows(start, rows);
        }
      });
}

Var batch_norm(Var a, Var gamma, Var beta, BatchNormState& state, bool train) {
  const Tensor& av = a.value();
  const std::size_t n = av.rows();
  const std::size_t c = av.cols();
  require(gamma.value().rows() == 1 && gamma.value().cols() == c, "batch_norm: gamma must be 1 x cols");
  require(beta.value().rows() == 1 && beta.value().cols() == c, "batch_norm: beta must be 1 x cols");
  if (state.running_mean.empty()) {
    state.running_mean = Tensor(1, c, Scalar{0});
    state.running_var = Tensor(1, c, Scalar{1});
  }
  Tensor mean_t(1, c);
  Tensor inv_std(1, c);
  if (train) {
    require(n > 1, "batch_norm: training needs more than one row");
    for (std::size_t j = 0; j < c; ++j) {
      double m = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += av(i, j);
      m /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (av(i, j) - m) * (av(i, j) - m);
      var /= static_cast<double>(n);
      mean_t(0, j) = static_cast<Scalar>(m);
      inv_std(0, j) = static_cast<Scalar>(1.0 / std::sqrt(var + state.eps));
      const double unbiased = var * static_cast<double>(n) / static_cast<double>(n - 1);
      state.running_mean(0, j) =
          static_cast<Scalar>((1.0 - state.momentum) * state.running_mean(0, j) + state.momentum * m);
      state.running_var(0, j) =
          static_cast<Scalar>((1.0 - state.momentum) * state.running_var(0, j) + state.momentum * unbiased);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean_t(0, j) = state.running_mean(0, j);
      inv_std(0, j) = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(state.running_var(0, j)) + state.eps));
    }
  }
  Tensor xhat(n, c);
  Tensor out(n, c);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      xhat(i, j) = (av(i, j) - mean_t(0, j)) * inv_std(0, j);
      out(i, j) = gv(0, j) * xhat(i, j) + bv(0, j);
    }
  }
  return a.tape().record(
      std::move(out), {a, gamma, beta},
      [xhat = std::move(xhat), inv_std = std::move(inv_std), pg = &gv, train](const Tensor& g, auto grads) {
        const std::size_t n = xhat.rows();
        const std::size_t c = xhat.cols();
        for (std::size_t j = 0; j < c; ++j) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            sum_g += g(i, j);
            sum_gx += static_cast<double>(g(i, j)) * xhat(i, j);
          }
          if (grads[1]) (*grads[1])(0, j) += static_cast<Scalar>(sum_gx);
          if (grads[2]) (*grads[2])(0, j) += static_cast<Scalar>(sum_g);
          if (!grads[0]) continue;
          const double k = static_cast<double>((*pg)(0, j)) * inv_std(0, j);
          for (std::size_t i = 0; i < n; ++i) {
            double gi = g(i, j);
            if (train) gi -= (sum_g + xhat(i, j) * sum_gx) / static_cast<double>(n);
            (*grads[0])(i, j) += static_cast<Scalar>(k * gi);
          }
        }
      });
}

}  // namespace ops
}  // namespace VQG_PRECISION_NS
}  // namespace vqg
