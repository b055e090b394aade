// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <type_traits>
#include <vector>

#include "tinydistill/autograd.hpp"
#include "tinydistill/error.hpp"

namespace td {

namespace detail {

// C[m x n] += A[m x k] * B[k x n]
template <class S>
void gemm_nn_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
template <class S>
void gemm_nt_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    S* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const S* brow = b + j * k;
      S acc = 0;
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[k x n] += A[m x k]^T * G[m x n]
template <class S>
void gemm_tn_acc(const S* a, const S* g, S* c, std::size_t m, std::size_t k,
                 std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const S* arow = a + i * k;
    const S* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      S* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

inline void check_matrix(const Shape& s, const char* who) {
  check(s.size() == 2, std::string(who) + ": rank-2 tensor expected");
}

} // namespace detail

/// out[m,n] = a[m,k] * b[k,n]
template <class S>
NodePtr<S> matmul(const NodePtr<S>& a, const NodePtr<S>& b) {
  detail::check_matrix(a->shape, "matmul lhs");
  detail::check_matrix(b->shape, "matmul rhs");
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
  check(b->shape[0] == k, "matmul: inner extents differ: " + std::to_string(k) +
                              " vs " + std::to_string(b->shape[0]));
  auto out = std::make_shared<Node<S>>();
  out->shape = {m, n};
  out->value.assign(m * n, S(0));
  detail::gemm_nn_acc(a->value.data(), b->value.data(), out->value.data(), m, k, n);
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    out->backward = [m, k, n](const Node<S>& self, const std::vector<S>& g,
                              Grads<S>& grads) {
      const auto& a = self.parents[0];
      const auto& b = self.parents[1];
      if (a->requires_grad)
        detail::gemm_nt_acc(g.data(), b->value.data(), grads.of(a.get()).data(), m, n, k);
      if (b->requires_grad)
        detail::gemm_tn_acc(a->value.data(), g.data(), grads.of(b.get()).data(), m, k, n);
    };
  }
  return out;
}

/// out[m,n] = a[m,k] * b[n,k]^T
template <class S>
NodePtr<S> matmul_nt(const NodePtr<S>& a, const NodePtr<S>& b) {
  detail::check_matrix(a->shape, "matmul_nt lhs");
  detail::check_matrix(b->shape, "matmul_nt rhs");
  const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[0];
  check(b->shape[1] == k, "matmul_nt: inner extents differ");
  auto out = std::make_shared<Node<S>>();
  out->shape = {m, n};
  out->value.assign(m * n, S(0));
  detail::gemm_nt_acc(a->value.data(), b->value.data(), out->value.data(), m, k, n);
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    out->backward = [m, k, n](const Node<S>& self, const std::vector<S>& g,
                              Grads<S>& grads) {
      const auto& a = self.parents[0];
      const auto& b = self.parents[1];
      if (a->requires_grad)
        detail::gemm_nn_acc(g.data(), b->value.data(), grads.of(a.get()).data(), m, n, k);
      if (b->requires_grad)
        detail::gemm_tn_acc(g.data(), a->value.data(), grads.of(b.get()).data(), m, n, k);
    };
  }
  return out;
}

/// Elementwise sum of two same-shape tensors.
template <class S>
NodePtr<S> add(const NodePtr<S>& a, const NodePtr<S>& b) {
  check(a->shape == b->shape, "add: shape mismatch");
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.resize(a->size());
  for (std::size_t i = 0; i < a->size(); ++i)
    out->value[i] = a->value[i] + b->value[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    out->backward = [](const Node<S>& self, const std::vector<S>& g, Grads<S>& grads) {
      for (const auto& p : self.parents) {
        if (!p->requires_grad) continue;
        auto& gp = grads.of(p.get());
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
      }
    };
  }
  return out;
}

/// Broadcast add of a length-n vector to every row of a[m,n].
template <class S>
NodePtr<S> add_rowvec(const NodePtr<S>& a, const NodePtr<S>& v) {
  detail::check_matrix(a->shape, "add_rowvec lhs");
  const std::size_t m = a->shape[0], n = a->shape[1];
  check(v->size() == n, "add_rowvec: vector length mismatch");
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.resize(a->size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out->value[i * n + j] = a->value[i * n + j] + v->value[j];
  out->requires_grad = a->requires_grad || v->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, v};
    out->backward = [m, n](const Node<S>& self, const std::vector<S>& g,
                           Grads<S>& grads) {
      const auto& a = self.parents[0];
      const auto& v = self.parents[1];
      if (a->requires_grad) {
        auto& ga = grads.of(a.get());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (v->requires_grad) {
        auto& gv = grads.of(v.get());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gv[j] += g[i * n + j];
      }
    };
  }
  return out;
}

template <class S>
NodePtr<S> scale(const NodePtr<S>& a, S c) {
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.resize(a->size());
  for (std::size_t i = 0; i < a->size(); ++i) out->value[i] = c * a->value[i];
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [c](const Node<S>& self, const std::vector<S>& g, Grads<S>& grads) {
      auto& ga = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    };
  }
  return out;
}

/// Exact GELU, x/2 * (1 + erf(x/sqrt(2))).
template <class S>
NodePtr<S> gelu(const NodePtr<S>& a) {
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.resize(a->size());
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  for (std::size_t i = 0; i < a->size(); ++i) {
    double x = static_cast<double>(a->value[i]);
    out->value[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * kInvSqrt2)));
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [](const Node<S>& self, const std::vector<S>& g, Grads<S>& grads) {
      constexpr double kInvSqrt2 = 0.70710678118654752440;
      constexpr double kInvSqrt2Pi = 0.39894228040143267794;
      const auto& a = self.parents[0];
      auto& ga = grads.of(a.get());
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = static_cast<double>(a->value[i]);
        double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        ga[i] += g[i] * static_cast<S>(cdf + x * pdf);
      }
    };
  }
  return out;
}

/// Row gather: out[t,:] = table[ids[t],:]. Rejects out-of-range ids.
template <class S>
NodePtr<S> embedding_rows(const NodePtr<S>& table,
                          std::shared_ptr<const std::vector<std::int32_t>> ids) {
  detail::check_matrix(table->shape, "embedding table");
  const std::size_t v = table->shape[0], d = table->shape[1];
  for (auto id : *ids)
    check(id >= 0 && static_cast<std::size_t>(id) < v,
          "embedding: token id " + std::to_string(id) + " out of range [0, " +
              std::to_string(v) + ")");
  const std::size_t t = ids->size();
  auto out = std::make_shared<Node<S>>();
  out->shape = {t, d};
  out->value.resize(t * d);
  for (std::size_t i = 0; i < t; ++i) {
    const S* src = table->value.data() + static_cast<std::size_t>((*ids)[i]) * d;
    std::copy(src, src + d, out->value.data() + i * d);
  }
  out->requires_grad = table->requires_grad;
  if (out->requires_grad) {
    out->parents = {table};
    out->backward = [ids, d](const Node<S>& self, const std::vector<S>& g,
                             Grads<S>& grads) {
      auto& gt = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < ids->size(); ++i) {
        S* dst = gt.data() + static_cast<std::size_t>((*ids)[i]) * d;
        const S* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

/// Column slice [c0, c1) of a matrix.
template <class S>
NodePtr<S> slice_cols(const NodePtr<S>& a, std::size_t c0, std::size_t c1) {
  detail::check_matrix(a->shape, "slice_cols");
  const std::size_t m = a->shape[0], n = a->shape[1];
  check(c0 < c1 && c1 <= n, "slice_cols: bad range");
  const std::size_t w = c1 - c0;
  auto out = std::make_shared<Node<S>>();
  out->shape = {m, w};
  out->value.resize(m * w);
  for (std::size_t i = 0; i < m; ++i)
    std::copy(a->value.data() + i * n + c0, a->value.data() + i * n + c1,
              out->value.data() + i * w);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [m, n, c0, w](const Node<S>& self, const std::vector<S>& g,
                                  Grads<S>& grads) {
      auto& ga = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) ga[i * n + c0 + j] += g[i * w + j];
    };
  }
  return out;
}

/// Concatenate same-height matrices along columns.
template <class S>
NodePtr<S> concat_cols(const std::vector<NodePtr<S>>& parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const std::size_t m = parts[0]->shape[0];
  std::size_t n = 0;
  for (const auto& p : parts) {
    detail::check_matrix(p->shape, "concat_cols");
    check(p->shape[0] == m, "concat_cols: row count mismatch");
    n += p->shape[1];
  }
  auto out = std::make_shared<Node<S>>();
  out->shape = {m, n};
  out->value.resize(m * n);
  std::size_t col = 0;
  for (const auto& p : parts) {
    const std::size_t w = p->shape[1];
    for (std::size_t i = 0; i < m; ++i)
      std::copy(p->value.data() + i * w, p->value.data() + (i + 1) * w,
                out->value.data() + i * n + col);
    col += w;
  }
  for (const auto& p : parts) out->requires_grad |= p->requires_grad;
  if (out->requires_grad) {
    out->parents = parts;
    out->backward = [m, n](const Node<S>& self, const std::vector<S>& g,
                           Grads<S>& grads) {
      std::size_t col = 0;
      for (const auto& p : self.parents) {
        const std::size_t w = p->shape[1];
        if (p->requires_grad) {
          auto& gp = grads.of(p.get());
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += g[i * n + col + j];
        }
        col += w;
      }
    };
  }
  return out;
}

/// Row-wise softmax over the allowed entries of a boolean mask; disallowed
/// entries get probability exactly 0, which keeps packed forwards bit-equal
/// to isolated ones. Every row must allow at least one entry.
template <class S>
NodePtr<S> masked_softmax_rows(const NodePtr<S>& a,
                               std::shared_ptr<const std::vector<std::uint8_t>> mask) {
  detail::check_matrix(a->shape, "masked_softmax_rows");
  const std::size_t m = a->shape[0], n = a->shape[1];
  check(mask->size() == m * n, "masked_softmax_rows: mask size mismatch");
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.assign(m * n, S(0));
  for (std::size_t i = 0; i < m; ++i) {
    const S* row = a->value.data() + i * n;
    const std::uint8_t* mrow = mask->data() + i * n;
    S* prow = out->value.data() + i * n;
    S mx = 0;
    bool any = false;
    for (std::size_t j = 0; j < n; ++j)
      if (mrow[j] && (!any || row[j] > mx)) {
        mx = row[j];
        any = true;
      }
    check(any, "masked_softmax_rows: fully masked row " + std::to_string(i));
    S sum = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (mrow[j]) {
        prow[j] = std::exp(row[j] - mx);
        sum += prow[j];
      }
    for (std::size_t j = 0; j < n; ++j)
      if (mrow[j]) prow[j] /= sum;
  }
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    out->backward = [m, n](const Node<S>& self, const std::vector<S>& g,
                           Grads<S>& grads) {
      auto& ga = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < m; ++i) {
        const S* p = self.value.data() + i * n;
        const S* grow = g.data() + i * n;
        S dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += grow[j] * p[j];
        S* garow = ga.data() + i * n;
        for (std::size_t j = 0; j < n; ++j) garow[j] += p[j] * (grow[j] - dot);
      }
    };
  }
  return out;
}

/// Row-wise layer norm with learnable gain and bias.
template <class S>
NodePtr<S> layer_norm_rows(const NodePtr<S>& a, const NodePtr<S>& gain,
                           const NodePtr<S>& bias, S eps = S(1e-5)) {
  detail::check_matrix(a->shape, "layer_norm_rows");
  const std::size_t m = a->shape[0], n = a->shape[1];
  check(gain->size() == n && bias->size() == n, "layer_norm_rows: param length mismatch");
  auto xhat = std::make_shared<std::vector<S>>(m * n);
  auto inv_sigma = std::make_shared<std::vector<S>>(m);
  auto out = std::make_shared<Node<S>>();
  out->shape = a->shape;
  out->value.resize(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const S* row = a->value.data() + i * n;
    S mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<S>(n);
    S var = 0;
    for (std::size_t j = 0; j < n; ++j) {
      S d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + eps);
    (*inv_sigma)[i] = is;
    for (std::size_t j = 0; j < n; ++j) {
      S xh = (row[j] - mean) * is;
      (*xhat)[i * n + j] = xh;
      out->value[i * n + j] = gain->value[j] * xh + bias->value[j];
    }
  }
  out->requires_grad = a->requires_grad || gain->requires_grad || bias->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, gain, bias};
    out->backward = [m, n, xhat, inv_sigma](const Node<S>& self,
                                            const std::vector<S>& g, Grads<S>& grads) {
      const auto& a = self.parents[0];
      const auto& gain = self.parents[1];
      const auto& bias = self.parents[2];
      if (gain->requires_grad) {
        auto& gg = grads.of(gain.get());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j)
            gg[j] += g[i * n + j] * (*xhat)[i * n + j];
      }
      if (bias->requires_grad) {
        auto& gb = grads.of(bias.get());
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
      }
      if (a->requires_grad) {
        auto& ga = grads.of(a.get());
        for (std::size_t i = 0; i < m; ++i) {
          const S* grow = g.data() + i * n;
          const S* xh = xhat->data() + i * n;
          S mean_h = 0, mean_hx = 0;
          for (std::size_t j = 0; j < n; ++j) {
            S h = gain->value[j] * grow[j];
            mean_h += h;
            mean_hx += h * xh[j];
          }
          mean_h /= static_cast<S>(n);
          mean_hx /= static_cast<S>(n);
          const S is = (*inv_sigma)[i];
          S* garow = ga.data() + i * n;
          for (std::size_t j = 0; j < n; ++j) {
            S h = gain->value[j] * grow[j];
            garow[j] += is * (h - mean_h - xh[j] * mean_hx);
          }
        }
      }
    };
  }
  return out;
}

/// Per-row targets for the masked cross entropy below. weights[t] == 0
/// excludes row t entirely.
template <class S>
struct CeTargets {
  std::vector<std::int32_t> targets;
  std::vector<S> weights;
};

/// Weighted masked cross entropy over logits[T,V]:
///   sum_t w_t * (logsumexp(z_t) - z_t[y_t])
/// Gradient per row is w_t * (softmax(z_t) - onehot(y_t)).
template <class S>
NodePtr<S> cross_entropy_rows(const NodePtr<S>& logits,
                              std::shared_ptr<const CeTargets<std::type_identity_t<S>>> ce) {
  detail::check_matrix(logits->shape, "cross_entropy_rows");
  const std::size_t t = logits->shape[0], v = logits->shape[1];
  check(ce->targets.size() == t && ce->weights.size() == t,
        "cross_entropy_rows: target length mismatch");
  auto probs = std::make_shared<std::vector<S>>(t * v, S(0));
  double loss = 0;
  for (std::size_t i = 0; i < t; ++i) {
    if (ce->weights[i] == S(0)) continue;
    const std::int32_t y = ce->targets[i];
    check(y >= 0 && static_cast<std::size_t>(y) < v,
          "cross_entropy_rows: target out of range");
    const S* row = logits->value.data() + i * v;
    S mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    S sum = 0;
    S* prow = probs->data() + i * v;
    for (std::size_t j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - mx);
      sum += prow[j];
    }
    for (std::size_t j = 0; j < v; ++j) prow[j] /= sum;
    const double lse = static_cast<double>(mx) + std::log(static_cast<double>(sum));
    loss += static_cast<double>(ce->weights[i]) *
            (lse - static_cast<double>(row[static_cast<std::size_t>(y)]));
  }
  auto out = std::make_shared<Node<S>>();
  out->shape = {1};
  out->value = {static_cast<S>(loss)};
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    out->parents = {logits};
    out->backward = [t, v, ce, probs](const Node<S>& self, const std::vector<S>& g,
                                      Grads<S>& grads) {
      const S seed = g[0];
      auto& gl = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < t; ++i) {
        const S w = ce->weights[i];
        if (w == S(0)) continue;
        const S* prow = probs->data() + i * v;
        S* grow = gl.data() + i * v;
        for (std::size_t j = 0; j < v; ++j) grow[j] += seed * w * prow[j];
        grow[static_cast<std::size_t>(ce->targets[i])] -= seed * w;
      }
    };
  }
  return out;
}

/// Teacher supervision for kd_loss_rows: per supervised row, the k support
/// token ids and the teacher probabilities renormalized on that support.
template <class S>
struct KdTargets {
  std::size_t k = 0;
  std::vector<std::int32_t> rows;      // logits row per supervised position
  std::vector<std::int32_t> ids;       // rows.size() * k support token ids
  std::vector<S> probs;                // rows.size() * k teacher probabilities
  std::vector<S> weights;              // per supervised position
};

/// Counters surfaced to the trainer log.
struct KdLossStats {
  std::atomic<std::uint64_t> clamped{0};
};

inline constexpr double kKdProbFloor = 1e-12;

/// Truncated-support forward KL against the student's full-vocabulary
/// softmax: sum_c P(c) * (ln P(c) - ln Q(c)) with Q left un-renormalized.
/// Q underflow on the support is clamped to 1e-12 in the loss value; the
/// gradient is the exact un-clamped one, q - p on support and q elsewhere
/// (times the row weight), so mass outside the support is only penalized
/// through the softmax normalizer.
template <class S>
NodePtr<S> kd_loss_rows(const NodePtr<S>& logits,
                        std::shared_ptr<const KdTargets<std::type_identity_t<S>>> kd,
                        KdLossStats* stats = nullptr) {
  detail::check_matrix(logits->shape, "kd_loss_rows");
  const std::size_t t = logits->shape[0], v = logits->shape[1];
  const std::size_t k = kd->k;
  const std::size_t r = kd->rows.size();
  check(kd->ids.size() == r * k && kd->probs.size() == r * k && kd->weights.size() == r,
        "kd_loss_rows: target sizes inconsistent");
  auto q = std::make_shared<std::vector<S>>(r * v);
  double loss = 0;
  for (std::size_t s = 0; s < r; ++s) {
    const std::int32_t row = kd->rows[s];
    check(row >= 0 && static_cast<std::size_t>(row) < t, "kd_loss_rows: row out of range");
    const S* zrow = logits->value.data() + static_cast<std::size_t>(row) * v;
    S mx = zrow[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, zrow[j]);
    S sum = 0;
    S* qrow = q->data() + s * v;
    for (std::size_t j = 0; j < v; ++j) {
      qrow[j] = std::exp(zrow[j] - mx);
      sum += qrow[j];
    }
    for (std::size_t j = 0; j < v; ++j) qrow[j] /= sum;
    double pos = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const std::int32_t id = kd->ids[s * k + c];
      check(id >= 0 && static_cast<std::size_t>(id) < v, "kd_loss_rows: support id out of range");
      const double p = static_cast<double>(kd->probs[s * k + c]);
      if (p == 0.0) continue;
      double qv = static_cast<double>(qrow[static_cast<std::size_t>(id)]);
      if (qv < kKdProbFloor) {
        qv = kKdProbFloor;
        if (stats) stats->clamped.fetch_add(1, std::memory_order_relaxed);
      }
      pos += p * (std::log(p) - std::log(qv));
    }
    loss += static_cast<double>(kd->weights[s]) * pos;
  }
  auto out = std::make_shared<Node<S>>();
  out->shape = {1};
  out->value = {static_cast<S>(loss)};
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    out->parents = {logits};
    out->backward = [t, v, k, r, kd, q](const Node<S>& self, const std::vector<S>& g,
                                        Grads<S>& grads) {
      (void)t;
      const S seed = g[0];
      auto& gl = grads.of(self.parents[0].get());
      for (std::size_t s = 0; s < r; ++s) {
        const S w = seed * kd->weights[s];
        const S* qrow = q->data() + s * v;
        S* grow = gl.data() + static_cast<std::size_t>(kd->rows[s]) * v;
        for (std::size_t j = 0; j < v; ++j) grow[j] += w * qrow[j];
        for (std::size_t c = 0; c < k; ++c)
          grow[static_cast<std::size_t>(kd->ids[s * k + c])] -= w * kd->probs[s * k + c];
      }
    };
  }
  return out;
}

} // namespace td
