// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <vector>

#include "fd_check.hpp"
#include "tinydistill/autograd.hpp"
#include "tinydistill/math.hpp"
#include "tinydistill/ops.hpp"
#include "tinydistill/rng.hpp"

using namespace td;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

// weighted sum of all entries; ensures every output element feeds the loss
NodePtr<double> weighted_sum(const NodePtr<double>& x, Rng& rng) {
  auto w = make_constant<double>({1, x->size()}, random_vec(rng, x->size()));
  auto col = std::make_shared<Node<double>>();
  col->shape = {x->size(), 1};
  col->value = x->value;
  col->requires_grad = x->requires_grad;
  if (col->requires_grad) {
    col->parents = {x};
    col->backward = [](const Node<double>& self, const std::vector<double>& g,
                       Grads<double>& grads) {
      auto& gp = grads.of(self.parents[0].get());
      for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
    };
  }
  return matmul(w, col);
}

} // namespace

TEST_CASE("backward on linear form is exact", "[autodiff]") {
  Rng rng(3);
  const std::size_t n = 6;
  auto w = make_leaf<double>({1, n}, random_vec(rng, n), true);
  auto x = make_constant<double>({n, 1}, random_vec(rng, n));
  auto loss = matmul(w, x);
  Grads<double> grads;
  backward(loss, grads);
  const auto& gw = *grads.find(w.get());
  for (std::size_t i = 0; i < n; ++i) REQUIRE(gw[i] == x->value[i]); // exact
}

TEST_CASE("backward rejects non-scalar loss", "[autodiff]") {
  auto a = make_leaf<double>({2, 2}, {1, 2, 3, 4}, true);
  auto b = scale(a, 2.0);
  Grads<double> grads;
  REQUIRE_THROWS_AS(backward(b, grads), Error);
}

TEST_CASE("off-path parameters get zero gradients", "[autodiff]") {
  Rng rng(5);
  auto used = make_leaf<double>({1, 3}, random_vec(rng, 3), true);
  auto unused = make_leaf<double>({1, 3}, random_vec(rng, 3), true);
  auto x = make_constant<double>({3, 1}, random_vec(rng, 3));
  auto loss = matmul(used, x);
  Grads<double> grads;
  backward(loss, grads);
  REQUIRE(grads.find(used.get()) != nullptr);
  REQUIRE(grads.find(unused.get()) == nullptr);
  auto zeros = grads.get_or_zero(unused);
  for (auto g : zeros) REQUIRE(g == 0.0);
}

TEST_CASE("softmax cross entropy gradient equals probs minus onehot", "[autodiff]") {
  Rng rng(17);
  const std::size_t t = 4, v = 9;
  auto logits = make_leaf<double>({t, v}, random_vec(rng, t * v, 2.0), true);
  auto ce = std::make_shared<CeTargets<double>>();
  ce->targets = {3, 0, 7, 5};
  ce->weights = {1.0, 1.0, 1.0, 1.0};
  auto loss = cross_entropy_rows(logits, ce);
  Grads<double> grads;
  backward(loss, grads);
  const auto& gl = *grads.find(logits.get());
  for (std::size_t i = 0; i < t; ++i) {
    std::span<const double> row(logits->value.data() + i * v, v);
    auto probs = softmax(row);
    for (std::size_t j = 0; j < v; ++j) {
      double expected = probs[j] - (ce->targets[i] == static_cast<int>(j) ? 1.0 : 0.0);
      REQUIRE(gl[i * v + j] == Catch::Approx(expected).margin(1e-12));
    }
  }
  // and against the independent finite-difference oracle
  auto reforward = [&] { return cross_entropy_rows(logits, ce)->value[0]; };
  auto numeric = fd::central_diff(logits->value, reforward);
  REQUIRE(fd::max_rel_err(gl, numeric) < 1e-5);
}

TEST_CASE("randomized per-op finite difference checks", "[autodiff]") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + rng.below(3), k = 2 + rng.below(3), n = 2 + rng.below(3);
    {
      auto a = make_leaf<double>({m, k}, random_vec(rng, m * k), true);
      auto b = make_leaf<double>({k, n}, random_vec(rng, k * n), true);
      Rng wr(100 + trial);
      auto build = [&] {
        Rng w2(100 + trial);
        return weighted_sum(matmul(a, b), w2)->value[0];
      };
      auto loss = weighted_sum(matmul(a, b), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(b),
                              fd::central_diff(b->value, build)) < 1e-5);
    }
    {
      auto a = make_leaf<double>({m, k}, random_vec(rng, m * k), true);
      auto b = make_leaf<double>({n, k}, random_vec(rng, n * k), true);
      auto build = [&] {
        Rng w2(200 + trial);
        return weighted_sum(matmul_nt(a, b), w2)->value[0];
      };
      Rng wr(200 + trial);
      auto loss = weighted_sum(matmul_nt(a, b), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(b),
                              fd::central_diff(b->value, build)) < 1e-5);
    }
    {
      auto a = make_leaf<double>({m, n}, random_vec(rng, m * n), true);
      auto v = make_leaf<double>({n}, random_vec(rng, n), true);
      auto build = [&] {
        Rng w2(300 + trial);
        return weighted_sum(gelu(add_rowvec(a, v)), w2)->value[0];
      };
      Rng wr(300 + trial);
      auto loss = weighted_sum(gelu(add_rowvec(a, v)), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(v),
                              fd::central_diff(v->value, build)) < 1e-5);
    }
    {
      auto a = make_leaf<double>({m, n}, random_vec(rng, m * n), true);
      auto gn = make_leaf<double>({n}, random_vec(rng, n, 0.5), true);
      auto bs = make_leaf<double>({n}, random_vec(rng, n, 0.5), true);
      auto build = [&] {
        Rng w2(400 + trial);
        return weighted_sum(layer_norm_rows(a, gn, bs), w2)->value[0];
      };
      Rng wr(400 + trial);
      auto loss = weighted_sum(layer_norm_rows(a, gn, bs), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(gn),
                              fd::central_diff(gn->value, build)) < 1e-5);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(bs),
                              fd::central_diff(bs->value, build)) < 1e-5);
    }
    {
      // causal mask over a square score matrix
      auto a = make_leaf<double>({m, m}, random_vec(rng, m * m), true);
      auto mask = std::make_shared<std::vector<std::uint8_t>>(m * m, 0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j <= i; ++j) (*mask)[i * m + j] = 1;
      auto build = [&] {
        Rng w2(500 + trial);
        return weighted_sum(masked_softmax_rows(a, mask), w2)->value[0];
      };
      Rng wr(500 + trial);
      auto loss = weighted_sum(masked_softmax_rows(a, mask), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
    }
    {
      const std::size_t vsz = 5 + rng.below(4);
      auto table = make_leaf<double>({vsz, n}, random_vec(rng, vsz * n), true);
      auto ids = std::make_shared<std::vector<std::int32_t>>();
      for (std::size_t i = 0; i < m; ++i)
        ids->push_back(static_cast<std::int32_t>(rng.below(vsz)));
      auto build = [&] {
        Rng w2(600 + trial);
        return weighted_sum(embedding_rows(table, ids), w2)->value[0];
      };
      Rng wr(600 + trial);
      auto loss = weighted_sum(embedding_rows(table, ids), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(table),
                              fd::central_diff(table->value, build)) < 1e-5);
    }
    {
      auto a = make_leaf<double>({m, 6}, random_vec(rng, m * 6), true);
      auto build_expr = [&]() {
        auto s1 = slice_cols(a, 0, 2);
        auto s2 = slice_cols(a, 2, 6);
        return concat_cols<double>({s2, s1});
      };
      auto build = [&] {
        Rng w2(700 + trial);
        return weighted_sum(build_expr(), w2)->value[0];
      };
      Rng wr(700 + trial);
      auto loss = weighted_sum(build_expr(), wr);
      Grads<double> grads;
      backward(loss, grads);
      REQUIRE(fd::max_rel_err(grads.get_or_zero(a),
                              fd::central_diff(a->value, build)) < 1e-5);
    }
  }
}

TEST_CASE("kd loss gradient matches finite differences and support discipline",
          "[autodiff]") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t t = 3, v = 8, k = 3;
    auto logits = make_leaf<double>({t, v}, random_vec(rng, t * v, 1.5), true);
    auto kd = std::make_shared<KdTargets<double>>();
    kd->k = k;
    kd->rows = {0, 2};
    kd->weights = {0.5, 0.5};
    for (std::size_t s = 0; s < kd->rows.size(); ++s) {
      // distinct support ids per row
      std::vector<std::int32_t> pool(v);
      for (std::size_t i = 0; i < v; ++i) pool[i] = static_cast<std::int32_t>(i);
      Rng sr(rng.bits());
      sr.shuffle(pool);
      double sum = 0;
      std::vector<double> p(k);
      for (auto& x : p) {
        x = sr.uniform() + 0.05;
        sum += x;
      }
      for (std::size_t c = 0; c < k; ++c) {
        kd->ids.push_back(pool[c]);
        kd->probs.push_back(p[c] / sum);
      }
    }
    auto build = [&] { return kd_loss_rows(logits, kd)->value[0]; };
    auto loss = kd_loss_rows(logits, kd);
    Grads<double> grads;
    backward(loss, grads);
    const auto analytic = grads.get_or_zero(logits);
    REQUIRE(fd::max_rel_err(analytic, fd::central_diff(logits->value, build)) < 1e-5);

    // support discipline: off-support gradient equals w * q exactly (the
    // softmax-normalizer term), nothing else
    for (std::size_t s = 0; s < kd->rows.size(); ++s) {
      const auto row = static_cast<std::size_t>(kd->rows[s]);
      std::span<const double> zrow(logits->value.data() + row * v, v);
      auto q = softmax(zrow);
      for (std::size_t j = 0; j < v; ++j) {
        bool on_support = false;
        for (std::size_t c = 0; c < k; ++c)
          if (kd->ids[s * k + c] == static_cast<std::int32_t>(j)) on_support = true;
        if (!on_support)
          REQUIRE(analytic[row * v + j] ==
                  Catch::Approx(kd->weights[s] * q[j]).margin(1e-12));
      }
    }
  }
}
