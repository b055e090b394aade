// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tinydistill/autograd.hpp"
#include "tinydistill/error.hpp"

namespace td {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// AdamW with decoupled weight decay: the decay is applied directly to the
/// parameters, never folded into the gradient or the moments.
template <class S>
class AdamW {
public:
  AdamW(std::vector<NodePtr<S>> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->size(), S(0));
      v_[i].assign(params_[i]->size(), S(0));
    }
  }

  void step(const std::vector<std::vector<S>>& grads, double lr) {
    check(grads.size() == params_.size(), "adamw: gradient count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
      check(grads[i].size() == params_[i]->size(),
            "adamw: gradient shape mismatch for parameter " + std::to_string(i));
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i]->value;
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = grads[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        const double mj = cfg_.beta1 * static_cast<double>(m[j]) + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * static_cast<double>(v[j]) + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<S>(mj);
        v[j] = static_cast<S>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        upd += lr * cfg_.weight_decay * static_cast<double>(p[j]);
        p[j] = static_cast<S>(static_cast<double>(p[j]) - upd);
      }
    }
  }

  std::uint64_t t() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<S>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<S>& second_moment(std::size_t i) const { return v_[i]; }

private:
  std::vector<NodePtr<S>> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<S>> m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales all gradients by threshold/norm when the global L2 norm exceeds
/// the threshold. Returns the pre-clip global norm.
template <class S>
double clip_gradients(std::vector<std::vector<S>>& grads, double threshold) {
  check(threshold > 0.0, "clip_gradients: threshold must be positive");
  double sq = 0.0;
  for (const auto& g : grads)
    for (auto x : g) sq += static_cast<double>(x) * static_cast<double>(x);
  const double norm = std::sqrt(sq);
  if (norm > threshold) {
    const double s = threshold / norm;
    for (auto& g : grads)
      for (auto& x : g) x = static_cast<S>(static_cast<double>(x) * s);
  }
  return norm;
}

} // namespace td
