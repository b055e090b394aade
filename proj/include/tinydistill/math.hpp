// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tinydistill/error.hpp"

namespace td {

/// Shift-stable softmax. Rejects empty or non-finite input.
template <class S>
std::vector<S> softmax(std::span<const S> logits) {
  check(!logits.empty(), "softmax: empty input");
  S mx = logits[0];
  for (std::size_t i = 0; i < logits.size(); ++i) {
    check(std::isfinite(static_cast<double>(logits[i])),
          "softmax: non-finite logit at index " + std::to_string(i));
    mx = std::max(mx, logits[i]);
  }
  std::vector<S> out(logits.size());
  S sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

template <class S>
std::vector<S> softmax(const std::vector<S>& logits) {
  return softmax(std::span<const S>(logits));
}

template <class S>
S logsumexp(std::span<const S> v) {
  check(!v.empty(), "logsumexp: empty input");
  S mx = *std::max_element(v.begin(), v.end());
  S sum = 0;
  for (auto x : v) sum += std::exp(x - mx);
  return mx + std::log(sum);
}

/// Forward KL divergence in nats with the 0*ln(0/q)=0 convention.
/// p > 0 where q == 0 is an absolute-continuity violation and is rejected
/// instead of silently overflowing to infinity.
template <class S>
S kl_divergence(std::span<const S> p, std::span<const S> q) {
  check(p.size() == q.size(), "kl_divergence: length mismatch (" +
                                  std::to_string(p.size()) + " vs " +
                                  std::to_string(q.size()) + ")");
  check(!p.empty(), "kl_divergence: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = static_cast<double>(p[i]);
    double qi = static_cast<double>(q[i]);
    if (pi == 0.0) continue;
    check(qi > 0.0, "kl_divergence: infinite divergence, p(" + std::to_string(i) +
                        ") > 0 but q(" + std::to_string(i) + ") = 0");
    sum += pi * std::log(pi / qi);
  }
  // true KL is >= 0; tiny negative sums are accumulated rounding on p ~= q
  if (sum < 0.0 && sum > -1e-12) sum = 0.0;
  return static_cast<S>(sum);
}

template <class S>
S kl_divergence(const std::vector<S>& p, const std::vector<S>& q) {
  return kl_divergence(std::span<const S>(p), std::span<const S>(q));
}

/// Argmax with the deterministic tie rule: lowest index wins.
template <class S>
std::size_t argmax_lowest(std::span<const S> v) {
  check(!v.empty(), "argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

} // namespace td
