// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tinydistill/autograd.hpp"
#include "tinydistill/error.hpp"
#include "tinydistill/ops.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/tokenizer.hpp"

namespace td {

struct ModelConfig {
  std::uint32_t layers = 2;
  std::uint32_t d_model = 64;
  std::uint32_t n_heads = 2;
  std::uint32_t d_ff = 256;
  std::uint32_t max_context = 128;
  std::uint32_t vocab_size = 0;
  std::uint64_t init_seed = 1;

  void validate() const {
    check_config(layers > 0 && d_model > 0 && n_heads > 0 && d_ff > 0,
                 "model config: extents must be positive");
    check_config(d_model % n_heads == 0, "model config: width not divisible by heads");
    check_config(vocab_size > 0, "model config: vocabulary size unset");
    check_config(max_context > 1, "model config: context too small");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Pre-norm decoder-only transformer with learned absolute position
/// embeddings. Positions restart at every segment boundary and attention is
/// confined to the causal prefix of the same segment, which makes a packed
/// forward bit-identical to forwarding each sample in isolation.
template <class S>
class Transformer {
public:
  Transformer(ModelConfig cfg, bool trainable = true) : cfg_(cfg) {
    cfg.validate();
    Rng rng(cfg.init_seed);
    const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
    const double base_std = 0.02;
    // residual output projections get the 1/sqrt(2L) shrink
    const double res_std = base_std / std::sqrt(2.0 * cfg.layers);

    auto normal_leaf = [&](const std::string& name, Shape shape, double stddev) {
      std::vector<S> data(numel(shape));
      for (auto& x : data) x = static_cast<S>(rng.normal(0.0, stddev));
      return add_param(name, std::move(shape), std::move(data), trainable);
    };
    auto const_leaf = [&](const std::string& name, Shape shape, S fill) {
      std::vector<S> data(numel(shape), fill);
      return add_param(name, std::move(shape), std::move(data), trainable);
    };

    tok_emb_ = normal_leaf("embed.token", {v, d}, base_std);
    pos_emb_ = normal_leaf("embed.position", {cfg.max_context, d}, base_std);
    layers_.resize(cfg.layers);
    for (std::uint32_t i = 0; i < cfg.layers; ++i) {
      auto& L = layers_[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      L.ln1_gain = const_leaf(p + "ln1.gain", {d}, S(1));
      L.ln1_bias = const_leaf(p + "ln1.bias", {d}, S(0));
      L.wq = normal_leaf(p + "attn.wq", {d, d}, base_std);
      L.wk = normal_leaf(p + "attn.wk", {d, d}, base_std);
      L.wv = normal_leaf(p + "attn.wv", {d, d}, base_std);
      L.wo = normal_leaf(p + "attn.wo", {d, d}, res_std);
      L.ln2_gain = const_leaf(p + "ln2.gain", {d}, S(1));
      L.ln2_bias = const_leaf(p + "ln2.bias", {d}, S(0));
      L.w1 = normal_leaf(p + "ff.w1", {d, f}, base_std);
      L.b1 = const_leaf(p + "ff.b1", {f}, S(0));
      L.w2 = normal_leaf(p + "ff.w2", {f, d}, res_std);
      L.b2 = const_leaf(p + "ff.b2", {d}, S(0));
    }
    lnf_gain_ = const_leaf("final_norm.gain", {d}, S(1));
    lnf_bias_ = const_leaf("final_norm.bias", {d}, S(0));
    lm_head_ = normal_leaf("lm_head", {v, d}, base_std);
  }

  const ModelConfig& config() const { return cfg_; }
  const std::vector<NodePtr<S>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  NodePtr<S> param(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return params_[i];
    throw Error("unknown parameter: " + name);
  }

  /// Causal-within-segment logits for a (possibly packed) token sequence.
  NodePtr<S> forward(const std::vector<TokenId>& token_ids,
                     const std::vector<std::int32_t>& segment_ids) const {
    const std::size_t t = token_ids.size();
    check(t > 0, "forward: empty sequence");
    check(t <= cfg_.max_context, "forward: sequence length " + std::to_string(t) +
                                     " exceeds context " +
                                     std::to_string(cfg_.max_context));
    check(segment_ids.size() == t, "forward: segment ids length mismatch");
    for (std::size_t i = 1; i < t; ++i)
      check(segment_ids[i] >= segment_ids[i - 1],
            "forward: segment ids must be non-decreasing");

    // positions restart per segment
    auto pos_ids = std::make_shared<std::vector<std::int32_t>>(t);
    std::size_t seg_start = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (segment_ids[i] != segment_ids[seg_start]) seg_start = i;
      (*pos_ids)[i] = static_cast<std::int32_t>(i - seg_start);
      check(static_cast<std::uint32_t>((*pos_ids)[i]) < cfg_.max_context,
            "forward: segment longer than context");
    }

    auto mask = std::make_shared<std::vector<std::uint8_t>>(t * t, 0);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        (*mask)[i * t + j] = segment_ids[i] == segment_ids[j] ? 1 : 0;

    auto ids = std::make_shared<std::vector<std::int32_t>>(token_ids.begin(),
                                                           token_ids.end());
    auto x = add(embedding_rows(tok_emb_, ids), embedding_rows(pos_emb_, pos_ids));

    const std::size_t dh = cfg_.d_model / cfg_.n_heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (const auto& L : layers_) {
      auto x1 = layer_norm_rows(x, L.ln1_gain, L.ln1_bias);
      auto q = matmul(x1, L.wq);
      auto k = matmul(x1, L.wk);
      auto v = matmul(x1, L.wv);
      std::vector<NodePtr<S>> heads;
      heads.reserve(cfg_.n_heads);
      for (std::uint32_t h = 0; h < cfg_.n_heads; ++h) {
        auto qh = slice_cols(q, h * dh, (h + 1) * dh);
        auto kh = slice_cols(k, h * dh, (h + 1) * dh);
        auto vh = slice_cols(v, h * dh, (h + 1) * dh);
        auto scores = scale(matmul_nt(qh, kh), inv_sqrt_dh);
        auto probs = masked_softmax_rows(scores, mask);
        heads.push_back(matmul(probs, vh));
      }
      auto attn = matmul(concat_cols(heads), L.wo);
      x = add(x, attn);
      auto x2 = layer_norm_rows(x, L.ln2_gain, L.ln2_bias);
      auto hidden = gelu(add_rowvec(matmul(x2, L.w1), L.b1));
      auto ff = add_rowvec(matmul(hidden, L.w2), L.b2);
      x = add(x, ff);
    }
    auto xf = layer_norm_rows(x, lnf_gain_, lnf_bias_);
    return matmul_nt(xf, lm_head_);
  }

  /// Single-segment helper.
  NodePtr<S> forward(const std::vector<TokenId>& token_ids) const {
    return forward(token_ids, std::vector<std::int32_t>(token_ids.size(), 0));
  }

private:
  struct Layer {
    NodePtr<S> ln1_gain, ln1_bias, wq, wk, wv, wo;
    NodePtr<S> ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  NodePtr<S> add_param(const std::string& name, Shape shape, std::vector<S> data,
                       bool trainable) {
    auto n = make_leaf<S>(std::move(shape), std::move(data), trainable);
    names_.push_back(name);
    params_.push_back(n);
    return n;
  }

  ModelConfig cfg_;
  std::vector<std::string> names_;
  std::vector<NodePtr<S>> params_;
  NodePtr<S> tok_emb_, pos_emb_, lnf_gain_, lnf_bias_, lm_head_;
  std::vector<Layer> layers_;
};

} // namespace td
