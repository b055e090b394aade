// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "tinydistill/error.hpp"
#include "tinydistill/sample.hpp"
#include "tinydistill/tokenizer.hpp"

namespace td {

/// A sample lowered to token ids: the conditioning prefix (BOS query SEP)
/// and the supervised part (optional trace, response, terminal EOS).
struct TokenizedSample {
  SampleId id{};
  std::vector<TokenId> prompt;
  std::vector<TokenId> target;

  std::size_t length() const { return prompt.size() + target.size(); }
};

inline TokenizedSample tokenize_sample(const Tokenizer& tok, const Sample& s,
                                       bool with_trace) {
  TokenizedSample t;
  t.id = s.id;
  t.prompt.push_back(Tokenizer::kBos);
  for (auto id : tok.encode(s.query)) t.prompt.push_back(id);
  t.prompt.push_back(Tokenizer::kSep);
  std::string target_text = with_trace ? s.reasoning_trace + s.response : s.response;
  t.target = tok.encode(target_text);
  t.target.push_back(Tokenizer::kEos);
  return t;
}

/// One packed training sequence. No padding is materialized; segments end
/// where the next sample begins and the loss mask is 1 exactly on target
/// (trace/response/EOS) tokens.
struct Pack {
  std::vector<TokenId> tokens;
  std::vector<std::int32_t> segments;
  std::vector<std::uint8_t> loss_mask;
  std::size_t n_samples = 0;

  std::size_t size() const { return tokens.size(); }
};

/// First-fit-decreasing packing. Deterministic: ties in length resolve by
/// sample id. A sample longer than max_len is rejected by name.
inline std::vector<Pack> pack_sequences(const std::vector<TokenizedSample>& samples,
                                        std::size_t max_len) {
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].length() != samples[b].length())
      return samples[a].length() > samples[b].length();
    return samples[a].id < samples[b].id;
  });

  std::vector<Pack> packs;
  std::vector<std::size_t> used;
  for (auto idx : order) {
    const auto& s = samples[idx];
    check(s.length() <= max_len,
          "pack_sequences: sample " + hex(s.id) + " has " +
              std::to_string(s.length()) + " tokens, exceeding max length " +
              std::to_string(max_len));
    std::size_t bin = packs.size();
    for (std::size_t b = 0; b < packs.size(); ++b)
      if (used[b] + s.length() <= max_len) {
        bin = b;
        break;
      }
    if (bin == packs.size()) {
      packs.emplace_back();
      used.push_back(0);
    }
    auto& p = packs[bin];
    const auto seg = static_cast<std::int32_t>(p.n_samples);
    for (auto t : s.prompt) {
      p.tokens.push_back(t);
      p.segments.push_back(seg);
      p.loss_mask.push_back(0);
    }
    for (auto t : s.target) {
      p.tokens.push_back(t);
      p.segments.push_back(seg);
      p.loss_mask.push_back(1);
    }
    used[bin] += s.length();
    p.n_samples += 1;
  }
  return packs;
}

} // namespace td
