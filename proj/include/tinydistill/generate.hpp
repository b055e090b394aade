// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"
#include "tinydistill/math.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/tokenizer.hpp"
#include "tinydistill/transformer.hpp"

namespace td {

struct DecodeConfig {
  enum class Mode { greedy, temperature };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  std::size_t max_new = 64;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"mode", mode == Mode::greedy ? "greedy" : "temperature"},
                          {"temperature", temperature},
                          {"max_new", max_new},
                          {"seed", seed}};
  }

  static DecodeConfig from_json(const nlohmann::json& j) {
    DecodeConfig c;
    const std::string m = j.value("mode", "greedy");
    check_config(m == "greedy" || m == "temperature", "decode: unknown mode " + m);
    c.mode = m == "greedy" ? Mode::greedy : Mode::temperature;
    c.temperature = j.value("temperature", 1.0);
    c.max_new = j.value("max_new", std::size_t{64});
    c.seed = j.value("seed", std::uint64_t{0});
    check_config(c.temperature > 0.0, "decode: temperature must be positive");
    check_config(c.max_new >= 1, "decode: max_new must be >= 1");
    return c;
  }
};

/// Autoregressive decoding. Stops at EOS, max_new tokens, or a full context
/// window; the returned sequence never contains the terminating EOS. Greedy
/// mode breaks argmax ties toward the lowest token id; temperature mode is
/// deterministic given the seed.
template <class S>
std::vector<TokenId> generate(const Transformer<S>& model,
                              const std::vector<TokenId>& prompt,
                              const DecodeConfig& cfg) {
  check(!prompt.empty(), "generate: empty prompt");
  check(cfg.max_new >= 1, "generate: max_new must be >= 1");
  check(prompt.size() + 1 <= model.config().max_context,
        "generate: prompt of " + std::to_string(prompt.size()) +
            " tokens leaves no room in context " +
            std::to_string(model.config().max_context));
  Rng rng(cfg.seed);
  std::vector<TokenId> seq = prompt;
  std::vector<TokenId> out;
  while (out.size() < cfg.max_new && seq.size() < model.config().max_context) {
    auto logits = model.forward(seq);
    const std::size_t v = logits->shape[1];
    std::span<const S> last(logits->value.data() + (seq.size() - 1) * v, v);
    TokenId next;
    if (cfg.mode == DecodeConfig::Mode::greedy) {
      next = static_cast<TokenId>(argmax_lowest(last));
    } else {
      std::vector<S> scaled(last.begin(), last.end());
      for (auto& x : scaled) x = static_cast<S>(x / cfg.temperature);
      auto probs = softmax<S>(scaled);
      const double u = rng.uniform();
      double cum = 0.0;
      std::size_t pick = v - 1;
      for (std::size_t i = 0; i < v; ++i) {
        cum += static_cast<double>(probs[i]);
        if (u < cum) {
          pick = i;
          break;
        }
      }
      next = static_cast<TokenId>(pick);
    }
    if (next == Tokenizer::kEos) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

} // namespace td
