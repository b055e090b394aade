// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"

namespace td {

/// One curriculum stage. Defaults mirror the stage-1 setup at desk scale:
/// 16384-token batches (stage 2 halves this, keeping the 2:1 stage ratio),
/// AdamW decay 0.1, clip 1.0, warmup+cosine from peak to min.
struct StageConfig {
  std::uint32_t epochs = 10;
  std::size_t tokens_per_batch = 16384;
  double peak_lr = 2e-5;
  double min_lr = 2e-6;
  std::uint64_t warmup = 200;
  std::size_t max_seq_len = 128;
  double weight_decay = 0.1;
  double clip_threshold = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  unsigned threads = 0; // 0 = hardware default

  void validate() const {
    check_config(epochs > 0, "stage config: epochs must be positive");
    check_config(tokens_per_batch > 0, "stage config: tokens_per_batch must be positive");
    check_config(peak_lr >= min_lr && min_lr > 0, "stage config: require peak >= min > 0");
    check_config(max_seq_len > 1, "stage config: max_seq_len too small");
    check_config(clip_threshold > 0, "stage config: clip threshold must be positive");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"epochs", epochs},
                          {"tokens_per_batch", tokens_per_batch},
                          {"peak_lr", peak_lr},
                          {"min_lr", min_lr},
                          {"warmup", warmup},
                          {"max_seq_len", max_seq_len},
                          {"weight_decay", weight_decay},
                          {"clip_threshold", clip_threshold}};
  }

  static StageConfig from_json(const nlohmann::json& j) {
    StageConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.tokens_per_batch = j.value("tokens_per_batch", c.tokens_per_batch);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.warmup = j.value("warmup", c.warmup);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_threshold = j.value("clip_threshold", c.clip_threshold);
    c.validate();
    return c;
  }
};

} // namespace td
