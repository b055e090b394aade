// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"
#include "tinydistill/optimizer.hpp"
#include "tinydistill/ops.hpp"
#include "tinydistill/packing.hpp"
#include "tinydistill/parallel.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/schedule.hpp"
#include "tinydistill/sft_config.hpp"
#include "tinydistill/transformer.hpp"

namespace td {

struct StepLogEntry {
  std::uint64_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
  std::uint64_t tokens_seen = 0;

  nlohmann::json to_json() const {
    return nlohmann::json{{"step", step},
                          {"lr", lr},
                          {"loss", loss},
                          {"grad_norm", grad_norm},
                          {"tokens_seen", tokens_seen}};
  }
};

using StepLog = std::vector<StepLogEntry>;

template <class Entry>
void write_step_log(const std::filesystem::path& p, const std::vector<Entry>& log) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  check(out.good(), "cannot open step log: " + p.string());
  for (const auto& e : log) out << e.to_json().dump() << "\n";
}

namespace detail {

/// Loss and gradient accumulation over a batch of packs. Packs are
/// processed in blocks of `threads`; each pack owns an isolated graph and
/// gradient map, and maps are reduced in pack order so the result is
/// independent of scheduling.
template <class S>
struct BatchResult {
  double loss_sum = 0;       // sum over supervised positions
  std::size_t supervised = 0;
  std::vector<std::vector<S>> grads; // aligned with model.params()
};

template <class S>
BatchResult<S> sft_batch(const Transformer<S>& model, const std::vector<Pack>& packs,
                         unsigned threads) {
  const auto& params = model.params();
  BatchResult<S> out;
  out.grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    out.grads[i].assign(params[i]->size(), S(0));

  struct PackWork {
    double loss = 0;
    std::size_t supervised = 0;
    Grads<S> grads;
  };

  for (std::size_t start = 0; start < packs.size(); start += threads) {
    const std::size_t block = std::min<std::size_t>(threads, packs.size() - start);
    std::vector<PackWork> work(block);
    parallel_for(block, threads, [&](std::size_t w) {
      const Pack& pack = packs[start + w];
      auto ce = std::make_shared<CeTargets<S>>();
      const std::size_t t = pack.size();
      ce->targets.assign(t, 0);
      ce->weights.assign(t, S(0));
      std::size_t count = 0;
      for (std::size_t i = 0; i + 1 < t; ++i) {
        if (pack.loss_mask[i + 1] && pack.segments[i + 1] == pack.segments[i]) {
          ce->targets[i] = pack.tokens[i + 1];
          ce->weights[i] = S(1);
          ++count;
        }
      }
      work[w].supervised = count;
      if (count == 0) return;
      auto loss = cross_entropy_rows(model.forward(pack.tokens, pack.segments), ce);
      work[w].loss = static_cast<double>(loss->value[0]);
      backward(loss, work[w].grads);
    });
    for (std::size_t w = 0; w < block; ++w) {
      out.loss_sum += work[w].loss;
      out.supervised += work[w].supervised;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (const auto* g = work[w].grads.find(params[i].get())) {
          auto& acc = out.grads[i];
          for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += (*g)[j];
        }
      }
    }
  }
  return out;
}

/// Batches are groups of consecutive packs holding at most tokens_per_batch
/// tokens (always at least one pack).
inline std::vector<std::vector<std::size_t>> group_batches(
    const std::vector<std::size_t>& pack_order, const std::vector<Pack>& packs,
    std::size_t tokens_per_batch) {
  std::vector<std::vector<std::size_t>> batches;
  std::size_t tokens = 0;
  for (auto idx : pack_order) {
    const std::size_t sz = packs[idx].size();
    if (batches.empty() || (tokens + sz > tokens_per_batch && !batches.back().empty())) {
      batches.emplace_back();
      tokens = 0;
    }
    batches.back().push_back(idx);
    tokens += sz;
  }
  return batches;
}

} // namespace detail

/// Masked-cross-entropy fine-tuning of one curriculum stage: AdamW with
/// decoupled decay, global-norm clipping and the warmup+cosine schedule.
/// Fully deterministic for a fixed (seed, config, corpus).
inline StepLog run_stage(Transformer<float>& model, const Tokenizer& tok,
                         const std::vector<Sample>& corpus, bool with_trace,
                         const StageConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  check(!corpus.empty(), "run_stage: empty corpus");
  check(cfg.max_seq_len <= model.config().max_context,
        "run_stage: max_seq_len exceeds model context");

  std::vector<TokenizedSample> toks;
  toks.reserve(corpus.size());
  for (const auto& s : corpus) toks.push_back(tokenize_sample(tok, s, with_trace));
  auto packs = pack_sequences(toks, cfg.max_seq_len);

  // fix the batch layout of every epoch up front so the schedule length is known
  std::vector<std::vector<std::vector<std::size_t>>> epochs;
  std::uint64_t total_steps = 0;
  for (std::uint32_t e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(packs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 1000 + e));
    rng.shuffle(order);
    epochs.push_back(detail::group_batches(order, packs, cfg.tokens_per_batch));
    total_steps += epochs.back().size();
  }
  check(cfg.warmup < total_steps,
        "run_stage: warmup (" + std::to_string(cfg.warmup) +
            ") must be below total steps (" + std::to_string(total_steps) + ")");

  const unsigned threads = cfg.threads == 0 ? default_threads() : cfg.threads;
  AdamWConfig ocfg;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.eps = cfg.eps;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW<float> opt(model.params(), ocfg);

  StepLog log;
  std::uint64_t step = 0, tokens_seen = 0;
  for (const auto& epoch : epochs) {
    for (const auto& batch : epoch) {
      std::vector<Pack> batch_packs;
      batch_packs.reserve(batch.size());
      for (auto idx : batch) batch_packs.push_back(packs[idx]);
      auto res = detail::sft_batch(model, batch_packs, threads);

      const double lr = cosine_lr(std::min(step + 1, total_steps), cfg.warmup,
                                  total_steps, cfg.peak_lr, cfg.min_lr);
      double loss = 0, gnorm = 0;
      if (res.supervised > 0) {
        loss = res.loss_sum / static_cast<double>(res.supervised);
        const float inv = 1.0f / static_cast<float>(res.supervised);
        for (auto& g : res.grads)
          for (auto& x : g) x *= inv;
        gnorm = clip_gradients(res.grads, cfg.clip_threshold);
        opt.step(res.grads, lr);
      }
      check(std::isfinite(loss), "run_stage: loss diverged (non-finite) at step " +
                                     std::to_string(step + 1) + " of " +
                                     std::to_string(total_steps));
      for (const auto& p : batch_packs) tokens_seen += p.size();
      ++step;
      log.push_back({step, lr, loss, gnorm, tokens_seen});
    }
  }
  return log;
}

enum class CurriculumVariant {
  direct_fast,
  reasoning_no_cot_then_fast,
  reasoning_with_cot_then_fast,
};

inline std::string to_string(CurriculumVariant v) {
  switch (v) {
    case CurriculumVariant::direct_fast: return "direct-fast";
    case CurriculumVariant::reasoning_no_cot_then_fast: return "reasoning-no-cot";
    case CurriculumVariant::reasoning_with_cot_then_fast: return "reasoning-with-cot";
  }
  throw Error("bad curriculum variant");
}

inline CurriculumVariant curriculum_variant_from_string(const std::string& s) {
  if (s == "direct-fast") return CurriculumVariant::direct_fast;
  if (s == "reasoning-no-cot") return CurriculumVariant::reasoning_no_cot_then_fast;
  if (s == "reasoning-with-cot") return CurriculumVariant::reasoning_with_cot_then_fast;
  throw ConfigError("unknown curriculum variant: " + s);
}

struct CurriculumResult {
  StepLog stage1_log; // empty for direct-fast
  StepLog stage2_log;
};

/// Two-stage curriculum: stage 1 on reasoning data (with or without the
/// chain of thought), stage 2 on fast prompt-response pairs. The
/// direct-fast variant never reads the stage-1 corpus.
inline CurriculumResult run_curriculum(Transformer<float>& model, const Tokenizer& tok,
                                       CurriculumVariant variant,
                                       const std::vector<Sample>& stage1_corpus,
                                       const std::vector<Sample>& stage2_corpus,
                                       const StageConfig& stage1_cfg,
                                       const StageConfig& stage2_cfg,
                                       std::uint64_t seed) {
  CurriculumResult out;
  if (variant != CurriculumVariant::direct_fast) {
    const bool with_trace = variant == CurriculumVariant::reasoning_with_cot_then_fast;
    if (with_trace)
      for (const auto& s : stage1_corpus)
        check(!s.reasoning_trace.empty(),
              "run_curriculum: with-CoT variant requires reasoning traces; sample " +
                  s.id_hex() + " has none");
    out.stage1_log =
        run_stage(model, tok, stage1_corpus, with_trace, stage1_cfg, derive_seed(seed, 1));
  }
  out.stage2_log =
      run_stage(model, tok, stage2_corpus, false, stage2_cfg, derive_seed(seed, 2));
  return out;
}

} // namespace td
