// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/checkpoint.hpp"
#include "tinydistill/error.hpp"
#include "tinydistill/generate.hpp"
#include "tinydistill/optimizer.hpp"
#include "tinydistill/ops.hpp"
#include "tinydistill/parallel.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/sample.hpp"
#include "tinydistill/schedule.hpp"
#include "tinydistill/sft.hpp"
#include "tinydistill/tokenizer.hpp"
#include "tinydistill/topk.hpp"
#include "tinydistill/transformer.hpp"

namespace td {

/// One entry of the intermediate on-policy dataset: a query lowered to its
/// conditioning prefix plus the response it will be scored on. Responses
/// carry their terminal EOS so the stopping decision is supervised too.
struct OnPolicyRecord {
  SampleId sample_id{};
  Digest generator{};
  std::vector<TokenId> prompt;
  std::vector<TokenId> response;

  nlohmann::json to_json() const {
    return nlohmann::json{{"sample_id", hex(sample_id)},
                          {"generator", hex(generator)},
                          {"prompt", prompt},
                          {"response", response}};
  }

  static OnPolicyRecord from_json(const nlohmann::json& j) {
    OnPolicyRecord r;
    r.sample_id = parse_hex<16>(j.at("sample_id").get<std::string>());
    r.generator = parse_hex<32>(j.at("generator").get<std::string>());
    r.prompt = j.at("prompt").get<std::vector<TokenId>>();
    r.response = j.at("response").get<std::vector<TokenId>>();
    return r;
  }
};

struct OnPolicyDataset {
  Digest tokenizer_fingerprint{};
  DecodeConfig decode;
  std::vector<OnPolicyRecord> records;

  void save(const std::filesystem::path& p) const {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    check(out.good(), "cannot open dataset for writing: " + p.string());
    out << nlohmann::json{{"tokenizer_fingerprint", hex(tokenizer_fingerprint)},
                          {"decode", decode.to_json()}}
               .dump()
        << "\n";
    for (const auto& r : records) out << r.to_json().dump() << "\n";
  }

  static OnPolicyDataset load(const std::filesystem::path& p) {
    std::ifstream in(p);
    check(in.good(), "cannot open dataset: " + p.string());
    OnPolicyDataset ds;
    std::string line;
    check_integrity(static_cast<bool>(std::getline(in, line)),
                    "dataset is empty: " + p.string());
    auto header = nlohmann::json::parse(line);
    ds.tokenizer_fingerprint =
        parse_hex<32>(header.at("tokenizer_fingerprint").get<std::string>());
    ds.decode = DecodeConfig::from_json(header.at("decode"));
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      ds.records.push_back(OnPolicyRecord::from_json(nlohmann::json::parse(line)));
    }
    return ds;
  }
};

/// Student/teacher inference over the queries of a corpus. Greedy decoding
/// is fully deterministic; temperature mode derives one stream seed per
/// record. The generator fingerprint on every record is the checkpoint
/// digest of the generating weights.
inline OnPolicyDataset generate_responses_with(const Transformer<float>& model,
                                               const Digest& model_digest,
                                               const Digest& model_tokenizer_fp,
                                               const std::vector<Sample>& queries,
                                               const Tokenizer& tok,
                                               const DecodeConfig& decode,
                                               std::uint64_t seed, unsigned threads = 0) {
  require_same_tokenizer(model_tokenizer_fp, tok.fingerprint(), "generate_responses");
  if (threads == 0) threads = default_threads();
  OnPolicyDataset ds;
  ds.tokenizer_fingerprint = tok.fingerprint();
  ds.decode = decode;
  ds.records.resize(queries.size());
  parallel_for(queries.size(), threads, [&](std::size_t i) {
    const auto& s = queries[i];
    auto ts = tokenize_sample(tok, s, false);
    DecodeConfig cfg = decode;
    cfg.seed = derive_seed(seed, i);
    OnPolicyRecord r;
    r.sample_id = s.id;
    r.generator = model_digest;
    r.prompt = std::move(ts.prompt);
    r.response = generate(model, r.prompt, cfg);
    r.response.push_back(Tokenizer::kEos);
    ds.records[i] = std::move(r);
  });
  return ds;
}

inline OnPolicyDataset generate_responses(const Checkpoint& generator,
                                          const std::vector<Sample>& queries,
                                          const Tokenizer& tok,
                                          const DecodeConfig& decode,
                                          std::uint64_t seed, unsigned threads = 0) {
  auto model = generator.to_model(/*trainable=*/false);
  return generate_responses_with(model, generator.digest(),
                                 generator.tokenizer_fingerprint, queries, tok, decode,
                                 seed, threads);
}

enum class DistillStrategy { by_label, by_teacher, by_student };

inline std::string to_string(DistillStrategy s) {
  switch (s) {
    case DistillStrategy::by_label: return "by-label";
    case DistillStrategy::by_teacher: return "by-teacher";
    case DistillStrategy::by_student: return "by-student";
  }
  throw Error("bad distill strategy");
}

inline DistillStrategy distill_strategy_from_string(const std::string& s) {
  if (s == "by-label") return DistillStrategy::by_label;
  if (s == "by-teacher") return DistillStrategy::by_teacher;
  if (s == "by-student") return DistillStrategy::by_student;
  throw ConfigError("unknown distillation strategy: " + s);
}

/// Response construction per strategy: ground-truth labels, teacher
/// generations, or student generations.
inline OnPolicyDataset build_strategy_dataset(DistillStrategy strategy,
                                              const std::vector<Sample>& samples,
                                              const Checkpoint& teacher,
                                              const Checkpoint& student,
                                              const Tokenizer& tok,
                                              const DecodeConfig& decode,
                                              std::uint64_t seed, unsigned threads = 0) {
  switch (strategy) {
    case DistillStrategy::by_teacher:
      return generate_responses(teacher, samples, tok, decode, seed, threads);
    case DistillStrategy::by_student:
      return generate_responses(student, samples, tok, decode, seed, threads);
    case DistillStrategy::by_label: {
      OnPolicyDataset ds;
      ds.tokenizer_fingerprint = tok.fingerprint();
      ds.decode = decode;
      for (const auto& s : samples) {
        check_config(!s.response.empty(),
                     "by-label distillation requires labels; sample " + s.id_hex() +
                         " has none");
        auto ts = tokenize_sample(tok, s, false);
        OnPolicyRecord r;
        r.sample_id = s.id;
        r.generator = kLabelFingerprint;
        r.prompt = std::move(ts.prompt);
        r.response = std::move(ts.target);
        ds.records.push_back(std::move(r));
      }
      return ds;
    }
  }
  throw Error("bad distill strategy");
}

struct AnnotationOutcome {
  AnnotatedDataset dataset;
  std::vector<std::pair<SampleId, std::string>> skipped;
};

/// Teacher pass over an on-policy dataset: for each response position n the
/// teacher is conditioned on the prompt plus the first n-1 response tokens
/// and its k largest next-token logits are stored raw. Records longer than
/// the teacher context are skipped and reported.
inline AnnotationOutcome annotate_topk(const Transformer<float>& teacher,
                                       const Digest& teacher_digest,
                                       const Digest& teacher_tokenizer_fp,
                                       const OnPolicyDataset& ds, std::uint32_t k,
                                       unsigned threads = 0) {
  require_same_tokenizer(teacher_tokenizer_fp, ds.tokenizer_fingerprint, "annotate_topk");
  const std::size_t v = teacher.config().vocab_size;
  check_config(k >= 2 && k <= v,
               "annotate_topk: k must lie in [2, vocab], got " + std::to_string(k));
  if (threads == 0) threads = default_threads();

  AnnotationOutcome out;
  out.dataset.tokenizer_fingerprint = ds.tokenizer_fingerprint;
  out.dataset.teacher_fingerprint = teacher_digest;
  out.dataset.k = static_cast<std::uint16_t>(k);
  out.dataset.vocab_size = static_cast<std::uint32_t>(v);

  std::vector<AnnotatedRecord> slots(ds.records.size());
  std::vector<std::uint8_t> ok(ds.records.size(), 0);
  parallel_for(ds.records.size(), threads, [&](std::size_t i) {
    const auto& r = ds.records[i];
    const std::size_t total = r.prompt.size() + r.response.size();
    if (total > teacher.config().max_context) return; // reported below
    std::vector<TokenId> seq = r.prompt;
    seq.insert(seq.end(), r.response.begin(), r.response.end());
    auto logits = teacher.forward(seq);
    AnnotatedRecord ar;
    ar.sample_id = r.sample_id;
    ar.generator = r.generator;
    ar.prompt = r.prompt;
    ar.response = r.response;
    ar.topk.resize(r.response.size());
    std::vector<std::size_t> idx(v);
    for (std::size_t p = 0; p < r.response.size(); ++p) {
      const std::size_t row = r.prompt.size() + p - 1;
      const float* zrow = logits->value.data() + row * v;
      std::iota(idx.begin(), idx.end(), 0);
      std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                        [&](std::size_t a, std::size_t b) {
                          if (zrow[a] != zrow[b]) return zrow[a] > zrow[b];
                          return a < b;
                        });
      auto& rec = ar.topk[p];
      rec.resize(k);
      for (std::size_t c = 0; c < k; ++c)
        rec[c] = {static_cast<TokenId>(idx[c]), zrow[idx[c]]};
    }
    slots[i] = std::move(ar);
    ok[i] = 1;
  });
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (ok[i])
      out.dataset.records.push_back(std::move(slots[i]));
    else
      out.skipped.emplace_back(ds.records[i].sample_id,
                               "response exceeds teacher context");
  }
  return out;
}

inline AnnotationOutcome annotate_topk(const Checkpoint& teacher,
                                       const OnPolicyDataset& ds, std::uint32_t k,
                                       unsigned threads = 0) {
  auto model = teacher.to_model(/*trainable=*/false);
  return annotate_topk(model, teacher.digest(), teacher.tokenizer_fingerprint, ds, k,
                       threads);
}

struct DistillConfig {
  double lambda_kd = 0.9;
  std::uint32_t k = 10;
  DistillStrategy strategy = DistillStrategy::by_student;
  std::uint32_t refresh = 0;   // by-student response regenerations mid-run
  double temperature = 1.0;    // softmax temperature over stored logits
  DecodeConfig decode;         // response generation mode
  // training-phase hyperparameters
  std::uint32_t epochs = 10;
  std::size_t records_per_batch = 64;
  double peak_lr = 1e-5;
  double min_lr = 1e-6;
  std::uint64_t warmup = 10;
  double weight_decay = 0.1;
  double clip_threshold = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  unsigned threads = 0;

  void validate() const {
    check_config(lambda_kd >= 0.0 && lambda_kd <= 1.0, "distill: lambda_kd outside [0,1]");
    check_config(k >= 2, "distill: k must be >= 2");
    check_config(temperature == 1.0, "distill: temperature is fixed at 1");
    check_config(epochs > 0 && records_per_batch > 0, "distill: bad training extents");
    check_config(peak_lr >= min_lr && min_lr > 0, "distill: require peak >= min > 0");
    check_config(refresh == 0 || strategy == DistillStrategy::by_student,
                 "distill: refresh is only meaningful for by-student data");
  }

  nlohmann::json to_json() const {
    return nlohmann::json{{"lambda_kd", lambda_kd},
                          {"k", k},
                          {"strategy", to_string(strategy)},
                          {"refresh", refresh},
                          {"temperature", temperature},
                          {"decode", decode.to_json()},
                          {"epochs", epochs},
                          {"records_per_batch", records_per_batch},
                          {"peak_lr", peak_lr},
                          {"min_lr", min_lr},
                          {"warmup", warmup},
                          {"weight_decay", weight_decay},
                          {"clip_threshold", clip_threshold}};
  }

  static DistillConfig from_json(const nlohmann::json& j) {
    DistillConfig c;
    c.lambda_kd = j.value("lambda_kd", c.lambda_kd);
    c.k = j.value("k", c.k);
    if (j.contains("strategy"))
      c.strategy = distill_strategy_from_string(j["strategy"].get<std::string>());
    c.refresh = j.value("refresh", c.refresh);
    c.temperature = j.value("temperature", c.temperature);
    if (j.contains("decode")) c.decode = DecodeConfig::from_json(j["decode"]);
    c.epochs = j.value("epochs", c.epochs);
    c.records_per_batch = j.value("records_per_batch", c.records_per_batch);
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.min_lr = j.value("min_lr", c.min_lr);
    c.warmup = j.value("warmup", c.warmup);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_threshold = j.value("clip_threshold", c.clip_threshold);
    c.validate();
    return c;
  }
};

struct KdStepLogEntry {
  std::uint64_t step = 0;
  double lr = 0;
  double loss_ce = 0;
  double loss_kd = 0;
  double loss_total = 0;
  double grad_norm = 0;
  std::uint64_t tokens_seen = 0;
  std::uint64_t clamped = 0; // kd-loss probability floor hits this step

  nlohmann::json to_json() const {
    return nlohmann::json{{"step", step},
                          {"lr", lr},
                          {"loss_ce", loss_ce},
                          {"loss_kd", loss_kd},
                          {"loss_total", loss_total},
                          {"grad_norm", grad_norm},
                          {"tokens_seen", tokens_seen},
                          {"clamped", clamped}};
  }
};

using KdStepLog = std::vector<KdStepLogEntry>;

struct RefreshEvent {
  std::uint64_t step = 0;
  Digest generator{};
  Digest annotation_digest{};
};

struct DistillResult {
  KdStepLog log;
  std::vector<RefreshEvent> refreshes;
  // refresh artifacts, in schedule order
  std::vector<OnPolicyDataset> refreshed_datasets;
  std::vector<AnnotatedDataset> refreshed_annotations;
};

namespace detail {

template <class S>
struct KdBatchResult {
  double ce_sum = 0;
  double kd_sum = 0;
  double total_sum = 0;
  std::uint64_t clamped = 0;
  std::size_t tokens = 0;
  std::vector<std::vector<S>> grads;
};

/// Per-record graphs: CE over response rows (mean per sequence), KD over
/// the same rows against the stored top-k support, composed as
/// (1-lambda)*CE + lambda*KD and reduced as the mean over records.
template <class S>
KdBatchResult<S> kd_batch(const Transformer<S>& model,
                          const std::vector<const AnnotatedRecord*>& records,
                          double lambda_kd, unsigned threads, KdLossStats* stats) {
  const auto& params = model.params();
  KdBatchResult<S> out;
  out.grads.resize(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    out.grads[i].assign(params[i]->size(), S(0));

  struct Work {
    double ce = 0, kd = 0, total = 0;
    std::size_t tokens = 0;
    Grads<S> grads;
  };

  const S batch_w = S(1) / static_cast<S>(records.size());
  for (std::size_t start = 0; start < records.size(); start += threads) {
    const std::size_t block = std::min<std::size_t>(threads, records.size() - start);
    std::vector<Work> work(block);
    parallel_for(block, threads, [&](std::size_t w) {
      const AnnotatedRecord& r = *records[start + w];
      const std::size_t plen = r.prompt.size(), rlen = r.response.size();
      std::vector<TokenId> seq = r.prompt;
      seq.insert(seq.end(), r.response.begin(), r.response.end());
      auto logits = model.forward(seq);

      auto ce = std::make_shared<CeTargets<S>>();
      ce->targets.assign(seq.size(), 0);
      ce->weights.assign(seq.size(), S(0));
      auto kd = std::make_shared<KdTargets<S>>();
      kd->k = r.topk.empty() ? 2 : r.topk[0].size();
      const S pos_w = S(1) / static_cast<S>(rlen);
      for (std::size_t p = 0; p < rlen; ++p) {
        const std::size_t row = plen + p - 1;
        ce->targets[row] = r.response[p];
        ce->weights[row] = pos_w;
        kd->rows.push_back(static_cast<std::int32_t>(row));
        kd->weights.push_back(pos_w);
        auto probs = topk_probs(r.topk[p]);
        for (std::size_t c = 0; c < r.topk[p].size(); ++c) {
          kd->ids.push_back(r.topk[p][c].id);
          kd->probs.push_back(static_cast<S>(probs[c]));
        }
      }
      auto ce_node = cross_entropy_rows(logits, ce);
      auto kd_node = kd_loss_rows(logits, kd, stats);
      auto total = add(scale(ce_node, static_cast<S>(1.0 - lambda_kd)),
                       scale(kd_node, static_cast<S>(lambda_kd)));
      work[w].ce = ce_node->value[0];
      work[w].kd = kd_node->value[0];
      work[w].total = total->value[0];
      work[w].tokens = seq.size();
      backward(total, work[w].grads, batch_w);
    });
    for (std::size_t w = 0; w < block; ++w) {
      out.ce_sum += work[w].ce;
      out.kd_sum += work[w].kd;
      out.total_sum += work[w].total;
      out.tokens += work[w].tokens;
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

} // namespace detail

/// Distillation training phase. Consumes an annotated dataset whose CE
/// targets are its own response tokens (the sequences the teacher scored).
/// With refresh R > 0 under the by-student strategy, at steps
/// floor(i*T/(R+1)) the current student regenerates all responses, the
/// teacher re-annotates them, and training resumes on the new dataset.
inline DistillResult train_distill(Transformer<float>& student,
                                   const AnnotatedDataset& annotated,
                                   const DistillConfig& cfg,
                                   const Transformer<float>& teacher,
                                   const Digest& teacher_digest, const Tokenizer& tok,
                                   std::uint64_t seed) {
  cfg.validate();
  require_same_tokenizer(annotated.tokenizer_fingerprint, tok.fingerprint(),
                         "train_distill");
  check_integrity(annotated.teacher_fingerprint == teacher_digest,
                  "train_distill: annotation teacher fingerprint mismatch");
  check(!annotated.records.empty(), "train_distill: empty annotated dataset");
  check(static_cast<std::size_t>(annotated.vocab_size) ==
            student.config().vocab_size,
        "train_distill: vocabulary mismatch");

  const std::size_t n = annotated.records.size();
  const std::uint64_t steps_per_epoch =
      (n + cfg.records_per_batch - 1) / cfg.records_per_batch;
  const std::uint64_t total_steps = steps_per_epoch * cfg.epochs;
  check(cfg.warmup < total_steps, "train_distill: warmup must be below total steps");

  // refresh boundaries: floor(i*T/(R+1)), i = 1..R
  std::vector<std::uint64_t> boundaries;
  for (std::uint32_t i = 1; i <= cfg.refresh; ++i)
    boundaries.push_back(i * total_steps / (cfg.refresh + 1));

  const unsigned threads = cfg.threads == 0 ? default_threads() : cfg.threads;
  AdamWConfig ocfg;
  ocfg.beta1 = cfg.beta1;
  ocfg.beta2 = cfg.beta2;
  ocfg.eps = cfg.eps;
  ocfg.weight_decay = cfg.weight_decay;
  AdamW<float> opt(student.params(), ocfg);

  AnnotatedDataset current = annotated;
  DistillResult out;
  KdLossStats stats;
  std::uint64_t step = 0, tokens_seen = 0, clamped_prev = 0;

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(seed, 3000 + epoch));
    rng.shuffle(order);
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      std::vector<const AnnotatedRecord*> batch;
      for (std::size_t i = b * cfg.records_per_batch;
           i < std::min(n, (b + 1) * cfg.records_per_batch); ++i)
        batch.push_back(&current.records[order[i]]);
      auto res = detail::kd_batch(student, batch, cfg.lambda_kd, threads, &stats);

      const double inv = 1.0 / static_cast<double>(batch.size());
      const double lr = cosine_lr(std::min(step + 1, total_steps), cfg.warmup,
                                  total_steps, cfg.peak_lr, cfg.min_lr);
      const double gnorm = clip_gradients(res.grads, cfg.clip_threshold);
      opt.step(res.grads, lr);

      const double lce = res.ce_sum * inv;
      const double lkd = res.kd_sum * inv;
      const double ltotal = composite_loss(lce, lkd, cfg.lambda_kd);
      check(std::isfinite(ltotal), "train_distill: loss diverged at step " +
                                       std::to_string(step + 1));
      tokens_seen += res.tokens;
      ++step;
      const std::uint64_t clamped_now = stats.clamped.load();
      out.log.push_back({step, lr, lce, lkd, ltotal, gnorm, tokens_seen,
                         clamped_now - clamped_prev});
      clamped_prev = clamped_now;

      // refresh barrier: regenerate with the current student, re-annotate
      for (std::size_t r = out.refreshes.size(); r < boundaries.size(); ++r) {
        if (step != boundaries[r]) break;
        auto snapshot = Checkpoint::from_model(student, tok.fingerprint(),
                                               "refresh at step " + std::to_string(step));
        const Digest student_digest = snapshot.digest();
        std::vector<Sample> queries;
        queries.reserve(current.records.size());
        for (const auto& rec : current.records) {
          Sample s;
          s.id = rec.sample_id;
          std::vector<TokenId> q(rec.prompt.begin() + 1, rec.prompt.end() - 1);
          s.query = tok.decode(q);
          queries.push_back(std::move(s));
        }
        auto ds = generate_responses_with(student, student_digest, tok.fingerprint(),
                                          queries, tok, cfg.decode,
                                          derive_seed(seed, 7000 + r), threads);
        auto ann = annotate_topk(teacher, teacher_digest, tok.fingerprint(), ds, cfg.k,
                                 threads);
        check(ann.skipped.empty(),
              "train_distill: refresh produced responses beyond teacher context");
        current = std::move(ann.dataset);
        out.refreshes.push_back({step, student_digest, current.digest()});
        out.refreshed_datasets.push_back(std::move(ds));
        out.refreshed_annotations.push_back(current);
      }
    }
  }
  return out;
}

} // namespace td
