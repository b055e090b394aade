// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tinydistill/bytes.hpp"
#include "tinydistill/error.hpp"
#include "tinydistill/hash.hpp"
#include "tinydistill/math.hpp"
#include "tinydistill/tokenizer.hpp"

namespace td {

/// Provenance constant for responses that are ground-truth labels rather
/// than model generations.
inline const Digest kLabelFingerprint = sha256_str("label");

inline std::string describe_generator(const Digest& d) {
  return d == kLabelFingerprint ? "label" : hex(d);
}

/// One annotated response position: the k highest raw teacher logits,
/// sorted by logit descending with ties broken by ascending token id.
struct TopKEntry {
  TokenId id = 0;
  float logit = 0;
};

using TopKRecord = std::vector<TopKEntry>;

inline void validate_topk_record(const TopKRecord& rec, std::size_t k,
                                 std::size_t vocab, const std::string& where) {
  check_integrity(rec.size() == k, where + ": expected " + std::to_string(k) +
                                       " entries, got " + std::to_string(rec.size()));
  check_integrity(k >= 2, where + ": k must be >= 2");
  for (std::size_t i = 0; i < rec.size(); ++i) {
    check_integrity(rec[i].id >= 0 && static_cast<std::size_t>(rec[i].id) < vocab,
                    where + ": token id out of range");
    if (i > 0) {
      const bool ordered = rec[i - 1].logit > rec[i].logit ||
                           (rec[i - 1].logit == rec[i].logit && rec[i - 1].id < rec[i].id);
      check_integrity(ordered, where + ": entries not sorted by descending logit");
    }
    for (std::size_t j = 0; j < i; ++j)
      check_integrity(rec[j].id != rec[i].id, where + ": duplicate token id");
  }
}

/// Teacher probabilities renormalized on the stored support.
inline std::vector<double> topk_probs(const TopKRecord& rec) {
  std::vector<double> logits(rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i) logits[i] = rec[i].logit;
  auto p = softmax<double>(logits);
  return p;
}

/// Truncated-support forward KL of the stored teacher distribution against
/// a full-vocabulary student softmax. Q is not renormalized on the support;
/// underflowed Q values are clamped at 1e-12 (counted in *clamped if given).
template <class S>
double kd_loss_value(std::span<const S> student_logits, const TopKRecord& rec,
                     std::uint64_t* clamped = nullptr) {
  auto q = softmax(student_logits);
  auto p = topk_probs(rec);
  double loss = 0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (p[i] == 0.0) continue;
    double qv = static_cast<double>(q[static_cast<std::size_t>(rec[i].id)]);
    if (qv < 1e-12) {
      qv = 1e-12;
      if (clamped) ++*clamped;
    }
    loss += p[i] * (std::log(p[i]) - std::log(qv));
  }
  return loss;
}

/// Weighted sum of CE and KD losses; lambda outside [0,1] is rejected.
inline double composite_loss(double l_ce, double l_kd, double lambda_kd) {
  check_config(lambda_kd >= 0.0 && lambda_kd <= 1.0,
               "composite_loss: lambda_KD must lie in [0,1], got " +
                   std::to_string(lambda_kd));
  return (1.0 - lambda_kd) * l_ce + lambda_kd * l_kd;
}

/// One record of an annotated dataset: the scored sequence plus per
/// response position top-k teacher logits.
struct AnnotatedRecord {
  SampleId sample_id{};
  Digest generator{};
  std::vector<TokenId> prompt;   // BOS query SEP
  std::vector<TokenId> response; // response tokens, terminal EOS included
  std::vector<TopKRecord> topk;  // one per response position
};

/// Samples paired with per-position teacher logits; the "TKLG" container.
struct AnnotatedDataset {
  Digest tokenizer_fingerprint{};
  Digest teacher_fingerprint{};
  std::uint16_t k = 0;
  std::uint32_t vocab_size = 0;
  std::vector<AnnotatedRecord> records;

  static constexpr const char* kMagic = "TKLG";
  static constexpr std::uint16_t kVersion = 1;

  void validate() const {
    for (const auto& r : records) {
      check_integrity(r.topk.size() == r.response.size(),
                      "annotation: positions do not cover the response");
      for (const auto& rec : r.topk)
        validate_topk_record(rec, k, vocab_size, "annotation " + hex(r.sample_id));
    }
  }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.str_bytes(kMagic);
    w.u16(kVersion);
    w.bytes(tokenizer_fingerprint);
    w.bytes(teacher_fingerprint);
    w.u16(k);
    w.u32(vocab_size);
    for (const auto& r : records) {
      w.bytes(r.sample_id);
      w.bytes(r.generator);
      w.u32(static_cast<std::uint32_t>(r.prompt.size()));
      w.u32(static_cast<std::uint32_t>(r.response.size()));
      for (auto t : r.prompt) w.u32(static_cast<std::uint32_t>(t));
      for (auto t : r.response) w.u32(static_cast<std::uint32_t>(t));
      for (const auto& rec : r.topk)
        for (const auto& e : rec) {
          w.u32(static_cast<std::uint32_t>(e.id));
          w.f32(e.logit);
        }
    }
    return w.take();
  }

  static AnnotatedDataset parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    check_integrity(r.str(4) == kMagic, "annotation: bad magic");
    const auto version = r.u16();
    check_integrity(version == kVersion,
                    "annotation: unsupported version " + std::to_string(version));
    AnnotatedDataset ds;
    auto fp = r.bytes(32);
    std::copy(fp.begin(), fp.end(), ds.tokenizer_fingerprint.begin());
    auto tfp = r.bytes(32);
    std::copy(tfp.begin(), tfp.end(), ds.teacher_fingerprint.begin());
    ds.k = r.u16();
    ds.vocab_size = r.u32();
    check_integrity(ds.k >= 2, "annotation: k must be >= 2");
    while (!r.at_end()) {
      AnnotatedRecord rec;
      auto sid = r.bytes(16);
      std::copy(sid.begin(), sid.end(), rec.sample_id.begin());
      auto gen = r.bytes(32);
      std::copy(gen.begin(), gen.end(), rec.generator.begin());
      const auto plen = r.u32();
      const auto rlen = r.u32();
      rec.prompt.resize(plen);
      for (auto& t : rec.prompt) t = static_cast<TokenId>(r.u32());
      rec.response.resize(rlen);
      for (auto& t : rec.response) t = static_cast<TokenId>(r.u32());
      rec.topk.resize(rlen);
      for (auto& pos : rec.topk) {
        pos.resize(ds.k);
        for (auto& e : pos) {
          e.id = static_cast<TokenId>(r.u32());
          e.logit = r.f32();
        }
      }
      ds.records.push_back(std::move(rec));
    }
    ds.validate();
    return ds;
  }

  Digest digest() const { return sha256(serialize()); }

  void save(const std::filesystem::path& p) const { write_file(p, serialize()); }

  static AnnotatedDataset load(const std::filesystem::path& p) {
    auto bytes = read_file(p);
    return parse(bytes);
  }
};

} // namespace td
