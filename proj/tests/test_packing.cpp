// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <numeric>
#include <string>
#include <vector>

#include "tinydistill/packing.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/tasks.hpp"

using namespace td;

namespace {

TokenizedSample fake_sample(std::size_t prompt_len, std::size_t target_len,
                            std::uint8_t tag) {
  TokenizedSample t;
  t.id.fill(tag);
  t.prompt.assign(prompt_len, Tokenizer::kBos);
  t.target.assign(target_len, Tokenizer::kEos);
  return t;
}

Tokenizer task_tokenizer() { return Tokenizer::build(task_alphabet_corpus()); }

} // namespace

TEST_CASE("single short sample gives one pack, one segment", "[packing]") {
  auto packs = pack_sequences({fake_sample(3, 4, 1)}, 16);
  REQUIRE(packs.size() == 1);
  REQUIRE(packs[0].n_samples == 1);
  REQUIRE(packs[0].size() == 7);
  for (auto s : packs[0].segments) REQUIRE(s == 0);
}

TEST_CASE("first fit decreasing traces the documented example", "[packing]") {
  // lengths 60, 30, 10 fit one pack of 100
  std::vector<TokenizedSample> samples{fake_sample(30, 30, 1), fake_sample(15, 15, 2),
                                       fake_sample(5, 5, 3)};
  auto packs = pack_sequences(samples, 100);
  REQUIRE(packs.size() == 1);
  REQUIRE(packs[0].n_samples == 3);
  REQUIRE(packs[0].size() == 100);
}

TEST_CASE("oversize sample is rejected by id", "[packing]") {
  auto s = fake_sample(40, 40, 0xAB);
  try {
    pack_sequences({s}, 64);
    FAIL("expected rejection");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find(hex(s.id)) != std::string::npos);
  }
}

TEST_CASE("token conservation and mask accounting on random corpora", "[packing]") {
  Rng rng(61);
  auto tok = task_tokenizer();
  for (int trial = 0; trial < 20; ++trial) {
    TaskSpec spec;
    spec.kind = TaskKind::addition;
    spec.split_seed = 500 + trial;
    auto queries = sample_queries(spec, 20 + rng.below(40), rng);
    std::vector<TokenizedSample> samples;
    std::size_t total_tokens = 0, total_target = 0;
    for (const auto& q : queries) {
      auto ts = tokenize_sample(tok, make_task_sample(TaskKind::addition, q),
                                trial % 2 == 0);
      total_tokens += ts.length();
      total_target += ts.target.size();
      samples.push_back(std::move(ts));
    }
    const std::size_t max_len = 48 + rng.below(64);
    auto packs = pack_sequences(samples, max_len);

    std::size_t packed_tokens = 0, mask_sum = 0, packed_samples = 0;
    for (const auto& p : packs) {
      REQUIRE(p.size() <= max_len);
      packed_tokens += p.size();
      packed_samples += p.n_samples;
      for (auto m : p.loss_mask) mask_sum += m;
      // no sample spans two packs: segments within a pack are contiguous
      for (std::size_t i = 1; i < p.size(); ++i) {
        REQUIRE(p.segments[i] >= p.segments[i - 1]);
        REQUIRE(p.segments[i] - p.segments[i - 1] <= 1);
      }
    }
    REQUIRE(packed_tokens == total_tokens);
    REQUIRE(mask_sum == total_target); // loss mask covers exactly target tokens
    REQUIRE(packed_samples == samples.size());
  }
}

TEST_CASE("tokenized target length drops when the trace is stripped", "[packing]") {
  auto tok = task_tokenizer();
  auto s = make_task_sample(TaskKind::addition, "37+85");
  auto with = tokenize_sample(tok, s, true);
  auto without = tokenize_sample(tok, s, false);
  REQUIRE(without.target.size() == s.response.size() + 1); // + EOS
  REQUIRE(with.target.size() == s.reasoning_trace.size() + s.response.size() + 1);
}
