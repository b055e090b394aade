// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <vector>

#include "fd_check.hpp"
#include "tinydistill/checkpoint.hpp"
#include "tinydistill/generate.hpp"
#include "tinydistill/math.hpp"
#include "tinydistill/ops.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/transformer.hpp"

using namespace td;

namespace {

ModelConfig tiny_config(std::uint32_t vocab, std::uint64_t seed = 7) {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_context = 32;
  cfg.vocab_size = vocab;
  cfg.init_seed = seed;
  return cfg;
}

std::vector<TokenId> random_tokens(Rng& rng, std::size_t n, std::size_t vocab) {
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

} // namespace

TEST_CASE("forward output shape is [T, V]", "[model]") {
  Transformer<float> model(tiny_config(11));
  auto logits = model.forward({1, 5, 6, 7});
  REQUIRE(logits->shape == Shape{4, 11});
}

TEST_CASE("forward rejects bad inputs", "[model]") {
  Transformer<float> model(tiny_config(11));
  REQUIRE_THROWS_AS(model.forward({1, 11, 2}), Error); // out-of-range token
  REQUIRE_THROWS_AS(model.forward({}), Error);
  REQUIRE_THROWS_AS(model.forward(std::vector<TokenId>(33, 1)), Error); // > context
  REQUIRE_THROWS_AS(model.forward({1, 2, 3}, {0, 1, 0}), Error); // decreasing segments
}

TEST_CASE("causality: future tokens do not influence past logits", "[model]") {
  Rng rng(19);
  Transformer<float> model(tiny_config(13));
  for (int trial = 0; trial < 20; ++trial) {
    auto toks = random_tokens(rng, 8, 13);
    auto base = model.forward(toks);
    const std::size_t t = 2 + rng.below(5);
    auto mutated = toks;
    mutated[t + 1] = static_cast<TokenId>((mutated[t + 1] + 1 + rng.below(11)) % 13);
    auto out = model.forward(mutated);
    for (std::size_t i = 0; i <= t; ++i)
      for (std::size_t j = 0; j < 13; ++j)
        REQUIRE(out->value[i * 13 + j] == base->value[i * 13 + j]); // bitwise
  }
}

TEST_CASE("packed forward equals isolated forwards", "[model]") {
  Rng rng(29);
  Transformer<float> model(tiny_config(13));
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n_samples = 2 + rng.below(7); // up to 8 samples
    std::vector<std::vector<TokenId>> samples;
    std::vector<TokenId> packed;
    std::vector<std::int32_t> segs;
    for (std::size_t s = 0; s < n_samples; ++s) {
      auto toks = random_tokens(rng, 1 + rng.below(4), 13);
      samples.push_back(toks);
      for (auto x : toks) {
        packed.push_back(x);
        segs.push_back(static_cast<std::int32_t>(s));
      }
    }
    if (packed.size() > 32) continue;
    auto out = model.forward(packed, segs);
    std::size_t off = 0;
    for (const auto& s : samples) {
      auto solo = model.forward(s);
      for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < 13; ++j)
          REQUIRE(std::abs(out->value[(off + i) * 13 + j] - solo->value[i * 13 + j]) <
                  1e-4f);
      off += s.size();
    }
  }
}

TEST_CASE("composite model gradients match central differences", "[model][slow]") {
  // double-precision model, every parameter checked against the FD oracle
  ModelConfig cfg = tiny_config(9);
  cfg.layers = 2;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.d_ff = 12;
  Rng rng(37);
  Transformer<double> model(cfg);
  std::vector<TokenId> toks{1, 5, 3, 8, 2};
  std::vector<std::int32_t> segs{0, 0, 0, 1, 1};
  auto ce = std::make_shared<CeTargets<double>>();
  ce->targets = {5, 3, 0, 2, 4};
  ce->weights = {0.0, 0.5, 0.25, 0.0, 0.25};

  auto loss_fn = [&] { return cross_entropy_rows(model.forward(toks, segs), ce); };
  auto loss = loss_fn();
  Grads<double> grads;
  backward(loss, grads);

  const auto& params = model.params();
  const auto& names = model.param_names();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto reforward = [&] { return loss_fn()->value[0]; };
    auto numeric = fd::central_diff(params[i]->value, reforward, 1e-5);
    auto analytic = grads.get_or_zero(params[i]);
    INFO("parameter " << names[i]);
    REQUIRE(fd::max_rel_err(analytic, numeric) < 1e-5);
  }
}

TEST_CASE("checkpoint roundtrip reproduces forwards bitwise", "[model]") {
  Rng rng(43);
  Transformer<float> model(tiny_config(13, 99));
  Digest tok_fp = sha256_str("probe-tokenizer");
  auto ck = Checkpoint::from_model(model, tok_fp, "unit test");

  auto path = std::filesystem::temp_directory_path() / "td_ck_test.tdck";
  ck.save(path);
  auto loaded = Checkpoint::load(path);
  REQUIRE(loaded.config == model.config());
  REQUIRE(loaded.tokenizer_fingerprint == tok_fp);
  REQUIRE(loaded.provenance == "unit test");
  REQUIRE(loaded.digest() == ck.digest());

  auto model2 = loaded.to_model();
  auto probe = random_tokens(rng, 9, 13);
  auto a = model.forward(probe);
  auto b = model2.forward(probe);
  REQUIRE(a->value == b->value); // bit-identical
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint parse rejects corruption", "[model]") {
  Transformer<float> model(tiny_config(7));
  auto ck = Checkpoint::from_model(model, sha256_str("t"), "x");
  auto bytes = ck.serialize();

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  REQUIRE_THROWS_AS(Checkpoint::parse(truncated), IntegrityError);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  REQUIRE_THROWS_AS(Checkpoint::parse(bad_magic), IntegrityError);
}

TEST_CASE("greedy generation is deterministic and argmax-consistent", "[model]") {
  Transformer<float> model(tiny_config(13));
  DecodeConfig cfg;
  cfg.max_new = 6;
  std::vector<TokenId> prompt{1, 5, 6};
  auto r1 = generate(model, prompt, cfg);
  auto r2 = generate(model, prompt, cfg);
  REQUIRE(r1 == r2);

  // step-by-step argmax oracle
  std::vector<TokenId> seq = prompt;
  std::vector<TokenId> expect;
  while (expect.size() < cfg.max_new && seq.size() < 32) {
    auto logits = model.forward(seq);
    std::span<const float> last(logits->value.data() + (seq.size() - 1) * 13, 13);
    auto next = static_cast<TokenId>(argmax_lowest(last));
    if (next == Tokenizer::kEos) break;
    expect.push_back(next);
    seq.push_back(next);
  }
  REQUIRE(r1 == expect);
}

TEST_CASE("generation stops on EOS as first argmax", "[model]") {
  // force a constant final representation and point only the EOS head at it
  Transformer<float> model(tiny_config(13));
  auto gain = model.param("final_norm.gain");
  auto bias = model.param("final_norm.bias");
  auto head = model.param("lm_head");
  const std::size_t d = model.config().d_model;
  std::fill(gain->value.begin(), gain->value.end(), 0.0f);
  std::fill(bias->value.begin(), bias->value.end(), 0.0f);
  bias->value[0] = 1.0f;
  std::fill(head->value.begin(), head->value.end(), 0.0f);
  head->value[static_cast<std::size_t>(Tokenizer::kEos) * d] = 10.0f;
  DecodeConfig cfg;
  cfg.max_new = 8;
  auto out = generate(model, {1, 5}, cfg);
  REQUIRE(out.empty());
}

TEST_CASE("temperature generation is deterministic per seed", "[model]") {
  Transformer<float> model(tiny_config(13));
  DecodeConfig cfg;
  cfg.mode = DecodeConfig::Mode::temperature;
  cfg.temperature = 0.8;
  cfg.max_new = 6;
  cfg.seed = 1234;
  auto a = generate(model, {1, 7}, cfg);
  auto b = generate(model, {1, 7}, cfg);
  REQUIRE(a == b);
}

TEST_CASE("generate rejects oversized or empty prompts", "[model]") {
  Transformer<float> model(tiny_config(13));
  DecodeConfig cfg;
  REQUIRE_THROWS_AS(generate(model, {}, cfg), Error);
  REQUIRE_THROWS_AS(generate(model, std::vector<TokenId>(32, 1), cfg), Error);
}
