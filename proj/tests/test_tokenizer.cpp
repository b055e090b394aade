// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "tinydistill/tokenizer.hpp"

using namespace td;

TEST_CASE("tokenizer roundtrip on in-vocabulary text", "[tokenizer]") {
  std::vector<std::string> corpus{"12+7", "98-4", "=#;"};
  auto tok = Tokenizer::build(corpus);
  REQUIRE(tok.decode(tok.encode("12+7")) == "12+7");
  REQUIRE(tok.decode(tok.encode("#=;49")) == "#=;49");
}

TEST_CASE("same corpus gives one fingerprint", "[tokenizer]") {
  std::vector<std::string> corpus{"abc123", "xyz"};
  auto teacher_tok = Tokenizer::build(corpus);
  auto student_tok = Tokenizer::build(corpus);
  REQUIRE(teacher_tok.fingerprint() == student_tok.fingerprint());

  // insertion order does not matter, only the symbol set
  std::vector<std::string> shuffled{"xyz", "abc123"};
  REQUIRE(Tokenizer::build(shuffled).fingerprint() == teacher_tok.fingerprint());

  std::vector<std::string> different{"abc1234", "xyz"};
  REQUIRE(Tokenizer::build(different).fingerprint() != teacher_tok.fingerprint());
}

TEST_CASE("unseen symbols map to UNK", "[tokenizer]") {
  auto tok = Tokenizer::build(std::vector<std::string>{"abc"});
  auto ids = tok.encode("abz");
  REQUIRE(ids[0] != Tokenizer::kUnk);
  REQUIRE(ids[1] != Tokenizer::kUnk);
  REQUIRE(ids[2] == Tokenizer::kUnk);
}

TEST_CASE("ids are dense and reserved ids stable", "[tokenizer]") {
  auto tok = Tokenizer::build(std::vector<std::string>{"ba"});
  REQUIRE(tok.vocab_size() == std::size_t(Tokenizer::kNumReserved) + 2);
  auto ids = tok.encode("ab");
  REQUIRE(ids[0] == Tokenizer::kNumReserved);     // 'a' sorts first
  REQUIRE(ids[1] == Tokenizer::kNumReserved + 1); // then 'b'
}

TEST_CASE("tokenizer json persistence keeps the fingerprint", "[tokenizer]") {
  auto tok = Tokenizer::build(std::vector<std::string>{"0123456789+#;="});
  auto path = std::filesystem::temp_directory_path() / "td_tok_test.json";
  tok.save(path);
  auto loaded = Tokenizer::load(path);
  REQUIRE(loaded.fingerprint() == tok.fingerprint());
  REQUIRE(loaded.symbols() == tok.symbols());
  std::filesystem::remove(path);
}

TEST_CASE("fingerprint gate refuses mismatches", "[tokenizer]") {
  auto a = Tokenizer::build(std::vector<std::string>{"abc"});
  auto b = Tokenizer::build(std::vector<std::string>{"abd"});
  REQUIRE_THROWS_AS(require_same_tokenizer(a.fingerprint(), b.fingerprint(), "test"),
                    IntegrityError);
  REQUIRE_NOTHROW(require_same_tokenizer(a.fingerprint(), a.fingerprint(), "test"));
}

TEST_CASE("build on empty corpus is rejected", "[tokenizer]") {
  REQUIRE_THROWS_AS(Tokenizer::build(std::vector<std::string>{}), Error);
}
