// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/bytes.hpp"
#include "tinydistill/error.hpp"
#include "tinydistill/hash.hpp"

namespace td {

using TokenId = std::int32_t;

/// Byte-level tokenizer over the task alphabet. Reserved ids come first so
/// they are stable across corpora; symbol ids are dense above them.
class Tokenizer {
public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kSep = 3; // prompt/response boundary
  static constexpr TokenId kUnk = 4;
  static constexpr TokenId kNumReserved = 5;

  Tokenizer() = default;

  explicit Tokenizer(std::string symbols) : symbols_(std::move(symbols)) {
    std::set<char> seen;
    for (char c : symbols_)
      check(seen.insert(c).second, "tokenizer: duplicate symbol");
    for (std::size_t i = 0; i < symbols_.size(); ++i)
      id_of_[symbols_[i]] = kNumReserved + static_cast<TokenId>(i);
    fingerprint_ = compute_fingerprint();
  }

  /// Deterministic build: the vocabulary is the sorted set of bytes that
  /// occur in the corpus, so identical corpora share one fingerprint.
  template <class Texts>
  static Tokenizer build(const Texts& corpus) {
    std::set<char> chars;
    bool any = false;
    for (const auto& text : corpus) {
      any = true;
      for (char c : text) chars.insert(c);
    }
    check(any, "tokenizer: empty corpus");
    return Tokenizer(std::string(chars.begin(), chars.end()));
  }

  std::vector<TokenId> encode(const std::string& text) const {
    std::vector<TokenId> out;
    out.reserve(text.size());
    for (char c : text) {
      auto it = id_of_.find(c);
      out.push_back(it == id_of_.end() ? kUnk : it->second);
    }
    return out;
  }

  std::string decode(const std::vector<TokenId>& ids) const {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
      check(id >= 0 && static_cast<std::size_t>(id) < vocab_size(),
            "tokenizer: id out of range: " + std::to_string(id));
      if (id < kNumReserved) continue; // specials render as nothing
      out.push_back(symbols_[static_cast<std::size_t>(id - kNumReserved)]);
    }
    return out;
  }

  std::size_t vocab_size() const { return kNumReserved + symbols_.size(); }
  const std::string& symbols() const { return symbols_; }
  const Digest& fingerprint() const { return fingerprint_; }

  nlohmann::json to_json() const {
    return nlohmann::json{{"type", "byte"}, {"symbols", symbols_}};
  }

  static Tokenizer from_json(const nlohmann::json& j) {
    check_config(j.value("type", "") == "byte", "tokenizer: unsupported type");
    check_config(j.contains("symbols") && j["symbols"].is_string(),
                 "tokenizer: missing symbols");
    return Tokenizer(j["symbols"].get<std::string>());
  }

  void save(const std::filesystem::path& p) const { write_text_file(p, to_json().dump(2) + "\n"); }

  static Tokenizer load(const std::filesystem::path& p) {
    return from_json(nlohmann::json::parse(read_text_file(p)));
  }

private:
  Digest compute_fingerprint() const {
    ByteWriter w;
    w.str_bytes("TDTOK1");
    w.u32(static_cast<std::uint32_t>(symbols_.size()));
    w.str_bytes(symbols_);
    return sha256(w.data());
  }

  std::string symbols_;
  std::map<char, TokenId> id_of_;
  Digest fingerprint_{};
};

/// Cross-model operations call this before touching two artifacts.
inline void require_same_tokenizer(const Digest& a, const Digest& b,
                                   const std::string& what) {
  check_integrity(a == b, "tokenizer fingerprint mismatch in " + what + ": " +
                              hex(a) + " vs " + hex(b));
}

} // namespace td
