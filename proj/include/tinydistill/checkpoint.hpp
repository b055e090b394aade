// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tinydistill/bytes.hpp"
#include "tinydistill/error.hpp"
#include "tinydistill/hash.hpp"
#include "tinydistill/transformer.hpp"

namespace td {

/// Named parameter snapshot of a model, bound to a tokenizer fingerprint.
/// Serialized as the "TDCK" little-endian container; records are ordered
/// lexicographically by name so equal weights give equal bytes.
struct Checkpoint {
  struct Tensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
  };

  ModelConfig config;
  Digest tokenizer_fingerprint{};
  std::string provenance;
  std::vector<Tensor> tensors; // sorted by name

  static constexpr const char* kMagic = "TDCK";
  static constexpr std::uint16_t kVersion = 1;

  static Checkpoint from_model(const Transformer<float>& model,
                               const Digest& tokenizer_fp,
                               std::string provenance_note) {
    Checkpoint ck;
    ck.config = model.config();
    ck.tokenizer_fingerprint = tokenizer_fp;
    ck.provenance = std::move(provenance_note);
    const auto& names = model.param_names();
    const auto& params = model.params();
    for (std::size_t i = 0; i < params.size(); ++i)
      ck.tensors.push_back({names[i], params[i]->shape, params[i]->value});
    std::sort(ck.tensors.begin(), ck.tensors.end(),
              [](const Tensor& a, const Tensor& b) { return a.name < b.name; });
    return ck;
  }

  /// Rebuilds the model; reload reproduces bit-identical forwards because
  /// values round-trip as raw f32.
  template <class S = float>
  Transformer<S> to_model(bool trainable = true) const {
    Transformer<S> model(config, trainable);
    check_integrity(tensors.size() == model.params().size(),
                    "checkpoint: tensor count mismatch");
    for (const auto& t : tensors) {
      auto p = model.param(t.name);
      check_integrity(p->shape == t.shape, "checkpoint: shape mismatch for " + t.name);
      for (std::size_t i = 0; i < t.data.size(); ++i)
        p->value[i] = static_cast<S>(t.data[i]);
    }
    return model;
  }

  std::vector<std::uint8_t> serialize() const {
    ByteWriter w;
    w.str_bytes(kMagic);
    w.u16(kVersion);
    w.bytes(tokenizer_fingerprint);
    w.u32(config.layers);
    w.u32(config.d_model);
    w.u32(config.n_heads);
    w.u32(config.d_ff);
    w.u32(config.max_context);
    w.u32(config.vocab_size);
    w.u64(config.init_seed);
    w.u32(static_cast<std::uint32_t>(provenance.size()));
    w.str_bytes(provenance);
    for (const auto& t : tensors) {
      check(t.name.size() <= UINT16_MAX, "checkpoint: name too long");
      check(t.shape.size() <= UINT8_MAX, "checkpoint: rank too large");
      w.u16(static_cast<std::uint16_t>(t.name.size()));
      w.str_bytes(t.name);
      w.u8(static_cast<std::uint8_t>(t.shape.size()));
      for (auto e : t.shape) w.u32(static_cast<std::uint32_t>(e));
      for (float x : t.data) w.f32(x);
    }
    return w.take();
  }

  static Checkpoint parse(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    check_integrity(r.str(4) == kMagic, "checkpoint: bad magic");
    const auto version = r.u16();
    check_integrity(version == kVersion,
                    "checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    auto fp = r.bytes(32);
    std::copy(fp.begin(), fp.end(), ck.tokenizer_fingerprint.begin());
    ck.config.layers = r.u32();
    ck.config.d_model = r.u32();
    ck.config.n_heads = r.u32();
    ck.config.d_ff = r.u32();
    ck.config.max_context = r.u32();
    ck.config.vocab_size = r.u32();
    ck.config.init_seed = r.u64();
    ck.provenance = r.str(r.u32());
    std::string prev;
    while (!r.at_end()) {
      Tensor t;
      t.name = r.str(r.u16());
      check_integrity(prev.empty() || prev < t.name,
                      "checkpoint: records out of order at " + t.name);
      prev = t.name;
      const std::size_t rank = r.u8();
      std::size_t n = 1;
      for (std::size_t i = 0; i < rank; ++i) {
        t.shape.push_back(r.u32());
        n *= t.shape.back();
      }
      t.data.resize(n);
      for (std::size_t i = 0; i < n; ++i) t.data[i] = r.f32();
      ck.tensors.push_back(std::move(t));
    }
    return ck;
  }

  /// Content address of this checkpoint (hash of its serialized bytes);
  /// used as the generator/teacher fingerprint in provenance chains.
  Digest digest() const { return sha256(serialize()); }

  void save(const std::filesystem::path& p) const { write_file(p, serialize()); }

  static Checkpoint load(const std::filesystem::path& p) {
    auto bytes = read_file(p);
    return parse(bytes);
  }
};

} // namespace td
