// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"
#include "tinydistill/generate.hpp"
#include "tinydistill/math.hpp"
#include "tinydistill/packing.hpp"
#include "tinydistill/parallel.hpp"
#include "tinydistill/sample.hpp"
#include "tinydistill/tasks.hpp"
#include "tinydistill/tokenizer.hpp"
#include "tinydistill/transformer.hpp"

namespace td {

/// Anything that maps a prompt to a token sequence; models and lookup
/// stubs both qualify.
using Generator =
    std::function<std::vector<TokenId>(const std::vector<TokenId>&, const DecodeConfig&)>;

template <class S>
Generator model_generator(const Transformer<S>& model) {
  return [&model](const std::vector<TokenId>& prompt, const DecodeConfig& cfg) {
    return generate(model, prompt, cfg);
  };
}

struct EvalResult {
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t extraction_failures = 0;
  double exact_match = 0.0;
  double perplexity = std::numeric_limits<double>::quiet_NaN();
  double mean_token_kl = std::numeric_limits<double>::quiet_NaN();
  double median_seq_kl = std::numeric_limits<double>::quiet_NaN();
  std::map<std::string, double> per_task_accuracy;
  DecodeConfig decode;

  nlohmann::json to_json() const {
    nlohmann::json per_task(per_task_accuracy);
    auto num = [](double v) {
      return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
    };
    return nlohmann::json{{"n", n},
                          {"correct", correct},
                          {"extraction_failures", extraction_failures},
                          {"exact_match", exact_match},
                          {"perplexity", num(perplexity)},
                          {"mean_token_kl", num(mean_token_kl)},
                          {"median_seq_kl", num(median_seq_kl)},
                          {"per_task_accuracy", per_task},
                          {"decode", decode.to_json()}};
  }
};

/// Stored generation; accuracies stay recomputable from these plus the
/// task oracle.
struct Generation {
  std::string id_hex;
  std::string query;
  std::string output;
  std::string extracted;
  std::string expected;
  bool correct = false;
  bool extraction_failed = false;

  nlohmann::json to_json() const {
    return nlohmann::json{{"id", id_hex},       {"query", query},
                          {"output", output},   {"extracted", extracted},
                          {"expected", expected}, {"correct", correct},
                          {"extraction_failed", extraction_failed}};
  }
};

struct EvalOutput {
  EvalResult result;
  std::vector<Generation> generations;
};

/// Greedy-decoding exact-match evaluation. The expected answer is the text
/// after the sample's marker; a missing marker in the output counts as
/// incorrect and is tallied as an extraction failure. When score_model is
/// given, teacher-forced perplexity on reference responses is reported;
/// when teacher is also given, per-token forward KL(teacher||student) per
/// reference position is reported (mean over tokens, median of per-sequence
/// means).
inline EvalOutput evaluate(const Tokenizer& tok, const std::vector<Sample>& test_set,
                           const DecodeConfig& decode, const Generator& gen,
                           const Transformer<float>* score_model = nullptr,
                           const Transformer<float>* teacher = nullptr,
                           unsigned threads = 0) {
  EvalOutput out;
  out.result.decode = decode;
  out.result.n = test_set.size();
  out.generations.resize(test_set.size());
  if (test_set.empty()) return out;
  if (threads == 0) threads = default_threads();

  struct Score {
    double nll_sum = 0;
    double kl_sum = 0;
    std::size_t tokens = 0;
    double seq_kl = 0;
  };
  std::vector<Score> scores(test_set.size());

  parallel_for(test_set.size(), threads, [&](std::size_t i) {
    const Sample& s = test_set[i];
    auto ts = tokenize_sample(tok, s, false);
    Generation g;
    g.id_hex = s.id_hex();
    g.query = s.query;
    auto out_tokens = gen(ts.prompt, decode);
    g.output = tok.decode(out_tokens);
    auto marker = g.output.rfind(kAnswerMarker);
    if (marker == std::string::npos) {
      g.extraction_failed = true;
    } else {
      g.extracted = g.output.substr(marker + 1);
    }
    g.expected = oracle_answer(s.query);
    g.correct = !g.extraction_failed && g.extracted == g.expected;
    out.generations[i] = std::move(g);

    if (score_model) {
      // teacher-forced scoring on the reference response
      std::vector<TokenId> seq = ts.prompt;
      seq.insert(seq.end(), ts.target.begin(), ts.target.end());
      auto logits = score_model->forward(seq);
      const std::size_t v = logits->shape[1];
      NodePtr<float> tlogits;
      if (teacher) tlogits = teacher->forward(seq);
      Score sc;
      for (std::size_t p = 0; p < ts.target.size(); ++p) {
        const std::size_t row = ts.prompt.size() + p - 1;
        std::span<const float> zrow(logits->value.data() + row * v, v);
        auto q = softmax(zrow);
        sc.nll_sum -= std::log(std::max(
            1e-30, static_cast<double>(q[static_cast<std::size_t>(ts.target[p])])));
        if (teacher) {
          std::span<const float> trow(tlogits->value.data() + row * v, v);
          auto pdist = softmax(trow);
          std::vector<double> pd(pdist.begin(), pdist.end());
          std::vector<double> qd(q.begin(), q.end());
          sc.kl_sum += kl_divergence(pd, qd);
        }
        ++sc.tokens;
      }
      sc.seq_kl = sc.tokens ? sc.kl_sum / static_cast<double>(sc.tokens) : 0.0;
      scores[i] = sc;
    }
  });

  std::map<std::string, std::pair<std::size_t, std::size_t>> per_task;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& g = out.generations[i];
    out.result.correct += g.correct ? 1 : 0;
    out.result.extraction_failures += g.extraction_failed ? 1 : 0;
    auto it = test_set[i].attributes.find("subcategory");
    auto& slot = per_task[it == test_set[i].attributes.end() ? "unknown" : it->second];
    slot.first += g.correct ? 1 : 0;
    slot.second += 1;
  }
  out.result.exact_match =
      static_cast<double>(out.result.correct) / static_cast<double>(out.result.n);
  for (const auto& [task, cnt] : per_task)
    out.result.per_task_accuracy[task] =
        static_cast<double>(cnt.first) / static_cast<double>(cnt.second);

  if (score_model) {
    double nll = 0, kl = 0;
    std::size_t tokens = 0;
    std::vector<double> seq_kls;
    for (const auto& sc : scores) {
      nll += sc.nll_sum;
      kl += sc.kl_sum;
      tokens += sc.tokens;
      seq_kls.push_back(sc.seq_kl);
    }
    if (tokens > 0) {
      out.result.perplexity = std::exp(nll / static_cast<double>(tokens));
      if (teacher) {
        out.result.mean_token_kl = kl / static_cast<double>(tokens);
        std::sort(seq_kls.begin(), seq_kls.end());
        const std::size_t m = seq_kls.size();
        out.result.median_seq_kl = m % 2 == 1
                                       ? seq_kls[m / 2]
                                       : 0.5 * (seq_kls[m / 2 - 1] + seq_kls[m / 2]);
      }
    }
  }
  return out;
}

inline void write_generations(const std::filesystem::path& p,
                              const std::vector<Generation>& gens) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  check(out.good(), "cannot open generations file: " + p.string());
  for (const auto& g : gens) out << g.to_json().dump() << "\n";
}

} // namespace td
