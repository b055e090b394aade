// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"
#include "tinydistill/rng.hpp"
#include "tinydistill/sample.hpp"

namespace td {

/// Marker separating any reasoning trace from the final answer; evaluation
/// extracts the text after its last occurrence.
inline constexpr char kAnswerMarker = '#';

enum class TaskKind { addition, reversal, sorting, modular };

inline std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::addition: return "addition";
    case TaskKind::reversal: return "reversal";
    case TaskKind::sorting: return "sorting";
    case TaskKind::modular: return "modular";
  }
  throw Error("bad task kind");
}

inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "addition") return TaskKind::addition;
  if (s == "reversal") return TaskKind::reversal;
  if (s == "sorting") return TaskKind::sorting;
  if (s == "modular") return TaskKind::modular;
  throw ConfigError("unknown task kind: " + s);
}

struct TaskSpec {
  TaskKind kind = TaskKind::addition;
  std::uint32_t digits = 2; // addition operand width
  std::uint32_t length = 5; // reversal/sorting item count
  std::uint64_t split_seed = 1;

  nlohmann::json to_json() const {
    return nlohmann::json{{"kind", to_string(kind)},
                          {"digits", digits},
                          {"length", length},
                          {"split_seed", split_seed}};
  }

  static TaskSpec from_json(const nlohmann::json& j) {
    TaskSpec s;
    if (j.contains("kind")) s.kind = task_kind_from_string(j["kind"].get<std::string>());
    s.digits = j.value("digits", s.digits);
    s.length = j.value("length", s.length);
    s.split_seed = j.value("split_seed", s.split_seed);
    check_config(s.digits >= 1 && s.digits <= 6, "task spec: digits out of range");
    check_config(s.length >= 2 && s.length <= 16, "task spec: length out of range");
    return s;
  }
};

namespace detail {

inline constexpr char kReversalAlphabet[] = "abcdefgh";

inline std::string two_digit(int v) {
  std::string s = std::to_string(v);
  return s.size() == 1 ? "0" + s : s;
}

} // namespace detail

/// Answer oracle. Query formats are self-identifying:
///   addition  "37+85"        reversal "r:dacb"
///   sorting   "s:3142"       modular  "17*24%7"
inline std::string oracle_answer(const std::string& query) {
  if (query.rfind("r:", 0) == 0) {
    std::string s = query.substr(2);
    std::reverse(s.begin(), s.end());
    return s;
  }
  if (query.rfind("s:", 0) == 0) {
    std::string s = query.substr(2);
    std::sort(s.begin(), s.end());
    return s;
  }
  auto star = query.find('*');
  if (star != std::string::npos) {
    auto pct = query.find('%');
    check(pct != std::string::npos && pct > star, "oracle: bad modular query " + query);
    const long a = std::stol(query.substr(0, star));
    const long b = std::stol(query.substr(star + 1, pct - star - 1));
    const long m = std::stol(query.substr(pct + 1));
    check(m > 0, "oracle: bad modulus in " + query);
    return std::to_string((a * b) % m);
  }
  auto plus = query.find('+');
  check(plus != std::string::npos, "oracle: unrecognized query " + query);
  const long a = std::stol(query.substr(0, plus));
  const long b = std::stol(query.substr(plus + 1));
  return std::to_string(a + b);
}

/// Carry trace for multi-digit addition, units column first. Column sums are
/// zero-padded to two digits so every position has a fixed role:
///   37+85 -> "7+5=12;3+8+1=12;"  answer "122"
inline std::string addition_trace(const std::string& query) {
  auto plus = query.find('+');
  const std::string a = query.substr(0, plus);
  const std::string b = query.substr(plus + 1);
  check(a.size() == b.size(), "addition_trace: operand width mismatch in " + query);
  std::string trace;
  int carry = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int da = a[a.size() - 1 - i] - '0';
    const int db = b[b.size() - 1 - i] - '0';
    const int sum = i == 0 ? da + db : da + db + carry;
    trace.push_back(static_cast<char>('0' + da));
    trace.push_back('+');
    trace.push_back(static_cast<char>('0' + db));
    if (i > 0) {
      trace.push_back('+');
      trace.push_back(static_cast<char>('0' + carry));
    }
    trace.push_back('=');
    trace += detail::two_digit(sum);
    trace.push_back(';');
    carry = sum / 10;
  }
  return trace;
}

/// Sorted-prefix trace for the sorting task: the prefix after each
/// insertion, so the last segment equals the answer.
inline std::string sorting_trace(const std::string& query) {
  const std::string s = query.substr(2);
  std::string trace, prefix;
  for (char c : s) {
    prefix.insert(std::upper_bound(prefix.begin(), prefix.end(), c), c);
    trace += prefix;
    trace.push_back(';');
  }
  return trace;
}

/// A full sample for one query of the given kind. Reasoning kinds carry
/// their trace; the response is always marker + answer.
inline Sample make_task_sample(TaskKind kind, const std::string& query) {
  const std::string answer = oracle_answer(query);
  std::string trace;
  TaskClass cls = TaskClass::non_reasoning;
  if (kind == TaskKind::addition) {
    trace = addition_trace(query);
    cls = TaskClass::reasoning;
  } else if (kind == TaskKind::sorting) {
    trace = sorting_trace(query);
    cls = TaskClass::reasoning;
  }
  std::map<std::string, std::string> attrs{
      {"subcategory", to_string(kind)},
      {"verifiable", "true"},
      {"difficulty", std::to_string(answer.size())}};
  return Sample::make(query, std::string(1, kAnswerMarker) + answer, trace, cls,
                      std::move(attrs));
}

/// Distinct queries for a task, deterministically sampled from its universe.
inline std::vector<std::string> sample_queries(const TaskSpec& spec, std::size_t n,
                                               Rng& rng) {
  std::set<std::string> seen;
  std::vector<std::string> out;
  const std::size_t guard = 200 * n + 10000;
  std::size_t attempts = 0;
  while (out.size() < n) {
    check(++attempts < guard, "sample_queries: task universe too small for " +
                                  std::to_string(n) + " distinct queries");
    std::string q;
    switch (spec.kind) {
      case TaskKind::addition: {
        const std::uint64_t lo = spec.digits == 1 ? 0 : [&] {
          std::uint64_t p = 1;
          for (std::uint32_t i = 1; i < spec.digits; ++i) p *= 10;
          return p;
        }();
        std::uint64_t hi = 1;
        for (std::uint32_t i = 0; i < spec.digits; ++i) hi *= 10;
        const std::uint64_t a = lo + rng.below(hi - lo);
        const std::uint64_t b = lo + rng.below(hi - lo);
        q = std::to_string(a) + "+" + std::to_string(b);
        break;
      }
      case TaskKind::reversal: {
        q = "r:";
        for (std::uint32_t i = 0; i < spec.length; ++i)
          q.push_back(detail::kReversalAlphabet[rng.below(8)]);
        break;
      }
      case TaskKind::sorting: {
        q = "s:";
        for (std::uint32_t i = 0; i < spec.length; ++i)
          q.push_back(static_cast<char>('0' + rng.below(10)));
        break;
      }
      case TaskKind::modular: {
        const std::uint64_t a = 2 + rng.below(98);
        const std::uint64_t b = 2 + rng.below(98);
        const std::uint64_t m = 2 + rng.below(8);
        q = std::to_string(a) + "*" + std::to_string(b) + "%" + std::to_string(m);
        break;
      }
    }
    if (seen.insert(q).second) out.push_back(q);
  }
  return out;
}

struct SuiteSizes {
  std::size_t stage1 = 256;
  std::size_t stage2 = 256;
  std::size_t test = 64;
};

struct SyntheticSuite {
  std::vector<Sample> stage1; // reasoning format, traces attached
  std::vector<Sample> stage2; // fast format
  std::vector<Sample> test;   // fast format, disjoint queries
};

/// Train/test splits share no query string: one pass samples
/// test+stage1+stage2 distinct queries and partitions them.
inline SyntheticSuite build_synthetic_suite(const TaskSpec& spec,
                                            const SuiteSizes& sizes) {
  check(sizes.stage1 > 0 && sizes.stage2 > 0 && sizes.test > 0,
        "build_synthetic_suite: sizes must be positive");
  Rng rng(spec.split_seed);
  auto queries = sample_queries(spec, sizes.test + sizes.stage1 + sizes.stage2, rng);
  SyntheticSuite suite;
  std::size_t i = 0;
  for (; i < sizes.test; ++i)
    suite.test.push_back(make_task_sample(spec.kind, queries[i]));
  for (; i < sizes.test + sizes.stage1; ++i)
    suite.stage1.push_back(make_task_sample(spec.kind, queries[i]));
  for (; i < queries.size(); ++i) {
    auto s = make_task_sample(spec.kind, queries[i]);
    s.reasoning_trace.clear(); // fast corpus carries answers only
    suite.stage2.push_back(std::move(s));
  }
  return suite;
}

/// Alphabet cover for tokenizer construction: every symbol any task and
/// special text format can emit.
inline std::vector<std::string> task_alphabet_corpus() {
  return {"0123456789", "+*%=;:#", detail::kReversalAlphabet, "r:s:"};
}

} // namespace td
