// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tinydistill/error.hpp"
#include "tinydistill/hash.hpp"

namespace td {

enum class TaskClass { reasoning, non_reasoning };

inline std::string to_string(TaskClass c) {
  return c == TaskClass::reasoning ? "reasoning" : "non-reasoning";
}

inline TaskClass task_class_from_string(const std::string& s) {
  if (s == "reasoning") return TaskClass::reasoning;
  if (s == "non-reasoning") return TaskClass::non_reasoning;
  throw ConfigError("unknown task class: " + s);
}

/// One training item. The id is a content hash of (query, response), so
/// identical items collide by construction and ids survive re-serialization.
struct Sample {
  SampleId id{};
  std::string query;
  std::string response;
  std::string reasoning_trace; // empty when absent
  TaskClass task_class = TaskClass::non_reasoning;
  std::map<std::string, std::string> attributes;

  static Sample make(std::string query, std::string response,
                     std::string reasoning_trace, TaskClass task_class,
                     std::map<std::string, std::string> attributes = {}) {
    Sample s;
    s.id = content_id(query, response);
    s.query = std::move(query);
    s.response = std::move(response);
    s.reasoning_trace = std::move(reasoning_trace);
    s.task_class = task_class;
    s.attributes = std::move(attributes);
    return s;
  }

  std::string id_hex() const { return hex(id); }

  nlohmann::json to_json() const {
    nlohmann::json j{{"id", id_hex()},
                     {"query", query},
                     {"response", response},
                     {"task_class", to_string(task_class)},
                     {"attributes", attributes}};
    if (reasoning_trace.empty())
      j["reasoning_trace"] = nullptr;
    else
      j["reasoning_trace"] = reasoning_trace;
    return j;
  }

  static Sample from_json(const nlohmann::json& j) {
    Sample s;
    s.query = j.at("query").get<std::string>();
    s.response = j.at("response").get<std::string>();
    if (j.contains("reasoning_trace") && !j["reasoning_trace"].is_null())
      s.reasoning_trace = j["reasoning_trace"].get<std::string>();
    s.task_class = task_class_from_string(j.at("task_class").get<std::string>());
    if (j.contains("attributes"))
      s.attributes = j["attributes"].get<std::map<std::string, std::string>>();
    s.id = parse_hex<16>(j.at("id").get<std::string>());
    check_integrity(s.id == content_id(s.query, s.response),
                    "sample id does not match its content hash: " + hex(s.id));
    return s;
  }
};

/// Canonical text view used by dedup signatures and compression scoring.
inline std::string curation_text(const Sample& s) {
  std::string out = s.query;
  out.push_back('\n');
  if (!s.reasoning_trace.empty()) {
    out += s.reasoning_trace;
    out.push_back('\n');
  }
  out += s.response;
  return out;
}

inline void write_samples(const std::filesystem::path& p,
                          const std::vector<Sample>& samples) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc);
  check(out.good(), "cannot open corpus for writing: " + p.string());
  for (const auto& s : samples) out << s.to_json().dump() << "\n";
  check(out.good(), "corpus write failed: " + p.string());
}

inline std::vector<Sample> read_samples(const std::filesystem::path& p) {
  std::ifstream in(p);
  check(in.good(), "cannot open corpus: " + p.string());
  std::vector<Sample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(Sample::from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError("corpus " + p.string() + " line " +
                           std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

} // namespace td
