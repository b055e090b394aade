// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace td {

/// Base class for all library failures.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration, arguments or preconditions. CLI exit code 2.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Corrupt artifact, hash mismatch or provenance violation. CLI exit code 4.
class IntegrityError : public Error {
public:
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

inline void check_config(bool cond, const std::string& msg) {
  if (!cond) throw ConfigError(msg);
}

inline void check_integrity(bool cond, const std::string& msg) {
  if (!cond) throw IntegrityError(msg);
}

} // namespace td
