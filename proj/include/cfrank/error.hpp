// Copyright the cfrank authors. Licensed under the terms of the Apache 2.0 license.
// See LICENSE in the project root.
#pragma once

#include <stdexcept>
#include <string>

namespace cfrank {

/// Base class for all toolkit failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid input: bad config values, malformed files, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Scoring backend failure (index lookup, embedding store, remote endpoint).
class ScorerError : public Error {
 public:
  using Error::Error;
};

/// Remote endpoint failure. Carries the HTTP status (0 for transport-level
/// failures such as timeouts); the request may be retried.
class RemoteError : public ScorerError {
 public:
  RemoteError(const std::string& what, int status) : ScorerError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

}  // namespace cfrank
