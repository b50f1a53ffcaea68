/*
 * Copyright 2026 The shapchat Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef SHAPCHAT_ERROR_HPP_
#define SHAPCHAT_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace shapchat {

// Failure categories shared by every module. The CLI and the HTTP service map
// these onto exit codes and status codes respectively.
enum class ErrorKind {
  kInvalidArgument,     // Caller violated a documented precondition.
  kFormat,              // Malformed document (JSON, CSV, JSONL).
  kSchemaMismatch,      // Row or tree does not conform to the feature schema.
  kPrecondition,        // Operation not allowed in the current state.
  kNotFound,
  kNoContent,
  kConflict,
  kBackendUnreachable,  // Transport failure, timeout or 5xx after retries.
  kBackendRejected,     // 4xx from the backend.
  kProtocol,            // Backend answered with an unparseable payload.
  kCapability,          // Backend lacks a required endpoint.
  kIo,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace shapchat

#endif  // SHAPCHAT_ERROR_HPP_
