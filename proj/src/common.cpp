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
#include <cmath>
#include <numbers>
#include <string_view>

#include "shapchat/error.hpp"
#include "shapchat/random.hpp"

namespace shapchat {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidArgument:
      return "invalid_argument";
    case ErrorKind::kFormat:
      return "format";
    case ErrorKind::kSchemaMismatch:
      return "schema_mismatch";
    case ErrorKind::kPrecondition:
      return "precondition";
    case ErrorKind::kNotFound:
      return "not_found";
    case ErrorKind::kNoContent:
      return "no_content";
    case ErrorKind::kConflict:
      return "conflict";
    case ErrorKind::kBackendUnreachable:
      return "backend_unreachable";
    case ErrorKind::kBackendRejected:
      return "backend_rejected";
    case ErrorKind::kProtocol:
      return "protocol";
    case ErrorKind::kCapability:
      return "capability";
    case ErrorKind::kIo:
      return "io";
  }
  return "unknown";
}

double Rng::normal() {
  // 1 - u keeps the logarithm finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace shapchat
