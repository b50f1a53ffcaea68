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

#ifndef SHAPCHAT_CLI_CLI_HPP_
#define SHAPCHAT_CLI_CLI_HPP_

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>

namespace shapchat::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitInput = 2;
inline constexpr int kExitBackend = 3;

// Runs one command line (without the program name). Results go to out or to
// the --out file, diagnostics to err. Returns the process exit code.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

// Whole file contents; throws kIo naming the path.
std::string read_file(const std::filesystem::path& path);

// Writes through a temporary file in the same directory and renames it into
// place, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace shapchat::cli

#endif  // SHAPCHAT_CLI_CLI_HPP_
