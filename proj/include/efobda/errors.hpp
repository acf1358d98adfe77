// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#ifndef EFOBDA_ERRORS_HPP_
#define EFOBDA_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace efobda {

// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
  kInvalidInput = 3,
  kParse = 4,
  kDomain = 5,
  kSolver = 6,
  kConfig = 2,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class InvalidInput : public Error {
 public:
  explicit InvalidInput(const std::string& what)
      : Error(ErrorCategory::kInvalidInput, what) {}
};

// Raised by the IDX reader and the metrics/instance parsers. Carries the byte
// offset at which the payload stopped making sense.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(ErrorCategory::kParse,
              what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// A bound or interval evaluated outside the parameter regime it is valid for.
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorCategory::kDomain, what) {}
};

class SolverFailure : public Error {
 public:
  explicit SolverFailure(const std::string& what)
      : Error(ErrorCategory::kSolver, what) {}
};

class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& constraint)
      : Error(ErrorCategory::kConfig,
              "config key '" + key + "': " + constraint),
        key_(key) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace efobda

#endif  // EFOBDA_ERRORS_HPP_
