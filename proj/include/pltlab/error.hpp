/*
 * Copyright 2026 The pltlab Authors.
 *
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

#pragma once

#include <stdexcept>
#include <string>

namespace pltlab {

/// Base for all errors raised by the library. `exit_code()` maps the error
/// onto the CLI contract: 1 usage, 2 validation, 3 numeric failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 2; }
};

class UsageError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

}  // namespace pltlab
