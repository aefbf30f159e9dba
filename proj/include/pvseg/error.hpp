/* Copyright 2026 The pvseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#pragma once

#include <stdexcept>
#include <string>

namespace pvseg {

// Base for every error raised by the library. `kind()` is a stable,
// machine-readable tag used by the CLI error line.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& message)
      : std::runtime_error(message) {}
  virtual const char* kind() const noexcept { return "error"; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid_argument"; }
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "shape_mismatch"; }
};

class DatasetError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "dataset_error"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config_error"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io_error"; }
};

class TrainingError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "training_error"; }
};

}  // namespace pvseg
