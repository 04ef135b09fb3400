// Copyright 2026 The SegRNN Authors.
//
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

#pragma once

#include <stdexcept>
#include <string>

namespace segrnn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A configuration violates a structural invariant (divisibility, ranges...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed or degenerate.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or parse failure while reading/writing artifacts.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Cached forward state does not match the parameters or sequence it is used with.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

}  // namespace segrnn
