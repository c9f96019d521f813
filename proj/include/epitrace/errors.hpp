/*
 * Copyright 2026 The Epitrace Authors
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

namespace epitrace {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define EPITRACE_DEFINE_ERROR(Name)  \
  class Name : public Error {        \
   public:                           \
    using Error::Error;              \
  };

// Domain-type invariant violations.
EPITRACE_DEFINE_ERROR(InvalidArgument)

// crypto_ids
EPITRACE_DEFINE_ERROR(NonContiguousDays)
EPITRACE_DEFINE_ERROR(DuplicateRegistration)

// personal_data_store
EPITRACE_DEFINE_ERROR(TrackingStopped)
EPITRACE_DEFINE_ERROR(MissingMap)
EPITRACE_DEFINE_ERROR(GranularityTooFine)
EPITRACE_DEFINE_ERROR(ConsentMissing)

// secure_aggregation
EPITRACE_DEFINE_ERROR(MissingSeed)
EPITRACE_DEFINE_ERROR(WrongShareCount)
EPITRACE_DEFINE_ERROR(DimensionMismatch)

// authority
EPITRACE_DEFINE_ERROR(WrongPurpose)

// self_awareness
EPITRACE_DEFINE_ERROR(SpaceMismatch)
EPITRACE_DEFINE_ERROR(InsufficientHistory)
EPITRACE_DEFINE_ERROR(Unreachable)

// Malformed wire or file input.
EPITRACE_DEFINE_ERROR(ParseError)

#undef EPITRACE_DEFINE_ERROR

}  // namespace epitrace
