// Copyright 2026 The TrojanLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace trojanlab {

enum class ErrorKind {
  // world
  OccupiedCell,
  OutOfBounds,
  NothingHeld,
  AlreadyHolding,
  UnknownObject,
  InvalidScene,
  InvalidCamera,
  // pipeline
  UnparseableInstruction,
  ObjectNotFound,
  MissingLocation,
  StageFailure,
  // text bridge
  ExtractionFailed,
  ArityMismatch,
  MissingPlaceholder,
  MalformedProviderReply,
  // toy vlm
  DimensionMismatch,
  UnknownToken,
  DecodeOverflow,
  EmptyDataset,
  BadModelFile,
  // backdoor
  IndivisiblePartition,
  NoFreeCell,
  TargetCollision,
  // defense
  EmptyPool,
  InvalidDefense,
  // eval
  EmptyResults,
  NoApplicableTrials,
  InvalidConfig,
  // providers
  ProviderError,
  AuthError,
  Timeout,
  RateLimited,
  MalformedResponse,
  ImageTooLarge,
  TransportForbidden,
  // io
  IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Domain error carrying a machine-checkable kind. Every failure the
/// library reports to callers is an `Error`.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace trojanlab
